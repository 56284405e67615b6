use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Named weights and biases, iterated in sorted name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
    pub init_seed: u64,
}

/// Element total and fp32 footprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub elements: usize,
    pub bytes_fp32: usize,
}

impl ParamCount {
    pub fn megabytes(&self) -> f64 {
        self.bytes_fp32 as f64 / 1e6
    }
}

/// Scale applied at init to the last convolution of every residual path
/// (residual block `conv2`, `cdm.2`) and to the kernel head `gsat.up.1`.
pub const RES_SCALE: f64 = 0.1;

fn scaled_at_init(name: &str) -> bool {
    (name.starts_with("gsat.res.") && name.contains(".conv2."))
        || name.starts_with("cdm.2.")
        || name.starts_with("gsat.up.1.")
}

/// Parameter names and shapes for `cfg`, sorted by name.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Shape> {
    let mut out = BTreeMap::new();
    let mut conv = |name: String, co: usize, ci: usize, k: usize| {
        out.insert(format!("{name}.weight"), [co, ci, k, k]);
        out.insert(format!("{name}.bias"), [co, 1, 1, 1]);
    };
    let (c, ic) = (cfg.base_channels, cfg.input_channels);
    conv("gsat.down.0".into(), c, ic, 3);
    conv("gsat.down.1".into(), c, c, 3);
    for i in 0..cfg.num_res_blocks {
        conv(format!("gsat.res.{i:02}.conv1"), c, c, 3);
        conv(format!("gsat.res.{i:02}.conv2"), c, c, 3);
    }
    conv("gsat.up.0".into(), c, c, 3);
    conv("gsat.up.1".into(), cfg.kernel_channels(), c, 3);
    if cfg.use_cdm {
        conv("cdm.0".into(), c, ic, 3);
        conv("cdm.1".into(), c, c, 3);
        conv("cdm.2".into(), ic, c, 3);
    }
    if cfg.use_pr {
        conv("pr".into(), ic, ic, 3);
    }
    out
}

/// 64-bit FNV-1a, used to derive per-tensor init streams from names.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl<T: Scalar> ModelParams<T> {
    pub fn empty() -> Self {
        Self {
            tensors: BTreeMap::new(),
            init_seed: 0,
        }
    }

    /// Kaiming-uniform (fan-in) weights and zero biases, started near the
    /// identity map: the kernel head is biased towards a centre tap of the
    /// smallest kernel and `pr` is a per-channel delta.
    ///
    /// Each tensor draws from its own stream keyed by `(seed, name)`, so
    /// configurations that share a sub-network get identical initial weights
    /// for it.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in param_shapes(cfg) {
            let t = if name == "gsat.up.1.bias" {
                let k = cfg.kernel_sizes[0];
                let mut b = Tensor::zeros(shape);
                b.data_mut()[k * k / 2] = T::from_f64(1.0);
                b
            } else if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else if name == "pr.weight" {
                let mut t = Tensor::zeros(shape);
                for c in 0..shape[0] {
                    t.set(c, c, 1, 1, T::from_f64(1.0));
                }
                t
            } else {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let mut bound = (6.0 / fan_in).sqrt();
                if scaled_at_init(&name) {
                    bound *= RES_SCALE;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
                Tensor::uniform(shape, -bound, bound, &mut rng)
            };
            tensors.insert(name, t);
        }
        Ok(Self { tensors, init_seed: seed })
    }

    /// All-zero parameters with the shapes of `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            tensors: param_shapes(cfg).into_iter().map(|(n, s)| (n, Tensor::zeros(s))).collect(),
            init_seed: 0,
        }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>, init_seed: u64) -> Self {
        Self { tensors, init_seed }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn count(&self) -> ParamCount {
        param_count(self)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            init_seed: self.init_seed,
        }
    }

    /// Checks names and shapes against `cfg`, reporting the first mismatch in name order.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = param_shapes(cfg);
        for (name, t) in &self.tensors {
            match expected.get(name) {
                None => return Err(Error::UnknownParam(name.clone())),
                Some(&shape) if shape != t.shape() => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: shape,
                        found: t.shape(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(missing) = expected.keys().find(|n| !self.tensors.contains_key(*n)) {
            return Err(Error::MissingParam(missing.clone()));
        }
        Ok(())
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn to_vars(&self, tape: &mut GradTape<T>, requires_grad: bool) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// [`ModelParams`] recorded on a tape.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Moves the accumulated leaf gradients off the tape, keyed by name.
    pub fn collect_grads<T: Scalar>(&self, tape: &mut GradTape<T>) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .map(|(n, &v)| {
                let len = tape.value(v).len();
                (n.clone(), tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); len]))
            })
            .collect()
    }
}

pub fn param_count<T: Scalar>(params: &ModelParams<T>) -> ParamCount {
    let elements = params.tensors.values().map(Tensor::len).sum();
    ParamCount {
        elements,
        bytes_fp32: elements * 4,
    }
}
