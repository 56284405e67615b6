//! Network assembly on a [`GradTape`].
//!
//! Layer builders take the parameter prefix they read from, e.g.
//! `conv(tape, pv, "cdm.0", x, 1, 1)` uses `cdm.0.weight` and `cdm.0.bias`.

use crate::dynfilter::{reshape_channels_to_kernels, KernelFieldSet};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{ModelParams, ParamVars};
use crate::tape::{GradTape, Var};
use crate::tensor::{Scalar, Tensor};

pub fn conv<T: Scalar>(
    tape: &mut GradTape<T>,
    pv: &ParamVars,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = pv.get(&format!("{prefix}.weight"))?;
    let b = pv.get(&format!("{prefix}.bias"))?;
    tape.conv2d(x, w, b, stride, padding)
}

/// `x + conv2(relu(conv1(x)))`, 3×3 "same" convolutions.
pub fn residual_block<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let c = tape.value(x).c();
    let expected = tape.value(pv.get(&format!("{prefix}.conv1.weight"))?).c();
    if c != expected {
        return Err(Error::dim(format!("residual_block {prefix}"), "c", expected, c));
    }
    let h = conv(tape, pv, &format!("{prefix}.conv1"), x, 1, 1)?;
    let h = tape.relu(h);
    let h = conv(tape, pv, &format!("{prefix}.conv2"), h, 1, 1)?;
    tape.add(x, h)
}

/// Two stride-2 3×3 convolutions with a ReLU between: spatial size / 4.
pub fn down4<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).shape();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::pre(
            format!("down4 {prefix}"),
            format!("spatial size {h}x{w} is not a multiple of 4; pad first"),
        ));
    }
    let y = conv(tape, pv, &format!("{prefix}.0"), x, 2, 1)?;
    let y = tape.relu(y);
    conv(tape, pv, &format!("{prefix}.1"), y, 2, 1)
}

/// Two rounds of nearest ×2 then 3×3 convolution, ReLU after the first only.
pub fn up4<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.upsample2(x);
    let y = conv(tape, pv, &format!("{prefix}.0"), y, 1, 1)?;
    let y = tape.relu(y);
    let y = tape.upsample2(y);
    conv(tape, pv, &format!("{prefix}.1"), y, 1, 1)
}

/// Kernel-predicting branch: one `n × k² × h × w` var per configured kernel size.
pub fn gsat_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    i_lr: Var,
) -> Result<Vec<(usize, Var)>> {
    let [_, c, h, w] = tape.value(i_lr).shape();
    if c != cfg.input_channels {
        return Err(Error::dim("gsat_forward input", "c", cfg.input_channels, c));
    }
    let padded = tape.reflect_pad(i_lr, (4 - h % 4) % 4, (4 - w % 4) % 4);
    let mut y = down4(tape, pv, "gsat.down", padded)?;
    for i in 0..cfg.num_res_blocks {
        y = residual_block(tape, pv, &format!("gsat.res.{i:02}"), y)?;
    }
    let up = up4(tape, pv, "gsat.up", y)?;
    let up = tape.crop(up, 0, 0, h, w)?;
    let mut fields = Vec::with_capacity(cfg.kernel_sizes.len());
    let mut start = 0;
    for &k in &cfg.kernel_sizes {
        let mut f = tape.slice_channels(up, start, k * k)?;
        if cfg.normalize_kernels {
            f = tape.kernel_softmax(f);
        }
        fields.push((k, f));
        start += k * k;
    }
    Ok(fields)
}

/// `i_lr + conv(relu(conv(relu(conv(i_lr)))))`.
pub fn cdm_forward<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, i_lr: Var) -> Result<Var> {
    let y = conv(tape, pv, "cdm.0", i_lr, 1, 1)?;
    let y = tape.relu(y);
    let y = conv(tape, pv, "cdm.1", y, 1, 1)?;
    let y = tape.relu(y);
    let y = conv(tape, pv, "cdm.2", y, 1, 1)?;
    tape.add(i_lr, y)
}

/// Single linear 3×3 convolution.
pub fn post_refine<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    conv(tape, pv, "pr", x, 1, 1)
}

/// Sum over scales of the dynamic filter applied to `image`.
pub fn multiscale_aggregate<T: Scalar>(tape: &mut GradTape<T>, image: Var, fields: &[(usize, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, &(k, f)) in fields.iter().enumerate() {
        let part = tape.dynamic_filter(image, f, k).map_err(|e| match e {
            Error::Dimension {
                axis,
                expected,
                actual,
                ..
            } => Error::dim(format!("multiscale_aggregate field {i}"), axis, expected, actual),
            other => other,
        })?;
        acc = Some(match acc {
            None => part,
            Some(a) => tape.add(a, part)?,
        });
    }
    acc.ok_or_else(|| Error::pre("multiscale_aggregate", "empty kernel set"))
}

/// Full forward pass: optional detail branch, multi-scale dynamic filtering,
/// optional refinement.
pub fn ddet_forward<T: Scalar>(tape: &mut GradTape<T>, pv: &ParamVars, cfg: &ModelConfig, i_lr: Var) -> Result<Var> {
    let i_rev = if cfg.use_cdm { cdm_forward(tape, pv, i_lr)? } else { i_lr };
    let fields = gsat_forward(tape, pv, cfg, i_lr)?;
    let raw = multiscale_aggregate(tape, i_rev, &fields)?;
    if cfg.use_pr {
        post_refine(tape, pv, raw)
    } else {
        Ok(raw)
    }
}

/// A configuration paired with its parameters, for gradient-free use.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_config(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let pv = self.params.to_vars(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = ddet_forward(&mut tape, &pv, &self.config, x)?;
        Ok(tape.take_value(out))
    }

    pub fn kernel_fields(&self, input: &Tensor<T>) -> Result<KernelFieldSet<T>> {
        let mut tape = GradTape::new();
        let pv = self.params.to_vars(&mut tape, false);
        let x = tape.constant(input.clone());
        let fields = gsat_forward(&mut tape, &pv, &self.config, x)?;
        let fields = fields
            .into_iter()
            .map(|(k, v)| reshape_channels_to_kernels(tape.value(v).clone(), k))
            .collect::<Result<Vec<_>>>()?;
        KernelFieldSet::new(fields)
    }

    pub fn detail_branch(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let pv = self.params.to_vars(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = cdm_forward(&mut tape, &pv, x)?;
        Ok(tape.take_value(out))
    }

    pub fn refine(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let pv = self.params.to_vars(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = post_refine(&mut tape, &pv, x)?;
        Ok(tape.take_value(out))
    }
}
