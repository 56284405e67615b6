//! Run configuration: flat dotted `key = value` lines with `#` comments.
//!
//! ```text
//! # model
//! model.kernel_sizes = 3,5,7
//! train.steps = 2000
//! eval.mode = y
//! ```
//!
//! Every key has a default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DegradeConfig;
use crate::error::{Error, Result};
use crate::metrics::PsnrMode;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub seed: u64,
    /// 0 disables periodic checkpoints (a final one is always written).
    pub checkpoint_every: usize,
    /// 0 disables periodic evaluation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            patch: 64,
            lr: 1e-4,
            seed: 42,
            checkpoint_every: 500,
            eval_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: PsnrMode,
    pub shave: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: PsnrMode::Y,
            shave: 0,
        }
    }
}

/// Self-generated data used by `--synthetic`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train_count: usize,
    pub eval_count: usize,
    pub size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_count: 16,
            eval_count: 4,
            size: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Model presets: `full`, `kpn<K>`, or an ablation name.
    pub configs: Vec<String>,
    pub size: usize,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            configs: vec!["kpn5".into(), "kpn7".into(), "full".into()],
            size: 128,
            repeats: 10,
            warmup: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathsConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub degrade: DegradeConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("invalid value `{v}` for `{key}` (expected true or false)"),
        }),
    }
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    let v = v.trim_start_matches('[').trim_end_matches(']');
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(line, key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "model.kernel_sizes" => self.model.kernel_sizes = parse_list(line, key, v)?,
            "model.num_res_blocks" => self.model.num_res_blocks = parse(line, key, v)?,
            "model.base_channels" => self.model.base_channels = parse(line, key, v)?,
            "model.use_cdm" => self.model.use_cdm = parse_bool(line, key, v)?,
            "model.use_pr" => self.model.use_pr = parse_bool(line, key, v)?,
            "model.input_channels" => self.model.input_channels = parse(line, key, v)?,
            "model.normalize_kernels" => self.model.normalize_kernels = parse_bool(line, key, v)?,
            "degrade.gauss_sigma" => self.degrade.gauss_sigma = parse(line, key, v)?,
            "degrade.gauss_radius" => self.degrade.gauss_radius = parse(line, key, v)?,
            "degrade.scale" => self.degrade.scale = parse(line, key, v)?,
            "degrade.shift_max" => self.degrade.shift_max = parse(line, key, v)?,
            "degrade.seed" => self.degrade.seed = parse(line, key, v)?,
            "train.steps" => self.train.steps = parse(line, key, v)?,
            "train.batch" => self.train.batch = parse(line, key, v)?,
            "train.patch" => self.train.patch = parse(line, key, v)?,
            "train.lr" => self.train.lr = parse(line, key, v)?,
            "train.seed" => self.train.seed = parse(line, key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(line, key, v)?,
            "train.eval_every" => self.train.eval_every = parse(line, key, v)?,
            "eval.mode" => {
                self.eval.mode = v.parse().map_err(|message| Error::Config { line, message })?;
            }
            "eval.shave" => self.eval.shave = parse(line, key, v)?,
            "synthetic.train_count" => self.synthetic.train_count = parse(line, key, v)?,
            "synthetic.eval_count" => self.synthetic.eval_count = parse(line, key, v)?,
            "synthetic.size" => self.synthetic.size = parse(line, key, v)?,
            "bench.configs" => self.bench.configs = parse_list(line, key, v)?,
            "bench.size" => self.bench.size = parse(line, key, v)?,
            "bench.repeats" => self.bench.repeats = parse(line, key, v)?,
            "bench.warmup" => self.bench.warmup = parse(line, key, v)?,
            "paths.data_root" => self.paths.data_root = PathBuf::from(v),
            "paths.out_dir" => self.paths.out_dir = PathBuf::from(v),
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config {
            line: 0,
            message: e.to_string(),
        };
        self.model.validate().map_err(wrap)?;
        self.degrade.validate().map_err(wrap)?;
        if self.train.patch == 0 || self.train.patch % 4 != 0 {
            return Err(Error::Config {
                line: 0,
                message: format!("train.patch {} must be a positive multiple of 4", self.train.patch),
            });
        }
        if self.train.batch == 0 {
            return Err(Error::Config {
                line: 0,
                message: "train.batch must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Writes every key, in a fixed order, in the same syntax [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let d = &self.degrade;
        let t = &self.train;
        let _ = writeln!(s, "model.kernel_sizes = {}", join(&m.kernel_sizes));
        let _ = writeln!(s, "model.num_res_blocks = {}", m.num_res_blocks);
        let _ = writeln!(s, "model.base_channels = {}", m.base_channels);
        let _ = writeln!(s, "model.use_cdm = {}", m.use_cdm);
        let _ = writeln!(s, "model.use_pr = {}", m.use_pr);
        let _ = writeln!(s, "model.input_channels = {}", m.input_channels);
        let _ = writeln!(s, "model.normalize_kernels = {}", m.normalize_kernels);
        let _ = writeln!(s, "degrade.gauss_sigma = {:?}", d.gauss_sigma);
        let _ = writeln!(s, "degrade.gauss_radius = {}", d.gauss_radius);
        let _ = writeln!(s, "degrade.scale = {}", d.scale);
        let _ = writeln!(s, "degrade.shift_max = {:?}", d.shift_max);
        let _ = writeln!(s, "degrade.seed = {}", d.seed);
        let _ = writeln!(s, "train.steps = {}", t.steps);
        let _ = writeln!(s, "train.batch = {}", t.batch);
        let _ = writeln!(s, "train.patch = {}", t.patch);
        let _ = writeln!(s, "train.lr = {:?}", t.lr);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "train.checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "train.eval_every = {}", t.eval_every);
        let _ = writeln!(s, "eval.mode = {}", self.eval.mode);
        let _ = writeln!(s, "eval.shave = {}", self.eval.shave);
        let _ = writeln!(s, "synthetic.train_count = {}", self.synthetic.train_count);
        let _ = writeln!(s, "synthetic.eval_count = {}", self.synthetic.eval_count);
        let _ = writeln!(s, "synthetic.size = {}", self.synthetic.size);
        let _ = writeln!(s, "bench.configs = {}", join(&self.bench.configs));
        let _ = writeln!(s, "bench.size = {}", self.bench.size);
        let _ = writeln!(s, "bench.repeats = {}", self.bench.repeats);
        let _ = writeln!(s, "bench.warmup = {}", self.bench.warmup);
        let _ = writeln!(s, "paths.data_root = {}", self.paths.data_root.display());
        let _ = writeln!(s, "paths.out_dir = {}", self.paths.out_dir.display());
        s
    }
}
