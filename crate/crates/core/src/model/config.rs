use std::fmt;

use crate::error::{Error, Result};

/// Architecture switches and sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Dynamic kernel sizes, odd and strictly increasing.
    pub kernel_sizes: Vec<usize>,
    pub num_res_blocks: usize,
    pub base_channels: usize,
    /// Residual detail branch applied to the input before filtering.
    pub use_cdm: bool,
    /// Final 3×3 refinement convolution.
    pub use_pr: bool,
    pub input_channels: usize,
    /// Softmax each predicted kernel over its taps. Off in the reference architecture.
    pub normalize_kernels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// The full dual-path network: kernels 3/5/7, detail branch and refinement.
    pub fn full() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7],
            num_res_blocks: 16,
            base_channels: 64,
            use_cdm: true,
            use_pr: true,
            input_channels: 3,
            normalize_kernels: false,
        }
    }

    /// Single-kernel kernel-prediction baseline.
    pub fn kpn(k: usize) -> Self {
        Self {
            kernel_sizes: vec![k],
            use_cdm: false,
            use_pr: false,
            ..Self::full()
        }
    }

    /// Number of channels the kernel head predicts.
    pub fn kernel_channels(&self) -> usize {
        self.kernel_sizes.iter().map(|k| k * k).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = "ModelConfig";
        if self.kernel_sizes.is_empty() {
            return Err(Error::pre(ctx, "kernel_sizes must not be empty"));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::pre(ctx, format!("kernel size {k} is not odd")));
        }
        if self.kernel_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::pre(ctx, "kernel_sizes must be strictly increasing"));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::pre(ctx, "channel counts must be positive"));
        }
        Ok(())
    }
}

/// The four cumulative ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// KPN with a single 7×7 kernel.
    Plain,
    /// Plain plus post-refinement.
    WithPr,
    /// Plus the detail branch.
    WithCdm,
    /// Plus multi-scale kernels: the full model.
    WithMda,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Plain, Ablation::WithPr, Ablation::WithCdm, Ablation::WithMda];

    /// Applies this ablation's switches on top of `base` (sizes and depth are kept).
    pub fn config(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.kernel_sizes = vec![7];
        cfg.use_pr = false;
        cfg.use_cdm = false;
        match self {
            Ablation::Plain => {}
            Ablation::WithPr => cfg.use_pr = true,
            Ablation::WithCdm => {
                cfg.use_pr = true;
                cfg.use_cdm = true;
            }
            Ablation::WithMda => {
                cfg.use_pr = true;
                cfg.use_cdm = true;
                cfg.kernel_sizes = base.kernel_sizes.clone();
            }
        }
        cfg
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Plain => "Plain",
            Ablation::WithPr => "w/ PR",
            Ablation::WithCdm => "w/ CDM",
            Ablation::WithMda => "w/ MDA",
        })
    }
}
