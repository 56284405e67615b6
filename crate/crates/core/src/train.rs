//! L1 / Adam training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{psnr, PsnrMode};
use crate::model::{ddet_forward, Model, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// One forward/backward/update on a batch. Returns the batch loss.
pub fn train_step(
    cfg: &ModelConfig,
    params: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    adam: &AdamConfig,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
) -> Result<f32> {
    let mut tape = GradTape::new();
    let pv = params.to_vars(&mut tape, true);
    let x = tape.constant(lr_batch.clone());
    let target = tape.constant(hr_batch.clone());
    let out = ddet_forward(&mut tape, &pv, cfg, x)?;
    let loss = tape.l1_loss(out, target)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!("training loss ({loss_value})")));
    }
    tape.backward(loss)?;
    let grads: BTreeMap<String, Vec<f32>> = pv.collect_grads(&mut tape);
    drop(tape);
    adam_step(params, &grads, state, adam)?;
    Ok(loss_value)
}

/// Deterministic epoch-shuffled batches of aligned random crops.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(num_pairs: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..num_pairs).collect(),
            cursor: 0,
            epoch: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    /// `(lr, hr)` batches of `batch` crops of `patch × patch`.
    pub fn next_batch(&mut self, pairs: &[ImagePair], batch: usize, patch: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if patch == 0 || patch % 4 != 0 {
            return Err(Error::pre("BatchSampler", format!("patch size {patch} must be a positive multiple of 4")));
        }
        let mut lrs = Vec::with_capacity(batch);
        let mut hrs = Vec::with_capacity(batch);
        let mut attempts = 0;
        while lrs.len() < batch {
            if self.cursor == self.order.len() {
                self.cursor = 0;
                self.epoch += 1;
                self.reshuffle();
            }
            let p = &pairs[self.order[self.cursor]];
            self.cursor += 1;
            attempts += 1;
            if p.height() < patch || p.width() < patch {
                if attempts > pairs.len() * (batch + 1) {
                    return Err(Error::pre("BatchSampler", format!("no image is at least {patch}x{patch}")));
                }
                continue;
            }
            let y = self.rng.gen_range(0..=p.height() - patch);
            let x = self.rng.gen_range(0..=p.width() - patch);
            lrs.push(p.lr.crop(y, x, patch, patch)?);
            hrs.push(p.hr.crop(y, x, patch, patch)?);
        }
        Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
    }
}

/// Mean PSNR of the model output against HR over `pairs`.
pub fn mean_psnr(model: &Model<f32>, pairs: &[ImagePair], mode: PsnrMode) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let out = model.forward(&p.lr)?;
        total += psnr(&out, &p.hr, mode)?.value();
    }
    Ok(total / pairs.len().max(1) as f64)
}
