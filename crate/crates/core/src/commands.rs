//! The `train`, `eval`, `ablate` and `bench` commands.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::config::RunConfig;
use crate::data::{load_pair_dir, save_png, synthetic_image, synthetic_pairs, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, psnr, shave, ssim, EvalRecord, Psnr, PsnrMode};
use crate::model::{checkpoint_load_for, checkpoint_save, param_count, Ablation, Model, ModelConfig, ModelParams};
use crate::optim::{AdamConfig, AdamState};
use crate::train::{mean_psnr, train_step, BatchSampler};

/// Which split to read; synthetic splits use different scene seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Training pairs or evaluation pairs, from disk or generated.
pub fn load_split(cfg: &RunConfig, split: Split, synthetic: bool) -> Result<Vec<ImagePair>> {
    let pairs = if synthetic {
        let (count, seed) = match split {
            Split::Train => (cfg.synthetic.train_count, cfg.train.seed),
            Split::Test => (cfg.synthetic.eval_count, cfg.train.seed.wrapping_add(0x5eed)),
        };
        synthetic_pairs(count, cfg.synthetic.size, &cfg.degrade, seed)?
    } else {
        let root = cfg.paths.data_root.join(split.name());
        load_pair_dir(&root.join("lr"), &root.join("hr"))?
    };
    if pairs.is_empty() {
        return Err(Error::data(cfg.paths.data_root.join(split.name()), "no image pairs"));
    }
    Ok(pairs)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub loss_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub final_loss: Option<f32>,
    pub final_psnr: Option<f64>,
}

pub const FINAL_CHECKPOINT: &str = "final.ddet";

/// Trains `model` on `pairs`, writing `loss.csv` and checkpoints into `out_dir`.
///
/// CSV rows are `step,loss,train_psnr`; the PSNR column is filled every
/// `train.eval_every` steps and on the last step.
pub fn train_model(cfg: &RunConfig, model: &ModelConfig, pairs: &[ImagePair], out_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let t = &cfg.train;
    let mut params = ModelParams::<f32>::init(model, t.seed)?;
    let mut state = AdamState::new();
    let adam = AdamConfig {
        lr: t.lr,
        ..Default::default()
    };
    let loss_csv = out_dir.join("loss.csv");
    let mut csv = BufWriter::new(fs::File::create(&loss_csv)?);
    writeln!(csv, "step,loss,train_psnr")?;
    let final_ckpt = out_dir.join(FINAL_CHECKPOINT);
    let mut sampler = BatchSampler::new(pairs.len(), t.seed);
    let mut final_loss = None;
    let mut final_psnr = None;
    for step in 1..=t.steps {
        let (lr, hr) = sampler.next_batch(pairs, t.batch, t.patch)?;
        let loss = match train_step(model, &mut params, &mut state, &adam, &lr, &hr) {
            Ok(l) => l,
            Err(e) => {
                let keep = out_dir.join("last_good.ddet");
                checkpoint_save(&params, &state, &keep)?;
                csv.flush()?;
                warn!("step {step}: {e}; last good parameters saved to {}", keep.display());
                return Err(e);
            }
        };
        final_loss = Some(loss);
        let eval_now = step == t.steps || (t.eval_every > 0 && step % t.eval_every == 0);
        let psnr_col = if eval_now {
            let m = Model::new(model.clone(), params.clone())?;
            let p = mean_psnr(&m, pairs, cfg.eval.mode)?;
            info!("step {step} loss {loss:.6} train psnr {p:.3} dB");
            final_psnr = Some(p);
            format!("{p:.6}")
        } else {
            String::new()
        };
        writeln!(csv, "{step},{loss:.9},{psnr_col}")?;
        if t.checkpoint_every > 0 && step % t.checkpoint_every == 0 && step != t.steps {
            checkpoint_save(&params, &state, &out_dir.join(format!("step_{step:06}.ddet")))?;
        }
    }
    csv.flush()?;
    checkpoint_save(&params, &state, &final_ckpt)?;
    Ok(TrainOutcome {
        loss_csv,
        checkpoint: final_ckpt,
        final_loss,
        final_psnr,
    })
}

pub fn cmd_train(cfg: &RunConfig, synthetic: bool) -> Result<TrainOutcome> {
    let pairs = load_split(cfg, Split::Train, synthetic)?;
    info!("training on {} pairs for {} steps", pairs.len(), cfg.train.steps);
    train_model(cfg, &cfg.model, &pairs, &cfg.paths.out_dir)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// `None` evaluates the identity passthrough (output = LR input).
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub dump_images: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            checkpoint: None,
            split: Split::Test,
            dump_images: false,
        }
    }
}

/// One-line statement of the metric conventions, printed above reports.
pub fn metric_note(cfg: &RunConfig) -> String {
    let space = match cfg.eval.mode {
        PsnrMode::Y => "luma (BT.601 Y)",
        PsnrMode::Rgb => "RGB",
    };
    format!(
        "Metrics: PSNR on {space}, peak 1.0, {} px border shave; SSIM on luma, 11x11 Gaussian window (sigma 1.5), valid region",
        cfg.eval.shave
    )
}

/// Scores `model` (or the identity when `None`) on `pairs`.
pub fn evaluate(
    cfg: &RunConfig,
    model: Option<&Model<f32>>,
    pairs: &[ImagePair],
    dump_dir: Option<&Path>,
) -> Result<Vec<EvalRecord>> {
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir)?;
    }
    let mut records = Vec::with_capacity(pairs.len());
    for p in pairs {
        let start = Instant::now();
        let out = match model {
            Some(m) => m.forward(&p.lr)?.map(|v| v.clamp(0.0, 1.0)),
            None => p.lr.clone(),
        };
        let forward_time_s = start.elapsed().as_secs_f64();
        let a = shave(&out, cfg.eval.shave)?;
        let b = shave(&p.hr, cfg.eval.shave)?;
        let rec = EvalRecord {
            image_id: p.scene_id.clone(),
            psnr: psnr(&a, &b, cfg.eval.mode)?,
            ssim: ssim(&a, &b)?,
            forward_time_s,
        };
        if let Some(dir) = dump_dir {
            save_png(&out, &dir.join(format!("{}.png", p.scene_id)))?;
        }
        records.push(rec);
    }
    Ok(records)
}

fn write_eval_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut s = String::from(EvalRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn format_aggregate(records: &[EvalRecord]) -> String {
    let (p, s) = aggregate(records);
    match p {
        Some(p) => format!("mean psnr {p:.4} dB, mean ssim {s:.4} over {} images", records.len()),
        None => format!("mean psnr {}, mean ssim {s:.4} over {} images", Psnr::Identical, records.len()),
    }
}

/// Writes `eval.csv` (and PNGs under `images/` when asked) into the out dir.
pub fn cmd_eval(cfg: &RunConfig, synthetic: bool, opts: &EvalOptions) -> Result<Vec<EvalRecord>> {
    let pairs = load_split(cfg, opts.split, synthetic)?;
    let model = match &opts.checkpoint {
        Some(path) => {
            let (params, _) = checkpoint_load_for::<f32>(path, &cfg.model)?;
            Some(Model::new(cfg.model.clone(), params)?)
        }
        None => None,
    };
    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir)?;
    let dump = opts.dump_images.then(|| out_dir.join("images"));
    let records = evaluate(cfg, model.as_ref(), &pairs, dump.as_deref())?;
    write_eval_csv(&records, &out_dir.join("eval.csv"))?;
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub params: usize,
}

/// Markdown table with one row per ablation and a single PSNR column.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Config | PSNR (dB) |\n|---|---:|\n");
    for r in rows {
        let p = r.psnr.map_or_else(|| Psnr::Identical.to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(s, "| {} | {p} |", r.ablation);
    }
    s
}

/// Trains and evaluates the four ablations with a shared seed and writes
/// `ablation.md`. Warns when the full model scores below the plain one.
pub fn cmd_ablate(cfg: &RunConfig, synthetic: bool) -> Result<Vec<AblationRow>> {
    let train_pairs = load_split(cfg, Split::Train, synthetic)?;
    let test_pairs = load_split(cfg, Split::Test, synthetic)?;
    let mut rows = Vec::with_capacity(Ablation::ALL.len());
    for ab in Ablation::ALL {
        let model_cfg = ab.config(&cfg.model);
        let dir = cfg.paths.out_dir.join(ab.to_string().replace("w/ ", "with_").to_lowercase());
        info!("ablation {ab}: training");
        let outcome = train_model(cfg, &model_cfg, &train_pairs, &dir)?;
        let (params, _) = checkpoint_load_for::<f32>(&outcome.checkpoint, &model_cfg)?;
        let model = Model::new(model_cfg, params)?;
        let records = evaluate(cfg, Some(&model), &test_pairs, None)?;
        let (psnr, ssim) = aggregate(&records);
        rows.push(AblationRow {
            ablation: ab,
            psnr,
            ssim,
            params: param_count(&model.params).elements,
        });
    }
    let value = |r: &AblationRow| r.psnr.unwrap_or(f64::INFINITY);
    if value(&rows[3]) < value(&rows[0]) {
        warn!(
            "full model ({:.3} dB) scored below the plain baseline ({:.3} dB) at this budget",
            value(&rows[3]),
            value(&rows[0])
        );
    }
    fs::create_dir_all(&cfg.paths.out_dir)?;
    let report = format!(
        "{}\nBudget: {} steps, batch {}, patch {}, seed {}\n\n{}",
        metric_note(cfg),
        cfg.train.steps,
        cfg.train.batch,
        cfg.train.patch,
        cfg.train.seed,
        ablation_table(&rows)
    );
    fs::write(cfg.paths.out_dir.join("ablation.md"), report)?;
    Ok(rows)
}

/// `full`, `kpn<K>`, or one of `plain`, `with_pr`, `with_cdm`, `with_mda`.
pub fn parse_preset(name: &str, base: &ModelConfig) -> Result<ModelConfig> {
    let bad = || Error::Config {
        line: 0,
        message: format!("unknown model preset `{name}`"),
    };
    let cfg = match name {
        "full" => base.clone(),
        "plain" => Ablation::Plain.config(base),
        "with_pr" => Ablation::WithPr.config(base),
        "with_cdm" => Ablation::WithCdm.config(base),
        "with_mda" => Ablation::WithMda.config(base),
        other => {
            let k: usize = other.strip_prefix("kpn").and_then(|k| k.parse().ok()).ok_or_else(bad)?;
            ModelConfig {
                kernel_sizes: vec![k],
                use_cdm: false,
                use_pr: false,
                ..base.clone()
            }
        }
    };
    cfg.validate().map_err(|_| bad())?;
    Ok(cfg)
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub name: String,
    pub params: usize,
    pub megabytes: f64,
    pub median_s: f64,
    pub max_s: f64,
}

fn cpu_model() -> String {
    fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

pub fn machine_info() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "Machine: {} {}, CPU: {}, {} hardware threads, single-threaded forward",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpu_model(),
        threads
    )
}

/// Median forward time over `bench.repeats` runs after `bench.warmup` runs,
/// one `size × size` image per run.
pub fn cmd_bench(cfg: &RunConfig) -> Result<(String, Vec<BenchRow>)> {
    let b = &cfg.bench;
    if b.repeats == 0 {
        return Err(Error::Config {
            line: 0,
            message: "bench.repeats must be at least 1".into(),
        });
    }
    let input = synthetic_image(b.size, b.size, cfg.train.seed);
    let mut rows = Vec::new();
    for name in &b.configs {
        let model_cfg = parse_preset(name, &cfg.model)?;
        let model = Model::<f32>::init(model_cfg, cfg.train.seed)?;
        for _ in 0..b.warmup {
            model.forward(&input)?;
        }
        let mut times: Vec<f64> = (0..b.repeats)
            .map(|_| {
                let t = Instant::now();
                model.forward(&input).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median_s = if times.len() % 2 == 0 {
            (times[mid - 1] + times[mid]) / 2.0
        } else {
            times[mid]
        };
        let count = param_count(&model.params);
        rows.push(BenchRow {
            name: name.clone(),
            params: count.elements,
            megabytes: count.megabytes(),
            median_s,
            max_s: times[times.len() - 1],
        });
    }
    let mut table = format!(
        "{}\nInput: 1x3x{}x{}, median of {} runs after {} warm-up runs\n\n",
        machine_info(),
        b.size,
        b.size,
        b.repeats,
        b.warmup
    );
    table.push_str("| Config | Params | Size (MB, fp32) | Time (s) / Frame |\n|---|---:|---:|---:|\n");
    for r in &rows {
        let _ = writeln!(table, "| {} | {} | {:.2} | {:.4} |", r.name, r.params, r.megabytes, r.median_s);
    }
    fs::create_dir_all(&cfg.paths.out_dir)?;
    fs::write(cfg.paths.out_dir.join("bench.md"), &table)?;
    Ok((table, rows))
}
