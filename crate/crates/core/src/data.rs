//! Training and evaluation pairs: synthetic degradation, sub-pixel
//! misalignment, PNG directory ingestion and patch sampling.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::reflect_index;
use crate::tensor::{Scalar, Tensor};

/// Registered low/high quality images of equal size, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub scene_id: String,
    pub nominal_scale: u32,
}

impl ImagePair {
    pub fn new(lr: Tensor<f32>, hr: Tensor<f32>, scene_id: impl Into<String>, nominal_scale: u32) -> Result<Self> {
        let scene_id = scene_id.into();
        lr.expect_same_shape(&hr, &format!("ImagePair {scene_id}"))?;
        Ok(Self {
            lr,
            hr,
            scene_id,
            nominal_scale,
        })
    }

    pub fn height(&self) -> usize {
        self.hr.h()
    }

    pub fn width(&self) -> usize {
        self.hr.w()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeConfig {
    pub gauss_sigma: f64,
    pub gauss_radius: usize,
    pub scale: u32,
    /// Maximum sub-pixel misalignment in pixels, per axis.
    pub shift_max: f64,
    pub seed: u64,
}

impl DegradeConfig {
    /// σ = 0.6·scale, radius = ⌈3σ⌉, 0.75 px misalignment.
    pub fn for_scale(scale: u32) -> Self {
        let sigma = 0.6 * scale as f64;
        Self {
            gauss_sigma: sigma,
            gauss_radius: (3.0 * sigma).ceil() as usize,
            scale,
            shift_max: 0.75,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = "DegradeConfig";
        if !(self.gauss_sigma > 0.0) {
            return Err(Error::pre(ctx, "gauss_sigma must be positive"));
        }
        let min_radius = (3.0 * self.gauss_sigma).ceil() as usize;
        if self.gauss_radius < min_radius {
            return Err(Error::pre(
                ctx,
                format!("gauss_radius {} below ceil(3 sigma) = {min_radius}", self.gauss_radius),
            ));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::pre(ctx, format!("scale {} not in {{2, 3, 4}}", self.scale)));
        }
        if !(self.shift_max >= 0.0) {
            return Err(Error::pre(ctx, "shift_max must be non-negative"));
        }
        Ok(())
    }
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self::for_scale(2)
    }
}

/// Normalised 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable normalised Gaussian blur with half-sample symmetric borders.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64, radius: usize) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::pre("gaussian_blur", "sigma must be positive"));
    }
    let taps = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let [n, c, h, w] = img.shape();
    let mut tmp = vec![0.0f64; h * w];
    let mut out = Tensor::zeros(img.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for y in 0..h {
                for x in 0..w {
                    tmp[y * w + x] = taps
                        .iter()
                        .enumerate()
                        .map(|(t, &wt)| wt * src[y * w + reflect_index(x as isize + t as isize - r, w)].to_f64())
                        .sum();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let v: f64 = taps
                        .iter()
                        .enumerate()
                        .map(|(t, &wt)| wt * tmp[reflect_index(y as isize + t as isize - r, h) * w + x])
                        .sum();
                    out.set(b, ch, y, x, T::from_f64(v));
                }
            }
        }
    }
    Ok(out)
}

/// Cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four source indices (edge-clamped) and weights for every output position.
fn cubic_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for t in 0..4 {
                let i = base as isize - 1 + t as isize;
                idx[t] = i.clamp(0, in_len as isize - 1) as usize;
                wts[t] = cubic_weight(frac - (t as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Bicubic resampling to an explicit size, half-pixel centres, output clamped to `[0, 1]`.
pub fn bicubic_resize_to<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::pre("bicubic_resize", format!("output size {out_h}x{out_w} is empty")));
    }
    let [n, c, h, w] = img.shape();
    if h == out_h && w == out_w {
        return Ok(img.map(|v| v.max(T::zero()).min(T::one())));
    }
    let xt = cubic_taps(w, out_w);
    let yt = cubic_taps(h, out_h);
    let mut tmp = vec![0.0f64; h * out_w];
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for y in 0..h {
                for (x, (idx, wts)) in xt.iter().enumerate() {
                    tmp[y * out_w + x] = (0..4).map(|t| wts[t] * src[y * w + idx[t]].to_f64()).sum();
                }
            }
            for (y, (idx, wts)) in yt.iter().enumerate() {
                for x in 0..out_w {
                    let v: f64 = (0..4).map(|t| wts[t] * tmp[idx[t] * out_w + x]).sum();
                    out.set(b, ch, y, x, T::from_f64(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Ok(out)
}

/// Bicubic resampling by `scale_num / scale_den` (output size floored).
pub fn bicubic_resize<T: Scalar>(img: &Tensor<T>, scale_num: usize, scale_den: usize) -> Result<Tensor<T>> {
    if scale_num == 0 || scale_den == 0 {
        return Err(Error::pre("bicubic_resize", "scale factors must be positive"));
    }
    let oh = img.h() * scale_num / scale_den;
    let ow = img.w() * scale_num / scale_den;
    bicubic_resize_to(img, oh, ow)
}

/// Bilinear translation by `(dx, dy)` pixels: `out(y, x) = img(y - dy, x - dx)`,
/// half-sample symmetric borders.
pub fn random_shift<T: Scalar>(img: &Tensor<T>, dx: f64, dy: f64) -> Tensor<T> {
    let [n, c, h, w] = img.shape();
    let axis = |len: usize, d: f64| -> Vec<(usize, usize, f64)> {
        (0..len)
            .map(|o| {
                let s = o as f64 - d;
                let f0 = s.floor();
                let frac = s - f0;
                let i0 = reflect_index(f0 as isize, len);
                let i1 = reflect_index(f0 as isize + 1, len);
                (i0, i1, frac)
            })
            .collect()
    };
    let xs = axis(w, dx);
    let ys = axis(h, dy);
    let mut out = Tensor::zeros(img.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let at = |yy: usize, xx: usize| src[yy * w + xx].to_f64();
                    let top = if fx == 0.0 { at(y0, x0) } else { (1.0 - fx) * at(y0, x0) + fx * at(y0, x1) };
                    let v = if fy == 0.0 {
                        top
                    } else {
                        let bottom = if fx == 0.0 { at(y1, x0) } else { (1.0 - fx) * at(y1, x0) + fx * at(y1, x1) };
                        (1.0 - fy) * top + fy * bottom
                    };
                    out.set(b, ch, y, x, T::from_f64(v));
                }
            }
        }
    }
    out
}

/// Blur, bicubic down by `cfg.scale`, bicubic back up to the original size,
/// then a seeded sub-pixel shift of at most `cfg.shift_max` per axis.
pub fn degrade(hr: &Tensor<f32>, cfg: &DegradeConfig, scene_id: &str) -> Result<ImagePair> {
    cfg.validate()?;
    let [_, _, h, w] = hr.shape();
    let s = cfg.scale as usize;
    let blurred = gaussian_blur(hr, cfg.gauss_sigma, cfg.gauss_radius)?;
    let small = bicubic_resize_to(&blurred, (h / s).max(1), (w / s).max(1))?;
    let mut lr = bicubic_resize_to(&small, h, w)?;
    if cfg.shift_max > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dx = rng.gen_range(-cfg.shift_max..=cfg.shift_max);
        let dy = rng.gen_range(-cfg.shift_max..=cfg.shift_max);
        lr = random_shift(&lr, dx, dy).map(|v| v.clamp(0.0, 1.0));
    }
    ImagePair::new(lr, hr.clone(), scene_id, cfg.scale)
}

/// Procedural RGB test image in `[0, 1]`: smooth colour gradients, oriented
/// gratings and soft-edged discs and boxes.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![[0.0f64; 3]; h * w];
    let base: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.2..0.8)));
    let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            let t = (0.5 + 0.5 * (gx * (u - 0.5) + gy * (v - 0.5))).clamp(0.0, 1.0);
            for ch in 0..3 {
                img[y * w + x][ch] = base[0][ch] * (1.0 - t) + base[1][ch] * t;
            }
        }
    }
    for _ in 0..3 {
        let period = rng.gen_range(6.0..24.0);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let amp = rng.gen_range(0.03..0.1);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.0));
        for y in 0..h {
            for x in 0..w {
                let p = (x as f64 * theta.cos() + y as f64 * theta.sin()) / period * std::f64::consts::TAU;
                let s = amp * (p + phase).sin();
                for ch in 0..3 {
                    img[y * w + x][ch] += s * tint[ch];
                }
            }
        }
    }
    for i in 0..6 {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let size = rng.gen_range(0.08..0.3) * h.min(w) as f64;
        let colour: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let alpha = rng.gen_range(0.4..0.9);
        let disc = i % 2 == 0;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let dist = if disc {
                    (dx * dx + dy * dy).sqrt() - size
                } else {
                    dx.abs().max(dy.abs()) - size
                };
                // One-pixel anti-aliased edge.
                let cover = (0.5 - dist).clamp(0.0, 1.0) * alpha;
                for ch in 0..3 {
                    let p = &mut img[y * w + x][ch];
                    *p = *p * (1.0 - cover) + colour[ch] * cover;
                }
            }
        }
    }
    let mut t = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                t.set(0, ch, y, x, img[y * w + x][ch].clamp(0.0, 1.0) as f32);
            }
        }
    }
    t
}

/// `count` synthetic scenes of `size × size`, each degraded with its own seed.
pub fn synthetic_pairs(count: usize, size: usize, cfg: &DegradeConfig, seed: u64) -> Result<Vec<ImagePair>> {
    (0..count)
        .map(|i| {
            let scene_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let hr = synthetic_image(size, size, scene_seed);
            let dcfg = DegradeConfig {
                seed: cfg.seed.wrapping_add(scene_seed),
                ..cfg.clone()
            };
            degrade(&hr, &dcfg, &format!("synthetic_{i:04}"))
        })
        .collect()
}

/// Reads an 8-bit PNG (RGB, RGBA or grey) as a `1 × 3 × h × w` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::data(path, format!("undecodable PNG: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::data(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => return Err(Error::data(path, format!("unsupported colour type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::data(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::data(path, format!("undecodable PNG: {e}")))?;
    let stride = frame.line_size;
    let mut t = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let src = if channels == 1 { 0 } else { ch };
                let v = buf[y * stride + x * channels + src];
                t.set(0, ch, y, x, v as f32 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Writes the first batch item as an 8-bit RGB PNG (values clamped and rounded).
pub fn save_png(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let [_, c, h, w] = img.shape();
    if c != 3 {
        return Err(Error::dim("save_png", "c", 3, c));
    }
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push((img.at(0, ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::data(path, e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| Error::data(path, e.to_string()))?;
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::data(dir, e.to_string()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs `<lr_dir>/<name>.png` with `<hr_dir>/<name>.png`, sorted by name.
pub fn load_pair_dir(lr_dir: &Path, hr_dir: &Path) -> Result<Vec<ImagePair>> {
    let lr_names = png_names(lr_dir)?;
    let hr_names = png_names(hr_dir)?;
    if let Some(orphan) = lr_names.iter().find(|n| !hr_names.contains(n)) {
        return Err(Error::data(lr_dir.join(orphan), "no matching HR image"));
    }
    if let Some(orphan) = hr_names.iter().find(|n| !lr_names.contains(n)) {
        return Err(Error::data(hr_dir.join(orphan), "no matching LR image"));
    }
    lr_names
        .iter()
        .map(|name| {
            let lr_path: PathBuf = lr_dir.join(name);
            let lr = load_png(&lr_path)?;
            let hr = load_png(&hr_dir.join(name))?;
            if lr.shape() != hr.shape() {
                return Err(Error::data(
                    &lr_path,
                    format!("size {}x{} differs from HR {}x{}", lr.h(), lr.w(), hr.h(), hr.w()),
                ));
            }
            let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s);
            ImagePair::new(lr, hr, stem, 0)
        })
        .collect()
}

/// Crop window of a sampled patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchCoord {
    pub pair: usize,
    pub y: usize,
    pub x: usize,
}

/// Draws `count` crop windows of `patch × patch` uniformly over pairs and positions.
pub fn sample_patch_coords(pairs: &[ImagePair], patch: usize, count: usize, seed: u64) -> Result<Vec<PatchCoord>> {
    if patch == 0 || patch % 4 != 0 {
        return Err(Error::pre("sample_patches", format!("patch size {patch} must be a positive multiple of 4")));
    }
    let eligible: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if p.height() >= patch && p.width() >= patch {
                Some(i)
            } else {
                warn!(
                    "skipping {}: {}x{} smaller than patch {patch}",
                    p.scene_id,
                    p.height(),
                    p.width()
                );
                None
            }
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::pre("sample_patches", format!("no image is at least {patch}x{patch}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let pair = eligible[rng.gen_range(0..eligible.len())];
            let p = &pairs[pair];
            PatchCoord {
                pair,
                y: rng.gen_range(0..=p.height() - patch),
                x: rng.gen_range(0..=p.width() - patch),
            }
        })
        .collect())
}

/// Aligned random crops at identical coordinates in LR and HR.
pub fn sample_patches(pairs: &[ImagePair], patch: usize, count: usize, seed: u64) -> Result<Vec<ImagePair>> {
    sample_patch_coords(pairs, patch, count, seed)?
        .into_iter()
        .map(|c| {
            let p = &pairs[c.pair];
            ImagePair::new(
                p.lr.crop(c.y, c.x, patch, patch)?,
                p.hr.crop(c.y, c.x, patch, patch)?,
                format!("{}@{},{}", p.scene_id, c.y, c.x),
                p.nominal_scale,
            )
        })
        .collect()
}
