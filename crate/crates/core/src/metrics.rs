//! PSNR and SSIM for images in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Colour space a metric is computed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsnrMode {
    Rgb,
    /// BT.601 luma, `0.299 R + 0.587 G + 0.114 B`.
    Y,
}

impl fmt::Display for PsnrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsnrMode::Rgb => "rgb",
            PsnrMode::Y => "y",
        })
    }
}

impl FromStr for PsnrMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(PsnrMode::Rgb),
            "y" => Ok(PsnrMode::Y),
            other => Err(format!("unknown metric mode `{other}` (expected rgb or y)")),
        }
    }
}

/// PSNR in dB, or `Identical` when the mean squared error is exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// dB value, `+inf` for identical images.
    pub fn value(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.6}"),
        }
    }
}

/// Single-channel luma image with the same `n`, `h`, `w`.
pub fn rgb_to_y<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.shape();
    if c != 3 {
        return Err(Error::dim("rgb_to_y", "c", 3, c));
    }
    let (kr, kg, kb) = (T::from_f64(0.299), T::from_f64(0.587), T::from_f64(0.114));
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let (r, g, bl) = (img.plane(b, 0), img.plane(b, 1), img.plane(b, 2));
        for (i, o) in out.item_mut(b).iter_mut().enumerate() {
            *o = kr * r[i] + kg * g[i] + kb * bl[i];
        }
    }
    Ok(out)
}

fn luma_f64<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<f64>> {
    let img = img.cast::<f64>();
    if img.c() == 1 {
        Ok(img)
    } else {
        rgb_to_y(&img)
    }
}

/// Drops `shave` pixels from every border.
pub fn shave<T: Scalar>(img: &Tensor<T>, shave: usize) -> Result<Tensor<T>> {
    if shave == 0 {
        return Ok(img.clone());
    }
    let [_, _, h, w] = img.shape();
    if 2 * shave >= h || 2 * shave >= w {
        return Err(Error::pre("shave", format!("cannot shave {shave} px from {h}x{w}")));
    }
    img.crop(shave, shave, h - 2 * shave, w - 2 * shave)
}

/// `10·log10(1 / MSE)` with peak value 1.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mode: PsnrMode) -> Result<Psnr> {
    a.expect_same_shape(b, "psnr")?;
    let (a, b) = match mode {
        PsnrMode::Rgb => (a.cast::<f64>(), b.cast::<f64>()),
        PsnrMode::Y => (luma_f64(a)?, luma_f64(b)?),
    };
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (1.0 / mse).log10())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Gaussian-windowed SSIM on luma with the standard constants.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean SSIM over every window position fully inside the image (dynamic range 1).
pub fn ssim_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, p: &SsimParams) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let [n, _, h, w] = a.shape();
    if h.min(w) < p.window {
        return Err(Error::pre("ssim", format!("image {h}x{w} smaller than the {0}x{0} window", p.window)));
    }
    let (ya, yb) = (luma_f64(a)?, luma_f64(b)?);
    let r = (p.window / 2) as isize;
    let taps: Vec<f64> = {
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * p.sigma * p.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let c1 = (p.k1 * 1.0).powi(2);
    let c2 = (p.k2 * 1.0).powi(2);
    let (oh, ow) = (h - p.window + 1, w - p.window + 1);

    // Valid-mode separable filter.
    let filter = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; h * ow];
        for y in 0..h {
            for x in 0..ow {
                tmp[y * ow + x] = taps.iter().enumerate().map(|(t, &k)| k * src[y * w + x + t]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps.iter().enumerate().map(|(t, &k)| k * tmp[(y + t) * ow + x]).sum();
            }
        }
        out
    };

    let mut total = 0.0;
    for item in 0..n {
        let (x, y) = (ya.item(item), yb.item(item));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let (mx, my) = (filter(x), filter(y));
        let (fxx, fyy, fxy) = (filter(&xx), filter(&yy), filter(&xy));
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let sxx = fxx[i] - mx[i] * mx[i];
            let syy = fyy[i] - my[i] * my[i];
            let sxy = fxy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2);
            acc += num / den;
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / n as f64)
}

/// One evaluated image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub psnr: Psnr,
    pub ssim: f64,
    pub forward_time_s: f64,
}

impl EvalRecord {
    pub const CSV_HEADER: &'static str = "image_id,psnr_db,ssim,forward_time_s";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6},{:.6}", self.image_id, self.psnr, self.ssim, self.forward_time_s)
    }
}

/// Mean PSNR over finite rows (`None` when every row is identical) and mean SSIM.
pub fn aggregate(records: &[EvalRecord]) -> (Option<f64>, f64) {
    let finite: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.psnr {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        })
        .collect();
    let mean_psnr = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    let mean_ssim = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.ssim).sum::<f64>() / records.len() as f64
    };
    (mean_psnr, mean_ssim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn luma_weights() {
        let white = Tensor::<f64>::full([1, 3, 2, 2], 1.0);
        assert!(rgb_to_y(&white).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let mut green = Tensor::<f64>::zeros([1, 3, 1, 1]);
        green.set(0, 1, 0, 0, 1.0);
        assert_eq!(rgb_to_y(&green).unwrap().data(), &[0.587]);
        let grey = Tensor::<f64>::full([1, 3, 1, 1], 0.37);
        assert!((rgb_to_y(&grey).unwrap().data()[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn psnr_offset_and_identity() {
        let a = synthetic_image(16, 16, 1).map(|v| v * 0.9).cast::<f64>();
        let b = a.map(|v| v + 1.0 / 255.0);
        let db = psnr(&a, &b, PsnrMode::Rgb).unwrap().value();
        assert!((db - 20.0 * 255f64.log10()).abs() < 1e-6);
        assert!((db - 48.13).abs() < 0.01);
        assert_eq!(psnr(&a, &a, PsnrMode::Y).unwrap(), Psnr::Identical);
        assert_eq!(psnr(&a, &b, PsnrMode::Y).unwrap(), psnr(&b, &a, PsnrMode::Y).unwrap());
        assert!(psnr(&a, &Tensor::zeros([1, 3, 16, 15]), PsnrMode::Rgb).is_err());
    }

    #[test]
    fn ssim_basic_properties() {
        let x = synthetic_image(32, 32, 2);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &inv).unwrap() < 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Tensor::<f32>::uniform(x.shape(), -0.05, 0.05, &mut rng);
        let y = x.add(&noise).unwrap();
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
        assert!(ssim(&Tensor::<f32>::zeros([1, 3, 10, 20]), &Tensor::zeros([1, 3, 10, 20])).is_err());
    }

    #[test]
    fn shave_crops_border() {
        let x = Tensor::<f32>::zeros([1, 3, 10, 12]);
        assert_eq!(shave(&x, 2).unwrap().shape(), [1, 3, 6, 8]);
        assert!(shave(&x, 5).is_err());
    }

    #[test]
    fn csv_rows() {
        let r = EvalRecord {
            image_id: "a".into(),
            psnr: Psnr::Identical,
            ssim: 1.0,
            forward_time_s: 0.5,
        };
        assert_eq!(r.csv_row(), "a,identical,1.000000,0.500000");
        let recs = vec![
            EvalRecord { psnr: Psnr::Db(30.0), ..r.clone() },
            EvalRecord { psnr: Psnr::Db(34.0), ssim: 0.5, ..r.clone() },
        ];
        assert_eq!(aggregate(&recs), (Some(32.0), 0.75));
    }
}
