//! Per-pixel dynamic filtering.
//!
//! A network predicts `k²` channels at every pixel; those channels are read as
//! a `k × k` kernel that filters the neighbourhood of that pixel. Several
//! kernel sizes can be applied to the same image and summed.
//!
//! Channel `m` of a field maps to kernel element `(m / k, m % k)`, so a field
//! tensor of shape `n × k² × h × w` already *is* the kernel bank; reshaping is
//! a relabelling that never touches the values.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One `k × k` kernel per pixel, stored as an `n × k² × h × w` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField<T: Scalar = f32> {
    k: usize,
    weights: Tensor<T>,
}

impl<T: Scalar> KernelField<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    /// Back to the channel layout it was built from.
    pub fn into_channels(self) -> Tensor<T> {
        self.weights
    }

    /// Kernel element `(row, col)` of the kernel that belongs to pixel `(y, x)`.
    #[inline]
    pub fn weight(&self, n: usize, y: usize, x: usize, row: usize, col: usize) -> T {
        self.weights.at(n, row * self.k + col, y, x)
    }

    /// The full kernel of pixel `(y, x)` as rows.
    pub fn kernel_at(&self, n: usize, y: usize, x: usize) -> Vec<Vec<T>> {
        (0..self.k)
            .map(|r| (0..self.k).map(|c| self.weight(n, y, x, r, c)).collect())
            .collect()
    }

    /// Field whose kernel is the centre one-hot delta everywhere.
    pub fn identity(n: usize, k: usize, h: usize, w: usize) -> Result<Self> {
        let mut t = Tensor::zeros([n, k * k, h, w]);
        let centre = (k / 2) * k + k / 2;
        for b in 0..n {
            let base = t.index(b, centre, 0, 0);
            t.data_mut()[base..base + h * w].fill(T::one());
        }
        reshape_channels_to_kernels(t, k)
    }

    /// The same kernel at every pixel.
    pub fn uniform(kernel: &[T], k: usize, n: usize, h: usize, w: usize) -> Result<Self> {
        if kernel.len() != k * k {
            return Err(Error::dim("KernelField::uniform", "c", k * k, kernel.len()));
        }
        let mut t = Tensor::zeros([n, k * k, h, w]);
        for b in 0..n {
            for (m, &v) in kernel.iter().enumerate() {
                let base = t.index(b, m, 0, 0);
                t.data_mut()[base..base + h * w].fill(v);
            }
        }
        reshape_channels_to_kernels(t, k)
    }
}

/// Reads an `n × k² × h × w` feature map as a per-pixel kernel bank.
pub fn reshape_channels_to_kernels<T: Scalar>(field: Tensor<T>, k: usize) -> Result<KernelField<T>> {
    if k % 2 == 0 {
        return Err(Error::pre("reshape_channels_to_kernels", format!("kernel size {k} must be odd")));
    }
    if field.c() != k * k {
        return Err(Error::dim("reshape_channels_to_kernels", "c", k * k, field.c()));
    }
    Ok(KernelField { k, weights: field })
}

/// Kernel fields of distinct sizes over the same `(n, h, w)` grid, applied in
/// declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFieldSet<T: Scalar = f32> {
    fields: Vec<KernelField<T>>,
}

impl<T: Scalar> KernelFieldSet<T> {
    pub fn new(fields: Vec<KernelField<T>>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::pre("KernelFieldSet", "at least one field is required"))?;
        let [n, _, h, w] = first.weights.shape();
        for (i, f) in fields.iter().enumerate() {
            let ctx = format!("KernelFieldSet field {i}");
            let [fn_, _, fh, fw] = f.weights.shape();
            if fn_ != n {
                return Err(Error::dim(ctx, "n", n, fn_));
            }
            if fh != h {
                return Err(Error::dim(ctx, "h", h, fh));
            }
            if fw != w {
                return Err(Error::dim(ctx, "w", w, fw));
            }
            if fields[..i].iter().any(|o| o.k == f.k) {
                return Err(Error::pre(ctx, format!("duplicate kernel size {}", f.k)));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[KernelField<T>] {
        &self.fields
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.k).collect()
    }

    /// Σ k² over the member fields.
    pub fn channel_budget(&self) -> usize {
        self.fields.iter().map(|f| f.k * f.k).sum()
    }
}

fn check_spatial<T: Scalar>(image: &Tensor<T>, kernels: &KernelField<T>, context: &str) -> Result<()> {
    let [n, _, h, w] = image.shape();
    let [kn, _, kh, kw] = kernels.weights.shape();
    if kn != n {
        return Err(Error::dim(context, "n", n, kn));
    }
    if kh != h {
        return Err(Error::dim(context, "h", h, kh));
    }
    if kw != w {
        return Err(Error::dim(context, "w", w, kw));
    }
    Ok(())
}

/// Range of `o` in `[0, size)` such that `o + offset` also lies in `[0, size)`.
#[inline]
fn shifted_range(size: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (size as isize - offset.max(0)).max(0) as usize;
    (lo.min(hi), hi)
}

/// Applies the per-pixel kernels to every channel of `image`, zero padding
/// outside the borders.
///
/// Loops run tap-major over contiguous rows so the inner loop vectorises; each
/// output pixel still accumulates its taps in row-major kernel order.
pub fn dynamic_filter<T: Scalar>(image: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    check_spatial(image, kernels, "dynamic_filter")?;
    let [n, c, h, w] = image.shape();
    let k = kernels.k;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(image.shape());
    let hw = h * w;
    for b in 0..n {
        let kw = kernels.weights.item(b);
        for ch in 0..c {
            let src = image.plane(b, ch);
            let base = out.index(b, ch, 0, 0);
            let dst = &mut out.data_mut()[base..base + hw];
            for i in 0..k {
                let dy = i as isize - r;
                let (ylo, yhi) = shifted_range(h, dy);
                for j in 0..k {
                    let dx = j as isize - r;
                    let (xlo, xhi) = shifted_range(w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let tap = &kw[(i * k + j) * hw..(i * k + j + 1) * hw];
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (xlo as isize + dx) as usize;
                        let len = xhi - xlo;
                        let d = &mut dst[y * w + xlo..y * w + xhi];
                        let t = &tap[y * w + xlo..y * w + xhi];
                        let s = &src[sy * w + sx0..sy * w + sx0 + len];
                        for ((o, &kv), &iv) in d.iter_mut().zip(t).zip(s) {
                            *o = *o + kv * iv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Plain per-pixel reference implementation of [`dynamic_filter`].
pub fn dynamic_filter_naive<T: Scalar>(image: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    check_spatial(image, kernels, "dynamic_filter_naive")?;
    let [n, c, h, w] = image.shape();
    let k = kernels.k;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(image.shape());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for i in 0..k {
                        for j in 0..k {
                            let sy = y as isize + i as isize - r;
                            let sx = x as isize + j as isize - r;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc = acc + kernels.weight(b, y, x, i, j) * image.at(b, ch, sy as usize, sx as usize);
                        }
                    }
                    out.set(b, ch, y, x, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`dynamic_filter`] with respect to the image and the kernel field.
pub fn dynamic_filter_backward<T: Scalar>(
    upstream: &Tensor<T>,
    image: &Tensor<T>,
    kernels: &KernelField<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_spatial(image, kernels, "dynamic_filter_backward")?;
    image.expect_same_shape(upstream, "dynamic_filter_backward upstream")?;
    let [n, c, h, w] = image.shape();
    let k = kernels.k;
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut grad_image = Tensor::zeros(image.shape());
    let mut grad_kernels = Tensor::zeros(kernels.weights.shape());
    for b in 0..n {
        for ch in 0..c {
            let up = upstream.plane(b, ch);
            let src = image.plane(b, ch);
            for i in 0..k {
                let dy = i as isize - r;
                let (ylo, yhi) = shifted_range(h, dy);
                for j in 0..k {
                    let dx = j as isize - r;
                    let (xlo, xhi) = shifted_range(w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let m = i * k + j;
                    let tap_base = kernels.weights.index(b, m, 0, 0);
                    let gk_base = grad_kernels.index(b, m, 0, 0);
                    let gi_base = grad_image.index(b, ch, 0, 0);
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        for x in xlo..xhi {
                            let sx = (x as isize + dx) as usize;
                            let u = up[y * w + x];
                            let gk = &mut grad_kernels.data_mut()[gk_base + y * w + x];
                            *gk = *gk + u * src[sy * w + sx];
                            let kv = kernels.weights.data()[tap_base + y * w + x];
                            let gi = &mut grad_image.data_mut()[gi_base + sy * w + sx];
                            *gi = *gi + kv * u;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(grad_kernels.item(b).len(), k * k * hw);
    }
    Ok((grad_image, grad_kernels))
}

/// Σ over fields of [`dynamic_filter`], accumulated in the set's order.
pub fn multiscale_aggregate<T: Scalar>(image: &Tensor<T>, set: &KernelFieldSet<T>) -> Result<Tensor<T>> {
    let mut acc: Option<Tensor<T>> = None;
    for (i, field) in set.fields.iter().enumerate() {
        check_spatial(image, field, &format!("multiscale_aggregate field {i}"))?;
        let part = dynamic_filter(image, field)?;
        acc = Some(match acc {
            None => part,
            Some(a) => a.add(&part)?,
        });
    }
    acc.ok_or_else(|| Error::pre("multiscale_aggregate", "empty kernel set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(k: usize, shape: [usize; 3], rng: &mut ChaCha8Rng) -> KernelField<f64> {
        let [n, h, w] = shape;
        reshape_channels_to_kernels(Tensor::uniform([n, k * k, h, w], -1.0, 1.0, rng), k).unwrap()
    }

    #[test]
    fn reshape_is_row_major() {
        let t = Tensor::<f64>::from_vec([1, 9, 1, 1], (0..9).map(f64::from).collect()).unwrap();
        let f = reshape_channels_to_kernels(t.clone(), 3).unwrap();
        assert_eq!(
            f.kernel_at(0, 0, 0),
            vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0], vec![6.0, 7.0, 8.0]]
        );
        assert_eq!(f.into_channels(), t);
        let zero = reshape_channels_to_kernels(Tensor::<f64>::zeros([1, 25, 2, 2]), 5).unwrap();
        assert!(zero.weights().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reshape_rejects_wrong_channel_count() {
        let err = reshape_channels_to_kernels(Tensor::<f32>::zeros([1, 10, 2, 2]), 3).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "c", expected: 9, actual: 10, .. }));
        assert!(reshape_channels_to_kernels(Tensor::<f32>::zeros([1, 4, 2, 2]), 2).is_err());
    }

    #[test]
    fn identity_kernels_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = Tensor::<f64>::uniform([2, 3, 6, 5], -1.0, 1.0, &mut rng);
        for k in [1, 3, 5, 7] {
            let id = KernelField::identity(2, k, 6, 5).unwrap();
            assert_eq!(dynamic_filter(&img, &id).unwrap().data(), img.data());
            assert_eq!(dynamic_filter_naive(&img, &id).unwrap().data(), img.data());
        }
    }

    #[test]
    fn constant_image_all_ones_kernel() {
        let img = Tensor::<f64>::full([1, 1, 4, 4], 0.5);
        let f = KernelField::uniform(&[1.0; 9], 3, 1, 4, 4).unwrap();
        let out = dynamic_filter(&img, &f).unwrap();
        assert_eq!(out.at(0, 0, 1, 1), 4.5);
        assert_eq!(out.at(0, 0, 0, 0), 2.0);
        assert_eq!(out.at(0, 0, 0, 2), 3.0);
        assert_eq!(out.data(), dynamic_filter_naive(&img, &f).unwrap().data());
    }

    #[test]
    fn single_pixel_scalar_kernel() {
        let img = Tensor::<f64>::full([1, 1, 1, 1], 7.0);
        let f = KernelField::uniform(&[2.0], 1, 1, 1, 1).unwrap();
        assert_eq!(dynamic_filter_naive(&img, &f).unwrap().data(), &[14.0]);
        assert_eq!(dynamic_filter(&img, &f).unwrap().data(), &[14.0]);
    }

    #[test]
    fn uniform_field_equals_per_channel_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::<f64>::uniform([1, 3, 7, 6], 0.0, 1.0, &mut rng);
        let kernel: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4).collect();
        let f = KernelField::uniform(&kernel, 5, 1, 7, 6).unwrap();
        let out = dynamic_filter(&img, &f).unwrap();
        // Depthwise conv via a block-diagonal weight.
        let mut wt = Tensor::<f64>::zeros([3, 3, 5, 5]);
        for c in 0..3 {
            for (m, &v) in kernel.iter().enumerate() {
                wt.set(c, c, m / 5, m % 5, v);
            }
        }
        let reference = conv2d(&img, &wt, &[0.0; 3], 1, 2).unwrap();
        assert!(out.max_abs_diff(&reference).unwrap() < 1e-6);
    }

    #[test]
    fn backward_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::<f64>::uniform([1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let up = Tensor::<f64>::uniform([1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let id = KernelField::identity(1, 3, 5, 5).unwrap();
        let (gi, _) = dynamic_filter_backward(&up, &img, &id).unwrap();
        assert_eq!(gi.data(), up.data());
        let f = random_field(3, [1, 5, 5], &mut rng);
        let (_, gk) = dynamic_filter_backward(&up, &Tensor::zeros([1, 2, 5, 5]), &f).unwrap();
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_of_identities_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::<f64>::uniform([1, 3, 8, 8], -1.0, 1.0, &mut rng);
        let set = KernelFieldSet::new(
            [3, 5, 7].iter().map(|&k| KernelField::identity(1, k, 8, 8).unwrap()).collect(),
        )
        .unwrap();
        assert_eq!(set.channel_budget(), 83);
        let out = multiscale_aggregate(&img, &set).unwrap();
        assert_eq!(out.data(), img.scale(3.0).data());
    }

    #[test]
    fn set_rejects_mismatch_and_names_index() {
        let a = KernelField::<f32>::identity(1, 3, 4, 4).unwrap();
        let b = KernelField::<f32>::identity(1, 5, 4, 5).unwrap();
        match KernelFieldSet::new(vec![a.clone(), b]) {
            Err(Error::Dimension { context, axis: "w", .. }) => assert!(context.contains("field 1")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(KernelFieldSet::new(vec![a.clone(), a.clone()]).is_err());
        let set = KernelFieldSet::new(vec![a]).unwrap();
        let img = Tensor::<f32>::zeros([1, 3, 4, 6]);
        match multiscale_aggregate(&img, &set) {
            Err(Error::Dimension { context, .. }) => assert!(context.contains("field 0")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
