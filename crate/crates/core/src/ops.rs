//! Forward and backward kernels for the standard (non-dynamic) operators.
//!
//! Every function here is pure. The autodiff tape in [`crate::tape`] stitches
//! them together; they are also usable directly.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Scalar, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [_, ci, h, w] = input.shape();
        let [co, wci, kh, kw] = weight.shape();
        if wci != ci {
            return Err(Error::dim("conv2d weight", "c", ci, wci));
        }
        if kh != kw {
            return Err(Error::dim("conv2d kernel", "w", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(Error::pre("conv2d", format!("kernel size {kh} must be odd")));
        }
        if stride == 0 {
            return Err(Error::pre("conv2d", "stride must be at least 1"));
        }
        if h + 2 * padding < kh {
            return Err(Error::dim("conv2d input", "h", kh, h + 2 * padding));
        }
        if w + 2 * padding < kw {
            return Err(Error::dim("conv2d input", "w", kw, w + 2 * padding));
        }
        Ok(Self {
            in_channels: ci,
            out_channels: co,
            kernel: kh,
            stride,
            padding,
            in_h: h,
            in_w: w,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `[lo, hi)` whose source column `ox*stride + kj - padding`
    /// lies inside the input.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        valid_range(self.in_w, self.out_w, self.stride, kj, self.padding)
    }

    fn valid_rows(&self, ki: usize) -> (usize, usize) {
        valid_range(self.in_h, self.out_h, self.stride, ki, self.padding)
    }
}

fn valid_range(size: usize, out: usize, stride: usize, tap: usize, padding: usize) -> (usize, usize) {
    // o*stride + tap - padding in [0, size)
    let lo = if tap >= padding {
        0
    } else {
        (padding - tap).div_ceil(stride)
    };
    let hi = if size + padding > tap {
        ((size + padding - tap - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one `ci × h × w` image into a `(ci·k·k) × (oh·ow)` column matrix.
fn im2col<T: Scalar>(image: &[T], g: &ConvGeometry, col: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let p_len = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.in_channels {
        let plane = &image[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            let (ylo, yhi) = g.valid_rows(ki);
            for kj in 0..k {
                let dst = &mut col[row * p_len..(row + 1) * p_len];
                let (xlo, xhi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if oy < ylo || oy >= yhi || xlo >= xhi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ki - p;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    out_row[..xlo].fill(T::zero());
                    out_row[xhi..].fill(T::zero());
                    if s == 1 {
                        let x0 = xlo + kj - p;
                        out_row[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate().take(xhi).skip(xlo) {
                            *o = src[ox * s + kj - p];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into (accumulates onto) `image`.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, image: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let p_len = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.in_channels {
        let plane = &mut image[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            let (ylo, yhi) = g.valid_rows(ki);
            for kj in 0..k {
                let src = &col[row * p_len..(row + 1) * p_len];
                let (xlo, xhi) = g.valid_cols(kj);
                if xlo < xhi {
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - p;
                        let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                        let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in xlo..xhi {
                            let ix = ox * s + kj - p;
                            dst[ix] = dst[ix] + src_row[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `weight` is `co × ci × k × k` and `bias` holds `co` values.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    if bias.len() != g.out_channels {
        return Err(Error::dim("conv2d bias", "c", g.out_channels, bias.len()));
    }
    let n = input.n();
    let p_len = g.out_pixels();
    let k_len = g.patch_len();
    let mut out = Tensor::zeros([n, g.out_channels, g.out_h, g.out_w]);
    let mut col = vec![T::zero(); k_len * p_len];
    let w = Mat::new(weight.data(), g.out_channels, k_len);
    for b in 0..n {
        im2col(input.item(b), &g, &mut col);
        let dst = out.item_mut(b);
        for (co, &bv) in bias.iter().enumerate() {
            dst[co * p_len..(co + 1) * p_len].fill(bv);
        }
        gemm(w, Mat::new(&col, k_len, p_len), T::one(), dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input (when requested), weight and bias.
pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    let n = input.n();
    let expected = [n, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::dim("conv2d_backward upstream", "len", expected.iter().product(), grad_out.len()));
    }
    let p_len = g.out_pixels();
    let k_len = g.patch_len();
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = vec![T::zero(); g.out_channels];
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut col = vec![T::zero(); k_len * p_len];
    let w = Mat::new(weight.data(), g.out_channels, k_len);
    for b in 0..n {
        let go = grad_out.item(b);
        let go_mat = Mat::new(go, g.out_channels, p_len);
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb = go[co * p_len..(co + 1) * p_len]
                .iter()
                .fold(*gb, |acc, &v| acc + v);
        }
        im2col(input.item(b), &g, &mut col);
        gemm(go_mat, Mat::new(&col, k_len, p_len).t(), T::one(), grad_w.data_mut());
        if let Some(gi) = grad_in.as_mut() {
            gemm(w.t(), go_mat, T::zero(), &mut col);
            col2im(&col, &g, gi.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Upstream gradient masked by `input > 0`.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample_nearest2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let ow = 2 * w;
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let base = out.index(b, ch, 0, 0);
            let dst = &mut out.data_mut()[base..base + 4 * h * w];
            for y in 0..h {
                let row = &mut dst[2 * y * ow..(2 * y + 1) * ow];
                for x in 0..w {
                    let v = src[y * w + x];
                    row[2 * x] = v;
                    row[2 * x + 1] = v;
                }
                dst.copy_within(2 * y * ow..(2 * y + 1) * ow, (2 * y + 1) * ow);
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * ow + 2 * x;
                    let v = (src[i] + src[i + 1]) + (src[i + ow] + src[i + ow + 1]);
                    out.set(b, ch, y, x, v);
                }
            }
        }
    }
    out
}

/// Half-sample symmetric reflection of `i` into `[0, size)` (edge pixel repeated).
#[inline]
pub fn reflect_index(i: isize, size: usize) -> usize {
    let n = size as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Reflect-pads the bottom and right edges by `pad_h` rows and `pad_w` columns.
pub fn reflect_pad<T: Scalar>(input: &Tensor<T>, pad_h: usize, pad_w: usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros([n, c, h + pad_h, w + pad_w]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h + pad_h {
                let sy = reflect_index(y as isize, h);
                for x in 0..w + pad_w {
                    out.set(b, ch, y, x, input.at(b, ch, sy, reflect_index(x as isize, w)));
                }
            }
        }
    }
    out
}

pub fn reflect_pad_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, ph, pw] = grad_out.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect_index(y as isize, h);
                for x in 0..pw {
                    let sx = reflect_index(x as isize, w);
                    let i = out.index(b, ch, sy, sx);
                    out.data_mut()[i] = out.data()[i] + grad_out.at(b, ch, y, x);
                }
            }
        }
    }
    out
}

/// Mean absolute error.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    pred.expect_same_shape(target, "l1_loss")?;
    let sum = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t).abs());
    Ok(sum / T::from_f64(pred.len() as f64))
}

/// `sign(pred - target) / count`, with sign(0) = 0.
pub fn l1_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let inv = T::one() / T::from_f64(pred.len() as f64);
    pred.zip_map(target, |p, t| {
        if p > t {
            inv
        } else if p < t {
            -inv
        } else {
            T::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop, independent of im2col/gemm.
    fn conv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, bias: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let [n, ci, h, w] = x.shape();
        let [co, _, k, _] = wt.shape();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros([n, co, oh, ow]);
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..ci {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (oy * s + i) as isize - p as isize;
                                    let ix = (ox * s + j) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wt.at(o, c, i, j) * x.at(b, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.set(b, o, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_3x3() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &[0.0], 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(conv_oracle(&x, &w, &[0.0], 1, 1).data(), y.data());
    }

    #[test]
    fn conv_matches_loop_oracle_strided() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(h, w, s, p, k) in &[(7, 5, 2, 1, 3), (8, 8, 2, 1, 3), (6, 9, 1, 2, 5), (5, 5, 3, 0, 1)] {
            let x = Tensor::<f64>::uniform([2, 3, h, w], -1.0, 1.0, &mut rng);
            let wt = Tensor::<f64>::uniform([4, 3, k, k], -1.0, 1.0, &mut rng);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let y = conv2d(&x, &wt, &bias, s, p).unwrap();
            let o = conv_oracle(&x, &wt, &bias, s, p);
            assert_eq!(y.shape(), o.shape());
            assert!(y.max_abs_diff(&o).unwrap() < 1e-12);
        }
    }

    #[test]
    fn conv_delta_is_identity_and_zero_is_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform([1, 2, 5, 4], -1.0, 1.0, &mut rng);
        let mut delta = Tensor::zeros([2, 2, 3, 3]);
        delta.set(0, 0, 1, 1, 1.0);
        delta.set(1, 1, 1, 1, 1.0);
        assert_eq!(conv2d(&x, &delta, &[0.0, 0.0], 1, 1).unwrap().data(), x.data());
        let zero = Tensor::zeros([2, 2, 3, 3]);
        let y = conv2d(&x, &zero, &[0.5, -1.5], 1, 1).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros([8, 2, 3, 3]);
        match conv2d(&x, &w, &[0.0; 8], 1, 1) {
            Err(Error::Dimension { axis, expected, actual, .. }) => {
                assert_eq!((axis, expected, actual), ("c", 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let w = Tensor::<f32>::zeros([8, 3, 3, 3]);
        assert!(conv2d(&x, &w, &[0.0; 7], 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([8, 3, 2, 2]), &[0.0; 8], 1, 1).is_err());
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv_backward_input(g)> for zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform([2, 3, 7, 6], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform([5, 3, 3, 3], -1.0, 1.0, &mut rng);
        for s in [1, 2] {
            let y = conv2d(&x, &wt, &[0.0; 5], s, 1).unwrap();
            let g = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
            let grads = conv2d_backward(&g, &x, &wt, s, 1, true).unwrap();
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let gi = grads.input.unwrap();
            let rhs: f64 = x.data().iter().zip(gi.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let rhs_w: f64 = wt.data().iter().zip(grads.weight.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_values_and_grad() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::<f64>::full([1, 2, 2, 2], -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pts = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![3.0, -3.0]).unwrap();
        let ones = Tensor::full([1, 1, 1, 2], 1.0);
        assert_eq!(relu_backward(&ones, &pts).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn upsample_roundtrip_sum() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let up = upsample_nearest2(&x);
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample_nearest2_backward(&up).data(), &[4.0, 8.0]);
    }

    #[test]
    fn reflect_index_half_sample() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn l1_values() {
        let t = Tensor::<f64>::full([1, 1, 2, 2], 0.25);
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let p = t.map(|v| v + 0.5);
        assert_eq!(l1_loss(&p, &t).unwrap(), 0.5);
        assert!(l1_loss_backward(&t, &t).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(l1_loss(&t, &Tensor::zeros([1, 1, 2, 3])).is_err());
    }
}
