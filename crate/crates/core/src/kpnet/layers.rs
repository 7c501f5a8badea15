//! Differentiable building blocks of the kernel prediction network: 3x3
//! convolutions (zero padding 1, stride 1 or 2), channel-wise PReLU and
//! bilinear upsampling with half-pixel centers.

use crate::real::Real;
use crate::tensor::Tensor;

/// Unfolds 3x3 neighbourhoods into a `[cin * 9, ho * wo]` matrix.
fn im2col<T: Real>(x: &Tensor<T>, stride: usize) -> (Vec<T>, usize, usize) {
    let (cin, h, w) = x.chw();
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let n = ho * wo;
    let mut cols = vec![T::zero(); cin * 9 * n];
    let src = x.data();
    for c in 0..cin {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    if stride == 1 {
                        // ix = ox + kx - 1
                        let lo = (1 - kx as isize).max(0) as usize;
                        let hi = (w as isize + 1 - kx as isize).min(wo as isize) as usize;
                        dst[lo..hi].copy_from_slice(&src_row[lo + kx - 1..hi + kx - 1]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, stride: usize) -> Tensor<T> {
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let n = ho * wo;
    let mut out = Tensor::zeros(&[cin, h, w]);
    let dst = out.data_mut();
    for c in 0..cin {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * wo..][..wo];
                    if stride == 1 {
                        let lo = (1 - kx as isize).max(0) as usize;
                        let hi = (w as isize + 1 - kx as isize).min(wo as isize) as usize;
                        for (d, s) in dst_row[lo + kx - 1..hi + kx - 1].iter_mut().zip(&src[lo..hi]) {
                            *d += *s;
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3x3 convolution. `weight` is `[cout, cin, 3, 3]` flattened, `bias` is `[cout]`.
pub fn conv3x3<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], stride: usize) -> Tensor<T> {
    let cin = x.chw().0;
    let cout = bias.len();
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let (cols, ho, wo) = im2col(x, stride);
    let n = ho * wo;
    let mut out = vec![T::zero(); cout * n];
    for (o, &b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = b);
    }
    let kdim = cin * 9;
    T::gemm(
        cout,
        kdim,
        n,
        T::one(),
        weight,
        (kdim as isize, 1),
        &cols,
        (n as isize, 1),
        T::one(),
        &mut out,
        (n as isize, 1),
    );
    Tensor::new(vec![cout, ho, wo], out).expect("conv output extent")
}

/// Backward of [`conv3x3`]. Accumulates into `grad_weight` and `grad_bias`
/// and returns the input gradient when `need_input_grad` is set.
pub fn conv3x3_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    stride: usize,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let (cin, h, w) = x.chw();
    let (cout, ho, wo) = grad_out.chw();
    let n = ho * wo;
    let kdim = cin * 9;
    let (cols, cho, cwo) = im2col(x, stride);
    debug_assert_eq!((cho, cwo), (ho, wo));
    let g = grad_out.data();
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += g[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    // dW += dY * cols^T
    T::gemm(
        cout,
        n,
        kdim,
        T::one(),
        g,
        (n as isize, 1),
        &cols,
        (1, n as isize),
        T::one(),
        grad_weight,
        (kdim as isize, 1),
    );
    if !need_input_grad {
        return None;
    }
    // dcols = W^T * dY
    let mut dcols = vec![T::zero(); kdim * n];
    T::gemm(
        kdim,
        cout,
        n,
        T::one(),
        weight,
        (1, kdim as isize),
        g,
        (n as isize, 1),
        T::zero(),
        &mut dcols,
        (n as isize, 1),
    );
    Some(col2im(&dcols, cin, h, w, stride))
}

/// Channel-wise parametric ReLU.
pub fn prelu<T: Real>(x: &Tensor<T>, slope: &[T]) -> Tensor<T> {
    let (c, h, w) = x.chw();
    debug_assert_eq!(slope.len(), c);
    let mut out = x.clone();
    for (ch, &a) in slope.iter().enumerate() {
        for v in &mut out.data_mut()[ch * h * w..(ch + 1) * h * w] {
            if *v <= T::zero() {
                *v = *v * a;
            }
        }
    }
    out
}

pub fn prelu_backward<T: Real>(x: &Tensor<T>, slope: &[T], grad_out: &Tensor<T>, grad_slope: &mut [T]) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let mut gx = grad_out.clone();
    for ch in 0..c {
        let xs = &x.data()[ch * h * w..(ch + 1) * h * w];
        let gs = &mut gx.data_mut()[ch * h * w..(ch + 1) * h * w];
        let mut ga = T::zero();
        for (g, &v) in gs.iter_mut().zip(xs) {
            if v <= T::zero() {
                ga += *g * v;
                *g = *g * slope[ch];
            }
        }
        grad_slope[ch] += ga;
    }
    gx
}

/// Source taps `(i0, i1, frac)` of every output index for bilinear resizing
/// by an integer factor with half-pixel centers (align corners off).
fn bilinear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return x.clone();
    }
    let (c, h, w) = x.chw();
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = T::of(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::of(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("upsample extent")
}

/// Exact transpose of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Real>(grad_out: &Tensor<T>, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return grad_out.clone();
    }
    let (c, oh, ow) = grad_out.chw();
    let (h, w) = (oh / factor, ow / factor);
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let g = &grad_out.data()[ch * oh * ow..(ch + 1) * oh * ow];
        let plane = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let v = g[oy * ow + ox];
                let (top, bot) = (v * (T::one() - fy), v * fy);
                plane[y0 * w + x0] += top * (T::one() - fx);
                plane[y0 * w + x1] += top * fx;
                plane[y1 * w + x0] += bot * (T::one() - fx);
                plane[y1 * w + x1] += bot * fx;
            }
        }
    }
    out
}
