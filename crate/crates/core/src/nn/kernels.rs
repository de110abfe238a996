//! Forward and backward kernels for the differentiable operations.
//!
//! These work on raw [`Tensor4`] values; the tape in [`super::graph`] wires
//! them together. Accumulation order is fixed (batch-major, then channel) so
//! results are bit-reproducible.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Zero padding policy for [`conv2d_forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// `(k - 1) / 2` on every side; preserves extent for odd kernels at stride 1.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn resolve(self, kernel: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (kernel - 1) / 2,
            Padding::Explicit(p) => p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn cols_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

pub fn conv_geometry(
    input: Shape4,
    weight: Shape4,
    bias: Option<Shape4>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(Error::config("conv2d stride must be at least 1"));
    }
    if weight.c != input.c {
        return Err(Error::config(format!(
            "conv2d weight expects {} input channels, input {input} has {}",
            weight.c, input.c
        )));
    }
    if let Some(b) = bias {
        if b.numel() != weight.n {
            return Err(Error::config(format!(
                "conv2d bias has {} values for {} output channels",
                b.numel(),
                weight.n
            )));
        }
    }
    let pad = padding.resolve(weight.h.max(weight.w));
    let (ph, pw) = (input.h + 2 * pad, input.w + 2 * pad);
    if weight.h > ph || weight.w > pw {
        return Err(Error::config(format!(
            "conv2d kernel {}x{} exceeds padded input {ph}x{pw}",
            weight.h, weight.w
        )));
    }
    Ok(ConvGeometry {
        in_c: input.c,
        out_c: weight.n,
        kh: weight.h,
        kw: weight.w,
        stride,
        pad,
        in_h: input.h,
        in_w: input.w,
        out_h: (ph - weight.h) / stride + 1,
        out_w: (pw - weight.w) / stride + 1,
    })
}

/// Unfolds one `(c, h, w)` image into a `(c*kh*kw, out_h*out_w)` matrix.
fn im2col(image: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let p = g.cols_len();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image gradient.
fn col2im(cols: &[f64], g: &ConvGeometry, image: &mut [f64]) {
    let p = g.cols_len();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index reachable through the given strides lies inside the
    // slices; callers pass dense matrices whose extents match (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn image_cols<'a>(x: &'a Tensor4, n: usize, g: &ConvGeometry) -> Cow<'a, [f64]> {
    let img_len = g.in_c * g.in_h * g.in_w;
    let img = &x.data()[n * img_len..(n + 1) * img_len];
    if g.is_pointwise() {
        Cow::Borrowed(img)
    } else {
        let mut cols = vec![0.0; g.cols_rows() * g.cols_len()];
        im2col(img, g, &mut cols);
        Cow::Owned(cols)
    }
}

pub fn conv2d_forward(
    x: &Tensor4,
    w: &Tensor4,
    b: Option<&Tensor4>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor4, ConvGeometry)> {
    let g = conv_geometry(x.shape(), w.shape(), b.map(|b| b.shape()), stride, padding)?;
    let batch = x.shape().n;
    let (kk, p) = (g.cols_rows(), g.cols_len());
    let mut out = Tensor4::zeros([batch, g.out_c, g.out_h, g.out_w]);
    for n in 0..batch {
        let cols = image_cols(x, n, &g);
        let dst = &mut out.data_mut()[n * g.out_c * p..(n + 1) * g.out_c * p];
        gemm(
            g.out_c,
            kk,
            p,
            w.data(),
            (kk as isize, 1),
            &cols,
            (p as isize, 1),
            0.0,
            dst,
        );
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok((out, g))
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    x: &Tensor4,
    w: &Tensor4,
    g: &ConvGeometry,
    d_out: &Tensor4,
    want_bias: bool,
) -> (Tensor4, Tensor4, Option<Tensor4>) {
    let batch = x.shape().n;
    let (kk, p) = (g.cols_rows(), g.cols_len());
    let img_len = g.in_c * g.in_h * g.in_w;
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut db = want_bias.then(|| Tensor4::zeros([1, g.out_c, 1, 1]));
    let mut dcols = vec![0.0; kk * p];
    for n in 0..batch {
        let dy = &d_out.data()[n * g.out_c * p..(n + 1) * g.out_c * p];
        let cols = image_cols(x, n, g);
        // dW += dY * cols^T
        gemm(
            g.out_c,
            p,
            kk,
            dy,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            1.0,
            dw.data_mut(),
        );
        if let Some(db) = db.as_mut() {
            for (co, chunk) in dy.chunks(p).enumerate() {
                db.data_mut()[co] += chunk.iter().sum::<f64>();
            }
        }
        // dcols = W^T * dY
        let dimg = &mut dx.data_mut()[n * img_len..(n + 1) * img_len];
        if g.is_pointwise() {
            gemm(
                kk,
                g.out_c,
                p,
                w.data(),
                (1, kk as isize),
                dy,
                (p as isize, 1),
                0.0,
                dimg,
            );
        } else {
            gemm(
                kk,
                g.out_c,
                p,
                w.data(),
                (1, kk as isize),
                dy,
                (p as isize, 1),
                0.0,
                &mut dcols,
            );
            col2im(&dcols, g, dimg);
        }
    }
    (dx, dw, db)
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index that won (first in scan order on ties).
pub fn maxpool2_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::config(format!(
            "maxpool2 needs even spatial extents, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros([s.n, s.c, oh, ow]);
    let mut arg = Vec::with_capacity(out.len());
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.index(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    out.data_mut()[o] = x.data()[best];
                    arg.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward(input_shape: Shape4, argmax: &[usize], d_out: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

pub fn upsample2_forward(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor4::zeros([s.n, s.c, oh, ow]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c).to_vec();
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * s.w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(input_shape: Shape4, d_out: &Tensor4) -> Tensor4 {
    let s = input_shape;
    let ow = s.w * 2;
    let mut dx = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = d_out.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (y, row) in src.chunks(ow).enumerate() {
                for (xx, g) in row.iter().enumerate() {
                    dst[(y / 2) * s.w + xx / 2] += g;
                }
            }
        }
    }
    dx
}

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::config(format!(
            "concat_channels needs equal batch and spatial extents, got {sa} and {sb}"
        )));
    }
    let p = sa.plane();
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * p..(n + 1) * sa.c * p]);
        data.extend_from_slice(&b.data()[n * sb.c * p..(n + 1) * sb.c * p]);
    }
    Tensor4::from_vec([sa.n, sa.c + sb.c, sa.h, sa.w], data)
}

/// Per-plane statistics kept for the instance-norm backward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub normalized: Tensor4,
    pub inv_std: Vec<f64>,
}

pub fn instance_norm_forward(
    x: &Tensor4,
    scale: &Tensor4,
    shift: &Tensor4,
    eps: f64,
) -> Result<(Tensor4, NormCache)> {
    let s = x.shape();
    if eps <= 0.0 {
        return Err(Error::config("instance_norm eps must be positive"));
    }
    if scale.len() != s.c || shift.len() != s.c {
        return Err(Error::config(format!(
            "instance_norm affine parameters have {}/{} values for {} channels",
            scale.len(),
            shift.len(),
            s.c
        )));
    }
    let p = s.plane() as f64;
    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            let mean = plane.iter().sum::<f64>() / p;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            let (g, b) = (scale.data()[c], shift.data()[c]);
            let xn = normalized.plane_mut(n, c);
            for (d, v) in xn.iter_mut().zip(plane) {
                *d = (v - mean) * istd;
            }
            let xn = normalized.plane(n, c).to_vec();
            for (o, v) in out.plane_mut(n, c).iter_mut().zip(&xn) {
                *o = g * v + b;
            }
        }
    }
    Ok((
        out,
        NormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(d_input, d_scale, d_shift)`.
pub fn instance_norm_backward(
    cache: &NormCache,
    scale: &Tensor4,
    d_out: &Tensor4,
) -> (Tensor4, Tensor4, Tensor4) {
    let s = d_out.shape();
    let p = s.plane() as f64;
    let mut dx = Tensor4::zeros(s);
    let mut dscale = Tensor4::zeros(scale.shape());
    let mut dshift = Tensor4::zeros(scale.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            let dy = d_out.plane(n, c);
            let xn = cache.normalized.plane(n, c);
            let g = scale.data()[c];
            let istd = cache.inv_std[n * s.c + c];
            let sum_dy: f64 = dy.iter().sum();
            let sum_dy_xn: f64 = dy.iter().zip(xn).map(|(a, b)| a * b).sum();
            dscale.data_mut()[c] += sum_dy_xn;
            dshift.data_mut()[c] += sum_dy;
            let k = g * istd / p;
            for ((d, &gy), &v) in dx.plane_mut(n, c).iter_mut().zip(dy).zip(xn) {
                *d = k * (p * gy - sum_dy - v * sum_dy_xn);
            }
        }
    }
    (dx, dscale, dshift)
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Logistic function evaluated without overflowing `exp` for large `|v|`.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
