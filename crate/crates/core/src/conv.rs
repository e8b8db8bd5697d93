//! Strided 2-D convolution and transposed convolution kernels (im2col + GEMM),
//! with the matching backward passes.
//!
//! Layouts: activations `[N, C, H, W]`, convolution weights `[Cout, Cin, K, K]`,
//! transposed-convolution weights `[Cin, Cout, K, K]`.

use crate::tensor::{Scalar, Tensor};

/// Geometry of one strided, zero-padded square-kernel sliding window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    /// Output extent of a convolution over `len` input positions.
    pub fn conv_out(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output extent of a transposed convolution with `out_pad` extra rows.
    pub fn conv_t_out(&self, len: usize, out_pad: usize) -> usize {
        (len - 1) * self.stride + self.kernel + out_pad - 2 * self.pad
    }
}

/// Unfolds one `[C, H, W]` image into a `[C·K·K, OH·OW]` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    img: &[F],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
    col: &mut [F],
) {
    let k = win.kernel;
    let cols = oh * ow;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    col: &[F],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
    img: &mut [F],
) {
    let k = win.kernel;
    let cols = oh * ow;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected [N, C, H, W], got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

pub fn conv2d_forward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    win: Window,
) -> Tensor<F> {
    let (n, ci, h, w) = dims4(x.shape());
    let (co, wci, k, _) = dims4(weight.shape());
    assert_eq!(ci, wci, "conv2d: channel mismatch");
    assert_eq!(k, win.kernel);
    let (oh, ow) = (win.conv_out(h), win.conv_out(w));
    let kk = ci * k * k;
    let mut col = vec![F::zero(); kk * oh * ow];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let per_in = ci * h * w;
    let per_out = co * oh * ow;
    for b in 0..n {
        im2col(&x.data()[b * per_in..(b + 1) * per_in], ci, h, w, win, oh, ow, &mut col);
        let dst = &mut out.data_mut()[b * per_out..(b + 1) * per_out];
        for (o, chunk) in dst.chunks_mut(oh * ow).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        F::gemm(co, kk, oh * ow, weight.data(), false, &col, false, F::one(), dst);
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    win: Window,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (n, ci, h, w) = dims4(x.shape());
    let (co, _, k, _) = dims4(weight.shape());
    let (_, _, oh, ow) = dims4(grad_out.shape());
    let kk = ci * k * k;
    let mut col = vec![F::zero(); kk * oh * ow];
    let mut dcol = vec![F::zero(); kk * oh * ow];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[co]);
    let per_in = ci * h * w;
    let per_out = co * oh * ow;
    for b in 0..n {
        let g = &grad_out.data()[b * per_out..(b + 1) * per_out];
        im2col(&x.data()[b * per_in..(b + 1) * per_in], ci, h, w, win, oh, ow, &mut col);
        // dW += g · colᵀ
        F::gemm(co, oh * ow, kk, g, false, &col, true, F::one(), dw.data_mut());
        // dcol = Wᵀ · g
        F::gemm(kk, co, oh * ow, weight.data(), true, g, false, F::zero(), &mut dcol);
        col2im(&dcol, ci, h, w, win, oh, ow, &mut dx.data_mut()[b * per_in..(b + 1) * per_in]);
        for (o, chunk) in g.chunks(oh * ow).enumerate() {
            db.data_mut()[o] += chunk.iter().copied().sum::<F>();
        }
    }
    (dx, dw, db)
}

pub fn conv_t2d_forward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    win: Window,
    out_pad: usize,
) -> Tensor<F> {
    let (n, ci, ih, iw) = dims4(x.shape());
    let (wci, co, k, _) = dims4(weight.shape());
    assert_eq!(ci, wci, "conv_t2d: channel mismatch");
    assert_eq!(k, win.kernel);
    let (oh, ow) = (win.conv_t_out(ih, out_pad), win.conv_t_out(iw, out_pad));
    let kk = co * k * k;
    let mut col = vec![F::zero(); kk * ih * iw];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let per_in = ci * ih * iw;
    let per_out = co * oh * ow;
    for b in 0..n {
        // col = Wᵀ · x   with W viewed as [Cin, Cout·K·K]
        F::gemm(kk, ci, ih * iw, weight.data(), true, &x.data()[b * per_in..(b + 1) * per_in], false, F::zero(), &mut col);
        let dst = &mut out.data_mut()[b * per_out..(b + 1) * per_out];
        col2im(&col, co, oh, ow, win, ih, iw, dst);
        for (o, chunk) in dst.chunks_mut(oh * ow).enumerate() {
            let bv = bias.data()[o];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv_t2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    win: Window,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (n, ci, ih, iw) = dims4(x.shape());
    let (_, co, k, _) = dims4(weight.shape());
    let (_, _, oh, ow) = dims4(grad_out.shape());
    let kk = co * k * k;
    let mut dcol = vec![F::zero(); kk * ih * iw];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[co]);
    let per_in = ci * ih * iw;
    let per_out = co * oh * ow;
    for b in 0..n {
        let g = &grad_out.data()[b * per_out..(b + 1) * per_out];
        im2col(g, co, oh, ow, win, ih, iw, &mut dcol);
        let xb = &x.data()[b * per_in..(b + 1) * per_in];
        // dx = W · dcol
        F::gemm(ci, kk, ih * iw, weight.data(), false, &dcol, false, F::zero(), &mut dx.data_mut()[b * per_in..(b + 1) * per_in]);
        // dW += x · dcolᵀ
        F::gemm(ci, ih * iw, kk, xb, false, &dcol, true, F::one(), dw.data_mut());
        for (o, chunk) in g.chunks(oh * ow).enumerate() {
            db.data_mut()[o] += chunk.iter().copied().sum::<F>();
        }
    }
    (dx, dw, db)
}
