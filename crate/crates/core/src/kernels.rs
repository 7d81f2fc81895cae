//! Dense forward/backward kernels shared by the autograd ops.
//!
//! Convolutions go through an explicit im2col buffer so the inner loop is a
//! single GEMM; everything here is sequential and allocation-order stable,
//! which keeps whole-pipeline runs bitwise reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4};

use crate::autograd::Scalar;

pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn im2col<F: Scalar>(x: &ArrayView3<F>, k: usize, stride: usize, pad: usize) -> Array2<F> {
    let (c_in, h, w) = x.dim();
    let ho = conv_out_dim(h, k, stride, pad).expect("conv geometry checked by caller");
    let wo = conv_out_dim(w, k, stride, pad).expect("conv geometry checked by caller");
    let mut cols = Array2::<F>::zeros((c_in * k * k, ho * wo));
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let mut out_row = cols.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out_row[oy * wo + ox] = x[(c, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let ho = conv_out_dim(h, k, stride, pad).unwrap();
    let wo = conv_out_dim(w, k, stride, pad).unwrap();
    let mut dx = Array3::<F>::zeros((c_in, h, w));
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = dcols.row(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c, iy as usize, ix as usize)] =
                            dx[(c, iy as usize, ix as usize)] + src[oy * wo + ox];
                    }
                }
            }
        }
    }
    dx
}

/// x: [C_in, H, W], w: [C_out, C_in, k, k], b: [C_out] -> [C_out, Ho, Wo]
pub(crate) fn conv2d_fwd<F: Scalar>(
    x: &ArrayView3<F>,
    w: &ArrayView4<F>,
    b: &ArrayView1<F>,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let (c_in, h, wd) = x.dim();
    let (c_out, c_in_w, k, _) = w.dim();
    assert_eq!(c_in, c_in_w, "conv input channels mismatch");
    let ho = conv_out_dim(h, k, stride, pad).expect("conv geometry checked by caller");
    let wo = conv_out_dim(wd, k, stride, pad).expect("conv geometry checked by caller");
    let cols = im2col(x, k, stride, pad);
    let wmat = w
        .to_shape((c_out, c_in * k * k))
        .expect("conv weight reshape");
    let mut y2 = Array2::<F>::zeros((c_out, ho * wo));
    general_mat_mul(F::one(), &wmat, &cols.view(), F::zero(), &mut y2);
    for co in 0..c_out {
        let bias = b[co];
        y2.row_mut(co).mapv_inplace(|v| v + bias);
    }
    y2.into_shape_with_order((c_out, ho, wo)).unwrap()
}

/// Returns (dx, dw, db).
pub(crate) fn conv2d_bwd<F: Scalar>(
    x: &ArrayView3<F>,
    w: &ArrayView4<F>,
    gy: &ArrayView3<F>,
    stride: usize,
    pad: usize,
) -> (Array3<F>, Array4<F>, Array1<F>) {
    let (c_in, h, wd) = x.dim();
    let (c_out, _, k, _) = w.dim();
    let (gc, gh, gw) = gy.dim();
    assert_eq!(gc, c_out);
    let gy2 = gy
        .to_shape((c_out, gh * gw))
        .expect("conv grad reshape")
        .to_owned();
    let cols = im2col(x, k, stride, pad);

    let mut dwmat = Array2::<F>::zeros((c_out, c_in * k * k));
    general_mat_mul(F::one(), &gy2.view(), &cols.t(), F::zero(), &mut dwmat);
    let dw = dwmat
        .into_shape_with_order((c_out, c_in, k, k))
        .unwrap();

    let db = gy2.sum_axis(ndarray::Axis(1));

    let wmat = w
        .to_shape((c_out, c_in * k * k))
        .expect("conv weight reshape");
    let mut dcols = Array2::<F>::zeros((c_in * k * k, gh * gw));
    general_mat_mul(F::one(), &wmat.t(), &gy2.view(), F::zero(), &mut dcols);
    let dx = col2im(&dcols, c_in, h, wd, k, stride, pad);
    (dx, dw, db)
}

/// y = x · wᵀ + b, with x: [N, in], w: [out, in], b: [out].
pub(crate) fn linear_fwd<F: Scalar>(x: &ArrayView2<F>, w: &ArrayView2<F>, b: &ArrayView1<F>) -> Array2<F> {
    let n = x.nrows();
    let out = w.nrows();
    let mut y = Array2::<F>::zeros((n, out));
    general_mat_mul(F::one(), x, &w.t(), F::zero(), &mut y);
    for mut row in y.rows_mut() {
        for (v, bv) in row.iter_mut().zip(b.iter()) {
            *v = *v + *bv;
        }
    }
    y
}

/// Returns (dx, dw, db) for the linear layer above.
pub(crate) fn linear_bwd<F: Scalar>(
    x: &ArrayView2<F>,
    w: &ArrayView2<F>,
    gy: &ArrayView2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let mut dx = Array2::<F>::zeros(x.raw_dim());
    general_mat_mul(F::one(), gy, w, F::zero(), &mut dx);
    let mut dw = Array2::<F>::zeros(w.raw_dim());
    general_mat_mul(F::one(), &gy.t(), x, F::zero(), &mut dw);
    let db = gy.sum_axis(ndarray::Axis(0));
    (dx, dw, db)
}

/// c = a · b
pub(crate) fn matmul<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    let mut c = Array2::<F>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(F::one(), a, b, F::zero(), &mut c);
    c
}

/// Max pooling; returns the output and the flat input index of each maximum.
pub(crate) fn maxpool_fwd<F: Scalar>(
    x: &ArrayView3<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array3<F>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let ho = conv_out_dim(h, k, stride, pad).expect("pool geometry checked by caller");
    let wo = conv_out_dim(w, k, stride, pad).expect("pool geometry checked by caller");
    let mut y = Array3::<F>::zeros((c, ho, wo));
    let mut argmax = vec![0usize; c * ho * wo];
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = F::neg_infinity();
                let mut best_idx = 0usize;
                for ki in 0..k {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = x[(ci, iy as usize, ix as usize)];
                        if v > best {
                            best = v;
                            best_idx = (ci * h + iy as usize) * w + ix as usize;
                        }
                    }
                }
                y[(ci, oy, ox)] = best;
                argmax[(ci * ho + oy) * wo + ox] = best_idx;
            }
        }
    }
    (y, argmax)
}

pub(crate) fn maxpool_bwd<F: Scalar>(
    x_dim: (usize, usize, usize),
    gy: &ArrayView3<F>,
    argmax: &[usize],
) -> Array3<F> {
    let mut dx = Array3::<F>::zeros(x_dim);
    let flat = dx.as_slice_mut().unwrap();
    for (g, &idx) in gy.iter().zip(argmax.iter()) {
        flat[idx] = flat[idx] + *g;
    }
    dx
}

pub(crate) fn upsample2_fwd<F: Scalar>(x: &ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<F>::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for i in 0..h * 2 {
            for j in 0..w * 2 {
                y[(ci, i, j)] = x[(ci, i / 2, j / 2)];
            }
        }
    }
    y
}

pub(crate) fn upsample2_bwd<F: Scalar>(gy: &ArrayView3<F>) -> Array3<F> {
    let (c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                dx[(ci, i / 2, j / 2)] = dx[(ci, i / 2, j / 2)] + gy[(ci, i, j)];
            }
        }
    }
    dx
}
