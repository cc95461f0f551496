//! Affine kernels with a fixed summation order.
//!
//! Every output element is `bias[j] + x[b,0] w[0,j] + x[b,1] w[1,j] + ...`
//! accumulated left to right, independent of the batch size, so a batched
//! forward pass matches row-by-row evaluation bit for bit.

use ndarray::{Array2, ArrayView2};

/// `x (B x n_in) . w (n_in x n_out) + bias`.
pub fn affine(x: ArrayView2<f64>, w: &[f64], bias: &[f64], n_out: usize) -> Array2<f64> {
    let (rows, n_in) = x.dim();
    debug_assert_eq!(w.len(), n_in * n_out);
    debug_assert_eq!(bias.len(), n_out);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![0.0; rows * n_out];
    if n_out == 1 {
        // same order as the general path: bias, then k = 0, 1, ...
        for (xr, o) in xs.chunks_exact(n_in.max(1)).zip(out.iter_mut()) {
            let mut acc = bias[0];
            for (xk, wk) in xr.iter().zip(w).take(n_in) {
                acc += xk * wk;
            }
            *o = acc;
        }
        return Array2::from_shape_vec((rows, 1), out).expect("shape");
    }
    for (xr, orow) in xs.chunks_exact(n_in.max(1)).zip(out.chunks_exact_mut(n_out)) {
        orow.copy_from_slice(bias);
        for (k, &xk) in xr.iter().enumerate().take(n_in) {
            let wr = &w[k * n_out..(k + 1) * n_out];
            for (o, wv) in orow.iter_mut().zip(wr) {
                *o += xk * wv;
            }
        }
    }
    Array2::from_shape_vec((rows, n_out), out).expect("shape")
}

/// Accumulates `x^T dout` into `gw` and column sums of `dout` into `gb`
/// (when given); returns `dout . w^T` when `want_dx`.
pub fn affine_backward(
    x: ArrayView2<f64>,
    w: &[f64],
    dout: ArrayView2<f64>,
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Array2<f64>> {
    let (rows, n_in) = x.dim();
    let n_out = dout.ncols();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let d = dout.as_standard_layout();
    let ds = d.as_slice().expect("standard layout");
    if n_out == 1 {
        for (xr, d) in xs.chunks_exact(n_in.max(1)).zip(ds).take(rows) {
            for (gv, xk) in gw.iter_mut().zip(xr) {
                *gv += xk * d;
            }
        }
    } else {
        for b in 0..rows {
            let drow = &ds[b * n_out..(b + 1) * n_out];
            for k in 0..n_in {
                let xk = xs[b * n_in + k];
                let g = &mut gw[k * n_out..(k + 1) * n_out];
                for (gv, dv) in g.iter_mut().zip(drow) {
                    *gv += xk * dv;
                }
            }
        }
    }
    if let Some(gb) = gb {
        for drow in ds.chunks_exact(n_out.max(1)).take(rows) {
            for (gv, dv) in gb.iter_mut().zip(drow) {
                *gv += dv;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![0.0; rows * n_in];
    if n_out == 1 {
        for (dxr, d) in dx.chunks_exact_mut(n_in.max(1)).zip(ds) {
            for (v, wk) in dxr.iter_mut().zip(w) {
                *v = wk * d;
            }
        }
        return Some(Array2::from_shape_vec((rows, n_in), dx).expect("shape"));
    }
    for b in 0..rows {
        let drow = &ds[b * n_out..(b + 1) * n_out];
        for k in 0..n_in {
            let wr = &w[k * n_out..(k + 1) * n_out];
            dx[b * n_in + k] = wr.iter().zip(drow).map(|(a, c)| a * c).sum();
        }
    }
    Some(Array2::from_shape_vec((rows, n_in), dx).expect("shape"))
}
