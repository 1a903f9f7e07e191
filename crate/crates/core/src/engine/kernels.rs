//! fp32 kernels. Every output element of a matmul is accumulated over the
//! input dimension in ascending order, so a column-split product is bitwise
//! identical to the dense one.

use rayon::prelude::*;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Places `left` in columns `[0, left.cols)` and `right` after it.
    pub fn hcat(left: &Mat, right: &Mat) -> Mat {
        assert_eq!(left.rows, right.rows);
        let cols = left.cols + right.cols;
        let mut out = Mat::zeros(left.rows, cols);
        for r in 0..left.rows {
            out.row_mut(r)[..left.cols].copy_from_slice(left.row(r));
            out.row_mut(r)[left.cols..].copy_from_slice(right.row(r));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f32 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `out[r, j] = sum_i x[r, i] * w[i, col_offset + j]` for `j < ncols`.
///
/// `w` is row-major with row length `w_stride`; `out` is `rows x ncols`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_cols(
    x: &[f32],
    rows: usize,
    in_dim: usize,
    w: &[f32],
    w_stride: usize,
    col_offset: usize,
    ncols: usize,
    out: &mut [f32],
) {
    assert_eq!(x.len(), rows * in_dim);
    assert!(col_offset + ncols <= w_stride);
    assert!(w.len() >= in_dim * w_stride);
    assert_eq!(out.len(), rows * ncols);
    if ncols == 0 {
        return;
    }
    let row = |(xr, acc): (&[f32], &mut [f32])| {
        acc.fill(0.0);
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * w_stride + col_offset..i * w_stride + col_offset + ncols];
            for (a, &wv) in acc.iter_mut().zip(wr) {
                *a += xi * wv;
            }
        }
    };
    if rows > 1 {
        x.par_chunks(in_dim).zip(out.par_chunks_mut(ncols)).for_each(row);
    } else {
        x.chunks(in_dim.max(1)).zip(out.chunks_mut(ncols)).for_each(row);
    }
}

/// Copies columns `[col_start, col_start + ncols)` of a row-major
/// `in_dim x out_dim` matrix into a dense `in_dim x ncols` buffer.
pub fn gather_cols(w: &[f32], in_dim: usize, out_dim: usize, col_start: usize, ncols: usize, dst: &mut [f32]) {
    assert!(col_start + ncols <= out_dim);
    assert_eq!(dst.len(), in_dim * ncols);
    if ncols == 0 {
        return;
    }
    for (i, d) in dst.chunks_mut(ncols).enumerate() {
        d.copy_from_slice(&w[i * out_dim + col_start..i * out_dim + col_start + ncols]);
    }
}

pub fn add_bias(y: &mut Mat, bias: &[f32]) {
    assert_eq!(bias.len(), y.cols);
    for r in 0..y.rows {
        for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn layer_norm(x: &Mat, gamma: &[f32], beta: &[f32]) -> Mat {
    const EPS: f32 = 1e-5;
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = x.row(r);
        let n = row.len() as f32;
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + EPS).sqrt();
        for ((o, v), (g, b)) in out.row_mut(r).iter_mut().zip(row).zip(gamma.iter().zip(beta)) {
            *o = (v - mean) * inv * g + b;
        }
    }
    out
}

pub fn relu(x: &mut Mat) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn add_assign(x: &mut Mat, y: &Mat) {
    assert_eq!((x.rows, x.cols), (y.rows, y.cols));
    x.data.iter_mut().zip(&y.data).for_each(|(a, b)| *a += b);
}

pub fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Reference dense product with the same accumulation order.
pub fn dense(x: &Mat, w: &[f32], out_dim: usize) -> Mat {
    let mut out = Mat::zeros(x.rows, out_dim);
    matmul_cols(&x.data, x.rows, x.cols, w, out_dim, 0, out_dim, &mut out.data);
    out
}
