//! Dense and convolution layers over borrowed flat parameter slices.
//!
//! Activations are row-major 2-D arrays: one row per sample for dense layers,
//! one row per output pixel (sample-major, then y, then x) for convolutions.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

/// Fully connected layer. Parameters: `W[input][output]` then `b[output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn param_len(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn weight_len(&self) -> usize {
        self.input * self.output
    }

    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.input, self.output), &p[..self.weight_len()]).expect("dense weight shape")
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weights(p));
        let bias = &p[self.weight_len()..self.param_len()];
        for mut row in y.rows_mut() {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        y
    }

    /// Adds parameter gradients into `g` and returns the input gradient.
    pub fn backward(&self, p: &[f64], x: ArrayView2<f64>, dy: ArrayView2<f64>, g: &mut [f64]) -> Array2<f64> {
        let (gw, gb) = g[..self.param_len()].split_at_mut(self.weight_len());
        let mut gw = ArrayViewMut2::from_shape((self.input, self.output), gw).expect("dense grad shape");
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut gw);
        for (b, col) in gb.iter_mut().zip(dy.axis_iter(Axis(1))) {
            *b += col.sum();
        }
        dy.dot(&self.weights(p).t())
    }
}

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// 3x3 convolution, stride 2, zero padding 1, HWC layout. Parameters:
/// `W[(ky * 3 + kx) * cin + c][cout]` then `b[cout]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * PAD - KERNEL) / STRIDE + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * PAD - KERNEL) / STRIDE + 1
    }

    pub fn patch_len(&self) -> usize {
        KERNEL * KERNEL * self.cin
    }

    pub fn dense(&self) -> Dense {
        Dense {
            input: self.patch_len(),
            output: self.cout,
        }
    }

    pub fn param_len(&self) -> usize {
        self.dense().param_len()
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.cin
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w() * self.cout
    }

    /// Input pixel read by output `(oy, ox)` at kernel offset `(ky, kx)`.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * STRIDE + ky).checked_sub(PAD)?;
        let ix = (ox * STRIDE + kx).checked_sub(PAD)?;
        (iy < self.in_h && ix < self.in_w).then_some((iy, ix))
    }

    /// `x` holds `batch` samples of `in_len` values each.
    pub fn im2col(&self, x: &[f64], batch: usize) -> Array2<f64> {
        let (oh, ow, cin) = (self.out_h(), self.out_w(), self.cin);
        let mut cols = Array2::<f64>::zeros((batch * oh * ow, self.patch_len()));
        let flat = cols.as_slice_mut().expect("standard layout");
        let row_len = self.patch_len();
        for b in 0..batch {
            let sample = &x[b * self.in_len()..(b + 1) * self.in_len()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = &mut flat[((b * oh + oy) * ow + ox) * row_len..][..row_len];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                                let src = (iy * self.in_w + ix) * cin;
                                let dst = (ky * KERNEL + kx) * cin;
                                row[dst..dst + cin].copy_from_slice(&sample[src..src + cin]);
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Inverse scatter of [`Conv::im2col`], summing overlapping patches.
    pub fn col2im(&self, dcols: ArrayView2<f64>, batch: usize) -> Vec<f64> {
        let (oh, ow, cin) = (self.out_h(), self.out_w(), self.cin);
        let mut dx = vec![0.0; batch * self.in_len()];
        let dcols = dcols.as_standard_layout();
        let flat = dcols.as_slice().expect("standard layout");
        let row_len = self.patch_len();
        for b in 0..batch {
            let sample = &mut dx[b * self.in_len()..(b + 1) * self.in_len()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = &flat[((b * oh + oy) * ow + ox) * row_len..][..row_len];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                                let dst = (iy * self.in_w + ix) * cin;
                                let src = (ky * KERNEL + kx) * cin;
                                for c in 0..cin {
                                    sample[dst + c] += row[src + c];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

pub fn relu_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `d` wherever the post-activation output `y` is not positive.
pub fn relu_backward(y: &Array2<f64>, d: &mut Array2<f64>) {
    d.zip_mut_with(y, |g, &out| {
        if out <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
