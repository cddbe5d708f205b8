//! Dense kernels over CHW buffers used by the backbone.

/// Geometry of a 3x3, padding-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub in_hw: usize,
    pub out_hw: usize,
    pub stride: usize,
}

pub(crate) const KERNEL: usize = 3;
const PAD: isize = 1;

impl ConvGeom {
    pub fn new(in_c: usize, out_c: usize, in_hw: usize, stride: usize) -> Self {
        let out_hw = (in_hw + 2 * PAD as usize - KERNEL) / stride + 1;
        Self {
            in_c,
            out_c,
            in_hw,
            out_hw,
            stride,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * KERNEL * KERNEL
    }

    pub fn out_pixels(&self) -> usize {
        self.out_hw * self.out_hw
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch_len()
    }
}

/// Unfolds `input` (`in_c x in_hw x in_hw`) into a `patch_len x out_pixels`
/// matrix; out-of-bounds taps are zero.
pub(crate) fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let n = g.out_pixels();
    let hw = g.in_hw as isize;
    let mut col = vec![0.0; g.patch_len() * n];
    for ic in 0..g.in_c {
        let plane = &input[ic * g.in_hw * g.in_hw..(ic + 1) * g.in_hw * g.in_hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ic * KERNEL + ky) * KERNEL + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.out_hw {
                    let iy = (oy * g.stride) as isize + ky as isize - PAD;
                    if iy < 0 || iy >= hw {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_hw..(iy as usize + 1) * g.in_hw];
                    for ox in 0..g.out_hw {
                        let ix = (ox * g.stride) as isize + kx as isize - PAD;
                        if ix >= 0 && ix < hw {
                            dst[oy * g.out_hw + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(g: &ConvGeom, col: &[f64]) -> Vec<f64> {
    let n = g.out_pixels();
    let hw = g.in_hw as isize;
    let mut out = vec![0.0; g.in_c * g.in_hw * g.in_hw];
    for ic in 0..g.in_c {
        let plane = &mut out[ic * g.in_hw * g.in_hw..(ic + 1) * g.in_hw * g.in_hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ic * KERNEL + ky) * KERNEL + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.out_hw {
                    let iy = (oy * g.stride) as isize + ky as isize - PAD;
                    if iy < 0 || iy >= hw {
                        continue;
                    }
                    for ox in 0..g.out_hw {
                        let ix = (ox * g.stride) as isize + kx as isize - PAD;
                        if ix >= 0 && ix < hw {
                            plane[iy as usize * g.in_hw + ix as usize] += src[oy * g.out_hw + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[o][p] = bias[o] + sum_k w[o][k] * col[k][p]`
pub(crate) fn conv_matmul(g: &ConvGeom, w: &[f64], bias: &[f64], col: &[f64]) -> Vec<f64> {
    let (n, k_len) = (g.out_pixels(), g.patch_len());
    let mut out = vec![0.0; g.out_c * n];
    for o in 0..g.out_c {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(bias[o]);
        for k in 0..k_len {
            let wk = w[o * k_len + k];
            if wk == 0.0 {
                continue;
            }
            let src = &col[k * n..(k + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the gradient w.r.t. `col`
/// when `need_input` is set.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    w: &[f64],
    col: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let (n, k_len) = (g.out_pixels(), g.patch_len());
    for o in 0..g.out_c {
        let dz = &d_out[o * n..(o + 1) * n];
        d_b[o] += dz.iter().sum::<f64>();
        for k in 0..k_len {
            let src = &col[k * n..(k + 1) * n];
            d_w[o * k_len + k] += dot(dz, src);
        }
    }
    need_input.then(|| {
        let mut d_col = vec![0.0; k_len * n];
        for o in 0..g.out_c {
            let dz = &d_out[o * n..(o + 1) * n];
            for k in 0..k_len {
                let wk = w[o * k_len + k];
                let dst = &mut d_col[k * n..(k + 1) * n];
                for (d, z) in dst.iter_mut().zip(dz) {
                    *d += wk * z;
                }
            }
        }
        d_col
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = W x + b` with `W` stored row-major `out x in`.
pub(crate) fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + dot(&w[o * n_in..(o + 1) * n_in], x))
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy`; returns `W^T dy`.
pub(crate) fn linear_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dy.iter().enumerate() {
        d_b[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let d_row = &mut d_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            d_row[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution used as an independent reference.
    fn conv_direct(g: &ConvGeom, w: &[f64], b: &[f64], input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.out_c * g.out_pixels()];
        for o in 0..g.out_c {
            for oy in 0..g.out_hw {
                for ox in 0..g.out_hw {
                    let mut acc = b[o];
                    for ic in 0..g.in_c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * g.stride + ky) as isize - 1;
                                let ix = (ox * g.stride + kx) as isize - 1;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.in_hw as isize
                                    || ix >= g.in_hw as isize
                                {
                                    continue;
                                }
                                acc += w[((o * g.in_c + ic) * 3 + ky) * 3 + kx]
                                    * input[(ic * g.in_hw + iy as usize) * g.in_hw + ix as usize];
                            }
                        }
                    }
                    out[(o * g.out_hw + oy) * g.out_hw + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + salt) * 0.618).sin()).collect()
    }

    #[test]
    fn im2col_matmul_matches_direct() {
        for (in_hw, stride) in [(7, 1), (8, 2), (9, 2), (5, 1)] {
            let g = ConvGeom::new(3, 4, in_hw, stride);
            let input = pseudo(3 * in_hw * in_hw, 1.0);
            let w = pseudo(g.weight_len(), 2.0);
            let b = pseudo(4, 3.0);
            let fast = conv_matmul(&g, &w, &b, &im2col(&g, &input));
            let slow = conv_direct(&g, &w, &b, &input);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 1, 6, 2);
        let x = pseudo(2 * 36, 0.5);
        let y = pseudo(g.patch_len() * g.out_pixels(), 4.0);
        let lhs = dot(&im2col(&g, &x), &y);
        let rhs = dot(&x, &col2im(&g, &y));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn output_sizes() {
        assert_eq!(ConvGeom::new(1, 1, 56, 2).out_hw, 28);
        assert_eq!(ConvGeom::new(1, 1, 7, 1).out_hw, 7);
        assert_eq!(ConvGeom::new(1, 1, 7, 2).out_hw, 4);
    }
}
