//! Lowering of stride-1 "same" convolutions to matrix products.
//!
//! The width axis always wraps around. The height axis wraps when
//! `periodic_h` is set and is zero-padded otherwise.

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub periodic_h: bool,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.batch * self.height * self.width
    }

    #[inline]
    fn src_row(&self, y: usize, ky: usize) -> Option<usize> {
        let pad = (self.kernel / 2) as isize;
        let h = self.height as isize;
        let sy = y as isize + ky as isize - pad;
        if (0..h).contains(&sy) {
            Some(sy as usize)
        } else if self.periodic_h {
            Some(sy.rem_euclid(h) as usize)
        } else {
            None
        }
    }

    #[inline]
    fn src_col(&self, x: usize, kx: usize) -> usize {
        let pad = (self.kernel / 2) as isize;
        (x as isize + kx as isize - pad).rem_euclid(self.width as isize) as usize
    }
}

/// `input [B, C, H, W]` → `col [C·k·k, B·H·W]`.
pub fn im2col<S: Scalar>(g: &ConvGeom, input: &[S], col: &mut Vec<S>) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = h * w;
    let ncols = g.cols();
    // Every element is overwritten below, so stale contents are harmless.
    col.resize(g.rows() * ncols, S::zero());
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &input[(b * g.channels + c) * hw..(b * g.channels + c + 1) * hw];
                    for y in 0..h {
                        let dst = &mut dst_row[b * hw + y * w..b * hw + (y + 1) * w];
                        let Some(sy) = g.src_row(y, ky) else {
                            dst.fill(S::zero());
                            continue;
                        };
                        let line = &src[sy * w..(sy + 1) * w];
                        let shift = g.src_col(0, kx);
                        // dst[x] = line[(x + shift) mod w], as two contiguous runs.
                        let first = w - shift;
                        dst[..first].copy_from_slice(&line[shift..]);
                        dst[first..].copy_from_slice(&line[..shift]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `grad [B, C, H, W]`.
pub fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], grad: &mut [S]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = h * w;
    let ncols = g.cols();
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src_row = &col[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut grad[(b * g.channels + c) * hw..(b * g.channels + c + 1) * hw];
                    for y in 0..h {
                        let Some(sy) = g.src_row(y, ky) else { continue };
                        let src = &src_row[b * hw + y * w..b * hw + (y + 1) * w];
                        let line = &mut dst[sy * w..(sy + 1) * w];
                        let shift = g.src_col(0, kx);
                        let first = w - shift;
                        for (d, s) in line[shift..].iter_mut().zip(&src[..first]) {
                            *d = *d + *s;
                        }
                        for (d, s) in line[..shift].iter_mut().zip(&src[first..]) {
                            *d = *d + *s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64], cout: usize) -> Vec<f64> {
        let (h, wd, k) = (g.height, g.width, g.kernel);
        let p = (k / 2) as isize;
        let mut out = vec![0.0; g.batch * cout * h * wd];
        for b in 0..g.batch {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0;
                        for c in 0..g.channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let mut sy = y as isize + ky as isize - p;
                                    let sx = (xx as isize + kx as isize - p).rem_euclid(wd as isize);
                                    if g.periodic_h {
                                        sy = sy.rem_euclid(h as isize);
                                    } else if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    let xv = x[((b * g.channels + c) * h + sy as usize) * wd + sx as usize];
                                    acc += w[((o * g.channels + c) * k + ky) * k + kx] * xv;
                                }
                            }
                        }
                        out[((b * cout + o) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn lowered_convolution_matches_direct_loops() {
        for periodic_h in [true, false] {
            let g = ConvGeom { batch: 2, channels: 3, height: 5, width: 4, kernel: 3, periodic_h };
            let x: Vec<f64> = (0..2 * 3 * 20).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let cout = 2;
            let w: Vec<f64> = (0..cout * g.rows()).map(|i| ((i * 13 % 7) as f64) * 0.1).collect();
            let mut col = Vec::new();
            im2col(&g, &x, &mut col);
            let mut out = vec![0.0; cout * g.cols()];
            super::super::scalar::gemm(cout, g.rows(), g.cols(), &w, false, &col, false, &mut out, false);
            let expected = naive_conv(&g, &x, &w, cout);
            let hw = 20;
            for b in 0..2 {
                for o in 0..cout {
                    for p in 0..hw {
                        let got = out[o * g.cols() + b * hw + p];
                        let want = expected[(b * cout + o) * hw + p];
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let g = ConvGeom { batch: 1, channels: 2, height: 4, width: 6, kernel: 3, periodic_h: false };
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut col = Vec::new();
        im2col(&g, &x, &mut col);
        let c: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 48];
        col2im(&g, &c, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
