//! Raw NCHW kernels shared by the graph's forward and backward passes.

use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { c, h, w, k, stride, pad, ho, wo }
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Valid output columns `[lo, hi)` for kernel offset `kx`, i.e. those whose
/// input column `ox * stride + kx - pad` lies inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = if g.w + g.pad > kx { ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold one `[C, H, W]` sample into `[C*k*k, Ho*Wo]`, stored with row
/// stride `ld` so several samples can sit side by side.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T], ld: usize) {
    let n = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.k + ky) * g.k + kx;
                let out = &mut col[row * ld..row * ld + n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (i, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[start + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `[C*k*k, Ho*Wo]` back into `[C, H, W]`.
pub(crate) fn col2im<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T], ld: usize) {
    let n = g.col_cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_cols(g, kx);
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * ld..row * ld + n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (i, &v) in s.iter().enumerate() {
                            dst[start + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_pool2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * wo + xx] = s * quarter;
            }
        }
    }
    out
}

pub(crate) fn upsample2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let g = ConvGeom::new(2, 5, 4, 3, 2, 1);
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, &g, &mut col, g.col_cols());
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back, g.col_cols());
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        for (h, w, k, stride, pad) in [(5, 4, 3, 2, 1), (6, 6, 3, 1, 1), (7, 5, 1, 1, 0), (4, 4, 3, 2, 0), (3, 3, 5, 1, 2)] {
            let g = ConvGeom::new(2, h, w, k, stride, pad);
            let x: Vec<f64> = (0..2 * h * w).map(|i| i as f64 + 1.0).collect();
            let mut col = vec![-1.0; g.col_rows() * g.col_cols()];
            im2col(&x, &g, &mut col, g.col_cols());
            for c in 0..2 {
                for ky in 0..k {
                    for kx in 0..k {
                        for oy in 0..g.ho {
                            for ox in 0..g.wo {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let want = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    0.0
                                } else {
                                    x[c * h * w + iy as usize * w + ix as usize]
                                };
                                let row = (c * k + ky) * k + kx;
                                assert_eq!(col[row * g.col_cols() + oy * g.wo + ox], want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_of_strided_conv() {
        let g = ConvGeom::new(1, 32, 32, 3, 2, 1);
        assert_eq!((g.ho, g.wo), (16, 16));
    }

    #[test]
    fn pool_then_upsample_preserves_constant_planes() {
        let x = vec![2.0f32; 16];
        let p = avg_pool2(&x, 1, 4, 4);
        assert_eq!(p, vec![2.0; 4]);
        assert_eq!(upsample2(&p, 1, 2, 2), x);
    }
}
