//! Plain loops behind the graph ops. No allocation policy, no shape checks:
//! callers validate extents first.

use crate::tensor::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Geometry of a 2-D cross-correlation over `[B, Cin, H, W]` inputs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Conv2dGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Unfold one batch item into `[ho·wo, cin·kh·kw]` patches.
    pub fn im2col<T: Real>(&self, x: &[T], b: usize, cols: &mut [T]) {
        let patch = self.patch();
        let plane = self.h * self.w;
        let base = b * self.cin * plane;
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let q = oy * self.wo + ox;
                let col = &mut cols[q * patch..(q + 1) * patch];
                let mut idx = 0;
                for c in 0..self.cin {
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            col[idx] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.h
                                && (ix as usize) < self.w
                            {
                                x[base + c * plane + iy as usize * self.w + ix as usize]
                            } else {
                                T::zero()
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add patch gradients back onto one batch item of `dx`.
    pub fn col2im<T: Real>(&self, cols: &[T], b: usize, dx: &mut [T]) {
        let patch = self.patch();
        let plane = self.h * self.w;
        let base = b * self.cin * plane;
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let q = oy * self.wo + ox;
                let col = &cols[q * patch..(q + 1) * patch];
                let mut idx = 0;
                for c in 0..self.cin {
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < self.h && (ix as usize) < self.w {
                                dx[base + c * plane + iy as usize * self.w + ix as usize] += col[idx];
                            }
                            idx += 1;
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

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 2.0, 1.0, 0.5, -1.0]; // 3×2
        let mut c = [0.0; 4];
        gemm_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [6.5, -1.0, 17.0, -1.0]);
        // bᵀ stored as 2×3
        let bt = [1.0, 2.0, 0.5, 0.0, 1.0, -1.0];
        let mut c2 = [0.0; 4];
        gemm_nt(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);
        // aᵀ stored as 3×2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        gemm_tn(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c, c3);
    }
}
