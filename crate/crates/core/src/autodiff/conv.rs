//! im2col/col2im convolution kernels on top of `matrixmultiply`.

/// Geometry of a strided square-kernel convolution between an image plane
/// of `img_h x img_w` and a grid of `grid_h x grid_w` kernel placements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub(crate) fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> usize {
    (input - 1) * stride + kernel + out_pad - 2 * pad
}

/// Unfold one image (`channels x img_h x img_w`) into `cols`, a
/// `(channels*k*k) x (grid_h*grid_w)` row-major matrix. Out-of-bounds taps read 0.
pub(crate) fn im2col(img: &[f64], g: &Geometry, cols: &mut [f64]) {
    let k = g.kernel;
    let ncols = g.cols();
    debug_assert_eq!(cols.len(), g.rows() * ncols);
    for c in 0..g.channels {
        let plane = &img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out = &mut cols[row * ncols..(row + 1) * ncols];
                for gy in 0..g.grid_h {
                    let iy = (gy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut out[gy * g.grid_w..(gy + 1) * g.grid_w];
                    if iy < 0 || iy >= g.img_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    for (gx, d) in dst.iter_mut().enumerate() {
                        let ix = (gx * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.img_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `img`.
pub(crate) fn col2im(cols: &[f64], g: &Geometry, img: &mut [f64]) {
    let k = g.kernel;
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for gy in 0..g.grid_h {
                    let iy = (gy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.img_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    let src = &src_row[gy * g.grid_w..(gy + 1) * g.grid_w];
                    for (gx, &v) in src.iter().enumerate() {
                        let ix = (gx * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.img_w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of size `m x k`,
/// `op(b)` of size `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // exactly those row-major buffers.
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    s += av * bv;
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, &a, ta, &b, tb, 0.0, &mut c);
                let want = naive_gemm(m, k, n, &a, ta, &b, tb);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry {
            channels: 2,
            img_h: 7,
            img_w: 6,
            grid_h: conv_out_size(7, 5, 2, 2),
            grid_w: conv_out_size(6, 5, 2, 2),
            kernel: 5,
            stride: 2,
            pad: 2,
        };
        let img: Vec<f64> = (0..2 * 7 * 6).map(|i| (i as f64).sin()).collect();
        let other: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; g.rows() * g.cols()];
        im2col(&img, &g, &mut cols);
        let mut back = vec![0.0; img.len()];
        col2im(&other, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&other).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out_size(64, 5, 2, 2), 32);
        assert_eq!(conv_out_size(7, 5, 2, 2), 4);
        assert_eq!(conv_transpose_out_size(4, 5, 2, 2, 1), 8);
        assert_eq!(conv_out_size(8, 3, 1, 1), 8);
    }
}
