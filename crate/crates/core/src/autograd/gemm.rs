//! Thin safe wrapper around `matrixmultiply::dgemm` using strided views.

/// Logical matrix view into a slice: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Column block `[offset, offset + width)` of a row-major matrix.
    pub fn cols_block(
        data: &'a [f64],
        rows: usize,
        stride: usize,
        offset: usize,
        width: usize,
    ) -> Self {
        View {
            data: &data[offset..],
            rows,
            cols: width,
            rs: stride,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn t_if(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// Mutable row-major output block (possibly a column block of a wider matrix).
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        ViewMut {
            data,
            rows,
            cols,
            rs: cols,
        }
    }

    pub fn cols_block(
        data: &'a mut [f64],
        rows: usize,
        stride: usize,
        offset: usize,
        width: usize,
    ) -> Self {
        ViewMut {
            data: &mut data[offset..],
            rows,
            cols: width,
            rs: stride,
        }
    }
}

/// `out = beta * out + alpha * lhs · rhs`.
pub(crate) fn gemm(alpha: f64, lhs: View<'_>, rhs: View<'_>, beta: f64, out: ViewMut<'_>) {
    assert_eq!(lhs.cols, rhs.rows, "gemm inner dimension");
    assert_eq!(out.rows, lhs.rows, "gemm output rows");
    assert_eq!(out.cols, rhs.cols, "gemm output cols");
    let (m, k, n) = (lhs.rows, lhs.cols, rhs.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(lhs.last_index() < lhs.data.len());
        assert!(rhs.last_index() < rhs.data.len());
    }
    assert!((m - 1) * out.rs + (n - 1) < out.data.len());
    // SAFETY: every index touched by dgemm is bounded by the asserts above and
    // the output slice is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            lhs.data.as_ptr(),
            lhs.rs as isize,
            lhs.cs as isize,
            rhs.data.as_ptr(),
            rhs.rs as isize,
            rhs.cs as isize,
            beta,
            out.data.as_mut_ptr(),
            out.rs as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_including_transposes() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3x4
        let expect = naive(&a, &b, 2, 3, 4);
        let mut c = vec![0.0; 8];
        gemm(
            1.0,
            View::new(&a, 2, 3),
            View::new(&b, 3, 4),
            0.0,
            ViewMut::new(&mut c, 2, 4),
        );
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (bᵀ aᵀ)ᵀ = a b
        let mut ct = vec![0.0; 8];
        gemm(
            1.0,
            View::new(&b, 3, 4).t(),
            View::new(&a, 2, 3).t(),
            0.0,
            ViewMut::new(&mut ct, 4, 2),
        );
        for i in 0..2 {
            for j in 0..4 {
                assert!((ct[j * 2 + i] - expect[i * 4 + j]).abs() < 1e-12);
            }
        }
    }
}
