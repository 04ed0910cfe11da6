//! Thin safe wrapper over `matrixmultiply`'s strided GEMM.

use super::Float;

/// Row-major matrix view with an optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [Float],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [Float], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    /// The transpose of this (stored) matrix.
    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a·b + beta·c` where `c` is row-major `m×n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: Float, c: &mut [Float]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: bounds asserted above; strides describe the row-major buffers.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
