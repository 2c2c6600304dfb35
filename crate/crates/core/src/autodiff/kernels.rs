//! Strided GEMM wrapper and im2col helpers.

/// Strided matrix view description: `rows x cols` with row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Row-major with an explicit row stride (sub-block of a wider matrix).
    pub fn strided(rows: usize, cols: usize, row_stride: usize) -> Self {
        Self {
            rows,
            cols,
            rs: row_stride as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        ((self.rows - 1) as isize * self.rs + (self.cols - 1) as isize * self.cs) as usize
    }
}

/// `c = alpha * a * b + beta * c` over strided views.
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    assert_eq!(la.cols, lb.rows);
    assert_eq!(la.rows, lc.rows);
    assert_eq!(lb.cols, lc.cols);
    assert!(la.rs >= 0 && la.cs >= 0 && lb.rs >= 0 && lb.cs >= 0 && lc.rs >= 0 && lc.cs >= 0);
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    assert!(la.cols == 0 || la.max_offset() < a.len());
    assert!(lb.cols == 0 || lb.max_offset() < b.len());
    assert!(lc.max_offset() < c.len());
    // SAFETY: every view was bounds-checked above and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            lc.rs,
            lc.cs,
        );
    }
}

/// Unfolds one sample `x[c_in, len]` into `col[c_in * kernel, l_out]`.
pub(crate) fn im2col(
    x: &[f64],
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
    col: &mut [f64],
) {
    for ci in 0..c_in {
        let row_in = &x[ci * len..(ci + 1) * len];
        for kk in 0..kernel {
            let row = &mut col[(ci * kernel + kk) * l_out..(ci * kernel + kk + 1) * l_out];
            for (t, slot) in row.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - padding as isize;
                *slot = if pos >= 0 && (pos as usize) < len {
                    row_in[pos as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
pub(crate) fn col2im(
    col: &[f64],
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
    dx: &mut [f64],
) {
    for ci in 0..c_in {
        let row_out = &mut dx[ci * len..(ci + 1) * len];
        for kk in 0..kernel {
            let row = &col[(ci * kernel + kk) * l_out..(ci * kernel + kk + 1) * l_out];
            for (t, &g) in row.iter().enumerate() {
                let pos = (t * stride + kk) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    row_out[pos as usize] += g;
                }
            }
        }
    }
}
