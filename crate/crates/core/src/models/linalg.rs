//! Dense matrix helpers over row-major `f64` slices.

/// Strided read-only view of an `rows × cols` matrix.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, rs: cols, cs: 1 }
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

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a · b + beta * c`, with `c` row-major `a.rows × b.cols`.
pub fn gemm(alpha: f64, a: View, b: View, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "output too small");
    a.check();
    b.check();
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: every index touched is bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3×4
        let mut c = vec![1.0; 8];
        gemm(2.0, View::new(&a, 2, 3), View::new(&b, 3, 4), 0.5, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], 2.0 * s + 0.5);
            }
        }
        // transposed view of a stored 4×3
        let bt: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut c2 = vec![0.0; 8];
        gemm(1.0, View::new(&a, 2, 3), View::new(&bt, 4, 3).t(), 0.0, &mut c2);
        for i in 0..2 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|p| a[i * 3 + p] * bt[j * 3 + p]).sum();
                assert_eq!(c2[i * 4 + j], s);
            }
        }
    }
}
