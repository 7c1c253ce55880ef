//! Minimal compressed-sparse-row matrices for kernel smoothing operators.

use ndarray::{Array1, Array2, ArrayView2};

/// Compressed sparse row matrix with `f64` entries.
#[derive(Debug, Clone)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; columns within a row must
    /// be strictly increasing.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Sum of each row's values.
    pub fn row_sums(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_rows);
        for i in 0..self.n_rows {
            let (_, vals) = self.row(i);
            out[i] = vals.iter().sum();
        }
        out
    }

    /// Divides each row by the given scale (used to turn a raw kernel into a
    /// row-stochastic smoother).
    pub fn scale_rows(&self, scales: &Array1<f64>) -> Csr {
        assert_eq!(scales.len(), self.n_rows);
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let span = out.indptr[i]..out.indptr[i + 1];
            let s = scales[i];
            for v in &mut out.values[span] {
                *v /= s;
            }
        }
        out
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> f64 {
        let mut t = 0.0;
        for i in 0..self.n_rows.min(self.n_cols) {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&i) {
                t += vals[k];
            }
        }
        t
    }

    pub fn diag(&self) -> Array1<f64> {
        let mut d = Array1::zeros(self.n_rows.min(self.n_cols));
        for i in 0..d.len() {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&i) {
                d[i] = vals[k];
            }
        }
        d
    }

    /// `self * x` for a dense vector.
    pub fn matvec(&self, x: &[f64]) -> Array1<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut out = Array1::zeros(self.n_rows);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            out[i] = acc;
        }
        out
    }

    /// `self * m` for a dense matrix (rows of the result accumulated from
    /// rows of `m`). `m` must be in standard (row-major) layout.
    pub fn mul_dense(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n_cols);
        let k = m.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, k));
        let m_std = m.as_standard_layout();
        let m_slice = m_std.as_slice().expect("standard layout");
        let out_slice = out.as_slice_mut().expect("standard layout");
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let out_row = &mut out_slice[i * k..(i + 1) * k];
            for (&c, &v) in cols.iter().zip(vals) {
                let m_row = &m_slice[c * k..(c + 1) * k];
                for (o, &x) in out_row.iter_mut().zip(m_row) {
                    *o += v * x;
                }
            }
        }
        out
    }

    /// `self * s * selfᵀ` for dense symmetric `s`.
    pub fn sandwich_sym(&self, s: &ArrayView2<f64>) -> Array2<f64> {
        let left = self.mul_dense(s); // (rows x V)
        let left_t = left.t().as_standard_layout().to_owned();
        let right = self.mul_dense(&left_t.view()); // (rows x rows) = K (K S)ᵀ
        // K (K S)ᵀ = K Sᵀ Kᵀ = K S Kᵀ for symmetric S.
        right
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[i, c]] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn example() -> Csr {
        // [[1, 0, 2],
        //  [0, 3, 0]]
        Csr::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, 3.0)]])
    }

    #[test]
    fn matvec_matches_dense() {
        let a = example();
        let x = [1.0, -1.0, 0.5];
        let y = a.matvec(&x);
        assert_abs_diff_eq!(y[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], -3.0, epsilon = 1e-15);
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let a = example();
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let got = a.mul_dense(&m.view());
        let expect = a.to_dense().dot(&m);
        assert_eq!(got, expect);
    }

    #[test]
    fn sandwich_matches_dense_triple_product() {
        let k = Csr::from_rows(
            2,
            vec![vec![(0, 0.8), (1, 0.2)], vec![(0, 0.3), (1, 0.7)]],
        );
        let s = array![[2.0, 1.0], [1.0, 4.0]];
        let got = k.sandwich_sym(&s.view());
        let kd = k.to_dense();
        let expect = kd.dot(&s).dot(&kd.t());
        for (g, e) in got.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn trace_and_diag() {
        let a = Csr::from_rows(2, vec![vec![(0, 5.0), (1, 1.0)], vec![(1, 7.0)]]);
        assert_eq!(a.trace(), 12.0);
        assert_eq!(a.diag(), Array1::from(vec![5.0, 7.0]));
    }
}
