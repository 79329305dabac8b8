//! Compressed-row complex matrices for the propagators.

use nalgebra::DMatrix;

use crate::Complex64;

#[derive(Clone, Debug)]
pub(crate) struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl Csr {
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let mask = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] != Complex64::new(0.0, 0.0));
        let mut csr = Self::from_mask(&mask);
        for r in 0..csr.n {
            for k in csr.indptr[r]..csr.indptr[r + 1] {
                csr.values[k] = m[(r, csr.indices[k])];
            }
        }
        csr
    }

    /// Zero-valued matrix with the nonzero pattern of `mask`.
    pub fn from_mask(mask: &DMatrix<bool>) -> Self {
        let n = mask.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for r in 0..n {
            for c in 0..mask.ncols() {
                if mask[(r, c)] {
                    indices.push(c);
                }
            }
            indptr.push(indices.len());
        }
        let values = vec![Complex64::new(0.0, 0.0); indices.len()];
        Self { n, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Position of `(r, c)` in the value array.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        row.binary_search(&c).ok().map(|k| self.indptr[r] + k)
    }

    #[inline]
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        for r in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    /// `out = self * b` for a dense column-major `b`.
    pub fn mul_dense(&self, b: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.n;
        let bs = b.as_slice();
        let os = out.as_mut_slice();
        for j in 0..b.ncols() {
            self.matvec(&bs[j * n..(j + 1) * n], &mut os[j * n..(j + 1) * n]);
        }
    }

    /// Expectation `Tr(A ρ)` for a dense `ρ`.
    pub fn trace_product(&self, rho: &DMatrix<Complex64>) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * rho[(self.indices[k], r)];
            }
        }
        acc
    }

    /// `<ψ|A|ψ>`.
    pub fn expect_ket(&self, psi: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.n {
            let mut row = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                row += self.values[k] * psi[self.indices[k]];
            }
            acc += psi[r].conj() * row;
        }
        acc
    }
}
