//! Symmetric sparse matrices in lower-triangular compressed-column storage,
//! factorized with faer's sparse Cholesky.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Side};

use crate::error::{Error, Result};

/// Lower-triangular sparsity pattern (diagonal included) with its symbolic
/// Cholesky factorization.
pub struct SymPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLlt<usize>,
}

impl std::fmt::Debug for SymPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymPattern(n={}, nnz={})", self.n, self.row_idx.len())
    }
}

impl SymPattern {
    /// Pattern holding all given entries (either triangle) and the diagonal.
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        faer::set_global_parallelism(faer::Par::Seq);
        let mut cols: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
        for (i, j) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            if r >= n {
                return Err(Error::InvalidInput(format!("entry ({i},{j}) outside a {n}x{n} matrix")));
            }
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend(c);
            col_ptr.push(row_idx.len());
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLlt::try_new(sym, Side::Lower)
            .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))?;
        Ok(SymPattern { n, col_ptr, row_idx, symbolic })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Storage slot of entry (i, j) in either triangle.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        self.row_idx[lo..hi].binary_search(&r).ok().map(|k| lo + k)
    }
}

#[derive(Clone, Debug)]
pub struct SymMatrix {
    pub pattern: Arc<SymPattern>,
    pub values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<SymPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SymMatrix { pattern, values }
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    /// Adds `v` to entry (i, j); off-diagonal contributions from both
    /// triangles accumulate into the same slot, so callers add each
    /// unordered pair once from each side or halve accordingly.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pattern.position(i, j).expect("entry outside the sparsity pattern");
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    pub fn quad_form(&self, a: &[f64], b: &[f64]) -> f64 {
        self.matvec(b).iter().zip(a).map(|(p, q)| p * q).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let p = &self.pattern;
        let mut d = vec![vec![0.0; p.n]; p.n];
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                d[r][c] = self.values[k];
                d[c][r] = self.values[k];
            }
        }
        d
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        let p = &self.pattern;
        let sym = SymbolicSparseColMatRef::new_checked(p.n, p.n, &p.col_ptr, None, &p.row_idx);
        let mat = SparseColMatRef::new(sym, &self.values);
        let llt = Llt::try_new_with_symbolic(p.symbolic.clone(), mat, Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Cholesky { llt, n: p.n })
    }
}

#[derive(Clone, Debug)]
pub struct Cholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let m = MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.llt.solve_in_place_with_conj(Conj::No, m);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
