//! Dense ground truth: matrix/vector storage, construction, random generation,
//! and the structure-driven SpMV oracle that every simulated design is checked
//! against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix dimensions must be at least 1x1, got {n_rows}x{n_cols}")]
    EmptyDims { n_rows: usize, n_cols: usize },
    #[error("entry ({i}, {j}) is outside the {n_rows}x{n_cols} matrix")]
    OutOfBounds {
        i: usize,
        j: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("duplicate entry at ({i}, {j})")]
    DuplicateEntry { i: usize, j: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Row-major 2-D storage where every entry, zero or not, is addressable by
/// (row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// All-zero matrix; dimensions must both be at least 1.
    pub fn zeros(n_rows: usize, n_cols: usize) -> Result<Self, MatrixError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(MatrixError::EmptyDims { n_rows, n_cols });
        }
        Ok(DenseMatrix {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n_rows && j < self.n_cols, "index out of bounds");
        self.values[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.n_rows && j < self.n_cols, "index out of bounds");
        self.values[i * self.n_cols + j] = value;
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Nonzero entries in row-major order (ascending row, then column).
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (0..self.n_cols).filter_map(move |j| {
                let v = self.get(i, j);
                (v != 0.0).then_some((i, j, v))
            })
        })
    }

    /// True when every entry is an integer value (so reductions are exact
    /// under any association).
    pub fn is_integer_valued(&self) -> bool {
        self.values.iter().all(|v| v.fract() == 0.0)
    }
}

/// Dense column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    entries: Vec<f64>,
}

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        DenseVector { entries }
    }

    /// Vector of all ones.
    pub fn ones(len: usize) -> Self {
        DenseVector {
            entries: vec![1.0; len],
        }
    }

    pub fn zeros(len: usize) -> Self {
        DenseVector {
            entries: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_integer_valued(&self) -> bool {
        self.entries.iter().all(|v| v.fract() == 0.0)
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(entries: Vec<f64>) -> Self {
        DenseVector::new(entries)
    }
}

/// Builds a dense matrix from (row, column, value) triplets. All other
/// positions are zero. Duplicate coordinates are rejected.
pub fn dense_from_triplets(
    n_rows: usize,
    n_cols: usize,
    entries: &[(usize, usize, f64)],
) -> Result<DenseMatrix, MatrixError> {
    let mut m = DenseMatrix::zeros(n_rows, n_cols)?;
    let mut seen = vec![false; n_rows * n_cols];
    for &(i, j, v) in entries {
        if i >= n_rows || j >= n_cols {
            return Err(MatrixError::OutOfBounds {
                i,
                j,
                n_rows,
                n_cols,
            });
        }
        if seen[i * n_cols + j] {
            return Err(MatrixError::DuplicateEntry { i, j });
        }
        seen[i * n_cols + j] = true;
        m.set(i, j, v);
    }
    Ok(m)
}

/// Deterministic random sparse matrix: each cell is nonzero independently
/// with probability `density`, and nonzero magnitudes are uniform over the
/// integers 1..=9 so that reductions are exact under any association.
pub fn random_sparse(n_rows: usize, n_cols: usize, density: f64, seed: u64) -> DenseMatrix {
    assert!(
        (0.0..=1.0).contains(&density),
        "density must be in [0, 1], got {density}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DenseMatrix::zeros(n_rows.max(1), n_cols.max(1)).expect("dims >= 1");
    for i in 0..m.n_rows() {
        for j in 0..m.n_cols() {
            if rng.gen_bool(density) {
                m.set(i, j, rng.gen_range(1..=9) as f64);
            }
        }
    }
    m
}

/// Structure-driven SpMV: y(i) = sum over j of A(i, j) * x(j), summed in
/// ascending j order. Deliberately the naive dense traversal; this is the
/// baseline every values-driven design is verified against.
pub fn spmv_oracle(a: &DenseMatrix, x: &DenseVector) -> Result<DenseVector, MatrixError> {
    if x.len() != a.n_cols() {
        return Err(MatrixError::DimensionMismatch {
            left: a.n_cols(),
            right: x.len(),
        });
    }
    let mut y = vec![0.0; a.n_rows()];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut sum = 0.0;
        for j in 0..a.n_cols() {
            sum += a.get(i, j) * x.get(j);
        }
        *yi = sum;
    }
    Ok(DenseVector::new(y))
}

/// The 4x4 matrix used as a worked example throughout the test suite.
pub fn fixture_matrix() -> DenseMatrix {
    dense_from_triplets(
        4,
        4,
        &[
            (0, 0, 1.0),
            (0, 1, 2.0),
            (0, 3, 3.0),
            (1, 2, 4.0),
            (2, 0, 5.0),
            (2, 3, 6.0),
            (3, 1, 7.0),
            (3, 2, 8.0),
        ],
    )
    .expect("fixture triplets are valid")
}
