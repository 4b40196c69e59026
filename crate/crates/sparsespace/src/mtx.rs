//! Matrix Market coordinate I/O, restricted to the `real general` kind.
//!
//! Indices are 1-based on disk and 0-based in memory. Symmetric, pattern,
//! complex and integer kinds are rejected rather than expanded.

use crate::matrix::{dense_from_triplets, DenseMatrix, MatrixError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MtxError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: unsupported matrix kind `{kind}` (only `matrix coordinate real general`)")]
    UnsupportedKind { line: usize, kind: String },
    #[error("line {line}: entry ({i}, {j}) outside declared bounds {n_rows}x{n_cols}")]
    IndexOutOfDeclaredBounds {
        line: usize,
        i: usize,
        j: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("line {line}: malformed entry: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("declared {declared} entries but found {found}")]
    EntryCountMismatch { declared: usize, found: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Parses `matrix coordinate real general` text into a dense matrix.
pub fn parse_matrix_market(text: &str) -> Result<DenseMatrix, MtxError> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));

    let (header_no, header) = lines.next().ok_or_else(|| MtxError::MalformedHeader {
        line: 1,
        reason: "empty input".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "%%MatrixMarket" {
        return Err(MtxError::MalformedHeader {
            line: header_no,
            reason: format!("expected `%%MatrixMarket matrix coordinate <field> <symmetry>`, got `{header}`"),
        });
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" || fields[3] != "real" || fields[4] != "general"
    {
        return Err(MtxError::UnsupportedKind {
            line: header_no,
            kind: fields[1..].join(" "),
        });
    }

    // First non-comment line carries the dimensions.
    let (dims_no, dims_line) = lines
        .by_ref()
        .find(|(_, l)| !is_comment_or_blank(l))
        .ok_or_else(|| MtxError::MalformedHeader {
            line: header_no,
            reason: "missing dimensions line".into(),
        })?;
    let dims: Vec<&str> = dims_line.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(MtxError::MalformedHeader {
            line: dims_no,
            reason: format!("expected `rows cols nnz`, got `{dims_line}`"),
        });
    }
    let n_rows: usize = parse_field(dims[0], dims_no, "rows")?;
    let n_cols: usize = parse_field(dims[1], dims_no, "cols")?;
    let declared_nnz: usize = parse_field(dims[2], dims_no, "nnz")?;

    let mut entries = Vec::with_capacity(declared_nnz);
    for (line_no, line) in lines {
        if is_comment_or_blank(line) {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(MtxError::MalformedEntry {
                line: line_no,
                reason: format!("expected `i j value`, got `{line}`"),
            });
        }
        let i1: usize = parse_field(parts[0], line_no, "row index")?;
        let j1: usize = parse_field(parts[1], line_no, "column index")?;
        let value: f64 = parts[2].parse().map_err(|_| MtxError::MalformedEntry {
            line: line_no,
            reason: format!("cannot parse value `{}`", parts[2]),
        })?;
        if i1 < 1 || i1 > n_rows || j1 < 1 || j1 > n_cols {
            return Err(MtxError::IndexOutOfDeclaredBounds {
                line: line_no,
                i: i1,
                j: j1,
                n_rows,
                n_cols,
            });
        }
        entries.push((i1 - 1, j1 - 1, value));
    }
    if entries.len() != declared_nnz {
        return Err(MtxError::EntryCountMismatch {
            declared: declared_nnz,
            found: entries.len(),
        });
    }
    Ok(dense_from_triplets(n_rows, n_cols, &entries)?)
}

/// Serializes a dense matrix to Matrix Market coordinate text. Nonzeros are
/// written in row-major order; values use the shortest round-trip decimal
/// form so parsing the output reproduces the matrix exactly.
pub fn serialize_matrix_market(m: &DenseMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", m.n_rows(), m.n_cols(), m.nnz()));
    for (i, j, v) in m.nonzeros() {
        out.push_str(&format!("{} {} {}\n", i + 1, j + 1, v));
    }
    out
}

fn is_comment_or_blank(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('%')
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<usize, MtxError> {
    field.parse().map_err(|_| MtxError::MalformedEntry {
        line,
        reason: format!("cannot parse {what} `{field}`"),
    })
}
