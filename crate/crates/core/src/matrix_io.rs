//! Matrix Market ingestion, CSR storage and the Jacobi preconditioner.
//!
//! The solver only accepts real symmetric input, so the reader rejects
//! complex, skew-symmetric and hermitian files up front. Symmetric files store
//! one triangle; [`expand_symmetric`] mirrors it before [`to_csr`].

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported matrix market format: {0}")]
    Unsupported(String),
    #[error("malformed entry on line {line}: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("entry count mismatch: header declares {declared}, file holds {found}")]
    EntryCountMismatch { declared: usize, found: usize },
    #[error("index out of declared bounds on line {line}: ({row}, {col}) in {n_rows}x{n_cols}")]
    IndexOutOfBounds {
        line: usize,
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("conflicting duplicate entry at ({row}, {col}): {first} vs {second}")]
    ConflictingDuplicate {
        row: usize,
        col: usize,
        first: f64,
        second: f64,
    },
    #[error("matrix is not square: {n_rows}x{n_cols}")]
    NotSquare { n_rows: usize, n_cols: usize },
    #[error("matrix still stores a single triangle; expand it first")]
    SymmetricStorage,
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),
    #[error("singular Jacobi preconditioner: diagonal entry {index} is {value}")]
    SingularJacobi { index: usize, value: f64 },
    #[error("io error: {0}")]
    Io(String),
}

/// Coordinate-format matrix with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
    /// Set when only one triangle is stored.
    pub symmetric_stored: bool,
}

impl CooMatrix {
    /// Sorts entries by `(row, col)`, drops identical duplicates and rejects
    /// duplicates whose values differ.
    pub fn canonicalize(mut self) -> Result<Self, MatrixError> {
        self.entries.sort_by_key(|a| (a.0, a.1));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            if let Some(&(pr, pc, pv)) = out.last() {
                if pr == r && pc == c {
                    if pv.to_bits() != v.to_bits() {
                        return Err(MatrixError::ConflictingDuplicate {
                            row: r,
                            col: c,
                            first: pv,
                            second: v,
                        });
                    }
                    continue;
                }
            }
            out.push((r, c, v));
        }
        self.entries = out;
        Ok(self)
    }
}

/// Square sparse matrix in compressed-sparse-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix, checking the structural invariants (pointer
    /// monotonicity, bounds, strictly increasing columns per row).
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self, MatrixError> {
        if row_ptr.len() != n + 1 {
            return Err(MatrixError::InvalidCsr(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                n + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n] != col_idx.len() || col_idx.len() != values.len() {
            return Err(MatrixError::InvalidCsr("row_ptr must start at 0 and end at nnz".into()));
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(MatrixError::InvalidCsr(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(MatrixError::InvalidCsr(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
            if let Some(&c) = cols.last() {
                if c >= n {
                    return Err(MatrixError::InvalidCsr(format!("column {c} out of bounds in row {i}")));
                }
            }
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Dense row-major input; zeros are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            if row.len() != n {
                return Err(MatrixError::NotSquare {
                    n_rows: n,
                    n_cols: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of one row, in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Stored value at `(i, j)`, if any.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        let cols = &self.col_idx[span.clone()];
        cols.binary_search(&j).ok().map(|k| self.values[span.start + k])
    }

    /// Same sparsity pattern with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, MatrixError> {
        if values.len() != self.values.len() {
            return Err(MatrixError::InvalidCsr("value array length differs from nnz".into()));
        }
        Ok(Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        })
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                entries.push((i, j, v));
            }
        }
        CooMatrix {
            n_rows: self.n,
            n_cols: self.n,
            entries,
            symmetric_stored: false,
        }
    }

    /// Every `(i, j)` with `i < j` whose mirror is missing or differs bitwise.
    pub fn asymmetries(&self) -> Vec<(usize, usize)> {
        let mut out = BTreeSet::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j == i {
                    continue;
                }
                let mirrored = self.get(j, i);
                if !mirrored.is_some_and(|m| m.to_bits() == v.to_bits()) {
                    out.insert((i.min(j), i.max(j)));
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetries().is_empty()
    }
}

/// Diagonal of `A`, used as the preconditioner `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiPreconditioner {
    diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.diag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

fn parse_header(line: &str) -> Result<(Field, bool), MatrixError> {
    let tokens: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(MatrixError::MalformedHeader(line.trim().to_string()));
    }
    if tokens[1] != "matrix" {
        return Err(MatrixError::MalformedHeader(format!("object '{}'", tokens[1])));
    }
    if tokens[2] != "coordinate" {
        return Err(MatrixError::Unsupported(format!("format '{}'", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(MatrixError::Unsupported(format!("field '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(MatrixError::Unsupported(format!("symmetry '{other}'"))),
    };
    Ok((field, symmetric))
}

/// Reads a Matrix Market coordinate file. Indices become 0-based; pattern
/// entries get value `1.0`.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<CooMatrix, MatrixError> {
    let mut lines = reader.lines().enumerate();
    let (field, symmetric) = match lines.next() {
        Some((_, line)) => parse_header(&line.map_err(|e| MatrixError::Io(e.to_string()))?)?,
        None => return Err(MatrixError::MalformedHeader("empty input".into())),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| MatrixError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let Some((n_rows, n_cols, declared)) = size else {
            let mut next = || -> Result<usize, MatrixError> {
                fields
                    .next()
                    .ok_or_else(|| MatrixError::MalformedHeader("incomplete size line".into()))?
                    .parse::<usize>()
                    .map_err(|e| MatrixError::MalformedHeader(format!("size line: {e}")))
            };
            size = Some((next()?, next()?, next()?));
            entries.reserve(size.map_or(0, |s| s.2));
            continue;
        };

        let bad = |reason: String| MatrixError::MalformedEntry { line: line_no, reason };
        let row: usize = fields
            .next()
            .ok_or_else(|| bad("missing row index".into()))?
            .parse()
            .map_err(|e| bad(format!("row index: {e}")))?;
        let col: usize = fields
            .next()
            .ok_or_else(|| bad("missing column index".into()))?
            .parse()
            .map_err(|e| bad(format!("column index: {e}")))?;
        let value = match field {
            Field::Pattern => 1.0,
            Field::Integer => fields
                .next()
                .ok_or_else(|| bad("missing value".into()))?
                .parse::<i64>()
                .map_err(|e| bad(format!("value: {e}")))? as f64,
            Field::Real => fields
                .next()
                .ok_or_else(|| bad("missing value".into()))?
                .parse::<f64>()
                .map_err(|e| bad(format!("value: {e}")))?,
        };
        if row == 0 || col == 0 || row > n_rows || col > n_cols {
            return Err(MatrixError::IndexOutOfBounds {
                line: line_no,
                row,
                col,
                n_rows,
                n_cols,
            });
        }
        if entries.len() == declared {
            return Err(MatrixError::EntryCountMismatch {
                declared,
                found: declared + 1,
            });
        }
        entries.push((row - 1, col - 1, value));
    }

    let (n_rows, n_cols, declared) = size.ok_or_else(|| MatrixError::MalformedHeader("missing size line".into()))?;
    if entries.len() != declared {
        return Err(MatrixError::EntryCountMismatch {
            declared,
            found: entries.len(),
        });
    }
    CooMatrix {
        n_rows,
        n_cols,
        entries,
        symmetric_stored: symmetric,
    }
    .canonicalize()
}

/// Mirrors every off-diagonal entry. Already-expanded symmetric input comes
/// back unchanged; asymmetric input surfaces as a conflicting duplicate.
pub fn expand_symmetric(m: CooMatrix) -> Result<CooMatrix, MatrixError> {
    let mut entries = Vec::with_capacity(m.entries.len() * 2);
    for &(r, c, v) in &m.entries {
        entries.push((r, c, v));
        if r != c {
            entries.push((c, r, v));
        }
    }
    CooMatrix {
        n_rows: m.n_rows,
        n_cols: m.n_cols,
        entries,
        symmetric_stored: false,
    }
    .canonicalize()
}

pub fn to_csr(m: CooMatrix) -> Result<CsrMatrix, MatrixError> {
    if m.n_rows != m.n_cols {
        return Err(MatrixError::NotSquare {
            n_rows: m.n_rows,
            n_cols: m.n_cols,
        });
    }
    if m.symmetric_stored {
        return Err(MatrixError::SymmetricStorage);
    }
    let n = m.n_rows;
    let m = m.canonicalize()?;
    let mut row_ptr = vec![0usize; n + 1];
    for &(r, _, _) in &m.entries {
        row_ptr[r + 1] += 1;
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let (col_idx, values) = m.entries.into_iter().map(|(_, c, v)| (c, v)).unzip();
    CsrMatrix::new(n, row_ptr, col_idx, values)
}

pub fn extract_jacobi(a: &CsrMatrix) -> Result<JacobiPreconditioner, MatrixError> {
    let diag = (0..a.n())
        .map(|i| match a.get(i, i) {
            Some(v) if v != 0.0 => Ok(v),
            other => Err(MatrixError::SingularJacobi {
                index: i,
                value: other.unwrap_or(0.0),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(JacobiPreconditioner { diag })
}

/// Reads, expands (when stored as one triangle) and converts a `.mtx` file.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix, MatrixError> {
    let file = File::open(path.as_ref()).map_err(|e| MatrixError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let coo = parse_matrix_market(BufReader::new(file))?;
    let coo = if coo.symmetric_stored {
        expand_symmetric(coo)?
    } else {
        coo
    };
    to_csr(coo)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    Asymmetric {
        row: usize,
        col: usize,
    },
    ZeroDiagonal {
        index: usize,
    },
    NonFinite {
        what: &'static str,
        index: usize,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch: {what} has length {found}, expected {expected}")
            }
            Diagnostic::Asymmetric { row, col } => write!(f, "asymmetric at ({row},{col})"),
            Diagnostic::ZeroDiagonal { index } => write!(f, "zero diagonal at {index}"),
            Diagnostic::NonFinite { what, index } => {
                write!(f, "non-finite value in {what} at {index}")
            }
        }
    }
}

/// Checks the structural preconditions of the solver. Positive definiteness
/// is not attempted.
pub fn validate_solver_input(a: &CsrMatrix, b: &[f64], x0: &[f64]) -> Vec<Diagnostic> {
    let n = a.n();
    let mut out = Vec::new();
    if b.len() != n {
        out.push(Diagnostic::DimensionMismatch {
            what: "b",
            expected: n,
            found: b.len(),
        });
    }
    if x0.len() != n {
        out.push(Diagnostic::DimensionMismatch {
            what: "x0",
            expected: n,
            found: x0.len(),
        });
    }
    out.extend(
        a.asymmetries()
            .into_iter()
            .map(|(row, col)| Diagnostic::Asymmetric { row, col }),
    );
    for i in 0..n {
        if a.get(i, i).is_none_or(|v| v == 0.0) {
            out.push(Diagnostic::ZeroDiagonal { index: i });
        }
    }
    for (what, v) in [("A", a.values()), ("b", b), ("x0", x0)] {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            out.push(Diagnostic::NonFinite { what, index });
        }
    }
    out
}
