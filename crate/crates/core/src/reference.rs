//! Sequential textbook JPCG used as ground truth. Dot products and SpMV rows
//! accumulate left to right; precision schemes affect only the SpMV.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix_io::{extract_jacobi, CsrMatrix, MatrixError};
use crate::spmv::{PrecisionScheme, SpmvError};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("CG breakdown: {0}")]
    Breakdown(String),
    #[error(transparent)]
    Spmv(#[from] SpmvError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Row-major FP64 `y = A x`.
pub fn spmv_reference(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>, SpmvError> {
    spmv_reference_scheme(a, x, PrecisionScheme::DefaultFp64)
}

/// Row-major `y = A x` at the scheme's precisions.
pub fn spmv_reference_scheme(a: &CsrMatrix, x: &[f64], scheme: PrecisionScheme) -> Result<Vec<f64>, SpmvError> {
    let n = a.n();
    if x.len() != n {
        return Err(SpmvError::DimensionMismatch { n, len: x.len() });
    }
    let y = (0..n)
        .map(|i| match scheme {
            PrecisionScheme::DefaultFp64 => a.row(i).fold(0.0, |s, (j, v)| s + v * x[j]),
            PrecisionScheme::MixedV1 => a.row(i).fold(0.0f32, |s, (j, v)| s + (v as f32) * (x[j] as f32)) as f64,
            PrecisionScheme::MixedV2 => a
                .row(i)
                .fold(0.0, |s, (j, v)| s + ((v as f32) as f64) * ((x[j] as f32) as f64)),
            PrecisionScheme::MixedV3 => a.row(i).fold(0.0, |s, (j, v)| s + ((v as f32) as f64) * x[j]),
        })
        .collect();
    Ok(y)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleStep {
    pub rr: f64,
    /// Absent for the initialization entry.
    pub alpha: Option<f64>,
    /// Absent for the initialization entry and the terminating iteration.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    /// Initialization entry first, then one entry per iteration.
    pub steps: Vec<OracleStep>,
    pub x: Vec<f64>,
    pub converged: bool,
}

impl OracleTrace {
    pub fn iterations(&self) -> u64 {
        self.steps.len() as u64 - 1
    }

    pub fn rr(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rr).collect()
    }
}

/// Jacobi-preconditioned CG, loop running while `i < max_iters && rr > tol`.
pub fn jpcg_reference(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: u64,
    scheme: PrecisionScheme,
) -> Result<OracleTrace, ReferenceError> {
    let m = extract_jacobi(a)?.into_inner();
    jpcg_reference_preconditioned(a, &m, b, x0, tol, max_iters, scheme)
}

/// As [`jpcg_reference`] with the Jacobi diagonal `m` supplied separately
/// from the matrix used in the SpMV.
pub fn jpcg_reference_preconditioned(
    a: &CsrMatrix,
    m: &[f64],
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: u64,
    scheme: PrecisionScheme,
) -> Result<OracleTrace, ReferenceError> {
    let n = a.n();
    for (what, v) in [("m", m), ("b", b), ("x0", x0)] {
        if v.len() != n {
            return Err(ReferenceError::Dimension {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    if let Some(index) = m.iter().position(|&d| d == 0.0 || !d.is_finite()) {
        return Err(MatrixError::SingularJacobi { index, value: m[index] }.into());
    }
    let mut x = x0.to_vec();
    let ax = spmv_reference_scheme(a, &x, scheme)?;
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
    let mut z: Vec<f64> = (0..n).map(|i| r[i] / m[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rr = dot(&r, &r);
    let mut steps = vec![OracleStep {
        rr,
        alpha: None,
        beta: None,
    }];
    let mut i = 0;
    while i < max_iters && rr > tol {
        if rz == 0.0 {
            return Err(ReferenceError::Breakdown("rz = 0 before convergence".into()));
        }
        let ap = spmv_reference_scheme(a, &p, scheme)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0 && pap.is_finite()) {
            return Err(ReferenceError::Breakdown(format!("p·ap = {pap}")));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            z[k] = r[k] / m[k];
        }
        let rz_new = dot(&r, &z);
        rr = dot(&r, &r);
        i += 1;
        let last = !(i < max_iters && rr > tol);
        let beta = if last {
            None
        } else {
            let beta = rz_new / rz;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            Some(beta)
        };
        rz = rz_new;
        steps.push(OracleStep {
            rr,
            alpha: Some(alpha),
            beta,
        });
    }
    Ok(OracleTrace {
        steps,
        x,
        converged: rr <= tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rel_tol: f64,
    /// First index whose rr values differ by more than `rel_tol` relative.
    pub first_divergence: Option<u64>,
    /// Length difference `t1 - t2` in iterations.
    pub iteration_delta: i64,
}

/// Compares two rr sequences (initialization entry first).
pub fn compare_traces(t1: &[f64], t2: &[f64], rel_tol: f64) -> Comparison {
    let first_divergence = t1
        .iter()
        .zip(t2)
        .position(|(&a, &b)| {
            let scale = a.abs().max(b.abs());
            scale > 0.0 && (a - b).abs() / scale > rel_tol || a.is_nan() != b.is_nan()
        })
        .map(|i| i as u64);
    Comparison {
        rel_tol,
        first_divergence,
        iteration_delta: t1.len() as i64 - t2.len() as i64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap()
    }

    #[test]
    fn spmv_examples() {
        assert_eq!(spmv_reference(&two_by_two(), &[1.0, 1.0]).unwrap(), vec![5.0, 4.0]);
        let x = [0.3, -2.5, 7.0];
        assert_eq!(spmv_reference(&CsrMatrix::identity(3), &x).unwrap(), x.to_vec());
        assert!(spmv_reference(&two_by_two(), &[1.0]).is_err());
    }

    #[test]
    fn two_by_two_solution() {
        let t = jpcg_reference(
            &two_by_two(),
            &[1.0, 2.0],
            &[0.0; 2],
            1e-12,
            20_000,
            PrecisionScheme::DefaultFp64,
        )
        .unwrap();
        assert!(t.converged);
        assert!(t.iterations() <= 3);
        // Direct inverse of [[4,1],[1,3]] applied to [1,2].
        assert!((t.x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((t.x[1] - 7.0 / 11.0).abs() < 1e-10);
        assert_eq!(t.steps.len() as u64, t.iterations() + 1);
    }

    #[test]
    fn identity_converges_in_one() {
        let b = [1.5, -2.0, 3.25, 0.5];
        let t = jpcg_reference(
            &CsrMatrix::identity(4),
            &b,
            &[0.0; 4],
            1e-12,
            100,
            PrecisionScheme::DefaultFp64,
        )
        .unwrap();
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.x, b.to_vec());
    }

    #[test]
    fn compare_examples() {
        let t = [4.0, 1.0, 0.25];
        let c = compare_traces(&t, &t, 1e-12);
        assert_eq!((c.first_divergence, c.iteration_delta), (None, 0));
        let c = compare_traces(&t, &[4.0, 1.1], 1e-3);
        assert_eq!((c.first_divergence, c.iteration_delta), (Some(1), 1));
    }

    #[test]
    fn v3_is_fp64_on_the_cast_matrix_with_the_original_diagonal() {
        use crate::fixtures::random_spd;
        use crate::spmv::cast_matrix_widened;
        for seed in 0..10 {
            let a = random_spd(16, seed);
            let b = vec![1.0; 16];
            let x0 = vec![0.0; 16];
            let v3 = jpcg_reference(&a, &b, &x0, 1e-12, 200, PrecisionScheme::MixedV3).unwrap();
            let cast = cast_matrix_widened(&a, PrecisionScheme::MixedV3).unwrap();
            let m = extract_jacobi(&a).unwrap().into_inner();
            let fp64 =
                jpcg_reference_preconditioned(&cast, &m, &b, &x0, 1e-12, 200, PrecisionScheme::DefaultFp64).unwrap();
            assert_eq!(v3, fp64);
        }
    }

    #[test]
    fn budget_stops_unconverged() {
        let a = CsrMatrix::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let t = jpcg_reference(&a, &[1.0; 3], &[0.0; 3], 1e-12, 1, PrecisionScheme::DefaultFp64).unwrap();
        assert!(!t.converged);
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.steps[1].beta, None);
    }
}
