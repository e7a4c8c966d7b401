//! Symmetric eigenvalue routines for diagnostics and test oracles.
//!
//! The training losses never decompose anything; the cyclic Jacobi solver
//! here serves collapse metrics, trajectory diagnostics, and the
//! eigendecomposition oracles in the test suites.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues of a symmetric matrix, sorted descending. Cyclic Jacobi
/// sweeps with a fixed pivot order keep the result bit-deterministic.
pub fn sym_eigenvalues(m: &Tensor) -> Result<Vec<f64>> {
    if m.shape().len() != 2 || m.rows() != m.cols() {
        return Err(Error::shape(format!(
            "sym_eigenvalues needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let d = m.rows();
    let mut a: Vec<f64> = m.data().to_vec();
    let sym_err = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (a[i * d + j] - a[j * d + i]).abs())
        .fold(0.0f64, f64::max);
    if sym_err > 1e-9 {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {sym_err:.3e})"
        )));
    }

    let max_sweeps = 128;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let m = Tensor::matrix(3, 3, vec![2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let e = sym_eigenvalues(&m).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-12);
        assert!((e[1] - 0.5).abs() < 1e-12);
        assert!((e[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariant_spectrum() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1.
        let m = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = sym_eigenvalues(&m).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_and_frobenius_preserved() {
        // Random-ish symmetric matrix; eigenvalues must reproduce the
        // trace and the squared Frobenius norm.
        let m = Tensor::matrix(
            4,
            4,
            vec![
                1.2, 0.3, -0.7, 0.1, 0.3, -0.5, 0.2, 0.9, -0.7, 0.2, 2.0, -0.4, 0.1, 0.9, -0.4,
                0.6,
            ],
        )
        .unwrap();
        let e = sym_eigenvalues(&m).unwrap();
        let trace: f64 = (0..4).map(|i| m.at(i, i)).sum();
        assert!((e.iter().sum::<f64>() - trace).abs() < 1e-10);
        let frob: f64 = m.frob_sq();
        let from_eigs: f64 = e.iter().map(|v| v * v).sum();
        assert!((frob - from_eigs).abs() < 1e-10);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = Tensor::matrix(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(sym_eigenvalues(&m).is_err());
    }
}
