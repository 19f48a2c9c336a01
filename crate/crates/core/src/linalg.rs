//! Small dense linear-algebra helpers shared across modules. Everything here
//! targets desk-scale matrices (hat matrices are at most 4x4, state
//! covariances at most a few hundred rows).

use nalgebra::{DMatrix, DVector};

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Symmetric positive-semidefinite square root via eigen-decomposition,
/// with negative eigenvalues clipped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals: DVector<f64> = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Frobenius norm of the skew part; zero for symmetric input.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// True if all eigenvalues are `>= -tol` (after symmetrizing).
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    symmetric_eigenvalues(m).iter().all(|&v| v >= -tol)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two points for a slope");
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = psd_sqrt(&m);
        assert!((s[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((s[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(s[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn slope_of_pure_power_law() {
        let x = [0.4, 0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|h| 3.0 * h * h).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
