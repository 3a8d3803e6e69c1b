use nalgebra::{DMatrix, DVector};

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    symmetrized(out)
}

pub(crate) fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Ordinary least squares fit.
pub(crate) struct Ols {
    pub beta: DVector<f64>,
    /// `(Z'Z)^{-1}`.
    pub zz_inv: DMatrix<f64>,
    pub rss: f64,
    pub n: usize,
}

pub(crate) fn ols(z: &DMatrix<f64>, y: &DVector<f64>) -> Option<Ols> {
    let zz = z.transpose() * z;
    let zz_inv = spd_inverse(&zz)?;
    if !zz_inv.iter().all(|v| v.is_finite()) {
        return None;
    }
    let beta = &zz_inv * (z.transpose() * y);
    let r = y - z * &beta;
    Some(Ols { beta, zz_inv, rss: r.dot(&r), n: z.nrows() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_exact_line() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let f = ols(&z, &y).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-12);
        assert!((f.beta[1] - 2.0).abs() < 1e-12);
        assert!(f.rss < 1e-20);
    }

    #[test]
    fn floor_makes_pd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = floor_eigenvalues(&m, 1e-6);
        assert!(min_eigenvalue(&f) >= 1e-6 - 1e-12);
    }
}
