//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        2 => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let tr = a + d;
            let det = a * d - b * c;
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
            } else {
                // complex pair, |lambda|^2 = det
                det.abs().sqrt()
            }
        }
        _ => m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        // sqrt of the top eigenvalue of M^T M, closed form
        let g = m.transpose() * m;
        let tr = g[(0, 0)] + g[(1, 1)];
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let disc = (tr * tr / 4.0 - det).max(0.0);
        return (tr / 2.0 + disc.sqrt()).max(0.0).sqrt();
    }
    m.singular_values().max()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.trace()
}

/// `x^T M x`
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_radius_and_norm() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((spectral_radius(&i3) - 1.0).abs() < 1e-12);
        assert!((operator_norm(&i3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_radius_and_norm() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert!((spectral_radius(&m) - 0.9).abs() < 1e-12);
        assert!((operator_norm(&m) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let c = 0.3f64.cos() * 0.8;
        let s = 0.3f64.sin() * 0.8;
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&m) - 0.8).abs() < 1e-12);
        let m3 = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.1]);
        assert!((spectral_radius(&m3) - 0.8).abs() < 1e-10);
    }

    fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
    }

    proptest! {
        #[test]
        fn norm_dominates_radius(m in (1usize..=4).prop_flat_map(matrix)) {
            let r = spectral_radius(&m);
            let s = operator_norm(&m);
            prop_assert!(s >= r - 1e-9 * (1.0 + s));
            // dense SVD oracle
            let svd_max = m.singular_values().max();
            prop_assert!((s - svd_max).abs() <= 1e-9 * (1.0 + svd_max));
            // dense eigen oracle
            let eig = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!((r - eig).abs() <= 1e-8 * (1.0 + eig));
        }
    }
}
