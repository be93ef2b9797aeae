//! Interval least-squares estimation of `Theta` from trajectory data, design
//! matrix diagnostics, one-dimensional directional fits and two small
//! deterministic geometry kernels.
//!
//! Intervals are inclusive `(s, e)` in absolute (zero-based) time. For each
//! step `t` the regressor is `z_t = [x_t; u_t]` and the target is `x_{t+1}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigenvalues, symmetrize};
use crate::lqr::Theta;

/// Relative eigenvalue floor below which a design matrix is declared singular.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Transition records `(x_t, u_t, x_{t+1})` for a contiguous range of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    d: usize,
    start: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    x_next: Vec<f64>,
    sigma: Vec<f64>,
    gain_id: Vec<usize>,
    noise: Vec<f64>,
}

impl Trajectory {
    pub fn new(n: usize, d: usize, start: usize) -> Self {
        Self { n, d, start, x: Vec::new(), u: Vec::new(), x_next: Vec::new(), sigma: Vec::new(), gain_id: Vec::new(), noise: Vec::new() }
    }

    pub fn with_capacity(n: usize, d: usize, start: usize, cap: usize) -> Self {
        let mut t = Self::new(n, d, start);
        t.x.reserve(cap * n);
        t.u.reserve(cap * d);
        t.x_next.reserve(cap * n);
        t.sigma.reserve(cap);
        t.gain_id.reserve(cap);
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Absolute time of the first record.
    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the absolute time of the last record.
    pub fn end(&self) -> usize {
        self.start + self.len()
    }

    /// Drops all records; the next push is step `start`.
    pub fn reset(&mut self, start: usize) {
        self.start = start;
        self.x.clear();
        self.u.clear();
        self.x_next.clear();
        self.sigma.clear();
        self.gain_id.clear();
        self.noise.clear();
    }

    pub fn push(&mut self, x: &[f64], u: &[f64], x_next: &[f64], sigma: f64, gain_id: usize) {
        assert_eq!(x.len(), self.n, "state dimension");
        assert_eq!(u.len(), self.d, "input dimension");
        assert_eq!(x_next.len(), self.n, "next-state dimension");
        self.x.extend_from_slice(x);
        self.u.extend_from_slice(u);
        self.x_next.extend_from_slice(x_next);
        self.sigma.push(sigma);
        self.gain_id.push(gain_id);
    }

    /// Records the realised process noise `w_t` of the last pushed step.
    pub fn push_noise(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.n, "noise dimension");
        assert_eq!(self.noise.len(), (self.len() - 1) * self.n, "noise must follow its step");
        self.noise.extend_from_slice(w);
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= self.start && t < self.end(), "step {t} not in trajectory [{}, {})", self.start, self.end());
        t - self.start
    }

    pub fn x(&self, t: usize) -> &[f64] {
        let i = self.idx(t);
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn u(&self, t: usize) -> &[f64] {
        let i = self.idx(t);
        &self.u[i * self.d..(i + 1) * self.d]
    }

    pub fn x_next(&self, t: usize) -> &[f64] {
        let i = self.idx(t);
        &self.x_next[i * self.n..(i + 1) * self.n]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn gain_id(&self, t: usize) -> usize {
        self.gain_id[self.idx(t)]
    }

    pub fn noise(&self, t: usize) -> Option<&[f64]> {
        let i = self.idx(t);
        self.noise.get(i * self.n..(i + 1) * self.n)
    }

    pub fn z(&self, t: usize) -> DVector<f64> {
        let mut z = DVector::zeros(self.n + self.d);
        z.rows_mut(0, self.n).copy_from_slice(self.x(t));
        z.rows_mut(self.n, self.d).copy_from_slice(self.u(t));
        z
    }

    fn check_interval(&self, (s, e): (usize, usize)) -> Result<()> {
        if e < s || s < self.start || e >= self.end() {
            return Err(Error::InvalidArgument(format!(
                "interval [{s}, {e}] not inside trajectory [{}, {})",
                self.start,
                self.end()
            )));
        }
        Ok(())
    }
}

/// Running sums `sum z z^T` and `sum y z^T` for a least-squares problem.
#[derive(Debug, Clone)]
pub struct DesignAccumulator {
    zz: DMatrix<f64>,
    yz: DMatrix<f64>,
}

impl DesignAccumulator {
    pub fn new(outputs: usize, regressors: usize) -> Self {
        Self { zz: DMatrix::zeros(regressors, regressors), yz: DMatrix::zeros(outputs, regressors) }
    }

    pub fn add(&mut self, z: &[f64], y: &[f64]) {
        let p = z.len();
        for i in 0..p {
            for j in i..p {
                self.zz[(i, j)] += z[i] * z[j];
            }
        }
        for (r, &yr) in y.iter().enumerate() {
            for (j, &zj) in z.iter().enumerate() {
                self.yz[(r, j)] += yr * zj;
            }
        }
    }

    pub fn upsilon(&self) -> DMatrix<f64> {
        let mut m = self.zz.clone();
        for i in 0..m.nrows() {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.yz
    }

    /// Minimiser `Y Z^T (Z Z^T)^{-1}` through one Cholesky factor shared by all rows.
    pub fn solve(&self) -> Result<(DMatrix<f64>, DesignStats)> {
        let stats = DesignStats::of(self.upsilon());
        if !stats.is_regular() {
            return Err(Error::SingularDesign { eig_min: stats.eig_min, eig_max: stats.eig_max });
        }
        let chol = Cholesky::<f64, Dyn>::new(stats.upsilon.clone())
            .ok_or(Error::SingularDesign { eig_min: stats.eig_min, eig_max: stats.eig_max })?;
        let coef = chol.solve(&self.yz.transpose()).transpose();
        Ok((coef, stats))
    }
}

/// Spectral summary of `Upsilon = sum z z^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignStats {
    pub upsilon: DMatrix<f64>,
    pub cond: f64,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl DesignStats {
    pub fn of(upsilon: DMatrix<f64>) -> Self {
        let ev = sym_eigenvalues(&upsilon);
        let eig_min = ev[0];
        let eig_max = *ev.last().expect("non-empty");
        let cond = if eig_min > 0.0 { eig_max / eig_min } else { f64::INFINITY };
        Self { upsilon: symmetrize(&upsilon), cond, eig_min, eig_max }
    }

    pub fn is_regular(&self) -> bool {
        self.eig_max > 0.0 && self.eig_min > SINGULAR_RATIO * self.eig_max
    }
}

/// Least-squares estimate over an interval plus design diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsEstimate {
    pub theta_hat: Theta,
    pub interval: (usize, usize),
    pub upsilon: DMatrix<f64>,
    pub cond: f64,
    pub eig_min: f64,
    pub eig_max: f64,
}

fn accumulate(traj: &Trajectory, (s, e): (usize, usize)) -> DesignAccumulator {
    let (n, d) = (traj.n(), traj.d());
    let mut acc = DesignAccumulator::new(n, n + d);
    let mut z = vec![0.0; n + d];
    for t in s..=e {
        z[..n].copy_from_slice(traj.x(t));
        z[n..].copy_from_slice(traj.u(t));
        acc.add(&z, traj.x_next(t));
    }
    acc
}

pub fn design_matrix_stats(traj: &Trajectory, interval: (usize, usize)) -> Result<DesignStats> {
    traj.check_interval(interval)?;
    Ok(DesignStats::of(accumulate(traj, interval).upsilon()))
}

/// `argmin_Theta sum_{t in [s,e]} ||x_{t+1} - Theta z_t||^2`.
pub fn ols_fit(traj: &Trajectory, interval: (usize, usize)) -> Result<OlsEstimate> {
    traj.check_interval(interval)?;
    let (coef, stats) = accumulate(traj, interval).solve()?;
    Ok(OlsEstimate {
        theta_hat: Theta::from_stacked(&coef, traj.n())?,
        interval,
        upsilon: stats.upsilon,
        cond: stats.cond,
        eig_min: stats.eig_min,
        eig_max: stats.eig_max,
    })
}

/// Normal-equation residual `||Theta_hat Upsilon - sum x_{t+1} z_t^T||_F`.
pub fn normal_equation_residual(traj: &Trajectory, est: &OlsEstimate) -> f64 {
    let acc = accumulate(traj, est.interval);
    (est.theta_hat.stacked() * acc.upsilon() - acc.cross()).norm()
}

/// Least-squares fit of `B` alone when `A` is known: regress `x_{t+1} - A x_t` on `u_t`.
pub fn ols_fit_input_matrix(traj: &Trajectory, interval: (usize, usize), a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    traj.check_interval(interval)?;
    let (n, d) = (traj.n(), traj.d());
    let mut acc = DesignAccumulator::new(n, d);
    for t in interval.0..=interval.1 {
        let x = DVector::from_column_slice(traj.x(t));
        let y = DVector::from_column_slice(traj.x_next(t)) - a * x;
        acc.add(traj.u(t), y.as_slice());
    }
    acc.solve().map(|(b, _)| b)
}

/// One-dimensional least squares along direction `v` for output row `row`:
/// `lambda_v = argmin_lambda sum_t (y_t - <anchor + lambda v, z_t>)^2`.
pub fn directional_ols(traj: &Trajectory, interval: (usize, usize), row: usize, anchor: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    traj.check_interval(interval)?;
    let p = traj.n() + traj.d();
    if anchor.len() != p || v.len() != p || row >= traj.n() {
        return Err(Error::Dimension(format!("anchor/direction must have length {p} and row < {}", traj.n())));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector, norm {}", v.norm())));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for t in interval.0..=interval.1 {
        let z = traj.z(t);
        let vz = v.dot(&z);
        num += (traj.x_next(t)[row] - anchor.dot(&z)) * vz;
        den += vz * vz;
    }
    if den <= 1e-14 {
        return Err(Error::DegenerateDirection(den));
    }
    Ok(num / den)
}

/// Outcome of the two-dimensional axis-minimiser geometry check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryCheck {
    pub lambda_x: f64,
    pub lambda_y: f64,
    /// `lambda_x^2 + lambda_y^2`
    pub lhs: f64,
    /// `||p' - p*||^2 / 2`
    pub rhs: f64,
    pub holds: bool,
}

/// For `f(p) = (p - p*)^T H (p - p*)` compares the axis-wise one-dimensional
/// minimisers through `p'` against the distance of `p'` to the true minimiser.
pub fn quadratic_geometry_check(h: &DMatrix<f64>, p_prime: &DVector<f64>, p_star: &DVector<f64>) -> Result<GeometryCheck> {
    if h.shape() != (2, 2) || p_prime.len() != 2 || p_star.len() != 2 {
        return Err(Error::Dimension("geometry check is two-dimensional".into()));
    }
    let (a2, c, b2) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
    if (h[(1, 0)] - c).abs() > 1e-12 * (1.0 + c.abs()) || a2 <= 0.0 || b2 <= 0.0 || a2 * b2 - c * c <= 0.0 {
        return Err(Error::InvalidArgument("H must be symmetric positive definite".into()));
    }
    let ratio = c.abs() / a2.min(b2);
    if ratio > 1.0 / 33.0 {
        return Err(Error::ConditionViolated { ratio });
    }
    let dx = p_prime[0] - p_star[0];
    let dy = p_prime[1] - p_star[1];
    // x'' = argmin_x f(x, y'), y'' = argmin_y f(x', y)
    let x_dd = p_star[0] - c * dy / a2;
    let y_dd = p_star[1] - c * dx / b2;
    let lambda_x = p_prime[0] - x_dd;
    let lambda_y = p_prime[1] - y_dd;
    let lhs = lambda_x * lambda_x + lambda_y * lambda_y;
    let rhs = 0.5 * (dx * dx + dy * dy);
    Ok(GeometryCheck { lambda_x, lambda_y, lhs, rhs, holds: lhs >= rhs - 1e-12 })
}

/// Two-point noiseless regression with slightly different parameters per point:
/// `theta_1 = [1 1]`, `theta_2 = [1-eps 1]`, `z_1 = [cos a, sin a]`, `z_2 = [1 0]`.
/// Returns `||theta_hat - theta_2||`.
pub fn bias_demo_2d(alpha: f64, eps: f64) -> Result<f64> {
    let (up, _) = bias_demo_design(alpha, eps)?;
    Ok(up)
}

/// Bias together with the design-matrix diagnostics of the two-point problem.
pub fn bias_demo_design(alpha: f64, eps: f64) -> Result<(f64, DesignStats)> {
    if alpha == 0.0 || !alpha.is_finite() || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite alpha != 0, got alpha={alpha}, eps={eps}")));
    }
    let theta1 = [1.0, 1.0];
    let theta2 = [1.0 - eps, 1.0];
    let z1 = [alpha.cos(), alpha.sin()];
    let z2 = [1.0, 0.0];
    let mut acc = DesignAccumulator::new(1, 2);
    acc.add(&z1, &[theta1[0] * z1[0] + theta1[1] * z1[1]]);
    acc.add(&z2, &[theta2[0] * z2[0] + theta2[1] * z2[1]]);
    let stats = DesignStats::of(acc.upsilon());
    let chol = Cholesky::<f64, Dyn>::new(stats.upsilon.clone())
        .ok_or(Error::SingularDesign { eig_min: stats.eig_min, eig_max: stats.eig_max })?;
    let hat = chol.solve(&acc.cross().transpose());
    let bias = ((hat[0] - theta2[0]).powi(2) + (hat[1] - theta2[1]).powi(2)).sqrt();
    Ok((bias, stats))
}
