//! Stationary LQR mathematics: Riccati and Lyapunov solvers, optimal gains,
//! steady-state costs and a finite-horizon dynamic-programming oracle.
//!
//! Conventions: dynamics `x' = A x + B u + w` with `w ~ N(0, psi2 I)`, stage
//! cost `x^T Q x + u^T R u`, linear feedback `u = K x`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, is_finite, operator_norm, spectral_radius, sym_eigenvalues, symmetrize};

/// The dynamics pair `[A B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Theta {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xd with d >= 1, got {}x{}", b.nrows(), b.ncols())));
        }
        if !is_finite(&a) || !is_finite(&b) {
            return Err(Error::InvalidArgument("non-finite entry in A or B".into()));
        }
        Ok(Self { a, b })
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).expect("finite scalar system")
    }

    /// Splits an `n x (n+d)` stacked matrix `[A B]`.
    pub fn from_stacked(m: &DMatrix<f64>, n: usize) -> Result<Self> {
        if m.nrows() != n || m.ncols() <= n {
            return Err(Error::Dimension(format!("stacked theta must be {n}x(n+d), got {}x{}", m.nrows(), m.ncols())));
        }
        let d = m.ncols() - n;
        Self::new(m.columns(0, n).into_owned(), m.columns(n, d).into_owned())
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.d());
        let mut m = DMatrix::zeros(n, n + d);
        m.columns_mut(0, n).copy_from(&self.a);
        m.columns_mut(n, d).copy_from(&self.b);
        m
    }

    /// `A + B K`
    pub fn closed_loop(&self, gain: &Gain) -> DMatrix<f64> {
        &self.a + &self.b * gain.matrix()
    }

    /// Frobenius distance `||Theta - other||_F`.
    pub fn distance(&self, other: &Theta) -> f64 {
        ((&self.a - &other.a).norm_squared() + (&self.b - &other.b).norm_squared()).sqrt()
    }
}

/// Cost matrices and process-noise level (`W = psi2 I`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    psi2: f64,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, psi2: f64) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || m.nrows() == 0 || !is_finite(m) {
                return Err(Error::InvalidArgument(format!("{name} must be a finite non-empty square matrix")));
            }
            if asymmetry(m) > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            if sym_eigenvalues(m)[0] <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} is not positive definite")));
            }
        }
        if !(psi2.is_finite() && psi2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("psi2 must be finite and non-negative, got {psi2}")));
        }
        Ok(Self { q, r, psi2 })
    }

    /// `Q = I_n`, `R = I_d`.
    pub fn identity(n: usize, d: usize, psi2: f64) -> Self {
        Self::new(DMatrix::identity(n, n), DMatrix::identity(d, d), psi2).expect("identity costs are valid")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn psi2(&self) -> f64 {
        self.psi2
    }

    pub fn with_psi2(&self, psi2: f64) -> Self {
        Self { psi2, ..self.clone() }
    }

    fn check_dims(&self, theta: &Theta) -> Result<()> {
        if self.q.nrows() != theta.n() || self.r.nrows() != theta.d() {
            return Err(Error::Dimension(format!(
                "cost is ({},{}) but system is ({},{})",
                self.q.nrows(),
                self.r.nrows(),
                theta.n(),
                theta.d()
            )));
        }
        Ok(())
    }
}

/// Linear state feedback `u = K x`, `K` is `d x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain(DMatrix<f64>);

impl Gain {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if !is_finite(&k) {
            return Err(Error::InvalidArgument("non-finite gain".into()));
        }
        Ok(Self(k))
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        Self(DMatrix::zeros(d, n))
    }

    pub fn scalar(k: f64) -> Self {
        Self(DMatrix::from_element(1, 1, k))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Quadratic relative value matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix(DMatrix<f64>);

impl ValueMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Tolerances shared by the fixed-point solvers. Residuals are relative:
/// `residual <= tol * (1 + ||P||_op)`. An iteration that stalls at round-off
/// is accepted once its residual is within `stall_tol * (1 + ||P||_op)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub stall_tol: f64,
    pub max_iter: usize,
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-13, stall_tol: 1e-10, max_iter: 10_000, divergence_bound: 1e12 }
    }
}

fn riccati_map(theta: &Theta, cost: &CostSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (theta.a(), theta.b());
    let pa = p * a;
    let pb = p * b;
    let s = cost.r() + b.transpose() * &pb;
    let chol = Cholesky::<f64, Dyn>::new(symmetrize(&s)).ok_or_else(|| Error::InvalidArgument("R + B^T P B is not positive definite".into()))?;
    let gain_part = chol.solve(&(b.transpose() * &pa));
    let next = cost.q() + a.transpose() * &pa - a.transpose() * &pb * &gain_part;
    Ok(symmetrize(&next))
}

/// `P - (Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A)` in operator norm.
pub fn dare_residual(theta: &Theta, cost: &CostSpec, p: &ValueMatrix) -> f64 {
    match riccati_map(theta, cost, p.matrix()) {
        Ok(next) => operator_norm(&(p.matrix() - next)),
        Err(_) => f64::INFINITY,
    }
}

/// Solves the discrete algebraic Riccati equation by value iteration from `P = Q`.
pub fn solve_dare(theta: &Theta, cost: &CostSpec) -> Result<ValueMatrix> {
    solve_dare_with(theta, cost, &SolverOptions::default())
}

pub fn solve_dare_with(theta: &Theta, cost: &CostSpec, opts: &SolverOptions) -> Result<ValueMatrix> {
    cost.check_dims(theta)?;
    dare_iterate(theta, cost, cost.q().clone(), opts)
}

/// Same fixed-point iteration started from a previous solution; used when
/// sweeping slowly varying systems.
pub fn solve_dare_warm(theta: &Theta, cost: &CostSpec, init: &ValueMatrix) -> Result<ValueMatrix> {
    cost.check_dims(theta)?;
    if init.matrix().nrows() != theta.n() {
        return Err(Error::Dimension("warm start has the wrong size".into()));
    }
    dare_iterate(theta, cost, init.matrix().clone(), &SolverOptions::default())
}

fn dare_iterate(theta: &Theta, cost: &CostSpec, init: DMatrix<f64>, opts: &SolverOptions) -> Result<ValueMatrix> {
    let mut p = init;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_map(theta, cost, &p)?;
        let scale = operator_norm(&p);
        let step = operator_norm(&(&next - &p));
        let stalled = step >= residual && step <= opts.stall_tol * (1.0 + scale);
        residual = step;
        if residual <= opts.tol * (1.0 + scale) || stalled {
            // the residual of `p` itself is exactly `||p - F(p)||`
            return Ok(ValueMatrix(p));
        }
        if !is_finite(&next) || operator_norm(&next) > opts.divergence_bound {
            return Err(Error::NonConvergent { iterations: opts.max_iter, residual: f64::INFINITY });
        }
        p = next;
    }
    Err(Error::NonConvergent { iterations: opts.max_iter, residual })
}

/// `K = -(R + B^T P B)^{-1} B^T P A` for a given value matrix.
pub fn gain_from_value(theta: &Theta, cost: &CostSpec, p: &ValueMatrix) -> Result<Gain> {
    let (a, b) = (theta.a(), theta.b());
    let p = p.matrix();
    let s = cost.r() + b.transpose() * p * b;
    let chol = Cholesky::<f64, Dyn>::new(symmetrize(&s)).ok_or_else(|| Error::InvalidArgument("R + B^T P B is not positive definite".into()))?;
    let k = -chol.solve(&(b.transpose() * p * a));
    Gain::new(k)
}

pub fn optimal_gain(theta: &Theta, cost: &CostSpec) -> Result<Gain> {
    optimal(theta, cost).map(|(k, _)| k)
}

/// Optimal gain together with the Riccati solution it was derived from.
pub fn optimal(theta: &Theta, cost: &CostSpec) -> Result<(Gain, ValueMatrix)> {
    let p = solve_dare(theta, cost)?;
    let k = gain_from_value(theta, cost, &p)?;
    Ok((k, p))
}

/// Solves `P = Q + K^T R K + (A+BK)^T P (A+BK)`.
pub fn solve_lyapunov(theta: &Theta, gain: &Gain, cost: &CostSpec) -> Result<ValueMatrix> {
    solve_lyapunov_with(theta, gain, cost, &SolverOptions::default())
}

pub fn solve_lyapunov_with(theta: &Theta, gain: &Gain, cost: &CostSpec, opts: &SolverOptions) -> Result<ValueMatrix> {
    cost.check_dims(theta)?;
    let k = gain.matrix();
    if k.nrows() != theta.d() || k.ncols() != theta.n() {
        return Err(Error::Dimension(format!("gain must be {}x{}, got {}x{}", theta.d(), theta.n(), k.nrows(), k.ncols())));
    }
    let phi = theta.closed_loop(gain);
    let radius = spectral_radius(&phi);
    if !(radius < 1.0 - 1e-8) {
        return Err(Error::Unstable { radius });
    }
    let m = symmetrize(&(cost.q() + k.transpose() * cost.r() * k));
    let p = stein_solve(&phi, &m, opts)?;
    Ok(ValueMatrix(p))
}

/// Solves `P = M + Phi^T P Phi` for a Schur-stable `Phi` through the
/// Kronecker-vectorised linear system, with iterative refinement.
fn stein_solve(phi: &DMatrix<f64>, m: &DMatrix<f64>, opts: &SolverOptions) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    if n == 1 {
        let f = phi[(0, 0)];
        return Ok(DMatrix::from_element(1, 1, m[(0, 0)] / (1.0 - f * f)));
    }
    let phit = phi.transpose();
    let op = DMatrix::<f64>::identity(n * n, n * n) - phit.kronecker(&phit);
    let lu = op.lu();
    let rhs = DMatrix::from_column_slice(n * n, 1, m.as_slice());
    let mut vec_p = lu.solve(&rhs).ok_or_else(|| Error::Unstable { radius: spectral_radius(phi) })?;
    let mut p = symmetrize(&DMatrix::from_column_slice(n, n, vec_p.as_slice()));
    for _ in 0..8 {
        let resid = m + &phit * &p * phi - &p;
        if operator_norm(&resid) <= opts.tol * 10.0 * (1.0 + operator_norm(&p)) {
            break;
        }
        let corr = lu
            .solve(&DMatrix::from_column_slice(n * n, 1, resid.as_slice()))
            .ok_or_else(|| Error::Unstable { radius: spectral_radius(phi) })?;
        vec_p = DMatrix::from_column_slice(n * n, 1, p.as_slice()) + corr;
        p = symmetrize(&DMatrix::from_column_slice(n, n, vec_p.as_slice()));
    }
    Ok(p)
}

/// Residual of the Lyapunov fixed point in operator norm.
pub fn lyapunov_residual(theta: &Theta, gain: &Gain, cost: &CostSpec, p: &ValueMatrix) -> f64 {
    let k = gain.matrix();
    let phi = theta.closed_loop(gain);
    let rhs = cost.q() + k.transpose() * cost.r() * k + phi.transpose() * p.matrix() * &phi;
    operator_norm(&(p.matrix() - rhs))
}

/// Steady-state average cost `J(Theta, K) = Tr(P(Theta, K) W)`.
pub fn avg_cost(theta: &Theta, gain: &Gain, cost: &CostSpec) -> Result<f64> {
    let p = solve_lyapunov(theta, gain, cost)?;
    Ok(cost.psi2() * p.matrix().trace())
}

/// Average cost of `u = K x + sigma eta`, `eta ~ N(0, I_d)`:
/// `J(Theta, K) + sigma2 Tr(R + B^T P B)`.
pub fn avg_cost_with_noise(theta: &Theta, gain: &Gain, sigma2: f64, cost: &CostSpec) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let p = solve_lyapunov(theta, gain, cost)?;
    Ok(cost.psi2() * p.matrix().trace() + sigma2 * exploration_weight(theta, cost, &p))
}

/// `Tr(R + B^T P B)`: per-unit-variance cost of input noise.
pub fn exploration_weight(theta: &Theta, cost: &CostSpec, p: &ValueMatrix) -> f64 {
    (cost.r() + theta.b().transpose() * p.matrix() * theta.b()).trace()
}

/// Optimal steady-state cost `J* = psi2 Tr(P*)`.
pub fn optimal_cost(theta: &Theta, cost: &CostSpec) -> Result<f64> {
    Ok(cost.psi2() * solve_dare(theta, cost)?.matrix().trace())
}

/// Backward dynamic programme with terminal value `P_{H+1} = 0`.
///
/// Returns gains `K_1..K_H` and values `P_1..P_H` (index 0 is the first stage).
pub fn finite_horizon(theta: &Theta, cost: &CostSpec, horizon: usize) -> Result<(Vec<Gain>, Vec<ValueMatrix>)> {
    cost.check_dims(theta)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let (n, _d) = (theta.n(), theta.d());
    let mut gains = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon);
    let mut p_next = ValueMatrix(DMatrix::zeros(n, n));
    for _ in 0..horizon {
        let k = gain_from_value(theta, cost, &p_next)?;
        let phi = theta.closed_loop(&k);
        let km = k.matrix();
        let p = cost.q() + km.transpose() * cost.r() * km + phi.transpose() * p_next.matrix() * &phi;
        let p = ValueMatrix(symmetrize(&p));
        gains.push(k);
        values.push(p.clone());
        p_next = p;
    }
    gains.reverse();
    values.reverse();
    Ok((gains, values))
}

pub fn finite_horizon_dp(theta: &Theta, cost: &CostSpec, horizon: usize) -> Result<Vec<Gain>> {
    finite_horizon(theta, cost, horizon).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const A1: f64 = 0.447_213_595_499_957_9; // 1/sqrt(5)

    fn scalar_cost() -> CostSpec {
        CostSpec::identity(1, 1, 1.0)
    }

    /// Positive root of `b^2 p^2 + (1 - a^2 - b^2) p - 1 = 0` (scalar DARE with q = r = 1).
    fn scalar_dare_oracle(a: f64, b: f64) -> f64 {
        let (qa, qb, qc) = (b * b, 1.0 - a * a - b * b, -1.0);
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Theta, CostSpec) {
        loop {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            let theta = Theta::new(a, b).unwrap();
            let cost = CostSpec::identity(n, d, 1.0);
            if let Ok(k) = optimal_gain(&theta, &cost) {
                if spectral_radius(&theta.closed_loop(&k)) < 0.9 {
                    return (theta, cost);
                }
            }
        }
    }

    #[test]
    fn scalar_dare_without_input_is_geometric_series() {
        let p = solve_dare(&Theta::scalar(A1, 0.0), &scalar_cost()).unwrap();
        assert!((p.matrix()[(0, 0)] - 1.25).abs() < 1e-9);
    }

    #[test]
    fn scalar_dare_matches_quadratic_formula() {
        let oracle = scalar_dare_oracle(A1, 0.05);
        assert!((oracle - 1.2490).abs() < 5e-5);
        // independent plain fixed-point iteration
        let mut p = 1.0f64;
        for _ in 0..10_000 {
            let next = 1.0 + A1 * A1 * p - (A1 * p * 0.05).powi(2) / (1.0 + 0.0025 * p);
            if (next - p).abs() < 1e-15 {
                break;
            }
            p = next;
        }
        assert!((p - oracle).abs() < 1e-12);
        let got = solve_dare(&Theta::scalar(A1, 0.05), &scalar_cost()).unwrap();
        assert!((got.matrix()[(0, 0)] - oracle).abs() < 1e-9);
    }

    #[test]
    fn scalar_optimal_gain() {
        let k0 = optimal_gain(&Theta::scalar(A1, 0.0), &scalar_cost()).unwrap();
        assert_eq!(k0.matrix()[(0, 0)], 0.0);
        let p = scalar_dare_oracle(A1, 0.05);
        let oracle = -A1 * 0.05 * p / (1.0 + 0.0025 * p);
        assert!((oracle + 0.02784).abs() < 5e-6);
        let k = optimal_gain(&Theta::scalar(A1, 0.05), &scalar_cost()).unwrap();
        assert!((k.matrix()[(0, 0)] - oracle).abs() < 1e-9);
    }

    #[test]
    fn dare_residual_and_gain_vs_dp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(1..=4);
            let d = rng.random_range(1..=4);
            let (theta, cost) = random_system(&mut rng, n, d);
            let (k, p) = optimal(&theta, &cost).unwrap();
            let pn = operator_norm(p.matrix());
            assert!(dare_residual(&theta, &cost, &p) <= 1e-10 * (1.0 + pn));
            assert!(sym_eigenvalues(p.matrix())[0] >= -1e-10);
            assert!(spectral_radius(&theta.closed_loop(&k)) < 1.0);
            let dp = finite_horizon_dp(&theta, &cost, 500).unwrap();
            assert!((dp[0].matrix() - k.matrix()).amax() < 1e-8);
        }
    }

    #[test]
    fn unstabilizable_system_is_rejected() {
        // unstable mode not reachable from the input
        let theta = Theta::scalar(1.5, 0.0);
        assert!(matches!(solve_dare(&theta, &scalar_cost()), Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn lyapunov_closed_forms() {
        let p = solve_lyapunov(&Theta::scalar(A1, 0.0), &Gain::scalar(0.0), &scalar_cost()).unwrap();
        assert!((p.matrix()[(0, 0)] - 1.25).abs() < 1e-12);
        let j = avg_cost(&Theta::scalar(A1, 0.0), &Gain::scalar(0.0), &scalar_cost()).unwrap();
        assert!((j - 1.25).abs() < 1e-12);
        let j0 = avg_cost(&Theta::scalar(A1, 0.0), &Gain::scalar(0.0), &scalar_cost().with_psi2(0.0)).unwrap();
        assert_eq!(j0, 0.0);
        let jn = avg_cost_with_noise(&Theta::scalar(A1, 0.0), &Gain::scalar(0.0), 0.1, &scalar_cost()).unwrap();
        assert!((jn - 1.35).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable_loop() {
        let r = solve_lyapunov(&Theta::scalar(1.2, 1.0), &Gain::scalar(0.0), &scalar_cost());
        assert!(matches!(r, Err(Error::Unstable { .. })));
    }

    #[test]
    fn lyapunov_at_optimum_equals_dare() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (theta, cost) = random_system(&mut rng, 3, 2);
            let (k, p_star) = optimal(&theta, &cost).unwrap();
            let p = solve_lyapunov(&theta, &k, &cost).unwrap();
            assert!((p.matrix() - p_star.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn lyapunov_matches_truncated_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.random_range(1..=4);
            let d = rng.random_range(1..=3);
            let theta = Theta::new(
                DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.4..0.4)),
                DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
            let k = Gain::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-0.1..0.1))).unwrap();
            let phi = theta.closed_loop(&k);
            if spectral_radius(&phi) > 0.95 {
                continue;
            }
            let cost = CostSpec::identity(n, d, 1.0);
            let m = cost.q() + k.matrix().transpose() * cost.r() * k.matrix();
            let mut series = DMatrix::zeros(n, n);
            let mut pow = DMatrix::<f64>::identity(n, n);
            loop {
                let term = pow.transpose() * &m * &pow;
                series += &term;
                if term.amax() < 1e-14 {
                    break;
                }
                pow = &pow * &phi;
            }
            let p = solve_lyapunov(&theta, &k, &cost).unwrap();
            assert!((p.matrix() - &series).amax() < 1e-10 * (1.0 + series.amax()));
            assert!(lyapunov_residual(&theta, &k, &cost, &p) <= 1e-10 * (1.0 + operator_norm(p.matrix())));
        }
    }

    #[test]
    fn noise_cost_is_linear_in_sigma2() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (theta, cost) = random_system(&mut rng, 2, 2);
        let k = optimal_gain(&theta, &cost).unwrap();
        let base = avg_cost(&theta, &k, &cost).unwrap();
        let pts: Vec<(f64, f64)> = [0.1, 0.7, 2.3]
            .iter()
            .map(|&s| (s, avg_cost_with_noise(&theta, &k, s, &cost).unwrap() - base))
            .collect();
        let slope = pts[0].1 / pts[0].0;
        for (s, v) in &pts {
            assert!((v - slope * s).abs() < 1e-12 * (1.0 + v.abs()));
        }
        assert!((avg_cost_with_noise(&theta, &k, 0.0, &cost).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn optimal_gain_minimises_average_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (theta, cost) = random_system(&mut rng, 3, 2);
        let k = optimal_gain(&theta, &cost).unwrap();
        let j_star = avg_cost(&theta, &k, &cost).unwrap();
        for _ in 0..20 {
            let mut delta = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            delta *= rng.random_range(0.0..0.05) / delta.norm();
            let kp = Gain::new(k.matrix() + delta).unwrap();
            if let Ok(j) = avg_cost(&theta, &kp, &cost) {
                assert!(j >= j_star - 1e-9);
            }
        }
    }

    #[test]
    fn misspecified_gain_cost_is_quadratic_in_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let (theta, cost) = random_system(&mut rng, 2, 1);
            let j_star = optimal_cost(&theta, &cost).unwrap();
            let dir = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let dir = &dir / dir.norm();
            let gap = |scale: f64| {
                let est = Theta::from_stacked(&(theta.stacked() + &dir * scale), 2).unwrap();
                let k = optimal_gain(&est, &cost).unwrap();
                avg_cost(&theta, &k, &cost).unwrap() - j_star
            };
            let c = gap(1e-2) / 1e-4;
            let small = gap(1e-3);
            assert!(small <= 2.0 * c * 1e-6 && small >= 0.5 * c * 1e-6 - 1e-13, "c={c} small={small}");
        }
    }

    #[test]
    fn horizon_one_gain_is_zero_and_values_grow_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (theta, cost) = random_system(&mut rng, 3, 2);
        let g = finite_horizon_dp(&theta, &cost, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].matrix().amax(), 0.0);
        let (_, values) = finite_horizon(&theta, &cost, 60).unwrap();
        for w in values.windows(2) {
            // P_t >= P_{t+1} in the PSD order; norm is nondecreasing backwards
            let diff = w[0].matrix() - w[1].matrix();
            assert!(sym_eigenvalues(&diff)[0] >= -1e-9);
            assert!(operator_norm(w[0].matrix()) >= operator_norm(w[1].matrix()) - 1e-12);
        }
    }
}
