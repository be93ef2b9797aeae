use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicsSeq, Segment};
use crate::error::{Error, Result};
use crate::linalg::{operator_norm, spectral_radius};
use crate::lqr::{gain_from_value, solve_dare, solve_dare_warm, CostSpec, Theta, ValueMatrix};
use crate::rng::{self, standard_normal, StreamRng};

/// Every generated `Theta_t` keeps `rho(A_t + B_t K*(Theta_t)) <= MARGIN`.
pub const MARGIN: f64 = 0.95;

/// Every generated `Theta_t` keeps `Tr P*(Theta_t) <= COST_CAP * n`.
pub const COST_CAP: f64 = 25.0;
/// Every generated `Theta_t` keeps `||K*(Theta_t)||_op <= GAIN_CAP`.
pub const GAIN_CAP: f64 = 2.0;

const MAX_TRIES: usize = 100;
const BASE_MARGIN: f64 = 0.85;
const INV_SQRT5: f64 = 0.447_213_595_499_957_9;

/// Spectral radius of the optimally controlled loop `A + B K*(Theta)`.
pub fn stabilizability_margin(theta: &Theta, cost: &CostSpec) -> Result<f64> {
    let p = solve_dare(theta, cost)?;
    let k = gain_from_value(theta, cost, &p)?;
    Ok(spectral_radius(&theta.closed_loop(&k)))
}

fn admissible(theta: &Theta, p: &ValueMatrix, k: &crate::lqr::Gain, margin: f64) -> bool {
    spectral_radius(&theta.closed_loop(k)) <= margin
        && p.matrix().trace() <= COST_CAP * theta.n() as f64
        && operator_norm(k.matrix()) <= GAIN_CAP
}

/// Admissibility with a warm-started Riccati solve.
fn warm_admissible(theta: &Theta, cost: &CostSpec, warm: &mut Option<ValueMatrix>) -> bool {
    let p = match warm.as_ref() {
        Some(init) => solve_dare_warm(theta, cost, init).or_else(|_| solve_dare(theta, cost)),
        None => solve_dare(theta, cost),
    };
    let Ok(p) = p else { return false };
    let Ok(k) = gain_from_value(theta, cost, &p) else { return false };
    let ok = admissible(theta, &p, &k, MARGIN);
    *warm = Some(p);
    ok
}

/// `rho(A + B K*) <= margin`, `Tr P* <= COST_CAP * n` and `||K*|| <= GAIN_CAP`.
fn well_conditioned(theta: &Theta, cost: &CostSpec, margin: f64) -> bool {
    let Ok(p) = solve_dare(theta, cost) else { return false };
    gain_from_value(theta, cost, &p).is_ok_and(|k| admissible(theta, &p, &k, margin))
}

fn gaussian_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| standard_normal(rng))
}

/// Uniform direction on the Frobenius unit sphere of `n x (n+d)` matrices.
fn unit_direction(rng: &mut StreamRng, n: usize, d: usize) -> DMatrix<f64> {
    loop {
        let g = gaussian_matrix(rng, n, n + d);
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

fn random_base_system(rng: &mut StreamRng, n: usize, d: usize, cost: &CostSpec) -> Theta {
    loop {
        let a = gaussian_matrix(rng, n, n);
        let radius = spectral_radius(&a);
        if radius < 1e-9 {
            continue;
        }
        let target: f64 = rng.random_range(0.5..1.05);
        let a = a * (target / radius);
        let b = gaussian_matrix(rng, n, d) / (d as f64).sqrt();
        let theta = Theta::new(a, b).expect("finite draws");
        if well_conditioned(&theta, cost, BASE_MARGIN) {
            return theta;
        }
    }
}

fn shifted(base: &Theta, delta: &DMatrix<f64>) -> Theta {
    Theta::from_stacked(&(base.stacked() + delta), base.n()).expect("consistent shapes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    SmoothSine,
    RandomWalk,
}

impl FromStr for DriftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth-sine" => Ok(Self::SmoothSine),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(Error::InvalidArgument(format!("unknown drift mode '{other}'"))),
        }
    }
}

/// Smoothly drifting dynamics whose total variation equals `budget`.
pub fn build_drift_instance(n: usize, d: usize, horizon: usize, budget: f64, mode: DriftMode, seed: u64) -> Result<DynamicsSeq> {
    if n == 0 || d == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("n, d and T must be positive".into()));
    }
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(Error::InvalidArgument(format!("variation budget must be non-negative, got {budget}")));
    }
    let cost = CostSpec::identity(n, d, 1.0);
    let mut rng = rng::stream(seed, 0, rng::INSTANCE);
    let base = random_base_system(&mut rng, n, d, &cost);
    if budget == 0.0 {
        return DynamicsSeq::stationary(base, horizon, cost);
    }
    if horizon < 2 {
        return Err(Error::InfeasibleBudget("a single step cannot carry variation".into()));
    }
    for _ in 0..MAX_TRIES {
        let offsets: Vec<DMatrix<f64>> = match mode {
            DriftMode::SmoothSine => {
                let dir = unit_direction(&mut rng, n, d);
                let phase: f64 = rng.random_range(0.0..2.0 * PI);
                let s: Vec<f64> = (0..horizon).map(|t| (2.0 * PI * t as f64 / horizon as f64 + phase).sin()).collect();
                let path: f64 = s.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                if path <= 0.0 {
                    continue;
                }
                let amp = budget / path;
                s.iter().map(|v| &dir * (amp * v)).collect()
            }
            DriftMode::RandomWalk => {
                let steps: Vec<DMatrix<f64>> = (1..horizon).map(|_| gaussian_matrix(&mut rng, n, n + d)).collect();
                let path: f64 = steps.iter().map(|g| g.norm()).sum();
                let scale = budget / path;
                let mut acc = DMatrix::zeros(n, n + d);
                let mut out = Vec::with_capacity(horizon);
                out.push(acc.clone());
                for g in &steps {
                    acc += g * scale;
                    out.push(acc.clone());
                }
                out
            }
        };
        let mut warm = None;
        let thetas: Vec<Theta> = offsets.iter().map(|o| shifted(&base, o)).collect();
        let ok = thetas.iter().all(|th| warm_admissible(th, &cost, &mut warm));
        if ok {
            return DynamicsSeq::from_steps(thetas, cost);
        }
    }
    Err(Error::InfeasibleBudget(format!(
        "no drift path with total variation {budget} kept the stabilizability margin in {MAX_TRIES} tries"
    )))
}

/// Piecewise-constant dynamics with `pieces` segments separated by random jumps.
pub fn build_switching_instance(n: usize, d: usize, horizon: usize, pieces: usize, jump_size: f64, seed: u64) -> Result<DynamicsSeq> {
    if n == 0 || d == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("n, d and T must be positive".into()));
    }
    if pieces < 1 || pieces > horizon {
        return Err(Error::InvalidArgument(format!("need 1 <= S <= T, got S={pieces}, T={horizon}")));
    }
    if !(jump_size.is_finite() && jump_size >= 0.0) {
        return Err(Error::InvalidArgument(format!("jump size must be non-negative, got {jump_size}")));
    }
    let cost = CostSpec::identity(n, d, 1.0);
    let mut rng = rng::stream(seed, 0, rng::INSTANCE);
    let base = random_base_system(&mut rng, n, d, &cost);
    let mut times: Vec<usize> = if pieces > 1 {
        sample(&mut rng, horizon - 1, pieces - 1).into_iter().map(|i| i + 1).collect()
    } else {
        Vec::new()
    };
    times.sort_unstable();

    let mut segments = Vec::with_capacity(pieces);
    let mut current = base;
    let mut start = 0usize;
    for &switch in &times {
        segments.push(Segment { len: switch - start, theta: current.clone() });
        let mut accepted = None;
        for _ in 0..MAX_TRIES {
            let size = jump_size * rng.random_range(0.9..=1.1);
            let cand = shifted(&current, &(unit_direction(&mut rng, n, d) * size));
            if well_conditioned(&cand, &cost, MARGIN) {
                accepted = Some(cand);
                break;
            }
        }
        current = accepted.ok_or_else(|| {
            Error::InfeasibleBudget(format!("no jump of size {jump_size} at t={switch} kept the stabilizability margin"))
        })?;
        start = switch;
    }
    segments.push(Segment { len: horizon - start, theta: current });
    DynamicsSeq::new(segments, cost)
}

/// Concatenated one-dimensional sub-instances `a = 1/sqrt(5)`, `b = chi sqrt(eps)`.
#[derive(Debug, Clone)]
pub struct PastedInstance {
    pub seq: DynamicsSeq,
    pub epsilon: f64,
    pub sub_len: usize,
    /// Number of sub-instances actually pasted (after truncation to `T`).
    pub count: usize,
    /// Signs `chi_i` of the pasted sub-instances.
    pub signs: Vec<i8>,
    /// Set when the budget admits fewer than one sub-instance; a single
    /// stationary sub-instance is returned instead.
    pub degenerate: bool,
}

pub fn build_pasted_lower_bound(horizon: usize, budget: f64, seed: u64) -> Result<PastedInstance> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let epsilon = (budget / (8.0 * horizon as f64)).powf(0.4);
    if !(epsilon > 0.0 && epsilon <= 0.04) {
        return Err(Error::InvalidArgument(format!("eps = (V_T/8T)^(2/5) must lie in (0, 0.04], got {epsilon}")));
    }
    let sub_len = (1.0 / (4.0 * epsilon * epsilon)).floor() as usize;
    let nominal = (budget / (2.0 * epsilon.sqrt())).floor() as usize;
    let degenerate = nominal < 1;
    let mut rng = rng::stream(seed, 0, rng::INSTANCE);
    let cost = CostSpec::identity(1, 1, 1.0);

    let mut segments: Vec<Segment> = Vec::new();
    let mut signs = Vec::new();
    let mut used = 0usize;
    let wanted = if degenerate { 1 } else { nominal };
    while signs.len() < wanted && used < horizon {
        let chi: i8 = if rng.random::<bool>() { 1 } else { -1 };
        let len = sub_len.min(horizon - used);
        segments.push(Segment { len, theta: Theta::scalar(INV_SQRT5, chi as f64 * epsilon.sqrt()) });
        signs.push(chi);
        used += len;
    }
    if used < horizon {
        segments.last_mut().expect("at least one sub-instance").len += horizon - used;
    }
    let count = signs.len();
    Ok(PastedInstance { seq: DynamicsSeq::new(segments, cost)?, epsilon, sub_len, count, signs, degenerate })
}

/// One-dimensional two-scale adversary for fixed-window restart policies.
#[derive(Debug, Clone)]
pub struct AdversaryInstance {
    pub seq: DynamicsSeq,
    pub epsilon: f64,
    /// Number of resampling events to `+-0.05`.
    pub big_resamples: usize,
    /// Number of resampling events to `+-eps`.
    pub small_resamples: usize,
    /// `V_T = 0`: the sequence is constant at `b = eps = 0`.
    pub degenerate: bool,
}

pub fn build_restartlqr_adversary(horizon: usize, budget: f64, seed: u64) -> Result<AdversaryInstance> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let ratio = budget / horizon as f64;
    if !(ratio >= 0.0 && ratio <= 0.1) {
        return Err(Error::InvalidArgument(format!("need 0 <= V_T/T <= 0.1, got {ratio}")));
    }
    let epsilon = 0.05 * ratio.powf(1.0 / 6.0);
    let p_big = ratio / 2.0;
    let p_small = (ratio / 4.0).powf(5.0 / 6.0);
    let mut rng = rng::stream(seed, 0, rng::INSTANCE);
    let cost = CostSpec::identity(1, 1, 1.0);

    let mut segments = vec![Segment { len: 1, theta: Theta::scalar(INV_SQRT5, epsilon) }];
    let mut b = epsilon;
    let (mut big, mut small) = (0, 0);
    for _ in 1..horizon {
        let u: f64 = rng.random();
        let next = if u < p_big {
            big += 1;
            if rng.random::<bool>() { 0.05 } else { -0.05 }
        } else if u < p_big + p_small {
            small += 1;
            if rng.random::<bool>() { epsilon } else { -epsilon }
        } else {
            b
        };
        if next == b {
            segments.last_mut().expect("non-empty").len += 1;
        } else {
            segments.push(Segment { len: 1, theta: Theta::scalar(INV_SQRT5, next) });
            b = next;
        }
    }
    Ok(AdversaryInstance {
        seq: DynamicsSeq::new(segments, cost)?,
        epsilon,
        big_resamples: big,
        small_resamples: small,
        degenerate: budget == 0.0,
    })
}
