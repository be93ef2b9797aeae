use nalgebra::DMatrix;
use rand::Rng;

use super::DynamicsSeq;
use crate::error::{Error, Result};
use crate::linalg::operator_norm;
use crate::lqr::{gain_from_value, solve_dare, solve_dare_warm, Gain, ValueMatrix};
use crate::rng::{self, standard_normal};

/// Longest window `b - a` examined by the product-norm check.
pub const WINDOW_CAP: usize = 200;

const RHO_GRID: [f64; 12] = [0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.98, 0.99, 0.995, 0.999];

/// Run-length-encoded gain sequence `K_0 .. K_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSeq {
    runs: Vec<(usize, Gain)>,
    starts: Vec<usize>,
    horizon: usize,
}

impl GainSeq {
    pub fn from_runs(runs: Vec<(usize, Gain)>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("gain sequence needs at least one run".into()));
        }
        let mut merged: Vec<(usize, Gain)> = Vec::with_capacity(runs.len());
        for (len, g) in runs {
            if len == 0 {
                continue;
            }
            match merged.last_mut() {
                Some((l, last)) if *last == g => *l += len,
                _ => merged.push((len, g)),
            }
        }
        let mut starts = Vec::with_capacity(merged.len());
        let mut t = 0;
        for (len, _) in &merged {
            starts.push(t);
            t += len;
        }
        if t == 0 {
            return Err(Error::InvalidArgument("gain sequence has zero length".into()));
        }
        Ok(Self { runs: merged, starts, horizon: t })
    }

    pub fn constant(gain: Gain, horizon: usize) -> Self {
        Self::from_runs(vec![(horizon, gain)]).expect("positive horizon")
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn runs(&self) -> &[(usize, Gain)] {
        &self.runs
    }

    pub fn gain_at(&self, t: usize) -> &Gain {
        let k = self.starts.partition_point(|&s| s <= t) - 1;
        &self.runs[k].1
    }
}

/// How to build the stabilizing gain sequence handed to the controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilizingMode {
    /// `K_t = K*(Theta_t)`.
    OracleCe,
    /// `K_t = K*(Theta_{max(0, t-k)})`.
    LaggedOracle(usize),
    /// `K*(Theta_t)` plus a uniform perturbation of Frobenius norm at most `delta`,
    /// drawn once per constant-dynamics run.
    Perturbed(f64),
}

/// Post-hoc certificate for `||Phi_{b:a}|| <= kappa rho^{b-a}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCert {
    pub kappa: f64,
    pub rho: f64,
    pub max_violation: f64,
    pub worst_interval: (usize, usize),
}

impl StabilityCert {
    pub fn is_valid(&self) -> bool {
        self.max_violation <= 0.0
    }
}

fn oracle_gains(seq: &DynamicsSeq) -> Result<Vec<Gain>> {
    let cost = seq.cost();
    let mut warm: Option<ValueMatrix> = None;
    let mut out = Vec::with_capacity(seq.segments().len());
    for s in seq.segments() {
        let p = match &warm {
            Some(init) => solve_dare_warm(&s.theta, cost, init).or_else(|_| solve_dare(&s.theta, cost))?,
            None => solve_dare(&s.theta, cost)?,
        };
        out.push(gain_from_value(&s.theta, cost, &p)?);
        warm = Some(p);
    }
    Ok(out)
}

pub fn stabilizing_sequence(seq: &DynamicsSeq, mode: StabilizingMode, seed: u64) -> Result<GainSeq> {
    let oracle = oracle_gains(seq).map_err(|e| Error::StabilizationFailed(format!("oracle gain unavailable: {e}")))?;
    let horizon = seq.horizon();
    let runs: Vec<(usize, Gain)> = match mode {
        StabilizingMode::OracleCe => seq.segments().iter().zip(oracle).map(|(s, g)| (s.len, g)).collect(),
        StabilizingMode::LaggedOracle(lag) => {
            let mut runs = Vec::with_capacity(oracle.len());
            let mut remaining = horizon;
            for (k, (s, g)) in seq.segments().iter().zip(oracle).enumerate() {
                let len = if k == 0 { s.len + lag } else { s.len }.min(remaining);
                if len == 0 {
                    break;
                }
                runs.push((len, g));
                remaining -= len;
            }
            runs
        }
        StabilizingMode::Perturbed(delta) => {
            if !(delta >= 0.0) {
                return Err(Error::InvalidArgument(format!("perturbation size must be non-negative, got {delta}")));
            }
            let mut rng = rng::stream(seed, 0, "stabilizing-perturbation");
            seq.segments()
                .iter()
                .zip(oracle)
                .map(|(s, g)| {
                    if delta == 0.0 {
                        return (s.len, g);
                    }
                    let (d, n) = (g.matrix().nrows(), g.matrix().ncols());
                    let dir = DMatrix::from_fn(d, n, |_, _| standard_normal(&mut rng));
                    let size = delta * rng.random::<f64>();
                    let pert = if dir.norm() > 0.0 { &dir * (size / dir.norm()) } else { dir };
                    (s.len, Gain::new(g.matrix() + pert).expect("finite"))
                })
                .collect()
        }
    };
    let gains = GainSeq::from_runs(runs)?;
    match certify(seq, &gains, 100.0) {
        Some(_) => Ok(gains),
        None => Err(Error::StabilizationFailed("no (kappa <= 100, rho < 1) certificate for the gain sequence".into())),
    }
}

fn closed_loops(seq: &DynamicsSeq, gains: &GainSeq) -> Result<Vec<DMatrix<f64>>> {
    if gains.horizon() < seq.horizon() {
        return Err(Error::Dimension("gain sequence shorter than the horizon".into()));
    }
    let (n, d) = (seq.n(), seq.d());
    let mut out = Vec::with_capacity(seq.horizon());
    for t in 0..seq.horizon() {
        let k = gains.gain_at(t);
        if k.matrix().nrows() != d || k.matrix().ncols() != n {
            return Err(Error::Dimension("gain shape does not match the dynamics".into()));
        }
        out.push(seq.theta_at(t).closed_loop(k));
    }
    Ok(out)
}

/// Visits every window `(a, b)` with `b - a <= cap` and its product norm.
fn for_each_window(phis: &[DMatrix<f64>], mut visit: impl FnMut(usize, usize, f64)) {
    let horizon = phis.len();
    let cap = WINDOW_CAP.min(horizon.saturating_sub(1));
    if phis[0].nrows() == 1 {
        let scalars: Vec<f64> = phis.iter().map(|m| m[(0, 0)]).collect();
        for a in 0..horizon {
            let mut prod = scalars[a];
            visit(a, a, prod.abs());
            for b in (a + 1)..=(a + cap).min(horizon - 1) {
                prod *= scalars[b];
                visit(a, b, prod.abs());
            }
        }
        return;
    }
    for a in 0..horizon {
        let mut prod = phis[a].clone();
        visit(a, a, operator_norm(&prod));
        for b in (a + 1)..=(a + cap).min(horizon - 1) {
            prod = &phis[b] * &prod;
            visit(a, b, operator_norm(&prod));
        }
    }
}

/// Checks `||Phi_{b:a}||_op <= kappa rho^{b-a}` on all windows up to the cap.
pub fn check_sequential_stability(seq: &DynamicsSeq, gains: &GainSeq, kappa: f64, rho: f64) -> Result<StabilityCert> {
    let phis = closed_loops(seq, gains)?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_interval = (0, 0);
    let log_rho = rho.ln();
    for_each_window(&phis, |a, b, norm| {
        let v = norm - kappa * (log_rho * (b - a) as f64).exp();
        if v > worst {
            worst = v;
            worst_interval = (a, b);
        }
    });
    Ok(StabilityCert { kappa, rho, max_violation: worst, worst_interval })
}

/// Smallest `rho` on a fixed grid admitting some `kappa <= kappa_max`, with
/// the least such `kappa` (never below 1).
pub fn certify(seq: &DynamicsSeq, gains: &GainSeq, kappa_max: f64) -> Option<StabilityCert> {
    let phis = closed_loops(seq, gains).ok()?;
    let mut needed = [1.0f64; RHO_GRID.len()];
    let logs: Vec<f64> = RHO_GRID.iter().map(|r| r.ln()).collect();
    for_each_window(&phis, |a, b, norm| {
        let len = (b - a) as f64;
        for (k, l) in logs.iter().enumerate() {
            let req = norm / (l * len).exp();
            if req > needed[k] {
                needed[k] = req;
            }
        }
    });
    let k = (0..RHO_GRID.len()).find(|&k| needed[k] <= kappa_max)?;
    let kappa = needed[k] * (1.0 + 1e-12);
    let cert = check_sequential_stability(seq, gains, kappa, RHO_GRID[k]).ok()?;
    cert.is_valid().then_some(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_drift_instance, DriftMode, Segment};
    use crate::lqr::{CostSpec, Theta};

    fn constant_loop(phi: DMatrix<f64>, horizon: usize) -> (DynamicsSeq, GainSeq) {
        let n = phi.nrows();
        let theta = Theta::new(phi, DMatrix::zeros(n, 1)).unwrap();
        let seq = DynamicsSeq::stationary(theta, horizon, CostSpec::identity(n, 1, 1.0)).unwrap();
        (seq, GainSeq::constant(Gain::zeros(1, n), horizon))
    }

    #[test]
    fn contracting_loop_passes() {
        let (seq, gains) = constant_loop(DMatrix::identity(2, 2) * 0.5, 300);
        let cert = check_sequential_stability(&seq, &gains, 1.0, 0.5).unwrap();
        assert!(cert.max_violation <= 1e-15, "{cert:?}");
    }

    #[test]
    fn slow_loop_violates_at_length_one() {
        let (seq, gains) = constant_loop(DMatrix::identity(2, 2) * 0.9, 50);
        let cert = check_sequential_stability(&seq, &gains, 1.0, 0.5).unwrap();
        assert!(cert.max_violation > 0.0);
        let (a, b) = cert.worst_interval;
        assert!(b > a);
        // the length-zero windows are fine, length one already fails
        let single = check_sequential_stability(&constant_loop(DMatrix::identity(2, 2) * 0.9, 2).0, &GainSeq::constant(Gain::zeros(1, 2), 2), 1.0, 0.5).unwrap();
        assert!(single.max_violation > 0.0);
        assert_eq!(single.worst_interval, (0, 1));
    }

    #[test]
    fn passing_is_monotone() {
        let seq = build_drift_instance(2, 1, 400, 0.3, DriftMode::SmoothSine, 2).unwrap();
        let gains = stabilizing_sequence(&seq, StabilizingMode::OracleCe, 0).unwrap();
        let cert = certify(&seq, &gains, 100.0).unwrap();
        for (dk, dr) in [(0.0, 0.0), (1.0, 0.0), (0.0, 0.005), (5.0, 0.004)] {
            let c = check_sequential_stability(&seq, &gains, cert.kappa + dk, (cert.rho + dr).min(0.9999)).unwrap();
            assert!(c.is_valid());
        }
    }

    #[test]
    fn stationary_gives_constant_gains() {
        let theta = Theta::scalar(0.9, 1.0);
        let seq = DynamicsSeq::stationary(theta, 100, CostSpec::identity(1, 1, 1.0)).unwrap();
        let gains = stabilizing_sequence(&seq, StabilizingMode::OracleCe, 0).unwrap();
        assert_eq!(gains.runs().len(), 1);
    }

    #[test]
    fn zero_perturbation_is_oracle() {
        let seq = build_drift_instance(2, 1, 300, 0.5, DriftMode::RandomWalk, 4).unwrap();
        let a = stabilizing_sequence(&seq, StabilizingMode::OracleCe, 0).unwrap();
        let b = stabilizing_sequence(&seq, StabilizingMode::Perturbed(0.0), 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lagged_oracle_shifts_gains() {
        let cost = CostSpec::identity(1, 1, 1.0);
        let seq = DynamicsSeq::new(
            vec![Segment { len: 10, theta: Theta::scalar(0.9, 1.0) }, Segment { len: 10, theta: Theta::scalar(0.5, 1.0) }],
            cost,
        )
        .unwrap();
        let lagged = stabilizing_sequence(&seq, StabilizingMode::LaggedOracle(3), 0).unwrap();
        let oracle = stabilizing_sequence(&seq, StabilizingMode::OracleCe, 0).unwrap();
        assert_eq!(lagged.horizon(), 20);
        assert_eq!(lagged.gain_at(12), oracle.gain_at(9));
        assert_eq!(lagged.gain_at(13), oracle.gain_at(10));
    }

    #[test]
    fn oracle_on_margin_instance_certifies_below_099() {
        let seq = build_drift_instance(2, 1, 600, 1.0, DriftMode::SmoothSine, 6).unwrap();
        let gains = stabilizing_sequence(&seq, StabilizingMode::OracleCe, 0).unwrap();
        let cert = certify(&seq, &gains, 100.0).unwrap();
        assert!(cert.rho <= 0.99, "{cert:?}");
    }
}
