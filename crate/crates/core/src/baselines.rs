//! Comparator controllers: fixed-window RestartLQR, the oracle
//! certainty-equivalent controller and a fixed linear gain.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{ControlDecision, Controller, Event, Mode, Status};
use crate::error::{Error, Result};
use crate::estimation::{ols_fit, ols_fit_input_matrix, Trajectory};
use crate::instances::{certify, DynamicsSeq, GainSeq};
use crate::linalg::spectral_radius;
use crate::lqr::{optimal_gain, CostSpec, Gain, Theta};
use crate::rng::{standard_normal_vec, StreamRng};

/// Exploration variance per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sigma2Schedule {
    /// `1 / sqrt(W)` in every window.
    InvSqrtWindow,
    Constant(f64),
    /// Window `i` uses entry `i`; the last entry repeats.
    PerWindow(Vec<f64>),
}

impl Sigma2Schedule {
    pub fn sigma2(&self, window: usize, w: usize) -> f64 {
        match self {
            Sigma2Schedule::InvSqrtWindow => 1.0 / (w as f64).sqrt(),
            Sigma2Schedule::Constant(s) => *s,
            Sigma2Schedule::PerWindow(v) => v[window.min(v.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartConfig {
    pub window: usize,
    pub sigma2: Sigma2Schedule,
    pub warm_gain: Gain,
    /// When set, only `B` is estimated and `A` is taken as known.
    pub known_a: Option<DMatrix<f64>>,
}

/// Refits the certainty-equivalent gain every `W` steps from the previous window only.
#[derive(Debug, Clone)]
pub struct RestartLqr {
    cfg: RestartConfig,
    cost: CostSpec,
    gain: Gain,
    window: usize,
    traj: Trajectory,
    pending: Option<(DVector<f64>, DVector<f64>, f64)>,
    sources: Vec<(usize, usize)>,
}

impl RestartLqr {
    pub fn new(cfg: RestartConfig, cost: CostSpec) -> Result<Self> {
        let (d, n) = cfg.warm_gain.matrix().shape();
        if cost.q().nrows() != n || cost.r().nrows() != d {
            return Err(Error::Dimension("warm gain does not match the cost dimensions".into()));
        }
        if cfg.window < n + d + 2 {
            return Err(Error::BadConfig(format!("window {} must be at least n+d+2 = {}", cfg.window, n + d + 2)));
        }
        if let Sigma2Schedule::PerWindow(v) = &cfg.sigma2 {
            if v.is_empty() || v.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::BadConfig("per-window variances must be non-empty and non-negative".into()));
            }
        }
        if let Some(a) = &cfg.known_a {
            if a.shape() != (n, n) {
                return Err(Error::Dimension("known A has the wrong shape".into()));
            }
        }
        Ok(Self {
            gain: cfg.warm_gain.clone(),
            traj: Trajectory::with_capacity(n, d, 0, cfg.window),
            cfg,
            cost,
            window: 0,
            pending: None,
            sources: Vec::new(),
        })
    }

    /// For each refit, the sample interval it used.
    pub fn fit_intervals(&self) -> &[(usize, usize)] {
        &self.sources
    }

    fn refit(&mut self, s: usize, e: usize) -> Result<Gain> {
        let theta = match &self.cfg.known_a {
            Some(a) => Theta::new(a.clone(), ols_fit_input_matrix(&self.traj, (s, e), a)?)?,
            None => ols_fit(&self.traj, (s, e))?.theta_hat,
        };
        optimal_gain(&theta, &self.cost)
    }
}

impl Controller for RestartLqr {
    fn name(&self) -> &str {
        "restart"
    }

    fn act(&mut self, _t: usize, x: &DVector<f64>, rng: &mut StreamRng) -> ControlDecision {
        let sigma = self.cfg.sigma2.sigma2(self.window, self.cfg.window).sqrt();
        let mut u = self.gain.matrix() * x;
        if sigma > 0.0 {
            u += standard_normal_vec(rng, u.len()) * sigma;
        }
        self.pending = Some((x.clone(), u.clone(), sigma));
        ControlDecision { u, sigma, events: Vec::new() }
    }

    fn observe(&mut self, t: usize, x_next: &DVector<f64>) -> Vec<Event> {
        let (x, u, sigma) = self.pending.take().expect("observe without act");
        self.traj.push(x.as_slice(), u.as_slice(), x_next.as_slice(), sigma, 0);
        let mut events = Vec::new();
        if (t + 1) % self.cfg.window == 0 {
            let s = t + 1 - self.cfg.window;
            match self.refit(s, t) {
                Ok(k) => self.gain = k,
                Err(err) => {
                    warn!("window ending at {t}: {err}; keeping the previous gain");
                    events.push(Event::Warning(format!("window fit: {err}")));
                }
            }
            self.sources.push((s, t));
            self.window += 1;
            self.traj.reset(t + 1);
            events.push(Event::BlockAdvance(self.window));
        }
        events
    }

    fn gain(&self) -> &Gain {
        &self.gain
    }

    fn status(&self) -> Status {
        Status { epoch: 1, block: self.window, mode: Mode::Static }
    }
}

/// Plays `K*(Theta_t)` with the true dynamics and no exploration.
#[derive(Debug, Clone)]
pub struct OracleCe {
    gains: GainSeq,
    current: Gain,
}

impl OracleCe {
    pub fn new(seq: &DynamicsSeq) -> Result<Self> {
        let runs = seq
            .segments()
            .iter()
            .map(|s| Ok((s.len, optimal_gain(&s.theta, seq.cost())?)))
            .collect::<Result<Vec<_>>>()?;
        let gains = GainSeq::from_runs(runs)?;
        Ok(Self { current: gains.gain_at(0).clone(), gains })
    }
}

impl Controller for OracleCe {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&mut self, t: usize, x: &DVector<f64>, _rng: &mut StreamRng) -> ControlDecision {
        self.current = self.gains.gain_at(t).clone();
        ControlDecision { u: self.current.matrix() * x, sigma: 0.0, events: Vec::new() }
    }

    fn observe(&mut self, _t: usize, _x_next: &DVector<f64>) -> Vec<Event> {
        Vec::new()
    }

    fn gain(&self) -> &Gain {
        &self.current
    }

    fn status(&self) -> Status {
        Status { epoch: 1, block: 0, mode: Mode::Static }
    }
}

/// A constant linear law `u = K x`.
#[derive(Debug, Clone)]
pub struct FixedGain {
    gain: Gain,
}

/// Certificates are searched with `kappa` up to this value.
pub const FIXED_GAIN_KAPPA_MAX: f64 = 100.0;

impl FixedGain {
    /// Rejects gains without a sequential-stability certificate on `seq`.
    pub fn new(gain: Gain, seq: &DynamicsSeq) -> Result<Self> {
        if gain.matrix().shape() != (seq.d(), seq.n()) {
            return Err(Error::Dimension(format!("gain must be {}x{}", seq.d(), seq.n())));
        }
        let gains = GainSeq::constant(gain.clone(), seq.horizon());
        if certify(seq, &gains, FIXED_GAIN_KAPPA_MAX).is_none() {
            let radius = seq
                .segments()
                .iter()
                .map(|s| spectral_radius(&s.theta.closed_loop(&gain)))
                .fold(0.0, f64::max);
            return Err(Error::Unstable { radius });
        }
        Ok(Self { gain })
    }

    /// Skips the stability check.
    pub fn unchecked(gain: Gain) -> Self {
        Self { gain }
    }
}

impl Controller for FixedGain {
    fn name(&self) -> &str {
        "fixed"
    }

    fn act(&mut self, _t: usize, x: &DVector<f64>, _rng: &mut StreamRng) -> ControlDecision {
        ControlDecision { u: self.gain.matrix() * x, sigma: 0.0, events: Vec::new() }
    }

    fn observe(&mut self, _t: usize, _x_next: &DVector<f64>) -> Vec<Event> {
        Vec::new()
    }

    fn gain(&self) -> &Gain {
        &self.gain
    }

    fn status(&self) -> Status {
        Status { epoch: 1, block: 0, mode: Mode::Static }
    }
}
