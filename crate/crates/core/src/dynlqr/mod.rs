//! The adaptive-restart controller: warm-up blocks under stabilizing gains,
//! doubling blocks under certainty-equivalent gains, randomised multi-scale
//! exploration phases with end-of-phase and end-of-block restart tests, and
//! stabilization epochs triggered by large states.

mod config;

pub use config::{DynLqrConfig, Resolved, DEFAULT_C_TEST};

use log::warn;
use nalgebra::DVector;
use rand::Rng;

use crate::controller::{ControlDecision, Controller, Event, Mode, RestartReason, Status, Verdict};
use crate::error::{Error, Result};
use crate::estimation::{ols_fit, Trajectory};
use crate::instances::GainSeq;
use crate::lqr::{optimal_gain, CostSpec, Gain, Theta};
use crate::rng::{standard_normal_vec, StreamRng};

/// An exploration phase of scale `m` covering `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplorationPhase {
    pub m: usize,
    pub start: usize,
    pub end: usize,
}

/// Largest normalised test statistic `||dTheta||_F^2 sqrt(len)` seen so far,
/// and the number of tests evaluated. Used by calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TestStats {
    pub max_normalized: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone)]
pub struct DynLqr {
    cfg: Resolved,
    cost: CostSpec,
    stab: GainSeq,
    rng: StreamRng,
    horizon: usize,
    mode: Mode,
    epoch: usize,
    tau: usize,
    block: usize,
    block_start: usize,
    block_end: usize,
    traj: Trajectory,
    prev_est: Option<Theta>,
    gain: Gain,
    block_gain: Gain,
    phases: Vec<ExplorationPhase>,
    pending: Option<(DVector<f64>, DVector<f64>, f64)>,
    stats: TestStats,
}

impl DynLqr {
    /// `rng` is the controller-internal stream (phase sampling).
    pub fn new(cfg: Resolved, cost: CostSpec, stab: GainSeq, horizon: usize, rng: StreamRng) -> Result<Self> {
        if stab.horizon() < horizon {
            return Err(Error::BadConfig(format!("stabilizing gains cover {} < T = {horizon} steps", stab.horizon())));
        }
        let first = stab.gain_at(0).clone();
        let (d, n) = first.matrix().shape();
        if cost.q().nrows() != n || cost.r().nrows() != d {
            return Err(Error::Dimension("stabilizing gains do not match the cost dimensions".into()));
        }
        let mut s = Self {
            cfg,
            cost,
            stab,
            rng,
            horizon,
            mode: Mode::Warmup,
            epoch: 0,
            tau: 0,
            block: 0,
            block_start: 0,
            block_end: 0,
            traj: Trajectory::with_capacity(n, d, 0, cfg.l),
            prev_est: None,
            gain: first.clone(),
            block_gain: first,
            phases: Vec::new(),
            pending: None,
            stats: TestStats::default(),
        };
        s.start_epoch(0);
        Ok(s)
    }

    pub fn config(&self) -> &Resolved {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn epoch_start(&self) -> usize {
        self.tau
    }

    pub fn active_phases(&self) -> &[ExplorationPhase] {
        &self.phases
    }

    pub fn previous_estimate(&self) -> Option<&Theta> {
        self.prev_est.as_ref()
    }

    pub fn test_stats(&self) -> TestStats {
        self.stats
    }

    /// Current block interval `[start, end]` (the warm-up block in warm-up mode).
    pub fn block_interval(&self) -> (usize, usize) {
        (self.block_start, self.block_end)
    }

    fn start_epoch(&mut self, t: usize) {
        self.epoch += 1;
        self.tau = t;
        self.mode = Mode::Warmup;
        self.block = 0;
        self.block_start = t;
        self.block_end = t + self.cfg.l - 1;
        self.traj.reset(t);
        self.prev_est = None;
        self.phases.clear();
    }

    fn enter_block(&mut self, j: usize) {
        let j_eff = j.min(self.cfg.max_block_index);
        let len = self.cfg.l << (j_eff - 1);
        self.block = j_eff;
        self.mode = Mode::Block(j_eff);
        self.block_start = self.block_end + 1;
        self.block_end = self.block_start + len - 1;
        self.phases.clear();
    }

    /// Compares an estimate over an interval of length `len` against the previous-block estimate.
    fn judge(&mut self, theta: &Theta, len: usize) -> Verdict {
        let Some(prev) = &self.prev_est else { return Verdict::Pass };
        let diff = theta.distance(prev).powi(2);
        self.stats.max_normalized = self.stats.max_normalized.max(diff * (len as f64).sqrt());
        self.stats.evaluated += 1;
        self.cfg.verdict(diff, len)
    }

    fn phase_test(&mut self, s: usize, e: usize) -> Verdict {
        match ols_fit(&self.traj, (s, e)) {
            Ok(est) => self.judge(&est.theta_hat, e - s + 1),
            Err(err) => {
                warn!("phase test on [{s}, {e}] skipped: {err}");
                Verdict::Pass
            }
        }
    }

    fn sample_phase_scale(&mut self, j: usize) -> usize {
        let weights: Vec<f64> = (0..j).map(|m| 2f64.powf(-(m as f64) / 2.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut r = self.rng.random::<f64>() * total;
        for (m, w) in weights.iter().enumerate() {
            if r < *w {
                return m;
            }
            r -= w;
        }
        j - 1
    }

    fn stabilizing_gain(&self, t: usize) -> &Gain {
        self.stab.gain_at(t.min(self.stab.horizon() - 1))
    }

    fn restart(&mut self, t: usize, reason: RestartReason, events: &mut Vec<Event>) {
        events.push(Event::EpochRestart(reason));
        if t + 1 >= self.horizon {
            log::info!("restart requested at the final step {t}; horizon reached");
        }
        self.start_epoch(t + 1);
    }

    fn end_warmup(&mut self, t: usize, events: &mut Vec<Event>) {
        let fit = ols_fit(&self.traj, (self.tau, t))
            .and_then(|est| optimal_gain(&est.theta_hat, &self.cost).map(|k| (est.theta_hat, k)));
        match fit {
            Ok((theta, k)) => {
                self.prev_est = Some(theta);
                self.block_gain = k;
                self.enter_block(1);
                events.push(Event::BlockAdvance(1));
            }
            Err(err) => {
                events.push(Event::Warning(format!("warm-up fit: {err}")));
                self.restart(t, RestartReason::WarmupFit, events);
            }
        }
    }

    fn end_block(&mut self, t: usize, events: &mut Vec<Event>) -> Verdict {
        let (s, e) = (self.block_start, t);
        let len = e - s + 1;
        let fit = ols_fit(&self.traj, (s, e));
        let verdict = match &fit {
            Ok(est) => self.judge(&est.theta_hat, len),
            Err(err) => {
                warn!("block test on [{s}, {e}] skipped: {err}");
                Verdict::Pass
            }
        };
        if verdict == Verdict::Fail {
            return verdict;
        }
        match fit {
            Ok(est) => match optimal_gain(&est.theta_hat, &self.cost) {
                Ok(k) => {
                    self.block_gain = k;
                    self.prev_est = Some(est.theta_hat);
                }
                Err(err) => {
                    events.push(Event::Warning(format!("block {} gain: {err}", self.block)));
                    self.prev_est = Some(est.theta_hat);
                }
            },
            Err(err) => events.push(Event::Warning(format!("block {} fit: {err}", self.block))),
        }
        let next = self.block + 1;
        self.enter_block(next);
        events.push(Event::BlockAdvance(self.block));
        verdict
    }
}

impl Controller for DynLqr {
    fn name(&self) -> &str {
        "dynlqr"
    }

    fn act(&mut self, t: usize, x: &DVector<f64>, rng: &mut StreamRng) -> ControlDecision {
        let mut events = Vec::new();
        let d = self.cost.r().nrows();
        let sigma = match self.mode {
            Mode::Warmup => {
                self.gain = self.stabilizing_gain(t).clone();
                self.cfg.nu0
            }
            Mode::Block(j) => {
                self.gain = self.block_gain.clone();
                if self.rng.random::<f64>() < self.cfg.phase_start_prob(j) {
                    let m = self.sample_phase_scale(j);
                    self.phases.push(ExplorationPhase { m, start: t, end: t + (self.cfg.l << m) - 1 });
                    events.push(Event::PhaseStart(m));
                }
                match self.phases.iter().map(|p| p.m).min() {
                    Some(m) => self.cfg.nu(m),
                    None => self.cfg.nu(j),
                }
            }
            Mode::Stabilizing | Mode::Static => {
                self.gain = self.stabilizing_gain(t).clone();
                0.0
            }
        };
        let mut u = self.gain.matrix() * x;
        if sigma > 0.0 {
            u += standard_normal_vec(rng, d) * sigma;
        }
        self.pending = Some((x.clone(), u.clone(), sigma));
        ControlDecision { u, sigma, events }
    }

    fn observe(&mut self, t: usize, x_next: &DVector<f64>) -> Vec<Event> {
        let (x, u, sigma) = self.pending.take().expect("observe without act");
        let mut events = Vec::new();
        match self.mode {
            Mode::Warmup => {
                self.traj.push(x.as_slice(), u.as_slice(), x_next.as_slice(), sigma, 0);
                if t == self.block_end {
                    self.end_warmup(t, &mut events);
                }
            }
            Mode::Block(_) => {
                self.traj.push(x.as_slice(), u.as_slice(), x_next.as_slice(), sigma, 0);
                // phase tests, in start order
                let mut failed = None;
                let ending: Vec<ExplorationPhase> =
                    self.phases.iter().copied().filter(|p| p.end == t && p.end <= self.block_end).collect();
                for p in ending {
                    let v = self.phase_test(p.start, p.end);
                    events.push(Event::PhaseEnd(p.m, v));
                    if v == Verdict::Fail {
                        failed = Some(RestartReason::PhaseTest);
                        break;
                    }
                }
                self.phases.retain(|p| p.end > t);
                if failed.is_none() && t == self.block_end && self.end_block(t, &mut events) == Verdict::Fail {
                    failed = Some(RestartReason::BlockTest);
                }
                if let Some(reason) = failed {
                    self.restart(t, reason, &mut events);
                } else if x_next.norm() >= self.cfg.x_u {
                    events.push(Event::EpochRestart(RestartReason::Instability));
                    events.push(Event::StabilizationEnter);
                    self.mode = Mode::Stabilizing;
                    self.phases.clear();
                }
            }
            Mode::Stabilizing => {
                if x_next.norm() <= self.cfg.x_l {
                    events.push(Event::StabilizationExit);
                    self.start_epoch(t + 1);
                }
            }
            Mode::Static => unreachable!("dynlqr never enters static mode"),
        }
        events
    }

    fn gain(&self) -> &Gain {
        &self.gain
    }

    fn status(&self) -> Status {
        Status { epoch: self.epoch, block: self.block, mode: self.mode }
    }
}
