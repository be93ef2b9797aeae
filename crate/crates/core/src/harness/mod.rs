//! Simulation engine, dynamic-regret accounting, the regret-decomposition
//! audit, calibration and configuration-driven sweeps.

mod audit;
mod calibrate;
mod config;
mod sweep;

pub use audit::{regret_decomposition_audit, AuditReport, AuditRow};
pub use calibrate::{calibrate, pilot_max_statistic, CalibrationReport};
pub use config::{
    build_controller, build_instance, instance_seed, pilot_instance, ControllerKind, ControllerSection, ExperimentConfig, FixedSpec,
    InstanceKind, InstanceSpec, RestartSpec, SweepSpec, WarmGain,
};
pub use sweep::{run_sweep, write_audit_csv, write_trace_csv, CellResult, SweepOutput};

use std::time::Instant;

use nalgebra::DVector;

use crate::controller::{Controller, Event, Mode, Status};
use crate::error::{Error, Result};
use crate::estimation::Trajectory;
use crate::instances::DynamicsSeq;
use crate::linalg::{operator_norm, quad_form, trace};
use crate::lqr::{solve_dare, solve_dare_warm, Gain, ValueMatrix};
use crate::rng::{standard_normal_vec, stream, StreamRng, CONTROLLER, EXPLORATION, NOISE};

/// A run is aborted once `||x_t||` exceeds this bound.
pub const DIVERGENCE_BOUND: f64 = 1e9;

/// Per-step cost, benchmark and cumulative dynamic regret.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub cost: Vec<f64>,
    pub jstar: Vec<f64>,
    /// `cumulative[t] = sum_{s <= t} (cost[s] - jstar[s])`.
    pub cumulative: Vec<f64>,
    pub restarts: usize,
    pub stab_steps: usize,
    pub dare_solves: usize,
    pub wall_ms: u128,
}

impl RegretReport {
    pub fn regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Everything recorded by one simulation.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Transitions with realised noise; `gain_id` indexes `gains`.
    pub traj: Trajectory,
    pub gains: Vec<Gain>,
    pub status: Vec<Status>,
    pub events: Vec<(usize, Event)>,
    pub report: RegretReport,
}

/// `J*_t = psi^2 Tr P*(Theta_t)`, one DARE per constant-dynamics segment,
/// each warm-started from the previous segment's solution.
#[derive(Debug, Clone)]
pub struct JStarTable {
    per_segment: Vec<f64>,
    values: Vec<ValueMatrix>,
}

impl JStarTable {
    pub fn new(seq: &DynamicsSeq) -> Result<Self> {
        let cost = seq.cost();
        let mut values: Vec<ValueMatrix> = Vec::with_capacity(seq.segments().len());
        for s in seq.segments() {
            let p = match values.last() {
                Some(prev) => solve_dare_warm(&s.theta, cost, prev).or_else(|_| solve_dare(&s.theta, cost))?,
                None => solve_dare(&s.theta, cost)?,
            };
            values.push(p);
        }
        let per_segment = values.iter().map(|p| seq.psi2() * trace(p.matrix())).collect();
        Ok(Self { per_segment, values })
    }

    pub fn solves(&self) -> usize {
        self.values.len()
    }

    pub fn segment_value(&self, k: usize) -> f64 {
        self.per_segment[k]
    }

    pub fn value_matrix(&self, k: usize) -> &ValueMatrix {
        &self.values[k]
    }
}

/// The controller-internal stream for replication `replication`.
pub fn controller_rng(seed: u64, replication: u64) -> StreamRng {
    stream(seed, replication, CONTROLLER)
}

/// `max(psi, max_t ||B_t||)`, the default `beta` for the instability threshold.
pub fn default_beta(seq: &DynamicsSeq) -> f64 {
    seq.segments().iter().map(|s| operator_norm(s.theta.b())).fold(seq.psi2().sqrt(), f64::max)
}

/// Runs `ctrl` on `seq` from `x_0 = 0`. Process noise and exploration draws
/// come from the `noise` and `exploration` streams of `(seed, replication)`.
pub fn simulate(seq: &DynamicsSeq, ctrl: &mut dyn Controller, seed: u64, replication: u64) -> Result<SimOutput> {
    let jstar = JStarTable::new(seq)?;
    simulate_with(seq, ctrl, seed, replication, &jstar)
}

/// As [`simulate`] with a precomputed benchmark table.
pub fn simulate_with(seq: &DynamicsSeq, ctrl: &mut dyn Controller, seed: u64, replication: u64, jstar: &JStarTable) -> Result<SimOutput> {
    let started = Instant::now();
    let (n, d, horizon) = (seq.n(), seq.d(), seq.horizon());
    let cost_spec = seq.cost();
    let psi = seq.psi2().sqrt();
    let mut noise_rng = stream(seed, replication, NOISE);
    let mut expl_rng = stream(seed, replication, EXPLORATION);

    let mut traj = Trajectory::with_capacity(n, d, 0, horizon);
    let mut gains: Vec<Gain> = Vec::new();
    let mut status = Vec::with_capacity(horizon);
    let mut events = Vec::new();
    let mut cost = Vec::with_capacity(horizon);
    let mut jstar_col = Vec::with_capacity(horizon);
    let mut cumulative = Vec::with_capacity(horizon);
    let (mut restarts, mut stab_steps, mut acc) = (0usize, 0usize, 0.0);

    let mut x = DVector::zeros(n);
    let mut seg = 0usize;
    for t in 0..horizon {
        while seq.segment_start(seg) + seq.segments()[seg].len <= t {
            seg += 1;
        }
        let theta = &seq.segments()[seg].theta;
        let dec = ctrl.act(t, &x, &mut expl_rng);
        if dec.u.len() != d {
            return Err(Error::Dimension(format!("controller returned u of length {} (d = {d})", dec.u.len())));
        }
        let st = ctrl.status();
        if st.mode == Mode::Stabilizing {
            stab_steps += 1;
        }
        status.push(st);
        if gains.last() != Some(ctrl.gain()) {
            gains.push(ctrl.gain().clone());
        }
        let w = standard_normal_vec(&mut noise_rng, n) * psi;
        let next = theta.a() * &x + theta.b() * &dec.u + &w;
        let c = quad_form(cost_spec.q(), &x) + quad_form(cost_spec.r(), &dec.u);
        let j = jstar.segment_value(seg);
        acc += c - j;
        cost.push(c);
        jstar_col.push(j);
        cumulative.push(acc);
        traj.push(x.as_slice(), dec.u.as_slice(), next.as_slice(), dec.sigma, gains.len() - 1);
        traj.push_noise(w.as_slice());
        for e in dec.events.into_iter().chain(ctrl.observe(t, &next)) {
            if e.is_restart() {
                restarts += 1;
            }
            events.push((t, e));
        }
        let norm = next.norm();
        if !(norm <= DIVERGENCE_BOUND) {
            return Err(Error::Diverged { t: t + 1, norm });
        }
        x = next;
    }
    let report = RegretReport {
        cost,
        jstar: jstar_col,
        cumulative,
        restarts,
        stab_steps,
        dare_solves: jstar.solves(),
        wall_ms: started.elapsed().as_millis(),
    };
    Ok(SimOutput { traj, gains, status, events, report })
}
