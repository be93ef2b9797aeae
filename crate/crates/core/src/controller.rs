//! The act/observe contract shared by every controller.

use std::fmt;

use nalgebra::DVector;

use crate::lqr::Gain;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartReason {
    PhaseTest,
    BlockTest,
    Instability,
    /// The warm-up fit was singular or produced no usable gain.
    WarmupFit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    EpochRestart(RestartReason),
    BlockAdvance(usize),
    PhaseStart(usize),
    PhaseEnd(usize, Verdict),
    StabilizationEnter,
    StabilizationExit,
    /// A fit or gain computation failed and was skipped.
    Warning(String),
}

impl Event {
    pub fn is_restart(&self) -> bool {
        matches!(self, Event::EpochRestart(_))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::EpochRestart(r) => write!(f, "restart:{}", match r {
                RestartReason::PhaseTest => "phase",
                RestartReason::BlockTest => "block",
                RestartReason::Instability => "instability",
                RestartReason::WarmupFit => "warmup",
            }),
            Event::BlockAdvance(j) => write!(f, "block:{j}"),
            Event::PhaseStart(m) => write!(f, "phase-start:{m}"),
            Event::PhaseEnd(m, v) => write!(f, "phase-end:{m}:{}", if *v == Verdict::Pass { "pass" } else { "fail" }),
            Event::StabilizationEnter => f.write_str("stab-enter"),
            Event::StabilizationExit => f.write_str("stab-exit"),
            Event::Warning(w) => write!(f, "warning:{w}"),
        }
    }
}

/// Output of [`Controller::act`]: the control, its exploration std and any events.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: DVector<f64>,
    pub sigma: f64,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Warmup,
    Block(usize),
    Stabilizing,
    /// Controllers without internal scheduling.
    Static,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Warmup => f.write_str("warmup"),
            Mode::Block(j) => write!(f, "block{j}"),
            Mode::Stabilizing => f.write_str("stabilizing"),
            Mode::Static => f.write_str("static"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Status {
    pub epoch: usize,
    /// Block index `j` (0 during warm-up), or window index for windowed baselines.
    pub block: usize,
    pub mode: Mode,
}

/// The common controller contract. `act(t, ..)` and `observe(t, ..)` alternate
/// for `t = 0, 1, ..` without gaps.
pub trait Controller {
    fn name(&self) -> &str;

    /// Chooses `u_t`. Exploration draws `eta_t` come from `rng`.
    fn act(&mut self, t: usize, x: &DVector<f64>, rng: &mut StreamRng) -> ControlDecision;

    /// Receives `x_{t+1}`.
    fn observe(&mut self, t: usize, x_next: &DVector<f64>) -> Vec<Event>;

    /// Gain used by the most recent `act`.
    fn gain(&self) -> &Gain;

    /// Scheduling state in force for the most recent `act`.
    fn status(&self) -> Status;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn act(&mut self, t: usize, x: &DVector<f64>, rng: &mut StreamRng) -> ControlDecision {
        (**self).act(t, x, rng)
    }
    fn observe(&mut self, t: usize, x_next: &DVector<f64>) -> Vec<Event> {
        (**self).observe(t, x_next)
    }
    fn gain(&self) -> &Gain {
        (**self).gain()
    }
    fn status(&self) -> Status {
        (**self).status()
    }
}
