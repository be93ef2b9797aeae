use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{controller_rng, default_beta};
use crate::baselines::{FixedGain, OracleCe, RestartConfig, RestartLqr, Sigma2Schedule};
use crate::controller::Controller;
use crate::dynlqr::{DynLqr, DynLqrConfig};
use crate::error::{Error, Result};
use crate::instances::{
    build_drift_instance, build_pasted_lower_bound, build_restartlqr_adversary, build_switching_instance,
    stabilizing_sequence, DriftMode, DynamicsSeq, InstanceFile, StabilizingMode,
};
use crate::linalg::from_row_major;
use crate::lqr::{optimal_gain, CostSpec, Gain, Theta};
use crate::rng::{stream, INSTANCE};

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(p) = &cfg.instance.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.instance.path = Some(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    /// A random stationary system.
    Stationary,
    Switching,
    Drift,
    Pasted,
    Adversary,
    /// Loaded from `path`; the horizon and budget axes are ignored.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "V_T")]
    pub budget: f64,
    /// Number of pieces `S` for switching instances.
    #[serde(rename = "S")]
    pub pieces: usize,
    pub jump: f64,
    pub mode: DriftMode,
    pub path: Option<PathBuf>,
    /// Overrides the generator's noise variance.
    pub psi2: Option<f64>,
    /// Fixes the instance seed for every replication.
    pub seed: Option<u64>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            kind: InstanceKind::Stationary,
            n: 1,
            d: 1,
            horizon: 4096,
            budget: 0.0,
            pieces: 1,
            jump: 0.5,
            mode: DriftMode::SmoothSine,
            path: None,
            psi2: None,
            seed: None,
        }
    }
}

/// Which gain the first RestartLQR window plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmGain {
    /// The first stabilizing gain, `K_0^stab`.
    Stabilizing,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestartSpec {
    /// Window length; defaults to the power of two nearest `T^{2/3}`.
    #[serde(rename = "W")]
    pub window: Option<usize>,
    pub sigma2: Sigma2Schedule,
    pub known_a: bool,
    pub warm_gain: WarmGain,
}

impl Default for RestartSpec {
    fn default() -> Self {
        Self { window: None, sigma2: Sigma2Schedule::InvSqrtWindow, known_a: false, warm_gain: WarmGain::Stabilizing }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedSpec {
    /// Row-major `K`; defaults to `K*(Theta_0)`.
    #[serde(rename = "K")]
    pub k: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// `oracle-ce`, `lagged:<k>` or `perturbed:<delta>`.
    pub stabilizer: String,
    pub dynlqr: DynLqrConfig,
    pub restart: RestartSpec,
    pub fixed: FixedSpec,
}

impl ControllerSection {
    pub fn stabilizing_mode(&self) -> Result<StabilizingMode> {
        parse_stabilizer(&self.stabilizer)
    }
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self { stabilizer: "oracle-ce".into(), dynlqr: DynLqrConfig::default(), restart: RestartSpec::default(), fixed: FixedSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Horizon axis; empty means `[instance.T]`.
    #[serde(rename = "T")]
    pub horizons: Vec<usize>,
    /// Budget axis; empty means `[instance.V_T]`.
    #[serde(rename = "V_T")]
    pub budgets: Vec<f64>,
    /// Controller axis, e.g. `["dynlqr", "restart:512", "oracle"]`.
    pub controllers: Vec<String>,
    /// Number of replications.
    pub seeds: u64,
    pub master_seed: u64,
    pub trace: bool,
    pub audit: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            horizons: Vec::new(),
            budgets: Vec::new(),
            controllers: vec!["dynlqr".into()],
            seeds: 1,
            master_seed: 0,
            trace: false,
            audit: false,
        }
    }
}

/// A parsed entry of the controller axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    DynLqr,
    /// RestartLQR with an explicit window, or the configured one.
    Restart(Option<usize>),
    Oracle,
    Fixed,
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynlqr" => Ok(Self::DynLqr),
            "restart" => Ok(Self::Restart(None)),
            "oracle" => Ok(Self::Oracle),
            "fixed" => Ok(Self::Fixed),
            other => match other.strip_prefix("restart:").map(str::parse) {
                Some(Ok(w)) => Ok(Self::Restart(Some(w))),
                _ => Err(Error::Config(format!("unknown controller '{other}'"))),
            },
        }
    }
}

pub(crate) fn parse_stabilizer(s: &str) -> Result<StabilizingMode> {
    if s == "oracle-ce" {
        return Ok(StabilizingMode::OracleCe);
    }
    let parsed = if let Some(k) = s.strip_prefix("lagged:") {
        k.parse().ok().map(StabilizingMode::LaggedOracle)
    } else if let Some(dl) = s.strip_prefix("perturbed:") {
        dl.parse().ok().map(StabilizingMode::Perturbed)
    } else {
        None
    };
    parsed.ok_or_else(|| Error::Config(format!("unknown stabilizer '{s}'")))
}

fn with_psi2(seq: DynamicsSeq, psi2: Option<f64>) -> Result<DynamicsSeq> {
    match psi2 {
        Some(p) => DynamicsSeq::new(seq.segments().to_vec(), seq.cost().with_psi2(p)),
        None => Ok(seq),
    }
}

/// Instance seed for a replication: fixed if configured, else drawn from the `instance` stream.
pub fn instance_seed(spec: &InstanceSpec, master_seed: u64, replication: u64) -> u64 {
    spec.seed.unwrap_or_else(|| stream(master_seed, replication, INSTANCE).next_u64())
}

/// Builds the instance of one sweep cell.
pub fn build_instance(spec: &InstanceSpec, horizon: usize, budget: f64, seed: u64) -> Result<DynamicsSeq> {
    let (n, d) = (spec.n, spec.d);
    let seq = match spec.kind {
        InstanceKind::Stationary => build_switching_instance(n, d, horizon, 1, 0.0, seed)?,
        InstanceKind::Switching => build_switching_instance(n, d, horizon, spec.pieces, spec.jump, seed)?,
        InstanceKind::Drift => build_drift_instance(n, d, horizon, budget, spec.mode, seed)?,
        InstanceKind::Pasted => build_pasted_lower_bound(horizon, budget, seed)?.seq,
        InstanceKind::Adversary => build_restartlqr_adversary(horizon, budget, seed)?.seq,
        InstanceKind::File => {
            let path = spec.path.as_ref().ok_or_else(|| Error::Config("instance.kind = \"file\" needs instance.path".into()))?;
            InstanceFile::read(path)?
        }
    };
    with_psi2(seq, spec.psi2)
}

/// The zero-variation member of the family, used for calibration pilots.
pub fn pilot_instance(spec: &InstanceSpec, horizon: usize, budget: f64, seed: u64) -> Result<DynamicsSeq> {
    let seq = match spec.kind {
        InstanceKind::Stationary | InstanceKind::Switching => build_switching_instance(spec.n, spec.d, horizon, 1, 0.0, seed)?,
        InstanceKind::Drift => build_drift_instance(spec.n, spec.d, horizon, 0.0, spec.mode, seed)?,
        InstanceKind::Pasted => {
            let inst = build_pasted_lower_bound(horizon, budget, seed)?;
            DynamicsSeq::stationary(inst.seq.segments()[0].theta.clone(), horizon, inst.seq.cost().clone())?
        }
        InstanceKind::Adversary => {
            let inst = build_restartlqr_adversary(horizon, budget, seed)?;
            DynamicsSeq::stationary(Theta::scalar(5f64.powf(-0.5), inst.epsilon), horizon, inst.seq.cost().clone())?
        }
        InstanceKind::File => {
            let seq = build_instance(spec, horizon, budget, seed)?;
            DynamicsSeq::stationary(seq.segments()[0].theta.clone(), seq.horizon(), seq.cost().clone())?
        }
    };
    with_psi2(seq, spec.psi2)
}

/// Default RestartLQR window: the power of two nearest `T^{2/3}`.
pub fn default_window(horizon: usize) -> usize {
    let target = (horizon as f64).powf(2.0 / 3.0);
    1usize << target.log2().round().max(2.0) as u32
}

/// Constructs a controller for one cell.
pub fn build_controller(
    kind: ControllerKind,
    section: &ControllerSection,
    seq: &DynamicsSeq,
    seed: u64,
    replication: u64,
) -> Result<Box<dyn Controller + Send>> {
    let cost: &CostSpec = seq.cost();
    let stab_mode = parse_stabilizer(&section.stabilizer)?;
    Ok(match kind {
        ControllerKind::DynLqr => {
            let stab = stabilizing_sequence(seq, stab_mode, seed ^ replication)?;
            let r = section.dynlqr.resolve(seq.n(), seq.d(), seq.horizon(), seq.psi2().sqrt(), default_beta(seq))?;
            Box::new(DynLqr::new(r, cost.clone(), stab, seq.horizon(), controller_rng(seed, replication))?)
        }
        ControllerKind::Restart(w) => {
            let spec = &section.restart;
            let window = w.or(spec.window).unwrap_or_else(|| default_window(seq.horizon()));
            let warm_gain = match spec.warm_gain {
                WarmGain::Stabilizing => stabilizing_sequence(seq, stab_mode, seed ^ replication)?.gain_at(0).clone(),
                WarmGain::Zero => Gain::zeros(seq.d(), seq.n()),
            };
            let known_a = if spec.known_a {
                let a = seq.segments()[0].theta.a();
                if seq.segments().iter().any(|s| s.theta.a() != a) {
                    return Err(Error::Config("known_a requires a time-invariant A".into()));
                }
                Some(a.clone())
            } else {
                None
            };
            Box::new(RestartLqr::new(RestartConfig { window, sigma2: spec.sigma2.clone(), warm_gain, known_a }, cost.clone())?)
        }
        ControllerKind::Oracle => Box::new(OracleCe::new(seq)?),
        ControllerKind::Fixed => {
            let gain = match &section.fixed.k {
                Some(k) => {
                    if k.len() != seq.d() * seq.n() {
                        return Err(Error::Config(format!("fixed K needs {} entries", seq.d() * seq.n())));
                    }
                    Gain::new(from_row_major(seq.d(), seq.n(), k))?
                }
                None => optimal_gain(&seq.segments()[0].theta, cost)?,
            };
            Box::new(FixedGain::new(gain, seq)?)
        }
    })
}
