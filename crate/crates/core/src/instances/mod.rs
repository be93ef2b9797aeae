//! Non-stationary problem instances: run-length-encoded dynamics sequences,
//! generators, variation budgets and sequential-stability certificates.

mod generators;
mod io;
mod stability;
mod variation;

pub use generators::{
    build_drift_instance, build_pasted_lower_bound, build_restartlqr_adversary, build_switching_instance,
    stabilizability_margin, AdversaryInstance, DriftMode, PastedInstance, COST_CAP, GAIN_CAP, MARGIN,
};
pub use io::InstanceFile;
pub use stability::{
    certify, check_sequential_stability, stabilizing_sequence, GainSeq, StabilityCert, StabilizingMode,
};
pub use variation::{total_variation, VariationReport};

use crate::error::{Error, Result};
use crate::lqr::{CostSpec, Theta};

/// A maximal run of steps sharing the same dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub len: usize,
    pub theta: Theta,
}

/// Time-indexed dynamics `Theta_0 .. Theta_{T-1}` (zero-based), stored run-length encoded,
/// plus the time-invariant costs and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSeq {
    segments: Vec<Segment>,
    /// `starts[k]` is the first step of segment `k`.
    starts: Vec<usize>,
    horizon: usize,
    cost: CostSpec,
}

impl DynamicsSeq {
    pub fn new(segments: Vec<Segment>, cost: CostSpec) -> Result<Self> {
        let first = segments.first().ok_or_else(|| Error::InvalidArgument("instance needs at least one segment".into()))?;
        let (n, d) = (first.theta.n(), first.theta.d());
        if cost.q().nrows() != n || cost.r().nrows() != d {
            return Err(Error::Dimension("cost matrices do not match the dynamics".into()));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0usize;
        for s in &segments {
            if s.len == 0 {
                return Err(Error::InvalidArgument("segment of zero length".into()));
            }
            if s.theta.n() != n || s.theta.d() != d {
                return Err(Error::Dimension("segments have inconsistent dimensions".into()));
            }
            starts.push(t);
            t += s.len;
        }
        Ok(Self { segments, starts, horizon: t, cost })
    }

    pub fn stationary(theta: Theta, horizon: usize, cost: CostSpec) -> Result<Self> {
        Self::new(vec![Segment { len: horizon, theta }], cost)
    }

    /// Builds from a per-step sequence, merging equal neighbours.
    pub fn from_steps(thetas: Vec<Theta>, cost: CostSpec) -> Result<Self> {
        let mut segments: Vec<Segment> = Vec::new();
        for theta in thetas {
            match segments.last_mut() {
                Some(last) if last.theta == theta => last.len += 1,
                _ => segments.push(Segment { len: 1, theta }),
            }
        }
        Self::new(segments, cost)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.segments[0].theta.n()
    }

    pub fn d(&self) -> usize {
        self.segments[0].theta.d()
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn psi2(&self) -> f64 {
        self.cost.psi2()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_start(&self, k: usize) -> usize {
        self.starts[k]
    }

    /// Index of the segment containing step `t`.
    pub fn segment_index(&self, t: usize) -> usize {
        assert!(t < self.horizon, "step {t} outside horizon {}", self.horizon);
        self.starts.partition_point(|&s| s <= t) - 1
    }

    pub fn theta_at(&self, t: usize) -> &Theta {
        &self.segments[self.segment_index(t)].theta
    }

    /// Steps at which the dynamics change (`Theta_t != Theta_{t-1}`).
    pub fn switch_times(&self) -> Vec<usize> {
        self.starts[1..].to_vec()
    }

    /// Iterates `(segment index, step range)`.
    pub fn runs(&self) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        self.segments.iter().enumerate().map(move |(k, s)| (k, self.starts[k]..self.starts[k] + s.len))
    }
}
