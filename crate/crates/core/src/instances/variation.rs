use super::DynamicsSeq;

/// Per-step variation `Delta_t = ||Theta_{t+1} - Theta_t||_F` and its total.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationReport {
    /// `per_step[t] = Delta_t`, length `T - 1`.
    pub per_step: Vec<f64>,
    pub total: f64,
    /// Number of non-zero `Delta_t`.
    pub switches: usize,
    prefix: Vec<f64>,
}

impl VariationReport {
    /// `Delta_[s,e] = sum_{t=s}^{e-1} Delta_t`.
    pub fn interval(&self, s: usize, e: usize) -> f64 {
        assert!(s <= e && e < self.prefix.len(), "interval [{s},{e}] outside horizon");
        self.prefix[e] - self.prefix[s]
    }
}

pub fn total_variation(seq: &DynamicsSeq) -> VariationReport {
    let horizon = seq.horizon();
    let mut per_step = vec![0.0; horizon.saturating_sub(1)];
    let segs = seq.segments();
    for k in 1..segs.len() {
        let t = seq.segment_start(k) - 1;
        per_step[t] = segs[k].theta.distance(&segs[k - 1].theta);
    }
    let mut prefix = Vec::with_capacity(horizon);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in &per_step {
        acc += v;
        prefix.push(acc);
    }
    let switches = per_step.iter().filter(|&&v| v > 0.0).count();
    VariationReport { total: acc, per_step, switches, prefix }
}
