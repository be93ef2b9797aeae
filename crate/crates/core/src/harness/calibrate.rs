use rayon::prelude::*;

use super::{controller_rng, default_beta, simulate};
use crate::dynlqr::{DynLqr, DynLqrConfig};
use crate::error::{Error, Result};
use crate::instances::{stabilizing_sequence, DynamicsSeq, StabilizingMode};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub c_test: f64,
    pub quantile: f64,
    /// Per pilot run, the largest normalised statistic `||dTheta||_F^2 sqrt(len)`.
    pub max_stats: Vec<f64>,
}

impl CalibrationReport {
    /// Fraction of pilot runs that would restart at least once at `c_test`.
    pub fn false_restart_rate(&self, c_test: f64) -> f64 {
        let c2 = c_test * c_test;
        self.max_stats.iter().filter(|&&s| s >= c2).count() as f64 / self.max_stats.len() as f64
    }
}

/// Runs DYN-LQR with `c_test = inf` on a stationary pilot and returns the
/// largest normalised test statistic. With no restarts the trajectory does not
/// depend on `c_test`, so the run restarts at a finite `c_test` iff
/// `c_test^2 <= ` this value.
pub fn pilot_max_statistic(seq: &DynamicsSeq, cfg: &DynLqrConfig, stab: StabilizingMode, seed: u64, replication: u64) -> Result<f64> {
    let gains = stabilizing_sequence(seq, stab, seed ^ replication)?;
    let probe = DynLqrConfig { c_test: f64::INFINITY, ..cfg.clone() };
    let r = probe.resolve(seq.n(), seq.d(), seq.horizon(), seq.psi2().sqrt(), default_beta(seq))?;
    let mut ctrl = DynLqr::new(r, seq.cost().clone(), gains, seq.horizon(), controller_rng(seed, replication))?;
    simulate(seq, &mut ctrl, seed, replication)?;
    Ok(ctrl.test_stats().max_normalized)
}

/// Picks the smallest `c_test` whose false-restart rate over the pilots is at
/// most `1 - quantile`. `pilots[r]` is run as replication `r`.
pub fn calibrate(pilots: &[DynamicsSeq], cfg: &DynLqrConfig, stab: StabilizingMode, seed: u64, quantile: f64) -> Result<CalibrationReport> {
    if pilots.is_empty() || !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidArgument("need at least one pilot and a quantile in (0, 1]".into()));
    }
    let max_stats = pilots
        .par_iter()
        .enumerate()
        .map(|(r, seq)| pilot_max_statistic(seq, cfg, stab, seed, r as u64))
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = max_stats.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // `keep` runs must stay strictly below c_test^2
    let keep = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    let c2 = if keep < n && sorted[keep] > sorted[keep - 1] {
        0.5 * (sorted[keep - 1] + sorted[keep])
    } else {
        sorted[keep - 1] * (1.0 + 1e-9) + f64::MIN_POSITIVE
    };
    Ok(CalibrationReport { c_test: c2.sqrt(), quantile, max_stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::build_switching_instance;

    #[test]
    fn calibrated_threshold_meets_target_on_pilots() {
        let pilots: Vec<DynamicsSeq> = (0..10).map(|s| build_switching_instance(1, 1, 2048, 1, 0.0, s).unwrap()).collect();
        let rep = calibrate(&pilots, &DynLqrConfig::default(), StabilizingMode::OracleCe, 3, 0.9).unwrap();
        assert!(rep.false_restart_rate(rep.c_test) <= 0.1 + 1e-12);
        assert!(rep.false_restart_rate(rep.c_test * 0.5) >= rep.false_restart_rate(rep.c_test));
        // the prediction is exact: rerun at the calibrated value
        let cfg = DynLqrConfig { c_test: rep.c_test, ..Default::default() };
        for (r, seq) in pilots.iter().enumerate() {
            let gains = stabilizing_sequence(seq, StabilizingMode::OracleCe, 3 ^ r as u64).unwrap();
            let res = cfg.resolve(1, 1, 2048, 1.0, default_beta(seq)).unwrap();
            let mut c = DynLqr::new(res, seq.cost().clone(), gains, 2048, controller_rng(3, r as u64)).unwrap();
            let out = simulate(seq, &mut c, 3, r as u64).unwrap();
            assert_eq!(out.report.restarts > 0, rep.max_stats[r] >= rep.c_test * rep.c_test, "pilot {r}");
        }
    }
}
