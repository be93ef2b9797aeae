use serde::{Deserialize, Serialize};

use crate::controller::Verdict;
use crate::error::{Error, Result};

/// User-facing configuration. `None` fields take the defaults described on
/// [`DynLqrConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynLqrConfig {
    /// Warm-up / base block length `L`.
    #[serde(rename = "L")]
    pub l: Option<usize>,
    /// Exploration-energy constant `C0`.
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    pub c_test: f64,
    /// Warm-up exploration std, also the ceiling on every exploration std.
    pub nu0: f64,
    pub x_u: Option<f64>,
    pub x_l: Option<f64>,
    pub kappa: f64,
    pub rho0: f64,
    pub beta: Option<f64>,
    pub c_ss: f64,
    /// The state-bound constant `B` in the default `x_u`.
    pub bound_b: f64,
    pub max_block_index: usize,
}

/// 95% quantile of `calibrate` over 40 stationary 1x1 pilots at T = 2^14, rounded.
pub const DEFAULT_C_TEST: f64 = 2.4;

impl Default for DynLqrConfig {
    fn default() -> Self {
        Self {
            l: None,
            c0: None,
            c_test: DEFAULT_C_TEST,
            nu0: 1.0,
            x_u: None,
            x_l: None,
            kappa: 1.0,
            rho0: 0.95,
            beta: None,
            c_ss: 1.0,
            bound_b: 1.0,
            max_block_index: 30,
        }
    }
}

/// Fully resolved parameters for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub l: usize,
    pub c0: f64,
    pub c_test: f64,
    pub nu0: f64,
    pub x_u: f64,
    pub x_l: f64,
    pub max_block_index: usize,
}

impl Resolved {
    /// Exploration std at scale `k`: `nu_k^2 = sqrt(C0 / (2^k L))`, capped at `nu0`.
    pub fn nu(&self, k: usize) -> f64 {
        let len = self.l as f64 * 2f64.powi(k as i32);
        (self.c0 / len).powf(0.25).min(self.nu0)
    }

    /// `c_test^2 / sqrt(len)`.
    pub fn threshold(&self, len: usize) -> f64 {
        self.c_test * self.c_test / (len as f64).sqrt()
    }

    /// Restart test on the squared Frobenius distance between two estimates.
    /// The boundary itself fails.
    pub fn verdict(&self, diff_sq: f64, len: usize) -> Verdict {
        if diff_sq >= self.threshold(len) {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }

    /// Probability of starting a phase during block `j`.
    pub fn phase_start_prob(&self, j: usize) -> f64 {
        let s: f64 = (0..j).map(|m| 2f64.powf(-(m as f64) / 2.0)).sum();
        (s * 2f64.powf(-(j as f64) / 2.0) / self.l as f64).min(1.0)
    }
}

impl DynLqrConfig {
    /// Defaults: `L = max(4(n+d), 32)`, `C0 = 4 ln T`, `beta` = `beta_default`
    /// (the harness passes `max(psi, max_t ||B_t||)`),
    /// `x_u = 2 kappa e^{C_ss} (sqrt(8(n+d)) beta / sqrt(1-rho0) sqrt(ln T) + (n+d) B / (1-rho0))`,
    /// `x_l = 2 psi kappa sqrt(n) / (1-rho0)`.
    pub fn resolve(&self, n: usize, d: usize, horizon: usize, psi: f64, beta_default: f64) -> Result<Resolved> {
        let p = (n + d) as f64;
        let log_t = (horizon.max(2) as f64).ln();
        let l = self.l.unwrap_or((4 * (n + d)).max(32));
        let c0 = self.c0.unwrap_or(4.0 * log_t);
        let beta = self.beta.unwrap_or(beta_default);
        let gap = 1.0 - self.rho0;
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) || self.kappa < 1.0 {
            return Err(Error::BadConfig(format!("need 0 < rho0 < 1 and kappa >= 1, got rho0={}, kappa={}", self.rho0, self.kappa)));
        }
        let x_u = self.x_u.unwrap_or_else(|| {
            2.0 * self.kappa * self.c_ss.exp() * ((8.0 * p).sqrt() * beta / gap.sqrt() * log_t.sqrt() + p * self.bound_b / gap)
        });
        let x_l = self.x_l.unwrap_or(2.0 * psi * self.kappa * (n as f64).sqrt() / gap);
        let r = Resolved { l, c0, c_test: self.c_test, nu0: self.nu0, x_u, x_l, max_block_index: self.max_block_index };
        if l < n + d + 2 {
            return Err(Error::BadConfig(format!("L = {l} must be at least n+d+2 = {}", n + d + 2)));
        }
        if !(c0 > 0.0) || !(self.c_test > 0.0) || !(self.nu0 > 0.0) {
            return Err(Error::BadConfig(format!("C0, c_test, nu0 must be positive (C0={c0}, c_test={}, nu0={})", self.c_test, self.nu0)));
        }
        if !(x_l > 0.0 && x_l < x_u) {
            return Err(Error::BadConfig(format!("need 0 < x_l < x_u, got x_l={x_l}, x_u={x_u}")));
        }
        if self.max_block_index == 0 {
            return Err(Error::BadConfig("max_block_index must be positive".into()));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(c0: f64, l: usize) -> Resolved {
        DynLqrConfig { c0: Some(c0), l: Some(l), nu0: 10.0, ..Default::default() }.resolve(1, 1, 1 << 14, 1.0, 1.0).unwrap()
    }

    #[test]
    fn defaults() {
        let r = DynLqrConfig::default().resolve(1, 1, 1 << 14, 1.0, 1.0).unwrap();
        assert_eq!(r.l, 32);
        assert!((r.c0 - 4.0 * 16384f64.ln()).abs() < 1e-12);
        assert!((r.x_l - 40.0).abs() < 1e-9);
        assert!(r.x_u > r.x_l);
        assert_eq!(DynLqrConfig::default().resolve(4, 4, 100, 1.0, 1.0).unwrap().l, 32);
        assert_eq!(DynLqrConfig::default().resolve(6, 3, 100, 1.0, 1.0).unwrap().l, 36);
    }

    #[test]
    fn nu_values() {
        let r = resolved(4.0, 16);
        assert!((r.nu(1).powi(2) - (4.0f64 / 32.0).sqrt()).abs() < 1e-15);
        assert!((r.nu(1).powi(2) - 0.35355).abs() < 1e-5);
        for j in 1..20 {
            assert!(r.nu(j + 1) < r.nu(j));
        }
    }

    #[test]
    fn nu_is_capped_by_nu0() {
        let r = DynLqrConfig { c0: Some(100.0), l: Some(16), ..Default::default() }.resolve(1, 1, 100, 1.0, 1.0).unwrap();
        assert_eq!(r.nu(0), 1.0);
        assert!(r.nu(8) < 1.0);
    }

    #[test]
    fn phase_probability() {
        let r = resolved(4.0, 16);
        assert!((r.phase_start_prob(1) - 2f64.powf(-0.5) / 16.0).abs() < 1e-15);
        assert!((r.phase_start_prob(2) - (1.0 + 2f64.powf(-0.5)) / 32.0).abs() < 1e-15);
        assert!((r.phase_start_prob(2) - 0.05335).abs() < 1e-5);
    }

    #[test]
    fn threshold_halves_per_quadrupling() {
        let r = resolved(4.0, 16);
        assert!((r.threshold(64) / r.threshold(128) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = DynLqrConfig { l: Some(3), ..Default::default() };
        assert!(matches!(bad.resolve(1, 1, 100, 1.0, 1.0), Err(Error::BadConfig(_))));
        let bad = DynLqrConfig { c_test: 0.0, ..Default::default() };
        assert!(bad.resolve(1, 1, 100, 1.0, 1.0).is_err());
        let bad = DynLqrConfig { x_u: Some(1.0), x_l: Some(2.0), ..Default::default() };
        assert!(bad.resolve(1, 1, 100, 1.0, 1.0).is_err());
    }

    #[test]
    fn parses_from_toml() {
        let cfg: DynLqrConfig = toml::from_str("L = 64\nc_test = 3.5\nC0 = 2.0").unwrap();
        assert_eq!(cfg.l, Some(64));
        assert_eq!(cfg.c_test, 3.5);
        assert_eq!(cfg.c0, Some(2.0));
        assert_eq!(cfg.nu0, 1.0);
        assert!(toml::from_str::<DynLqrConfig>("bogus = 1").is_err());
    }
}
