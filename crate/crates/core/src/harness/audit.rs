use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{JStarTable, SimOutput};
use crate::error::Result;
use crate::instances::DynamicsSeq;
use crate::linalg::{quad_form, trace};
use crate::lqr::solve_lyapunov;

/// Per-step decomposition of `c_t - J*_t`. Terms are, in order:
/// exploitation `J_t(K_t) - J*_t`, exploration `sigma_t^2 Tr(R + B_t^T P_t B_t)`,
/// variation `x_{t+1}^T (P_{t+1} - P_t) x_{t+1}`, martingale and boundary
/// `x_t^T P_t x_t - x_{t+1}^T P_{t+1} x_{t+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub t: usize,
    pub residual: f64,
    pub terms: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub max_residual: f64,
    /// Largest `|residual| / (1 + |c_t|)`.
    pub max_relative_residual: f64,
    pub sums: [f64; 5],
    pub not_auditable: usize,
}

struct Pieces {
    p: DMatrix<f64>,
    j: f64,
    k: DMatrix<f64>,
    tr_r: f64,
    tr_bpb: f64,
}

/// Checks the per-step identity
/// `c_t - J*_t = exploitation + exploration + variation + martingale + boundary`,
/// where `P_t = P(Theta_t, K_t)` solves the closed-loop Lyapunov equation and the
/// martingale term is
/// `(x_{t+1}^T P_t x_{t+1} - E[. | x_t, sigma_t]) + (u_t^T R u_t - E[. | x_t, sigma_t])`
/// with `E[x_{t+1}^T P_t x_{t+1}] = m^T P_t m + sigma_t^2 Tr(B^T P_t B) + psi^2 Tr P_t`,
/// `m = (A + B K) x_t`, and `E[u^T R u] = x^T K^T R K x + sigma_t^2 Tr R`.
/// Steps whose `(Theta_t, K_t)` is not stabilizing are skipped and counted.
/// When step `t+1` is not auditable (or `t` is the last step) `P_{t+1} := P_t`.
pub fn regret_decomposition_audit(seq: &DynamicsSeq, out: &SimOutput) -> Result<AuditReport> {
    let jstar = JStarTable::new(seq)?;
    let cost = seq.cost();
    let psi2 = seq.psi2();
    let horizon = out.traj.len();
    let mut cache: HashMap<(usize, usize), Option<Pieces>> = HashMap::new();
    let seg_of: Vec<usize> = {
        let mut v = Vec::with_capacity(horizon);
        for (k, range) in seq.runs() {
            v.extend(range.map(|_| k));
        }
        v
    };
    let lookup = |t: usize| -> (usize, usize) { (seg_of[t], out.traj.gain_id(t)) };
    let mut pieces = |key: (usize, usize)| -> bool {
        cache
            .entry(key)
            .or_insert_with(|| {
                let theta = &seq.segments()[key.0].theta;
                let gain = &out.gains[key.1];
                solve_lyapunov(theta, gain, cost).ok().map(|p| {
                    let p = p.matrix().clone();
                    let bpb = theta.b().transpose() * &p * theta.b();
                    Pieces { j: psi2 * trace(&p), k: gain.matrix().clone(), tr_r: trace(cost.r()), tr_bpb: trace(&bpb), p }
                })
            })
            .is_some()
    };
    let auditable: Vec<bool> = (0..horizon).map(|t| pieces(lookup(t))).collect();

    let mut rows = Vec::new();
    let mut sums = [0.0; 5];
    let (mut max_residual, mut max_rel, mut skipped) = (0.0f64, 0.0f64, 0usize);
    for t in 0..horizon {
        if !auditable[t] {
            skipped += 1;
            continue;
        }
        let key = lookup(t);
        let pc = cache[&key].as_ref().expect("auditable");
        let theta = &seq.segments()[key.0].theta;
        let x = DVector::from_column_slice(out.traj.x(t));
        let u = DVector::from_column_slice(out.traj.u(t));
        let xn = DVector::from_column_slice(out.traj.x_next(t));
        let sigma2 = out.traj.sigma(t).powi(2);
        let p_next = if t + 1 < horizon && auditable[t + 1] {
            &cache[&lookup(t + 1)].as_ref().expect("auditable").p
        } else {
            &pc.p
        };

        let c = quad_form(cost.q(), &x) + quad_form(cost.r(), &u);
        let lhs = c - jstar.segment_value(key.0);
        let kx = &pc.k * &x;
        let m = theta.a() * &x + theta.b() * &kx;
        let x_next_p = quad_form(&pc.p, &xn);
        let x_next_pn = quad_form(p_next, &xn);
        let e_state = quad_form(&pc.p, &m) + sigma2 * pc.tr_bpb + psi2 * trace(&pc.p);
        let e_input = quad_form(cost.r(), &kx) + sigma2 * pc.tr_r;

        let exploitation = pc.j - jstar.segment_value(key.0);
        let exploration = sigma2 * (pc.tr_r + pc.tr_bpb);
        let variation = x_next_pn - x_next_p;
        let martingale = (x_next_p - e_state) + (quad_form(cost.r(), &u) - e_input);
        let boundary = quad_form(&pc.p, &x) - x_next_pn;
        let terms = [exploitation, exploration, variation, martingale, boundary];
        let residual = lhs - terms.iter().sum::<f64>();
        for (s, v) in sums.iter_mut().zip(terms) {
            *s += v;
        }
        max_residual = max_residual.max(residual.abs());
        max_rel = max_rel.max(residual.abs() / (1.0 + c.abs()));
        rows.push(AuditRow { t, residual, terms });
    }
    Ok(AuditReport { rows, max_residual, max_relative_residual: max_rel, sums, not_auditable: skipped })
}
