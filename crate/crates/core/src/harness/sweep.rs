use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::instance_seed;
use super::{build_controller, build_instance, regret_decomposition_audit, simulate_with, AuditReport, ControllerKind, ExperimentConfig, JStarTable, SimOutput};
use crate::error::{Error, Result};

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: usize,
    pub controller: String,
    pub horizon: usize,
    pub budget: f64,
    pub seed: u64,
    /// `None` when the cell failed; see `status`.
    pub regret: Option<f64>,
    pub restarts: usize,
    pub stab_steps: usize,
    pub wall_ms: u128,
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<CellResult>,
}

impl SweepOutput {
    /// `results.csv`; with `timing = false` the `wall_ms` column is blanked.
    pub fn write_csv<W: Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["cell", "controller", "T", "V_T", "seed", "regret", "restarts", "stab_steps", "wall_ms", "status"])?;
        for r in &self.rows {
            wr.write_record([
                r.cell.to_string(),
                r.controller.clone(),
                r.horizon.to_string(),
                r.budget.to_string(),
                r.seed.to_string(),
                r.regret.map(|v| v.to_string()).unwrap_or_default(),
                r.restarts.to_string(),
                r.stab_steps.to_string(),
                if timing { r.wall_ms.to_string() } else { String::new() },
                r.status.clone(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Cell {
    index: usize,
    controller: String,
    kind: ControllerKind,
    horizon: usize,
    budget: f64,
    replication: u64,
}

fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let sw = &cfg.sweep;
    let horizons = if sw.horizons.is_empty() { vec![cfg.instance.horizon] } else { sw.horizons.clone() };
    let budgets = if sw.budgets.is_empty() { vec![cfg.instance.budget] } else { sw.budgets.clone() };
    let kinds = sw.controllers.iter().map(|c| Ok((c.clone(), c.parse::<ControllerKind>()?))).collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() || sw.seeds == 0 {
        return Err(Error::Config("a sweep needs at least one controller and one seed".into()));
    }
    let mut out = Vec::new();
    for &horizon in &horizons {
        for &budget in &budgets {
            for replication in 0..sw.seeds {
                for (name, kind) in &kinds {
                    out.push(Cell { index: out.len(), controller: name.clone(), kind: *kind, horizon, budget, replication });
                }
            }
        }
    }
    Ok(out)
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, out_dir: Option<&Path>) -> Result<(SimOutput, Option<AuditReport>)> {
    let seed = cfg.sweep.master_seed;
    let seq = build_instance(&cfg.instance, cell.horizon, cell.budget, instance_seed(&cfg.instance, seed, cell.replication))?;
    let jstar = JStarTable::new(&seq)?;
    let mut ctrl = build_controller(cell.kind, &cfg.controller, &seq, seed, cell.replication)?;
    let sim = simulate_with(&seq, ctrl.as_mut(), seed, cell.replication, &jstar)?;
    let audit = if cfg.sweep.audit { Some(regret_decomposition_audit(&seq, &sim)?) } else { None };
    if let Some(dir) = out_dir {
        if cfg.sweep.trace {
            write_trace_csv(&sim, fs::File::create(dir.join(format!("trace_{}.csv", cell.index)))?)?;
        }
        if let Some(a) = &audit {
            write_audit_csv(a, fs::File::create(dir.join(format!("audit_{}.csv", cell.index)))?)?;
        }
    }
    Ok((sim, audit))
}

/// Runs every cell of the Cartesian product (T, V_T, replication, controller),
/// in parallel when `threads != Some(1)`. Rows come back in cell order and a
/// failing cell is recorded without aborting the sweep. When `out_dir` is
/// given, `results.csv` and the per-cell trace / audit files are written there.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: Option<&Path>, threads: Option<usize>) -> Result<SweepOutput> {
    let cells = cells(cfg)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let work = || -> Vec<CellResult> {
        cells
            .par_iter()
            .map(|cell| {
                let base = CellResult {
                    cell: cell.index,
                    controller: cell.controller.clone(),
                    horizon: cell.horizon,
                    budget: cell.budget,
                    seed: cell.replication,
                    regret: None,
                    restarts: 0,
                    stab_steps: 0,
                    wall_ms: 0,
                    status: "ok".into(),
                };
                match run_cell(cfg, cell, out_dir) {
                    Ok((sim, _)) => CellResult {
                        regret: Some(sim.report.regret()),
                        restarts: sim.report.restarts,
                        stab_steps: sim.report.stab_steps,
                        wall_ms: sim.report.wall_ms,
                        ..base
                    },
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", cell.index);
                        CellResult { status: format!("error: {e}"), ..base }
                    }
                }
            })
            .collect()
    };
    let rows = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let output = SweepOutput { rows };
    if let Some(dir) = out_dir {
        output.write_csv(fs::File::create(dir.join("results.csv"))?, true)?;
    }
    Ok(output)
}

/// `trace_<cell>.csv`: one row per step.
pub fn write_trace_csv<W: Write>(sim: &SimOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "cost", "jstar", "sigma2", "epoch", "block", "mode", "event"])?;
    let mut ev = sim.events.iter().peekable();
    for t in 0..sim.report.cost.len() {
        let mut labels = Vec::new();
        while let Some((te, e)) = ev.peek() {
            if *te != t {
                break;
            }
            labels.push(e.to_string());
            ev.next();
        }
        let st = sim.status[t];
        wr.write_record([
            t.to_string(),
            sim.report.cost[t].to_string(),
            sim.report.jstar[t].to_string(),
            sim.traj.sigma(t).powi(2).to_string(),
            st.epoch.to_string(),
            st.block.to_string(),
            st.mode.to_string(),
            labels.join(";"),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `audit_<cell>.csv`: residual and the five terms per audited step.
pub fn write_audit_csv<W: Write>(audit: &AuditReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "residual", "term1", "term2", "term3", "term4", "term5"])?;
    for r in &audit.rows {
        let mut rec = vec![r.t.to_string(), r.residual.to_string()];
        rec.extend(r.terms.iter().map(|v| v.to_string()));
        wr.write_record(rec)?;
    }
    wr.flush()?;
    Ok(())
}
