//! Per-replicate check of the data-driven lower bound
//! sup_{u in Omega} eps^T X u - lambda_hat rho <= ||X(b_hat - b*)||
//! with Omega the rescaled signed packing u_w = w / sqrt(d n) and rho = sqrt(d).

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_replicate, resolve_lambda, shared_design, SweepConfig};
use crate::diagnostics::{rip_delta, SparseOptions};
use crate::error::{Error, Result};
use crate::lower_bounds::{sudakov_lower, vg_signed_packing, SignedPacking, SudakovBounds};
use crate::solvers::{solve_instance, PenaltySpec, SolveOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDrivenRecord {
    pub replicate: usize,
    pub lambda_hat: f64,
    pub risk: f64,
    /// sup over Omega of eps^T X u
    pub sup_omega: f64,
    /// sup_omega - lambda_hat sqrt(d)
    pub lhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataDrivenReport {
    pub d: usize,
    pub packing_log_card: f64,
    /// max ||X u|| over Omega; the inequality needs this <= 1
    pub max_u_norm: f64,
    pub delta_2d: f64,
    pub mean_lambda_hat: f64,
    pub mean_risk: f64,
    pub mean_sup: f64,
    pub satisfaction_rate: f64,
    /// mean_sup - mean_lambda_hat sqrt(d) <= mean_risk
    pub expectation_holds: bool,
    pub sudakov: SudakovBounds,
    /// mean_sup >= both Sudakov lower bounds
    pub direct_dominates_sudakov: bool,
    pub records: Vec<DataDrivenRecord>,
}

fn sup_over_packing(packing: &SignedPacking, score: &DVector<f64>, scale: f64) -> f64 {
    packing
        .iter()
        .map(|w| {
            w.support
                .iter()
                .zip(&w.signs)
                .map(|(&j, &s)| s as f64 * score[j])
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
        * scale
}

/// Run the check on the replicates of `cfg`.
///
/// The packing is built once, so the design is drawn once as well: the
/// replicate-0 design stream is used whatever `redraw_design` says. With a
/// fixed lambda rule the risks equal those of `run_sweep` on the same config
/// with `redraw_design = false`.
pub fn data_driven_check(cfg: &SweepConfig, d: usize) -> Result<DataDrivenReport> {
    let mut cfg = cfg.clone();
    cfg.redraw_design = false;
    cfg.validate()?;
    if d == 0 || 5 * d > cfg.p {
        return Err(Error::invalid(format!("need 1 <= d <= p/5, got d = {d}, p = {}", cfg.p)));
    }
    let design = shared_design(&cfg)?.expect("design is shared");
    let packing = vg_signed_packing(&design, d, cfg.seed)?;
    let n = cfg.n as f64;
    let scale = 1.0 / (d as f64 * n).sqrt();
    let max_u_norm = (packing.max_energy / d as f64).sqrt();
    let delta = rip_delta(&design, d, &SparseOptions::default())?.delta.unwrap_or(1.0);
    let sudakov = sudakov_lower(&packing, cfg.sigma, delta)?;
    let rho = (d as f64).sqrt();

    let records: Vec<DataDrivenRecord> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let inst = draw_replicate(&cfg, r, Some(&design))?;
            let lambda = resolve_lambda(&cfg, &cfg.lambda, &inst, r)?;
            let sol = solve_instance(&inst, &PenaltySpec::l1(lambda)?, &SolveOptions {
                tol: cfg.tol,
                ..Default::default()
            })?;
            let risk = sol.risk.expect("risk is filled");
            let score = design.x().tr_mul(inst.epsilon());
            let sup = sup_over_packing(&packing, &score, scale);
            let lhs = sup - lambda * rho;
            Ok(DataDrivenRecord {
                replicate: r,
                lambda_hat: lambda,
                risk,
                sup_omega: sup,
                lhs,
                holds: lhs <= risk,
            })
        })
        .collect::<Result<_>>()?;

    let m = records.len() as f64;
    let mean = |f: fn(&DataDrivenRecord) -> f64| records.iter().map(f).sum::<f64>() / m;
    let mean_lambda_hat = mean(|r| r.lambda_hat);
    let mean_risk = mean(|r| r.risk);
    let mean_sup = mean(|r| r.sup_omega);
    Ok(DataDrivenReport {
        d,
        packing_log_card: packing.log_card,
        max_u_norm,
        delta_2d: delta,
        mean_lambda_hat,
        mean_risk,
        mean_sup,
        satisfaction_rate: records.iter().filter(|r| r.holds).count() as f64 / m,
        expectation_holds: mean_sup - mean_lambda_hat * rho <= mean_risk,
        direct_dominates_sudakov: mean_sup >= sudakov.first.max(sudakov.second),
        sudakov,
        records,
    })
}
