//! Penalized least squares `argmin ||X b - y||^2 + 2 h(b)` with
//! `h = sqrt(n) * lambda * ||.||_1`, plus certification helpers.

pub(crate) mod composite;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RegressionInstance;
use composite::{Composite, CompositeFailure, CompositeOptions};

pub use composite::soft_threshold;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    L1,
    Nuclear,
}

/// Penalty level before the sqrt(n) scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1, lambda)
    }

    pub fn nuclear(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::Nuclear, lambda)
    }

    fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(PenaltySpec { kind, lambda })
    }

    /// sqrt(n) * lambda.
    pub fn weight(&self, n: usize) -> f64 {
        (n as f64).sqrt() * self.lambda
    }

    /// h(b) for the l1 family.
    pub fn l1_value(&self, n: usize, b: &DVector<f64>) -> f64 {
        self.weight(n) * b.lp_norm(1)
    }

    pub(crate) fn require_l1(&self) -> Result<()> {
        if self.kind != PenaltyKind::L1 {
            return Err(Error::invalid("the nuclear penalty is handled by trace regression"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub warm_start: Option<DVector<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            warm_start: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub beta_hat: DVector<f64>,
    pub fitted: DVector<f64>,
    /// ||X(b_hat - b*)||, when b* is known.
    pub risk: Option<f64>,
    /// ||X b_hat - y||^2 + 2 h(b_hat).
    pub objective: f64,
    pub kkt_residual: f64,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    /// Objective after every sweep, starting from the initial point.
    pub objective_trace: Vec<f64>,
}

/// Cyclic coordinate descent with active-set passes, stopped on the KKT residual.
pub fn lasso_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    lasso_solve_with_norms(x, &col_sq, y, penalty, opts)
}

pub(crate) fn lasso_solve_with_norms(
    x: &DMatrix<f64>,
    col_sq: &[f64],
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    penalty.require_l1()?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "y has length {}, X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let w = penalty.weight(x.nrows());
    let prob = Composite {
        x,
        col_sq,
        y: Some(y),
        linear: None,
        weights: vec![w; x.ncols()],
        signs: None,
    };
    let copts = CompositeOptions {
        tol: opts.tol,
        max_sweeps: opts.max_sweeps,
        blowup: f64::INFINITY,
    };
    match prob.coordinate_descent(opts.warm_start.as_ref(), &copts) {
        Ok(sol) => {
            let fitted = y - &sol.residual;
            let objective = sol.residual.norm_squared() + 2.0 * w * sol.beta.lp_norm(1);
            Ok(SolveResult {
                beta_hat: sol.beta,
                fitted,
                risk: None,
                objective,
                kkt_residual: sol.kkt,
                iterations: sol.sweeps,
                objective_trace: sol.objective_trace.iter().map(|f| 2.0 * f).collect(),
            })
        }
        Err(CompositeFailure::NonConvergence { sweeps, kkt, beta }) => Err(Error::NonConvergence {
            iterations: sweeps,
            residual: kkt,
            last_iterate: Box::new(beta),
        }),
        Err(CompositeFailure::Unbounded) => {
            unreachable!("the least-squares term keeps the lasso bounded")
        }
    }
}

/// Solve on an instance and fill in the prediction error.
pub fn solve_instance(
    instance: &RegressionInstance,
    penalty: &PenaltySpec,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let d = instance.design();
    let mut res = lasso_solve_with_norms(d.x(), d.column_sq_norms(), instance.y(), penalty, opts)?;
    res.risk = Some((&res.fitted - d.x() * instance.beta_star()).norm());
    Ok(res)
}

/// max_j of the stationarity violation of `b_hat` for the l1 penalty at `lambda`.
pub fn kkt_certificate(x: &DMatrix<f64>, y: &DVector<f64>, beta_hat: &DVector<f64>, lambda: f64) -> f64 {
    let w = (x.nrows() as f64).sqrt() * lambda;
    let corr = x.tr_mul(&(y - x * beta_hat));
    corr.iter()
        .zip(beta_hat.iter())
        .map(|(c, b)| {
            if *b != 0.0 {
                (c - w * b.signum()).abs()
            } else {
                (c.abs() - w).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// ||X (b_hat - b*)||.
pub fn prediction_error(x: &DMatrix<f64>, beta_hat: &DVector<f64>, beta_star: &DVector<f64>) -> f64 {
    (x * (beta_hat - beta_star)).norm()
}

/// ||X b - y||^2 + 2 sqrt(n) lambda ||b||_1.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    (x * beta - y).norm_squared() + 2.0 * (x.nrows() as f64).sqrt() * lambda * beta.lp_norm(1)
}
