//! Monte-Carlo sweeps over replicated lasso instances.
//!
//! A sweep draws one instance per replicate from keyed streams, resolves the
//! tuning parameter, solves, and records the risk, the noise barrier and the
//! large-signal bias bracket. Replicates are independent; results are
//! collected in replicate order, so the output never depends on scheduling.

pub mod cv;
mod data_driven;
mod necessity;
pub mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{lsb_bracket_with, noise_barrier_for, LsbOptions};
use crate::error::{Error, Result};
use crate::model::{gen_design_with, sample_instance_with, Covariance, DesignMatrix, DesignSpec, NoiseSpec, RegressionInstance};
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::{solve_instance, PenaltySpec, SolveOptions};
use crate::tuning::{sparsity_bracket, tuning_level, TuningKind};

pub use cv::{cross_validate, cv_grid, CvResult};
pub use data_driven::{data_driven_check, DataDrivenRecord, DataDrivenReport};
pub use necessity::{compatibility_necessity_experiment, NecessityConfig, NecessityRow, NecessityTable};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "replicate,lambda,risk,nb,lsb_lo,lsb_hi,B,V,R,flags";

const PROXY_NOTE: &str = "C_min proxy = sqrt(lambda_min(Sigma-bar)), a lower bound on theta; \
C_max proxy = sqrt(lambda_max(Sigma-bar)), an upper bound on psi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SupportRule {
    /// k indices drawn uniformly without replacement
    Random,
    /// indices 0..k
    First,
    Fixed { indices: Vec<usize> },
}

impl Default for SupportRule {
    fn default() -> Self {
        SupportRule::Random
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSpec {
    /// nonzero magnitude in units of sigma; 0 gives beta* = 0
    pub amplitude: f64,
    #[serde(default)]
    pub support: SupportRule,
    /// random signs when true, all positive otherwise
    #[serde(default = "yes")]
    pub random_signs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    /// L0(p/k') with the given k'
    L0At { k: usize },
    Fixed { value: f64 },
    /// sigma sqrt(2 log p)
    Universal,
    CrossValidated { folds: usize },
}

impl LambdaRule {
    pub fn label(&self) -> String {
        match self {
            LambdaRule::L0At { k } => format!("L0(p/{k})"),
            LambdaRule::Fixed { value } => format!("fixed({value})"),
            LambdaRule::Universal => "universal".into(),
            LambdaRule::CrossValidated { folds } => format!("cv({folds})"),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-8
}

/// A sweep as read from its JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema: u32,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub design: DesignSpec,
    pub sigma: f64,
    pub beta: BetaSpec,
    pub lambda: LambdaRule,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Draw a fresh design per replicate. Explicit designs are always shared.
    #[serde(default = "yes")]
    pub redraw_design: bool,
    /// Overrides for the C_min / C_max proxies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.n == 0 || self.p == 0 || self.k == 0 || self.replicates == 0 {
            return Err(Error::invalid("n, p, k and replicates must be positive"));
        }
        if self.k > self.p {
            return Err(Error::invalid(format!("k = {} exceeds p = {}", self.k, self.p)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive and finite"));
        }
        if !(self.beta.amplitude >= 0.0) || !self.beta.amplitude.is_finite() {
            return Err(Error::invalid("beta amplitude must be finite and >= 0"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if let SupportRule::Fixed { indices } = &self.beta.support {
            let mut s = indices.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != self.k || indices.len() != self.k || s.iter().any(|&j| j >= self.p) {
                return Err(Error::invalid(format!(
                    "fixed support must list {} distinct indices below {}",
                    self.k, self.p
                )));
            }
        }
        for c in [self.c_min, self.c_max].into_iter().flatten() {
            if !(c > 0.0) {
                return Err(Error::invalid("C_min / C_max overrides must be positive"));
            }
        }
        self.check_rule(&self.lambda)
    }

    fn check_rule(&self, rule: &LambdaRule) -> Result<()> {
        match *rule {
            LambdaRule::L0At { k } => {
                if k == 0 || k > self.p {
                    return Err(Error::invalid(format!("L0 rule needs 1 <= k' <= p, got {k}")));
                }
                tuning_level(self.sigma, self.p, k, TuningKind::L0).map(|_| ())
            }
            LambdaRule::Fixed { value } => {
                if value >= 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("fixed lambda must be finite and >= 0"))
                }
            }
            LambdaRule::Universal => Ok(()),
            LambdaRule::CrossValidated { folds } => {
                if folds >= 2 && folds <= self.n {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("need 2 <= folds <= n, got {folds}")))
                }
            }
        }
    }

    /// sigma sqrt(2 k log(p/k)), the unit of B, V and R.
    pub fn scale(&self) -> f64 {
        let k = self.k as f64;
        self.sigma * (2.0 * k * (self.p as f64 / k).ln()).sqrt()
    }

    fn shares_design(&self) -> bool {
        !self.redraw_design || matches!(self.design, DesignSpec::Explicit { .. })
    }
}

/// One replicate at one tuning level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub replicate: usize,
    pub lambda: f64,
    pub risk: f64,
    pub nb: f64,
    pub lsb_lower: f64,
    pub lsb_upper: f64,
    pub b: f64,
    pub v: f64,
    pub r: f64,
    /// risk <= sqrt(2) lambda sqrt(k) / C_min
    pub upper_event: bool,
    /// risk >= lambda sqrt(k) / C_max
    pub lower_event: bool,
    pub error: Option<String>,
}

impl ExperimentRecord {
    fn failed(replicate: usize, lambda: f64, err: &Error) -> Self {
        ExperimentRecord {
            replicate,
            lambda,
            risk: f64::NAN,
            nb: f64::NAN,
            lsb_lower: f64::NAN,
            lsb_upper: f64::NAN,
            b: f64::NAN,
            v: f64::NAN,
            r: f64::NAN,
            upper_event: false,
            lower_event: false,
            error: Some(err.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn flags(&self) -> String {
        match &self.error {
            // commas and quotes would break the CSV row
            Some(e) => format!("error={}", e.replace([',', '"', '\n'], " ")),
            None => format!(
                "upper_event={};lower_event={}",
                self.upper_event as u8, self.lower_event as u8
            ),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.replicate,
            self.lambda,
            self.risk,
            self.nb,
            self.lsb_lower,
            self.lsb_upper,
            self.b,
            self.v,
            self.r,
            self.flags()
        )
    }
}

/// Population extremes used in place of the unknown C_min, C_max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantProxies {
    pub c_min: f64,
    pub c_max: f64,
    pub overridden: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: SweepConfig,
    pub lambda_rule: String,
    pub replicates: usize,
    pub failed: usize,
    /// k log^3(p/k_plus) / n, recorded only
    pub regime_ratio: Option<f64>,
    pub scale: f64,
    pub median_lambda: f64,
    pub median_b: f64,
    pub median_v: f64,
    pub median_r: f64,
    pub mean_risk: f64,
    pub upper_event_rate: f64,
    pub upper_event_nominal: String,
    pub lower_event_rate: f64,
    pub lower_event_nominal: String,
    pub proxies: ConstantProxies,
    pub proxy_note: String,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub records: Vec<ExperimentRecord>,
    pub summary: SweepSummary,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    /// Write the CSV and its `.summary.json` sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<PathBuf> {
        std::fs::write(csv_path, self.to_csv())?;
        let side = sidecar_path(csv_path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(side)
    }
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

pub(crate) fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn extremes(s: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(s.clone()).eigenvalues;
    (ev.min().max(0.0), ev.max())
}

fn equicorrelated_extremes(p: usize, rho: f64) -> (f64, f64) {
    let a = 1.0 - rho;
    let b = 1.0 + (p as f64 - 1.0) * rho;
    (a.min(b).max(0.0), a.max(b))
}

/// Extreme eigenvalues of the population Sigma-bar implied by the design spec.
pub fn constant_proxies(cfg: &SweepConfig, shared: Option<&DesignMatrix>) -> Result<ConstantProxies> {
    let (lo, hi) = match &cfg.design {
        DesignSpec::Orthogonal => (1.0, 1.0),
        DesignSpec::Equicorrelated { rho } => equicorrelated_extremes(cfg.p, *rho),
        DesignSpec::GaussianRows { covariance } => match covariance {
            Covariance::Identity => (1.0, 1.0),
            Covariance::Equicorrelated { rho } => equicorrelated_extremes(cfg.p, *rho),
            Covariance::Matrix { .. } => extremes(&covariance.to_matrix(cfg.p)?),
        },
        DesignSpec::Explicit { .. } => {
            let d = shared.ok_or_else(|| Error::invalid("explicit design not loaded"))?;
            extremes(d.sigma_bar())
        }
    };
    Ok(ConstantProxies {
        c_min: cfg.c_min.unwrap_or(lo.sqrt()),
        c_max: cfg.c_max.unwrap_or(hi.sqrt()),
        overridden: cfg.c_min.is_some() || cfg.c_max.is_some(),
    })
}

pub(crate) fn shared_design(cfg: &SweepConfig) -> Result<Option<Arc<DesignMatrix>>> {
    if !cfg.shares_design() {
        return Ok(None);
    }
    let mut rng = replicate_stream(cfg.seed, 0, Purpose::Design);
    Ok(Some(Arc::new(gen_design_with(cfg.n, cfg.p, &cfg.design, &mut rng)?)))
}

fn draw_beta(cfg: &SweepConfig, replicate: usize) -> DVector<f64> {
    let mut beta = DVector::zeros(cfg.p);
    if cfg.beta.amplitude == 0.0 {
        return beta;
    }
    let mut rng = replicate_stream(cfg.seed, replicate as u64, Purpose::Signal);
    let mut support: Vec<usize> = match &cfg.beta.support {
        SupportRule::Random => rand::seq::index::sample(&mut rng, cfg.p, cfg.k).into_vec(),
        SupportRule::First => (0..cfg.k).collect(),
        SupportRule::Fixed { indices } => indices.clone(),
    };
    support.sort_unstable();
    let a = cfg.beta.amplitude * cfg.sigma;
    for j in support {
        let s = if cfg.beta.random_signs && rng.random::<bool>() { -1.0 } else { 1.0 };
        beta[j] = s * a;
    }
    beta
}

/// Replicate `replicate` of the sweep: design, beta* and noise from their keyed streams.
pub fn draw_replicate(
    cfg: &SweepConfig,
    replicate: usize,
    shared: Option<&Arc<DesignMatrix>>,
) -> Result<RegressionInstance> {
    let design = match shared {
        Some(d) => Arc::clone(d),
        None => {
            let mut rng = replicate_stream(cfg.seed, replicate as u64, Purpose::Design);
            Arc::new(gen_design_with(cfg.n, cfg.p, &cfg.design, &mut rng)?)
        }
    };
    let beta = draw_beta(cfg, replicate);
    let mut rng = replicate_stream(cfg.seed, replicate as u64, Purpose::Noise);
    sample_instance_with(design, beta, &NoiseSpec::Gaussian { sigma: cfg.sigma }, &mut rng)?
        .with_sparsity_bound(cfg.k)
}

/// Tuning parameter for one replicate; only cross-validation looks at the data.
pub fn resolve_lambda(
    cfg: &SweepConfig,
    rule: &LambdaRule,
    instance: &RegressionInstance,
    replicate: usize,
) -> Result<f64> {
    match *rule {
        LambdaRule::L0At { k } => Ok(tuning_level(cfg.sigma, cfg.p, k, TuningKind::L0)?.value),
        LambdaRule::Fixed { value } => Ok(value),
        LambdaRule::Universal => Ok(tuning_level(cfg.sigma, cfg.p, 1, TuningKind::Universal)?.value),
        LambdaRule::CrossValidated { folds } => {
            let mut rng = replicate_stream(cfg.seed, replicate as u64, Purpose::Folds);
            let grid = cv_grid(cfg.sigma, cfg.p);
            let x = instance.design().x();
            Ok(cross_validate(x, instance.y(), &grid, folds, cfg.tol, &mut rng)?.lambda_hat)
        }
    }
}

/// Bracket at lambda = 1; both ends are linear in lambda.
fn unit_lsb(instance: &RegressionInstance, tol: f64) -> Result<Option<(f64, f64)>> {
    if instance.beta_star().iter().all(|&b| b == 0.0) {
        return Ok(Some((0.0, 0.0)));
    }
    let opts = LsbOptions {
        tol: tol.min(1e-10),
        ..LsbOptions::fast()
    };
    match lsb_bracket_with(instance.design(), instance.beta_star(), &PenaltySpec::l1(1.0)?, &opts) {
        Ok(b) => Ok(Some((b.lower, b.upper))),
        Err(Error::NotMinimalH) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Evaluated {
    record: ExperimentRecord,
    beta_hat: Option<DVector<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &SweepConfig,
    proxies: &ConstantProxies,
    instance: &RegressionInstance,
    replicate: usize,
    lambda: f64,
    lsb: Option<(f64, f64)>,
    warm: Option<&DVector<f64>>,
) -> Result<Evaluated> {
    let penalty = PenaltySpec::l1(lambda)?;
    let opts = SolveOptions {
        tol: cfg.tol,
        warm_start: warm.cloned(),
        ..Default::default()
    };
    let sol = solve_instance(instance, &penalty, &opts)?;
    let risk = sol.risk.expect("solve_instance fills the risk");
    let nb = if instance.beta_star().iter().all(|&b| b == 0.0) {
        // y = eps exactly, so the zero-signal solve is the one just done
        sol.fitted.norm()
    } else {
        noise_barrier_for(instance.design(), instance.epsilon(), &penalty, &SolveOptions::with_tol(cfg.tol))?.value
    };
    let (lo, hi) = lsb.map_or((f64::NAN, f64::NAN), |(l, u)| (l * lambda, u * lambda));
    let scale = cfg.scale();
    let root_k = (cfg.k as f64).sqrt();
    Ok(Evaluated {
        record: ExperimentRecord {
            replicate,
            lambda,
            risk,
            nb,
            lsb_lower: lo,
            lsb_upper: hi,
            b: lo / scale,
            v: nb / scale,
            r: risk / scale,
            upper_event: risk <= std::f64::consts::SQRT_2 * lambda * root_k / proxies.c_min,
            lower_event: risk >= lambda * root_k / proxies.c_max,
            error: None,
        },
        beta_hat: Some(sol.beta_hat),
    })
}

fn replicate_records(
    cfg: &SweepConfig,
    rules: &[LambdaRule],
    proxies: &ConstantProxies,
    shared: Option<&Arc<DesignMatrix>>,
    replicate: usize,
) -> Vec<ExperimentRecord> {
    let instance = match draw_replicate(cfg, replicate, shared) {
        Ok(i) => i,
        Err(e) => return rules.iter().map(|_| ExperimentRecord::failed(replicate, f64::NAN, &e)).collect(),
    };
    let lambdas: Vec<Result<f64>> = rules
        .iter()
        .map(|r| resolve_lambda(cfg, r, &instance, replicate))
        .collect();
    let lsb = unit_lsb(&instance, cfg.tol);
    let mut out: Vec<Option<ExperimentRecord>> = vec![None; rules.len()];
    // Several rules share warm starts along decreasing lambda.
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by(|&a, &b| {
        let la = lambdas[a].as_ref().copied().unwrap_or(f64::NAN);
        let lb = lambdas[b].as_ref().copied().unwrap_or(f64::NAN);
        lb.total_cmp(&la)
    });
    let mut warm: Option<DVector<f64>> = None;
    for i in order {
        let rec = match (&lambdas[i], &lsb) {
            (Err(e), _) => ExperimentRecord::failed(replicate, f64::NAN, e),
            (Ok(l), Err(e)) => ExperimentRecord::failed(replicate, *l, e),
            (Ok(l), Ok(b)) => {
                let w = if rules.len() > 1 { warm.as_ref() } else { None };
                match evaluate(cfg, proxies, &instance, replicate, *l, *b, w) {
                    Ok(ev) => {
                        warm = ev.beta_hat;
                        ev.record
                    }
                    Err(e) => ExperimentRecord::failed(replicate, *l, &e),
                }
            }
        };
        out[i] = Some(rec);
    }
    out.into_iter().map(|r| r.expect("every rule evaluated")).collect()
}

fn summarize(cfg: &SweepConfig, rule: &LambdaRule, proxies: ConstantProxies, records: &[ExperimentRecord]) -> SweepSummary {
    let good: Vec<&ExperimentRecord> = records.iter().filter(|r| r.ok()).collect();
    let m = good.len().max(1) as f64;
    let regime_ratio = sparsity_bracket(cfg.p, cfg.k).ok().map(|b| {
        let l = (cfg.p as f64 / b.k_plus as f64).ln();
        cfg.k as f64 * l.powi(3) / cfg.n as f64
    });
    let mut config = cfg.clone();
    config.lambda = *rule;
    SweepSummary {
        config,
        lambda_rule: rule.label(),
        replicates: records.len(),
        failed: records.len() - good.len(),
        regime_ratio,
        scale: cfg.scale(),
        median_lambda: median(good.iter().map(|r| r.lambda)),
        median_b: median(good.iter().map(|r| r.b)),
        median_v: median(good.iter().map(|r| r.v)),
        median_r: median(good.iter().map(|r| r.r)),
        mean_risk: good.iter().map(|r| r.risk).sum::<f64>() / m,
        upper_event_rate: good.iter().filter(|r| r.upper_event).count() as f64 / m,
        upper_event_nominal: "-> 1".into(),
        lower_event_rate: good.iter().filter(|r| r.lower_event).count() as f64 / m,
        lower_event_nominal: ">= 1/3".into(),
        proxies,
        proxy_note: PROXY_NOTE.into(),
    }
}

/// Run the sweep described by `cfg`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    Ok(run_matched_sweeps(cfg, &[cfg.lambda])?.pop().expect("one rule"))
}

/// One table per rule, all on the same replicates.
///
/// The bias bracket is computed once per replicate and rescaled; with more
/// than one rule the solves are warm-started along decreasing lambda.
pub fn run_matched_sweeps(cfg: &SweepConfig, rules: &[LambdaRule]) -> Result<Vec<SweepTable>> {
    cfg.validate()?;
    if rules.is_empty() {
        return Err(Error::invalid("no lambda rules given"));
    }
    for r in rules {
        cfg.check_rule(r)?;
    }
    let shared = shared_design(cfg)?;
    let proxies = constant_proxies(cfg, shared.as_deref())?;
    let per_rep: Vec<Vec<ExperimentRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| replicate_records(cfg, rules, &proxies, shared.as_ref(), r))
        .collect();
    Ok(rules
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let records: Vec<ExperimentRecord> = per_rep.iter().map(|v| v[i].clone()).collect();
            let summary = summarize(cfg, rule, proxies, &records);
            SweepTable { records, summary }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_cfg() -> SweepConfig {
        SweepConfig {
            schema: 1,
            n: 60,
            p: 40,
            k: 3,
            design: DesignSpec::GaussianRows {
                covariance: Covariance::Identity,
            },
            sigma: 1.0,
            beta: BetaSpec {
                amplitude: 10.0,
                support: SupportRule::Random,
                random_signs: true,
            },
            lambda: LambdaRule::Universal,
            replicates: 6,
            seed: 11,
            output: None,
            tol: 1e-9,
            redraw_design: true,
            c_min: None,
            c_max: None,
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let cfg = small_cfg();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SweepConfig::from_json(&text).unwrap(), cfg);
        let bad = text.replace("\"schema\":1", "\"schema\":2");
        assert!(SweepConfig::from_json(&bad).is_err());
        let unknown = text.replacen('{', "{\"bogus\":1,", 1);
        assert!(SweepConfig::from_json(&unknown).is_err());
        let mut c = small_cfg();
        c.lambda = LambdaRule::L0At { k: 3 }; // p/k' = 13 is below the critical range
        assert!(c.validate().is_err());
        c.lambda = LambdaRule::CrossValidated { folds: 1 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn documented_example_parses() {
        let text = r#"{
            "schema": 1, "n": 200, "p": 400, "k": 4,
            "design": {"type": "gaussian_rows", "covariance": {"type": "identity"}},
            "sigma": 1.0,
            "beta": {"amplitude": 10.0, "support": {"type": "first"}},
            "lambda": {"rule": "l0_at", "k": 1},
            "replicates": 10, "seed": 3
        }"#;
        let cfg = SweepConfig::from_json(text).unwrap();
        assert_eq!(cfg.beta.support, SupportRule::First);
        assert!(cfg.redraw_design && cfg.beta.random_signs);
    }

    #[test]
    fn records_satisfy_invariants() {
        let t = run_sweep(&small_cfg()).unwrap();
        assert_eq!(t.records.len(), 6);
        for r in &t.records {
            assert!(r.ok(), "{:?}", r.error);
            assert!(r.nb <= r.risk + 1e-7);
            assert!(r.lsb_lower <= r.lsb_upper * (1.0 + 1e-9));
            assert!((r.r * t.summary.scale - r.risk).abs() < 1e-12 * r.risk.max(1.0));
        }
        assert_eq!(t.summary.failed, 0);
    }

    #[test]
    fn zero_signal_gives_r_equal_v_and_zero_b() {
        let mut cfg = small_cfg();
        cfg.beta.amplitude = 0.0;
        for r in run_sweep(&cfg).unwrap().records {
            assert_eq!(r.r, r.v);
            assert_eq!(r.b, 0.0);
        }
    }

    #[test]
    fn csv_is_deterministic_and_schedule_free() {
        let cfg = small_cfg();
        let a = run_sweep(&cfg).unwrap().to_csv();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_sweep(&cfg).unwrap().to_csv());
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
        assert_eq!(a.lines().count(), 7);
    }

    #[test]
    fn matched_sweeps_share_instances() {
        let cfg = small_cfg();
        let rules = [LambdaRule::Fixed { value: 1.0 }, LambdaRule::Fixed { value: 3.0 }];
        let t = run_matched_sweeps(&cfg, &rules).unwrap();
        for (a, b) in t[0].records.iter().zip(&t[1].records) {
            // the bias bracket is linear in lambda
            assert!((3.0 * a.lsb_upper - b.lsb_upper).abs() < 1e-9 * b.lsb_upper);
            assert!(a.nb >= b.nb - 1e-9);
        }
    }

    #[test]
    fn solver_failure_is_recorded_not_fatal() {
        let mut cfg = small_cfg();
        cfg.tol = 1e-300;
        let t = run_sweep(&cfg).unwrap();
        assert!(t.records.iter().all(|r| !r.ok()));
        assert!(t.to_csv().lines().nth(1).unwrap().contains("error="));
        assert_eq!(t.summary.failed, 6);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median([3.0, 1.0, 2.0].into_iter()), 2.0);
        assert_eq!(median([4.0, 1.0, 2.0, 3.0].into_iter()), 2.5);
        assert!(median(std::iter::empty()).is_nan());
    }
}
