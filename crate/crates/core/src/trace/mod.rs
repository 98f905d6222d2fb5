//! Trace regression y_i = <X_i, B*> + eps_i with a nuclear-norm penalty.

mod svd;

pub use svd::{nuclear_norm, singular_values, svd, svd_soft_threshold, Svd};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseSpec;
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::composite::gram_spectral_norm;

pub const TRACE_MAX_ITERATIONS: usize = 50_000;
/// Largest m or T handled by the Jacobi SVD path.
pub const MAX_SIDE: usize = 64;

/// n observations of an m x T matrix; row i of `operator` is vec(X_i) in column-major order.
#[derive(Debug, Clone)]
pub struct TraceInstance {
    m: usize,
    t_cols: usize,
    operator: Arc<DMatrix<f64>>,
    beta_star: DMatrix<f64>,
    y: DVector<f64>,
    epsilon: DVector<f64>,
    sigma: f64,
}

impl TraceInstance {
    pub fn new<R: Rng>(
        m: usize,
        t_cols: usize,
        operator: Arc<DMatrix<f64>>,
        beta_star: DMatrix<f64>,
        noise: &NoiseSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || t_cols == 0 || m > MAX_SIDE || t_cols > MAX_SIDE {
            return Err(Error::invalid(format!("matrix sides must lie in 1..={MAX_SIDE}")));
        }
        if operator.ncols() != m * t_cols || beta_star.shape() != (m, t_cols) {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} columns and B* is {:?}; expected m*T = {} and ({m}, {t_cols})",
                operator.ncols(),
                beta_star.shape(),
                m * t_cols
            )));
        }
        let n = operator.nrows();
        let signal = &*operator * DVector::from_column_slice(beta_star.as_slice());
        let (noise_vec, sigma) = match noise {
            NoiseSpec::Gaussian { sigma } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::invalid("sigma must be >= 0"));
                }
                (DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)), *sigma)
            }
            NoiseSpec::Fixed { epsilon } => {
                if epsilon.len() != n {
                    return Err(Error::DimensionMismatch("noise length differs from n".into()));
                }
                let e = DVector::from_column_slice(epsilon);
                let s = e.norm() / (n as f64).sqrt();
                (e, s)
            }
        };
        let y = &signal + &noise_vec;
        let epsilon = &y - &signal;
        Ok(TraceInstance {
            m,
            t_cols,
            operator,
            beta_star,
            y,
            epsilon,
            sigma,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t_cols(&self) -> usize {
        self.t_cols
    }

    pub fn n(&self) -> usize {
        self.operator.nrows()
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// X_i as an m x T matrix.
    pub fn design(&self, i: usize) -> DMatrix<f64> {
        let row: Vec<f64> = self.operator.row(i).iter().cloned().collect();
        DMatrix::from_column_slice(self.m, self.t_cols, &row)
    }

    pub fn beta_star(&self) -> &DMatrix<f64> {
        &self.beta_star
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn epsilon(&self) -> &DVector<f64> {
        &self.epsilon
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// (X beta)_i = Tr(X_i^T beta).
    pub fn apply(&self, beta: &DMatrix<f64>) -> DVector<f64> {
        &*self.operator * DVector::from_column_slice(beta.as_slice())
    }
}

/// n x (m T) operator with i.i.d. N(0, 1) entries, so E ||X b||^2 / n = ||b||_F^2.
pub fn gaussian_operator<R: Rng>(n: usize, m: usize, t_cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, m * t_cols, |_, _| rng.sample(StandardNormal))
}

/// amplitude * U V^T with U, V having r orthonormal columns.
pub fn low_rank_target<R: Rng>(m: usize, t_cols: usize, r: usize, amplitude: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if r > m.min(t_cols) {
        return Err(Error::invalid(format!("rank {r} exceeds min(m, T)")));
    }
    if r == 0 {
        return Ok(DMatrix::zeros(m, t_cols));
    }
    let u = DMatrix::<f64>::from_fn(m, r, |_, _| rng.sample(StandardNormal)).qr().q();
    let v = DMatrix::<f64>::from_fn(t_cols, r, |_, _| rng.sample(StandardNormal)).qr().q();
    Ok(u * v.transpose() * amplitude)
}

#[derive(Debug, Clone)]
pub struct TraceSolveResult {
    pub beta_hat: DMatrix<f64>,
    pub fitted: DVector<f64>,
    /// ||X(B_hat - B*)||
    pub risk: f64,
    /// ||X B - y||^2 + 2 sqrt(n) lambda ||B||_{S1}
    pub objective: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    /// every step decreased the objective (up to rounding)
    pub monotone: bool,
}

/// Proximal gradient with step 1/L, L = 2 ||X||_op^2; stops when the relative
/// objective change drops below `tol`.
pub fn trace_lasso_solve(instance: &TraceInstance, lambda: f64, tol: f64) -> Result<TraceSolveResult> {
    if !(lambda >= 0.0) || !(tol > 0.0) {
        return Err(Error::invalid("trace solve needs lambda >= 0 and tol > 0"));
    }
    let (m, t) = (instance.m, instance.t_cols);
    let a = instance.operator();
    let y = instance.y();
    let weight = 2.0 * (instance.n() as f64).sqrt() * lambda;
    let lip = 2.0 * gram_spectral_norm(a) * 1.001;
    if lip == 0.0 {
        return Err(Error::invalid("trace operator is zero"));
    }
    let objective = |b: &DMatrix<f64>, r: &DVector<f64>| -> Result<f64> {
        Ok(r.norm_squared() + weight * nuclear_norm(b)?)
    };
    let mut beta = DMatrix::zeros(m, t);
    let mut resid = instance.apply(&beta) - y;
    let mut f = objective(&beta, &resid)?;
    let mut trace = vec![f];
    let mut monotone = true;
    for it in 1..=TRACE_MAX_ITERATIONS {
        let grad = a.tr_mul(&resid) * 2.0;
        let step = DVector::from_column_slice(beta.as_slice()) - grad / lip;
        let next = svd_soft_threshold(&DMatrix::from_column_slice(m, t, step.as_slice()), weight / lip)?;
        let r_next = instance.apply(&next) - y;
        let f_next = objective(&next, &r_next)?;
        if f_next > f + 1e-12 * f.abs().max(1.0) {
            monotone = false;
        }
        let change = (f - f_next).abs() / f.abs().max(f64::MIN_POSITIVE);
        beta = next;
        resid = r_next;
        f = f_next;
        trace.push(f);
        if change < tol {
            let fitted = y + &resid;
            let risk = (&fitted - instance.apply(&instance.beta_star)).norm();
            return Ok(TraceSolveResult {
                beta_hat: beta,
                fitted,
                risk,
                objective: f,
                iterations: it,
                objective_trace: trace,
                monotone,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: TRACE_MAX_ITERATIONS,
        residual: f,
        last_iterate: Box::new(DVector::from_column_slice(beta.as_slice())),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankRipReport {
    pub r: usize,
    /// max(1 - min ratio, max ratio - 1) over the probes; a lower bound on delta_r
    pub delta_r: f64,
    pub probes: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// ||B||_{S1} <= sqrt(rank) ||B||_{S2} held on every probe
    pub nuclear_frobenius_ok: bool,
}

/// Ratios ||X B|| / (sqrt(n) ||B||_F) over random matrices of rank <= 2r.
pub fn rank_rip_probe_operator(
    operator: &DMatrix<f64>,
    m: usize,
    t_cols: usize,
    r: usize,
    probes: usize,
    seed: u64,
) -> Result<RankRipReport> {
    if operator.ncols() != m * t_cols {
        return Err(Error::DimensionMismatch("operator width differs from m*T".into()));
    }
    if r == 0 || probes == 0 {
        return Err(Error::invalid("rank probe needs r >= 1 and probes >= 1"));
    }
    let rank = (2 * r).min(m.min(t_cols));
    let rn = (operator.nrows() as f64).sqrt();
    let mut rng = replicate_stream(seed, 0, Purpose::Probe);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ok = true;
    for _ in 0..probes {
        let g1 = DMatrix::<f64>::from_fn(m, rank, |_, _| rng.sample(StandardNormal));
        let g2 = DMatrix::<f64>::from_fn(t_cols, rank, |_, _| rng.sample(StandardNormal));
        let mut b = g1 * g2.transpose();
        let fro = b.norm();
        if fro == 0.0 {
            continue;
        }
        b /= fro;
        let ratio = (operator * DVector::from_column_slice(b.as_slice())).norm() / rn;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if nuclear_norm(&b)? > (rank as f64).sqrt() * (1.0 + 1e-12) {
            ok = false;
        }
    }
    Ok(RankRipReport {
        r,
        delta_r: (1.0 - lo).max(hi - 1.0).max(0.0),
        probes,
        min_ratio: lo,
        max_ratio: hi,
        nuclear_frobenius_ok: ok,
    })
}

pub fn rank_rip_probe(instance: &TraceInstance, r: usize, probes: usize, seed: u64) -> Result<RankRipReport> {
    rank_rip_probe_operator(instance.operator(), instance.m, instance.t_cols, r, probes, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuclearConfig {
    pub m: usize,
    pub t_cols: usize,
    pub n: usize,
    pub r: usize,
    /// absolute lambda values
    pub lambda_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub sigma: f64,
    /// singular values of B*
    pub amplitude: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuclearTable {
    pub lambdas: Vec<f64>,
    /// risks[l][rep]
    pub risks: Vec<Vec<f64>>,
    pub mean_risk: Vec<f64>,
    /// grid value with the smallest mean risk
    pub observed_threshold: f64,
    /// sigma sqrt(m)
    pub theorem_scale: f64,
}

impl NuclearTable {
    /// Fraction of replicates where the risk at grid index `a` exceeds the one at `b`.
    pub fn fraction_exceeding(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (&self.risks[a], &self.risks[b]);
        let wins = ra.iter().zip(rb).filter(|(x, y)| x > y).count();
        wins as f64 / ra.len().max(1) as f64
    }
}

/// One replicate's instance: operator, target and noise on keyed streams.
pub fn nuclear_replicate(cfg: &NuclearConfig, replicate: usize) -> Result<TraceInstance> {
    let rep = replicate as u64;
    let op = gaussian_operator(cfg.n, cfg.m, cfg.t_cols, &mut replicate_stream(cfg.seed, rep, Purpose::Design));
    let target = low_rank_target(cfg.m, cfg.t_cols, cfg.r, cfg.amplitude, &mut replicate_stream(cfg.seed, rep, Purpose::Signal))?;
    TraceInstance::new(
        cfg.m,
        cfg.t_cols,
        Arc::new(op),
        target,
        &NoiseSpec::Gaussian { sigma: cfg.sigma },
        &mut replicate_stream(cfg.seed, rep, Purpose::Noise),
    )
}

/// Risk over a lambda grid on matched replicates.
pub fn nuclear_lower_experiment(cfg: &NuclearConfig) -> Result<NuclearTable> {
    if cfg.lambda_grid.is_empty() || cfg.replicates == 0 {
        return Err(Error::invalid("nuclear experiment needs a grid and replicates"));
    }
    let mut risks = vec![Vec::with_capacity(cfg.replicates); cfg.lambda_grid.len()];
    for rep in 0..cfg.replicates {
        let inst = nuclear_replicate(cfg, rep)?;
        for (l, &lam) in cfg.lambda_grid.iter().enumerate() {
            risks[l].push(trace_lasso_solve(&inst, lam, cfg.tol)?.risk);
        }
    }
    let mean_risk: Vec<f64> = risks.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let best = (0..mean_risk.len())
        .min_by(|&a, &b| mean_risk[a].total_cmp(&mean_risk[b]))
        .expect("non-empty grid");
    Ok(NuclearTable {
        lambdas: cfg.lambda_grid.clone(),
        risks,
        observed_threshold: cfg.lambda_grid[best],
        mean_risk,
        theorem_scale: cfg.sigma * (cfg.m as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, sigma: f64, seed: u64) -> TraceInstance {
        let cfg = NuclearConfig {
            m: 4,
            t_cols: 3,
            n,
            r: 1,
            lambda_grid: vec![],
            replicates: 1,
            seed,
            sigma,
            amplitude: 3.0,
            tol: 1e-12,
        };
        nuclear_replicate(&cfg, 0).unwrap()
    }

    #[test]
    fn observations_match_trace_inner_products() {
        let inst = small(20, 1.0, 1);
        for i in 0..20 {
            let tr = (inst.design(i).transpose() * inst.beta_star()).trace();
            assert!((inst.y()[i] - inst.epsilon()[i] - tr).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_gives_zero() {
        let inst = small(60, 1.0, 2);
        let res = trace_lasso_solve(&inst, 1e6, 1e-12).unwrap();
        assert_eq!(res.beta_hat.amax(), 0.0);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let inst = small(60, 1.0, 3);
        let res = trace_lasso_solve(&inst, 0.0, 1e-15).unwrap();
        let a = inst.operator();
        let ls = a.clone().svd(true, true).solve(inst.y(), 1e-12).unwrap();
        let diff = DVector::from_column_slice(res.beta_hat.as_slice()) - ls;
        assert!(diff.amax() < 1e-6, "{}", diff.amax());
        assert!(res.monotone);
    }

    #[test]
    fn local_minimality() {
        let inst = small(60, 1.0, 4);
        let lam = 0.5;
        let res = trace_lasso_solve(&inst, lam, 1e-14).unwrap();
        assert!(res.monotone);
        let w = 2.0 * 60f64.sqrt() * lam;
        let f = |b: &DMatrix<f64>| (inst.apply(b) - inst.y()).norm_squared() + w * nuclear_norm(b).unwrap();
        let f0 = f(&res.beta_hat);
        let mut rng = replicate_stream(9, 0, Purpose::Probe);
        for _ in 0..1000 {
            let scale: f64 = 10f64.powf(rng.random_range(-3.0..0.0));
            let pert = DMatrix::from_fn(4, 3, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            assert!(f(&(&res.beta_hat + pert)) >= f0 - 1e-7 * f0);
        }
    }

    #[test]
    fn noiseless_zero_target() {
        let op = gaussian_operator(30, 3, 3, &mut replicate_stream(1, 0, Purpose::Design));
        let inst = TraceInstance::new(
            3,
            3,
            Arc::new(op),
            DMatrix::zeros(3, 3),
            &NoiseSpec::Gaussian { sigma: 0.0 },
            &mut replicate_stream(1, 0, Purpose::Noise),
        )
        .unwrap();
        assert_eq!(trace_lasso_solve(&inst, 0.3, 1e-10).unwrap().risk, 0.0);
    }

    #[test]
    fn identity_operator_has_zero_delta() {
        let n = 12;
        let op = DMatrix::<f64>::identity(n, n) * (n as f64).sqrt();
        let rep = rank_rip_probe_operator(&op, 4, 3, 1, 200, 1).unwrap();
        assert!(rep.delta_r < 1e-12);
        assert!(rep.nuclear_frobenius_ok);
    }

    #[test]
    fn full_rank_probe_within_dense_bounds() {
        let (m, t, n) = (3, 2, 10);
        let op = gaussian_operator(n, m, t, &mut replicate_stream(2, 0, Purpose::Design));
        let eig = nalgebra::SymmetricEigen::new(op.tr_mul(&op) / n as f64).eigenvalues;
        let dense = (1.0 - eig.min().sqrt()).max(eig.max().sqrt() - 1.0);
        let rep = rank_rip_probe_operator(&op, m, t, 1, 20_000, 3).unwrap();
        assert!(rep.delta_r <= dense + 1e-12);
        assert!(rep.delta_r >= 0.8 * dense, "{} {}", rep.delta_r, dense);
    }

    #[test]
    fn delta_shrinks_with_n() {
        let mut prev = f64::INFINITY;
        for n in [100, 400, 1600] {
            let op = gaussian_operator(n, 5, 4, &mut replicate_stream(3, 0, Purpose::Design));
            let rep = rank_rip_probe_operator(&op, 5, 4, 1, 300, 4).unwrap();
            assert!(rep.delta_r < prev);
            prev = rep.delta_r;
        }
    }
}
