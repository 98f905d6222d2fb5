//! Noise barrier, large-signal bias and the structural design constants.

mod compat;
mod eigen;

pub use compat::{
    compatibility_constant, compatibility_constant_with, Compatibility, CompatibilityMode,
    CompatibilityOptions, SearchMethod, EXHAUSTIVE_MAX_SUPPORT,
};
pub use eigen::{
    cone_eigenvalue_theta, rip_delta, sparse_eigenvalues, RipDelta, SparseEigenvalues, SparseMode,
    SparseOptions, ThetaBracket, ThetaOptions,
};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, RegressionInstance};
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::composite::{Composite, CompositeFailure, CompositeOptions};
use crate::solvers::{lasso_solve_with_norms, PenaltySpec, SolveOptions};

pub(crate) fn support_mask(p: usize, support: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; p];
    for &j in support {
        if j >= p {
            return Err(Error::invalid(format!("support index {j} out of range for p = {p}")));
        }
        if mask[j] {
            return Err(Error::invalid(format!("support index {j} repeated")));
        }
        mask[j] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbMethod {
    ZeroSignalLasso,
    RestrictedSupremum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseBarrierValue {
    pub value: f64,
    pub method: NbMethod,
}

/// NB(eps) = ||X b_hat|| for the lasso fitted to y = eps.
pub fn noise_barrier_for(
    design: &DesignMatrix,
    epsilon: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &SolveOptions,
) -> Result<NoiseBarrierValue> {
    let res = lasso_solve_with_norms(design.x(), design.column_sq_norms(), epsilon, penalty, opts)?;
    Ok(NoiseBarrierValue {
        value: res.fitted.norm(),
        method: NbMethod::ZeroSignalLasso,
    })
}

pub fn noise_barrier(
    instance: &RegressionInstance,
    penalty: &PenaltySpec,
    opts: &SolveOptions,
) -> Result<NoiseBarrierValue> {
    noise_barrier_for(instance.design(), instance.epsilon(), penalty, opts)
}

/// Supremum of eps^T X u - h(u) over the candidates rescaled to ||Xu|| = 1, and u = 0.
pub fn restricted_noise_barrier(
    design: &DesignMatrix,
    epsilon: &DVector<f64>,
    penalty: &PenaltySpec,
    candidates: &[DVector<f64>],
) -> Result<NoiseBarrierValue> {
    penalty.require_l1()?;
    let n = design.n();
    let mut best = 0.0f64;
    for u in candidates {
        if u.len() != design.p() {
            return Err(Error::DimensionMismatch("candidate length differs from p".into()));
        }
        let xu = design.x() * u;
        let norm = xu.norm();
        if norm == 0.0 {
            continue;
        }
        let val = (epsilon.dot(&xu) - penalty.l1_value(n, u)) / norm;
        best = best.max(val);
    }
    Ok(NoiseBarrierValue {
        value: best,
        method: NbMethod::RestrictedSupremum,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsbBracket {
    pub lower: f64,
    pub upper: f64,
    /// beta achieving the lower value
    pub witness_beta: Vec<f64>,
    /// w = X b with ||w|| = upper
    pub certificate_w: Vec<f64>,
    /// sup-norm violation of the certificate constraints
    pub certificate_violation: f64,
}

#[derive(Debug, Clone)]
pub struct LsbOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Extra directions u tried as beta = beta* - t u.
    pub directions: Vec<DVector<f64>>,
    pub local_starts: usize,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for LsbOptions {
    fn default() -> Self {
        LsbOptions {
            tol: 1e-10,
            max_sweeps: 100_000,
            directions: Vec::new(),
            local_starts: 2,
            local_steps: 60,
            seed: 0,
        }
    }
}

impl LsbOptions {
    /// Dual certificate and closed-form candidates only.
    pub fn fast() -> Self {
        LsbOptions {
            local_starts: 0,
            ..Default::default()
        }
    }
}

/// (h(beta*) - h(beta)) / ||X (beta* - beta)|| with h = sqrt(n) lambda ||.||_1.
pub fn lsb_ratio(design: &DesignMatrix, beta_star: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> Option<f64> {
    let diff = beta_star - beta;
    let den = (design.x() * &diff).norm();
    if den == 0.0 {
        return None;
    }
    let num: f64 = beta_star.iter().zip(beta.iter()).map(|(a, b)| a.abs() - b.abs()).sum();
    Some((design.n() as f64).sqrt() * lambda * num / den)
}

struct Dual {
    /// minimizer for unit weight c = 1
    b: DVector<f64>,
    /// X b for c = 1
    w: DVector<f64>,
}

/// minimize 1/2 ||Xb||^2 - s_T^T b_T + ||b_{T^c}||_1.
fn unit_dual(design: &DesignMatrix, beta_star: &DVector<f64>, opts: &LsbOptions) -> Result<Dual> {
    let p = design.p();
    let linear = beta_star.map(|b| if b != 0.0 { b.signum() } else { 0.0 });
    let weights: Vec<f64> = beta_star.iter().map(|&b| if b != 0.0 { 0.0 } else { 1.0 }).collect();
    let prob = Composite {
        x: design.x(),
        col_sq: design.column_sq_norms(),
        y: None,
        linear: Some(&linear),
        weights,
        signs: None,
    };
    let min_col = design
        .column_sq_norms()
        .iter()
        .cloned()
        .filter(|&c| c > 0.0)
        .fold(f64::INFINITY, f64::min);
    let copts = CompositeOptions {
        tol: opts.tol,
        max_sweeps: opts.max_sweeps,
        blowup: 1e10 * (p as f64) / min_col.min(1.0),
    };
    match prob.coordinate_descent(None, &copts) {
        Ok(sol) => Ok(Dual {
            w: -sol.residual,
            b: sol.beta,
        }),
        Err(CompositeFailure::Unbounded) => Err(Error::NotMinimalH),
        Err(CompositeFailure::NonConvergence { sweeps, kkt, beta }) => Err(Error::NonConvergence {
            iterations: sweeps,
            residual: kkt,
            last_iterate: Box::new(beta),
        }),
    }
}

/// Largest t keeping sign(beta*_T - t u_T) = sign(beta*_T).
fn step_limit(beta_star: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let mut t = f64::INFINITY;
    for (b, v) in beta_star.iter().zip(u.iter()) {
        if *b != 0.0 && *v != 0.0 && b.signum() == v.signum() {
            t = t.min(b.abs() / v.abs());
        }
    }
    if t.is_finite() {
        t
    } else {
        beta_star.amax() / u.amax().max(f64::MIN_POSITIVE)
    }
}

pub fn lsb_bracket(design: &DesignMatrix, beta_star: &DVector<f64>, penalty: &PenaltySpec) -> Result<LsbBracket> {
    lsb_bracket_with(design, beta_star, penalty, &LsbOptions::default())
}

/// Bracket [lower, upper] for LSB(beta*). The upper value is the minimal-norm
/// certificate, the lower value the best of a family of explicit beta.
pub fn lsb_bracket_with(
    design: &DesignMatrix,
    beta_star: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &LsbOptions,
) -> Result<LsbBracket> {
    penalty.require_l1()?;
    let (n, p) = (design.n(), design.p());
    if beta_star.len() != p {
        return Err(Error::DimensionMismatch(format!("beta* has length {}, p = {p}", beta_star.len())));
    }
    let lambda = penalty.lambda;
    if beta_star.iter().all(|&b| b == 0.0) || lambda == 0.0 {
        return Ok(LsbBracket {
            lower: 0.0,
            upper: 0.0,
            witness_beta: beta_star.as_slice().to_vec(),
            certificate_w: vec![0.0; n],
            certificate_violation: 0.0,
        });
    }
    let c = (n as f64).sqrt() * lambda;
    let dual = unit_dual(design, beta_star, opts)?;
    let w = &dual.w * c;
    let upper = w.norm();
    let xtw = design.x().tr_mul(&w);
    let violation = (0..p)
        .map(|j| {
            if beta_star[j] != 0.0 {
                (xtw[j] - c * beta_star[j].signum()).abs()
            } else {
                (xtw[j].abs() - c).max(0.0)
            }
        })
        .fold(0.0, f64::max);

    let mut lower = f64::NEG_INFINITY;
    let mut witness = DVector::zeros(p);
    let offer = |beta: DVector<f64>, lower: &mut f64, witness: &mut DVector<f64>| {
        if let Some(r) = lsb_ratio(design, beta_star, &beta, lambda) {
            if r > *lower {
                *lower = r;
                *witness = beta;
            }
        }
    };
    for a in [0.0, 0.5] {
        offer(beta_star * a, &mut lower, &mut witness);
    }
    let mut directions = vec![dual.b.clone()];
    directions.extend(opts.directions.iter().cloned());
    for u in &directions {
        if u.len() != p {
            return Err(Error::DimensionMismatch("direction length differs from p".into()));
        }
        if u.amax() == 0.0 {
            continue;
        }
        let t_max = step_limit(beta_star, u);
        for frac in [0.5, 0.1, 1e-3] {
            offer(beta_star - u * (frac * t_max), &mut lower, &mut witness);
        }
    }
    if opts.local_starts > 0 {
        local_ascent(design, beta_star, lambda, opts, &mut lower, &mut witness);
    }
    Ok(LsbBracket {
        lower: lower.max(0.0),
        upper,
        witness_beta: witness.as_slice().to_vec(),
        certificate_w: w.as_slice().to_vec(),
        certificate_violation: violation,
    })
}

/// Random-perturbation hill climbing on the ratio, from beta = 0 and from the current best.
fn local_ascent(
    design: &DesignMatrix,
    beta_star: &DVector<f64>,
    lambda: f64,
    opts: &LsbOptions,
    lower: &mut f64,
    witness: &mut DVector<f64>,
) {
    let p = design.p();
    let mut rng = replicate_stream(opts.seed, 0, Purpose::Search);
    let scale = beta_star.amax();
    for start in 0..opts.local_starts {
        let mut beta = if start % 2 == 0 { witness.clone() } else { DVector::zeros(p) };
        let mut val = lsb_ratio(design, beta_star, &beta, lambda).unwrap_or(f64::NEG_INFINITY);
        let mut step = 0.1 * scale;
        for _ in 0..opts.local_steps {
            let prop = &beta + DVector::from_fn(p, |_, _| step * rng.sample::<f64, _>(StandardNormal));
            match lsb_ratio(design, beta_star, &prop, lambda) {
                Some(v) if v > val => {
                    beta = prop;
                    val = v;
                    step *= 1.5;
                }
                _ => step *= 0.7,
            }
        }
        if val > *lower {
            *lower = val;
            *witness = beta;
        }
    }
}

/// Design constants reported together by `certify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignConstants {
    pub phi: Compatibility,
    pub theta: ThetaBracket,
    pub psi: SparseEigenvalues,
    pub delta: RipDelta,
}

pub fn design_constants(
    design: &DesignMatrix,
    support: &[usize],
    c0: f64,
    s_tilde: f64,
    d: usize,
    seed: u64,
) -> Result<DesignConstants> {
    let copts = CompatibilityOptions {
        seed,
        ..Default::default()
    };
    let sopts = SparseOptions {
        seed,
        ..Default::default()
    };
    let topts = ThetaOptions {
        seed,
        ..Default::default()
    };
    Ok(DesignConstants {
        phi: compatibility_constant_with(design, support, c0, &copts)?,
        theta: cone_eigenvalue_theta(design.sigma_bar(), support, s_tilde, &topts)?,
        psi: sparse_eigenvalues(design.sigma_bar(), d, &sopts)?,
        delta: rip_delta(design, d, &sopts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{correlation_scores, gen_design, sample_instance, Covariance, DesignSpec, NoiseSpec};
    use crate::solvers::{prediction_error, soft_threshold, solve_instance};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn opts() -> SolveOptions {
        SolveOptions::with_tol(1e-10)
    }

    fn noise_instance(spec: DesignSpec, n: usize, p: usize, seed: u64) -> RegressionInstance {
        let d = Arc::new(gen_design(n, p, &spec, seed).unwrap());
        sample_instance(d, DVector::zeros(p), &NoiseSpec::Gaussian { sigma: 1.0 }, seed).unwrap()
    }

    #[test]
    fn nb_vanishes_above_score_threshold() {
        let inst = noise_instance(DesignSpec::Orthogonal, 40, 10, 1);
        let g = correlation_scores(&inst);
        let lam = g.g.amax() * 1.0001;
        let nb = noise_barrier(&inst, &PenaltySpec::l1(lam).unwrap(), &opts()).unwrap();
        assert_eq!(nb.value, 0.0);
    }

    #[test]
    fn nb_at_zero_is_projection() {
        let inst = noise_instance(
            DesignSpec::GaussianRows {
                covariance: Covariance::Identity,
            },
            30,
            8,
            2,
        );
        let nb = noise_barrier(&inst, &PenaltySpec::l1(0.0).unwrap(), &opts()).unwrap();
        let q = inst.design().x().clone().qr().q();
        let proj = &q * q.tr_mul(inst.epsilon());
        assert!((nb.value - proj.norm()).abs() < 1e-8, "{} {}", nb.value, proj.norm());
    }

    #[test]
    fn nb_orthogonal_closed_form() {
        let inst = noise_instance(DesignSpec::Orthogonal, 50, 20, 3);
        let g = correlation_scores(&inst);
        for lam in [0.1, 0.5, 1.0, 1.5] {
            let nb = noise_barrier(&inst, &PenaltySpec::l1(lam).unwrap(), &opts()).unwrap();
            let z = g.g.iter().map(|v| soft_threshold(*v, lam).powi(2)).sum::<f64>().sqrt();
            assert!((nb.value - z).abs() < 1e-9, "{} {}", nb.value, z);
        }
    }

    #[test]
    fn nb_monotone_and_restricted_below() {
        let inst = noise_instance(
            DesignSpec::GaussianRows {
                covariance: Covariance::Equicorrelated { rho: 0.3 },
            },
            40,
            60,
            4,
        );
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let lam = 0.05 + 0.15 * i as f64;
            let pen = PenaltySpec::l1(lam).unwrap();
            let nb = noise_barrier(&inst, &pen, &opts()).unwrap();
            assert!(nb.value <= prev + 1e-9);
            prev = nb.value;
            let mut cands: Vec<DVector<f64>> = (0..60)
                .map(|j| DVector::from_fn(60, |i, _| if i == j { 1.0 } else { 0.0 }))
                .collect();
            cands.extend((0..60).map(|j| DVector::from_fn(60, |i, _| if i == j { -1.0 } else { 0.0 })));
            let r = restricted_noise_barrier(inst.design(), inst.epsilon(), &pen, &cands).unwrap();
            assert!(r.value <= nb.value + 1e-8);
        }
    }

    #[test]
    fn nb_below_risk() {
        for seed in 0..40 {
            let d = Arc::new(
                gen_design(
                    30,
                    50,
                    &DesignSpec::GaussianRows {
                        covariance: Covariance::Identity,
                    },
                    seed,
                )
                .unwrap(),
            );
            let mut beta = DVector::zeros(50);
            beta[seed as usize % 50] = 3.0;
            beta[(seed as usize + 7) % 50] = -2.0;
            let inst = sample_instance(d, beta, &NoiseSpec::Gaussian { sigma: 1.0 }, seed).unwrap();
            let pen = PenaltySpec::l1(1.0).unwrap();
            let res = solve_instance(&inst, &pen, &opts()).unwrap();
            let nb = noise_barrier(&inst, &pen, &opts()).unwrap();
            assert!(nb.value <= res.risk.unwrap() + 1e-7);
        }
    }

    #[test]
    fn lsb_orthogonal_is_lambda_root_k() {
        let d = gen_design(40, 12, &DesignSpec::Orthogonal, 5).unwrap();
        let mut beta = DVector::zeros(12);
        beta[1] = 2.0;
        beta[4] = -0.3;
        beta[9] = 7.0;
        let lam = 0.7;
        let b = lsb_bracket(&d, &beta, &PenaltySpec::l1(lam).unwrap()).unwrap();
        let target = lam * 3f64.sqrt();
        assert!((b.upper - target).abs() < 1e-8, "{}", b.upper);
        assert!((b.lower - target).abs() < 1e-8, "{}", b.lower);
        assert!(b.certificate_violation < 1e-6);
        assert!(b.lower >= lam * 40f64.sqrt() * beta.lp_norm(1) / (d.x() * &beta).norm() - 1e-8);
    }

    #[test]
    fn lsb_scale_invariant_and_linear_in_lambda() {
        let d = gen_design(
            25,
            40,
            &DesignSpec::GaussianRows {
                covariance: Covariance::Identity,
            },
            6,
        )
        .unwrap();
        let mut beta = DVector::zeros(40);
        beta[3] = 1.0;
        beta[17] = -2.5;
        let pen = PenaltySpec::l1(1.0).unwrap();
        let base = lsb_bracket_with(&d, &beta, &pen, &LsbOptions::fast()).unwrap();
        assert!(base.lower <= base.upper + 1e-8);
        for t in [0.1, 10.0] {
            let b = lsb_bracket_with(&d, &(&beta * t), &pen, &LsbOptions::fast()).unwrap();
            assert!((b.upper - base.upper).abs() < 1e-8);
            assert!((b.lower - base.lower).abs() < 1e-8);
        }
        let b3 = lsb_bracket_with(&d, &beta, &PenaltySpec::l1(3.0).unwrap(), &LsbOptions::fast()).unwrap();
        assert!((b3.upper - 3.0 * base.upper).abs() < 1e-9 * b3.upper);
    }

    #[test]
    fn lsb_not_minimal() {
        // duplicated column with opposite signs: X beta* = 0
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.5, 0.5, 1.0, 0.2, 0.2, 0.3]);
        let d = DesignMatrix::deterministic(x, false).unwrap();
        let beta = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        match lsb_bracket(&d, &beta, &PenaltySpec::l1(1.0).unwrap()) {
            Err(Error::NotMinimalH) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lsb_zero_signal() {
        let d = gen_design(10, 4, &DesignSpec::Orthogonal, 1).unwrap();
        let b = lsb_bracket(&d, &DVector::zeros(4), &PenaltySpec::l1(1.0).unwrap()).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn lsb_two_column_compatibility_witness() {
        let d = gen_design(10, 2, &DesignSpec::Equicorrelated { rho: 0.6 }, 2).unwrap();
        let c = compatibility_constant(&d, &[0], 1.0).unwrap();
        let u = c.witness_vector().unwrap();
        let beta = DVector::from_vec(vec![u[0] * 5.0, 0.0]);
        let lam = 0.8;
        let opts = LsbOptions {
            directions: vec![u],
            ..LsbOptions::fast()
        };
        let b = lsb_bracket_with(&d, &beta, &PenaltySpec::l1(lam).unwrap(), &opts).unwrap();
        assert!(b.lower >= lam / c.phi - 1e-6, "{} {}", b.lower, lam / c.phi);
        assert!(b.lower <= b.upper + 1e-8);
    }

    #[test]
    fn noiseless_risk_below_upper() {
        let d = Arc::new(
            gen_design(
                30,
                45,
                &DesignSpec::GaussianRows {
                    covariance: Covariance::Identity,
                },
                8,
            )
            .unwrap(),
        );
        let mut beta = DVector::zeros(45);
        beta[0] = 4.0;
        beta[10] = -4.0;
        beta[20] = 2.0;
        let inst = sample_instance(d.clone(), beta.clone(), &NoiseSpec::Fixed { epsilon: vec![0.0; 30] }, 0).unwrap();
        let pen = PenaltySpec::l1(0.5).unwrap();
        let res = solve_instance(&inst, &pen, &opts()).unwrap();
        let b = lsb_bracket(&d, &beta, &pen).unwrap();
        assert!(prediction_error(d.x(), &res.beta_hat, &beta) <= b.upper + 1e-6);
    }
}
