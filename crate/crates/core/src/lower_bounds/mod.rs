//! Soft-thresholding statistics, Gaussian tail bounds, signed packings and
//! the beta-min experiment.

mod packing;

pub use packing::{
    sudakov_bounds, sudakov_lower, vg_signed_packing, vg_signed_packing_with, DistanceCheck,
    PackingElement, PackingMethod, SignedPacking, SudakovBounds, GREEDY_DRAW_BUDGET,
};

use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{pdf, upper_tail};
use crate::model::{sample_instance_with, DesignMatrix, NoiseSpec};
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::{solve_instance, soft_threshold, PenaltySpec, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftThresholdStats {
    /// ||u_st||
    pub z: f64,
    /// u_j = sign(g_j)(|g_j| - lambda)_+
    pub u_st: DVector<f64>,
    pub sparsity_of_u: usize,
}

pub fn soft_threshold_stats(g: &DVector<f64>, lambda: f64) -> SoftThresholdStats {
    let u_st = g.map(|v| soft_threshold(v, lambda));
    SoftThresholdStats {
        z: u_st.norm(),
        sparsity_of_u: u_st.iter().filter(|v| **v != 0.0).count(),
        u_st,
    }
}

/// E[(|g| - lambda)_+^2] for g ~ N(0, sigma^2).
pub fn st_moment_exact(lambda: f64, sigma: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !(sigma >= 0.0) {
        return Err(Error::invalid("st moment needs lambda >= 0 and sigma >= 0"));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let l = lambda / sigma;
    Ok(sigma * sigma * 2.0 * (-l * pdf(l) + (l * l + 1.0) * upper_tail(l)))
}

/// Series bracket phi(l)(1/l - 1/l^3 + 3/l^5 - 15/l^7) <= Q(l) <= phi(l)/l.
pub fn q_series_bounds(lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("Q series bounds need lambda > 0"));
    }
    let phi = pdf(lambda);
    let i = 1.0 / lambda;
    let i2 = i * i;
    let lower = phi * i * (1.0 - i2 + 3.0 * i2 * i2 - 15.0 * i2 * i2 * i2);
    Ok((lower, phi * i))
}

/// log(1 + (2p/d) phi(mu/sigma) / (mu/sigma)^3).
pub fn omega1_bound(mu: f64, sigma: f64, d: usize, p: usize) -> Result<f64> {
    if !(mu > 0.0) || !(sigma > 0.0) || d == 0 || d > p {
        return Err(Error::invalid("omega1 bound needs mu, sigma > 0 and 1 <= d <= p"));
    }
    let t = mu / sigma;
    Ok((2.0 * p as f64 / d as f64 * pdf(t) / (t * t * t)).ln_1p())
}

/// Monte-Carlo mean of (1/(2 d sigma^2)) sum_{j <= d} (|g|_(j) - mu)_+^2 over
/// `draws` vectors g ~ N(0, sigma^2 I_p), |g|_(j) in decreasing order.
pub fn omega1_statistic_mc(mu: f64, sigma: f64, d: usize, p: usize, draws: usize, seed: u64) -> Result<f64> {
    omega1_bound(mu, sigma, d, p)?;
    let mut rng = replicate_stream(seed, 0, Purpose::Probe);
    let mut total = 0.0;
    let mut buf = vec![0.0f64; p];
    for _ in 0..draws {
        for b in buf.iter_mut() {
            *b = (sigma * rng.sample::<f64, _>(StandardNormal)).abs();
        }
        buf.select_nth_unstable_by(d - 1, |a, b| b.total_cmp(a));
        let s: f64 = buf[..d].iter().map(|v| (v - mu).max(0.0).powi(2)).sum();
        total += s / (2.0 * d as f64 * sigma * sigma);
    }
    Ok(total / draws as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaMinRecord {
    pub replicate: usize,
    pub nu: f64,
    pub risk: f64,
    /// lambda sqrt(k) (1 + nu/2)(1 - sqrt(nu)) <= risk
    pub event: Option<bool>,
    /// ||X(b_hat - b* + (lambda/sqrt n) s)||^2 / risk^2
    pub shift_ratio: Option<f64>,
    /// shift_ratio <= 40 sqrt(nu), reported when nu in (0, 1/2)
    pub shift_within_bound: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaMinReport {
    pub nu_mean: f64,
    pub event_rate: f64,
    pub shift_ratio_mean: f64,
    pub shift_within_bound_rate: f64,
    /// probability stated for the event
    pub nominal_probability: f64,
    pub records: Vec<BetaMinRecord>,
}

#[derive(Debug, Clone)]
pub struct BetaMinConfig {
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// nonzero |beta*_j| = amplitude * lambda / sqrt(n)
    pub amplitude: f64,
    pub replicates: usize,
    pub seed: u64,
    pub tol: f64,
}

/// Lasso on a beta-min signal: random support and signs, all |beta*_j| equal.
pub fn betamin_experiment(design: Arc<DesignMatrix>, cfg: &BetaMinConfig) -> Result<BetaMinReport> {
    let (n, p) = (design.n(), design.p());
    if cfg.k == 0 || cfg.k > p {
        return Err(Error::invalid("beta-min experiment needs 1 <= k <= p"));
    }
    if !(cfg.amplitude >= 1.0) || !(cfg.gamma > 0.0) || !(cfg.sigma >= 0.0) {
        return Err(Error::invalid("beta-min experiment needs amplitude >= 1, gamma > 0, sigma >= 0"));
    }
    let pen = PenaltySpec::l1(cfg.lambda)?;
    let rn = (n as f64).sqrt();
    let kf = cfg.k as f64;
    let mut records = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let mut srng = replicate_stream(cfg.seed, r as u64, Purpose::Signal);
        let mut support = sample(&mut srng, p, cfg.k).into_vec();
        support.sort_unstable();
        let mut beta = DVector::zeros(p);
        for &j in &support {
            let s = if srng.random::<bool>() { 1.0 } else { -1.0 };
            beta[j] = s * cfg.amplitude * cfg.lambda / rn;
        }
        let s_vec = beta.map(|b: f64| if b != 0.0 { b.signum() } else { 0.0 });
        let mut nrng = replicate_stream(cfg.seed, r as u64, Purpose::Noise);
        let inst = sample_instance_with(design.clone(), beta.clone(), &NoiseSpec::Gaussian { sigma: cfg.sigma }, &mut nrng)?;
        let res = solve_instance(&inst, &pen, &SolveOptions::with_tol(cfg.tol))?;
        let risk = res.risk.unwrap_or(0.0);
        let psi_s = (design.x() * &s_vec).norm() / (n as f64 * kf).sqrt();
        let nu = 2.0 * cfg.gamma.max(psi_s - 1.0);
        let (event, shift_ratio, within) = if cfg.lambda == 0.0 {
            (None, None, None)
        } else {
            let event = cfg.lambda * kf.sqrt() * (1.0 + nu / 2.0) * (1.0 - nu.sqrt()) <= risk;
            let shifted = &res.beta_hat - &beta + &s_vec * (cfg.lambda / rn);
            let num = (design.x() * shifted).norm_squared();
            let ratio = if risk > 0.0 { num / (risk * risk) } else { 0.0 };
            let within = (nu > 0.0 && nu < 0.5).then(|| ratio <= 40.0 * nu.sqrt());
            (Some(event), Some(ratio), within)
        };
        records.push(BetaMinRecord {
            replicate: r,
            nu,
            risk,
            event,
            shift_ratio,
            shift_within_bound: within,
        });
    }
    let rate = |f: &dyn Fn(&BetaMinRecord) -> Option<bool>| {
        let v: Vec<bool> = records.iter().filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().filter(|b| **b).count() as f64 / v.len() as f64
        }
    };
    let event_rate = rate(&|r| r.event);
    let shift_within_bound_rate = rate(&|r| r.shift_within_bound);
    let shifts: Vec<f64> = records.iter().filter_map(|r| r.shift_ratio).collect();
    let m = records.len().max(1) as f64;
    Ok(BetaMinReport {
        nu_mean: records.iter().map(|r| r.nu).sum::<f64>() / m,
        event_rate,
        shift_ratio_mean: if shifts.is_empty() { f64::NAN } else { shifts.iter().sum::<f64>() / shifts.len() as f64 },
        shift_within_bound_rate,
        nominal_probability: 1.0 / 3.0,
        records,
    })
}
