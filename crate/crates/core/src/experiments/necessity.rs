//! Risk against the compatibility bound along beta* = t u_T.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{compatibility_constant_with, CompatibilityMode, CompatibilityOptions};
use crate::error::{Error, Result};
use crate::model::{sample_instance_with, DesignMatrix, NoiseSpec};
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::{solve_instance, PenaltySpec, SolveOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NecessityConfig {
    pub support: Vec<usize>,
    pub lambda: f64,
    /// t / lambda for each point of the sweep, increasing
    pub amplitudes: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub sigma: f64,
    pub gamma: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NecessityRow {
    pub amplitude: f64,
    pub mean_risk: f64,
    pub std_error: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NecessityTable {
    pub phi: f64,
    /// (1 - gamma) lambda sqrt(|T|) / phi
    pub bound: f64,
    pub rows: Vec<NecessityRow>,
    /// Smallest amplitude from which every larger one satisfies the bound.
    pub threshold: Option<f64>,
}

/// Mean risk at each amplitude with beta* = t u_T, u the compatibility witness.
///
/// All amplitudes reuse the same noise draws, so the rows differ only in the
/// signal.
pub fn compatibility_necessity_experiment(design: Arc<DesignMatrix>, cfg: &NecessityConfig) -> Result<NecessityTable> {
    if cfg.replicates == 0 || cfg.amplitudes.is_empty() {
        return Err(Error::invalid("need at least one replicate and one amplitude"));
    }
    if !(cfg.lambda > 0.0) || !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid("need lambda > 0 and gamma in [0, 1)"));
    }
    if cfg.amplitudes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("amplitudes must be strictly increasing"));
    }
    let opts = CompatibilityOptions {
        mode: CompatibilityMode::Exhaustive,
        ..Default::default()
    };
    let compat = compatibility_constant_with(&design, &cfg.support, 1.0, &opts)?;
    let witness = compat
        .witness_vector()
        .ok_or_else(|| Error::invalid("phi(1, T) = 0: the bound is infinite"))?;
    let mut u_t = DVector::zeros(design.p());
    for &j in &cfg.support {
        u_t[j] = witness[j];
    }
    let bound = (1.0 - cfg.gamma) * cfg.lambda * (cfg.support.len() as f64).sqrt() / compat.phi;
    let penalty = PenaltySpec::l1(cfg.lambda)?;
    let noise = NoiseSpec::Gaussian { sigma: cfg.sigma };

    let mut rows = Vec::with_capacity(cfg.amplitudes.len());
    for &a in &cfg.amplitudes {
        let beta = &u_t * (a * cfg.lambda);
        let risks: Vec<f64> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = replicate_stream(cfg.seed, r as u64, Purpose::Noise);
                let inst = sample_instance_with(Arc::clone(&design), beta.clone(), &noise, &mut rng)?;
                let sol = solve_instance(&inst, &penalty, &SolveOptions::with_tol(cfg.tol))?;
                Ok(sol.risk.expect("risk is filled"))
            })
            .collect::<Result<_>>()?;
        let m = risks.len() as f64;
        let mean = risks.iter().sum::<f64>() / m;
        let var = risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        rows.push(NecessityRow {
            amplitude: a,
            mean_risk: mean,
            std_error: (var / m).sqrt(),
            satisfied: mean >= bound,
        });
    }
    let tail = rows.iter().rev().take_while(|r| r.satisfied).count();
    let threshold = (tail > 0).then(|| rows[rows.len() - tail].amplitude);
    Ok(NecessityTable {
        phi: compat.phi,
        bound,
        rows,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_design, DesignSpec};

    fn cfg(lambda: f64) -> NecessityConfig {
        NecessityConfig {
            support: vec![0, 1, 2],
            lambda,
            amplitudes: vec![0.01, 1.0, 10.0, 100.0],
            replicates: 20,
            seed: 5,
            sigma: 1.0,
            gamma: 0.1,
            tol: 1e-9,
        }
    }

    #[test]
    fn orthogonal_bound_is_plain() {
        let d = Arc::new(gen_design(50, 20, &DesignSpec::Orthogonal, 2).unwrap());
        let lambda = (2.0 * 20f64.ln()).sqrt();
        let t = compatibility_necessity_experiment(d, &cfg(lambda)).unwrap();
        assert!((t.phi - 1.0).abs() < 1e-6);
        assert!((t.bound - 0.9 * lambda * 3f64.sqrt()).abs() < 1e-5);
        assert!(t.rows[2].satisfied && t.rows[3].satisfied);
        assert!(t.threshold.unwrap() <= 10.0);
    }

    #[test]
    fn correlation_raises_the_bound() {
        let d = Arc::new(gen_design(50, 20, &DesignSpec::Equicorrelated { rho: 0.9 }, 2).unwrap());
        let lambda = (2.0 * 20f64.ln()).sqrt();
        let t = compatibility_necessity_experiment(d, &cfg(lambda)).unwrap();
        assert!(t.phi < 1.0);
        assert!(t.bound > 0.9 * lambda * 3f64.sqrt());
    }

    #[test]
    fn rejects_unsorted_amplitudes() {
        let d = Arc::new(gen_design(50, 20, &DesignSpec::Orthogonal, 2).unwrap());
        let mut c = cfg(1.0);
        c.amplitudes = vec![2.0, 1.0];
        assert!(compatibility_necessity_experiment(d, &c).is_err());
    }
}
