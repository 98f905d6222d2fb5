use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DesignMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// How the noise vector is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// iid N(0, sigma^2) entries.
    Gaussian { sigma: f64 },
    /// A given vector; sigma^2 is taken as ||eps||^2 / n.
    Fixed { epsilon: Vec<f64> },
}

/// y = X beta* + eps together with everything needed to score an estimator.
#[derive(Debug, Clone)]
pub struct RegressionInstance {
    design: Arc<DesignMatrix>,
    beta_star: DVector<f64>,
    support: Vec<usize>,
    k: usize,
    sigma: f64,
    epsilon: DVector<f64>,
    y: DVector<f64>,
}

impl RegressionInstance {
    /// Assemble from an explicit noise vector.
    ///
    /// The stored noise is the realized `y - X beta*`, so that recomputing the
    /// residual reproduces it bit for bit.
    pub fn new(
        design: Arc<DesignMatrix>,
        beta_star: DVector<f64>,
        sigma: f64,
        noise: DVector<f64>,
    ) -> Result<Self> {
        if beta_star.len() != design.p() {
            return Err(Error::DimensionMismatch(format!(
                "beta* has length {}, design has p = {}",
                beta_star.len(),
                design.p()
            )));
        }
        if noise.len() != design.n() {
            return Err(Error::DimensionMismatch(format!(
                "noise has length {}, design has n = {}",
                noise.len(),
                design.n()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        let signal = design.x() * &beta_star;
        let y = &signal + &noise;
        let epsilon = &y - &signal;
        let support: Vec<usize> = beta_star
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect();
        let k = support.len();
        Ok(RegressionInstance {
            design,
            beta_star,
            support,
            k,
            sigma,
            epsilon,
            y,
        })
    }

    /// Declare a sparsity bound k >= |T|.
    pub fn with_sparsity_bound(mut self, k: usize) -> Result<Self> {
        if k < self.support.len() || k > self.design.p() {
            return Err(Error::invalid(format!(
                "sparsity bound {k} must lie in [{}, {}]",
                self.support.len(),
                self.design.p()
            )));
        }
        self.k = k;
        Ok(self)
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn design_arc(&self) -> &Arc<DesignMatrix> {
        &self.design
    }

    pub fn beta_star(&self) -> &DVector<f64> {
        &self.beta_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn epsilon(&self) -> &DVector<f64> {
        &self.epsilon
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sign_vector(&self) -> SignVector {
        SignVector::new(&self.design, &self.beta_star)
    }
}

/// Draw an instance with noise from the keyed stream `(seed, Noise)`.
pub fn sample_instance(
    design: Arc<DesignMatrix>,
    beta_star: DVector<f64>,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<RegressionInstance> {
    let mut rng = rng::replicate_stream(seed, 0, rng::Purpose::Noise);
    sample_instance_with(design, beta_star, noise, &mut rng)
}

pub fn sample_instance_with<R: Rng>(
    design: Arc<DesignMatrix>,
    beta_star: DVector<f64>,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<RegressionInstance> {
    let n = design.n();
    let (sigma, eps) = match noise {
        NoiseSpec::Gaussian { sigma } => {
            if !(*sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::invalid("noise sigma must be finite and >= 0"));
            }
            let eps = DVector::from_iterator(
                n,
                (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)),
            );
            (*sigma, eps)
        }
        NoiseSpec::Fixed { epsilon } => {
            let eps = DVector::from_column_slice(epsilon);
            let sigma = eps.norm() / (n as f64).sqrt();
            (sigma, eps)
        }
    };
    RegressionInstance::new(design, beta_star, sigma, eps)
}

/// Noise correlations g_j = eps^T X e_j / sqrt(n).
#[derive(Debug, Clone)]
pub struct CorrelationScores {
    pub g: DVector<f64>,
    /// |g| sorted non-increasing.
    pub g_sorted_desc: Vec<f64>,
}

impl CorrelationScores {
    pub fn from_scores(g: DVector<f64>) -> Self {
        let mut sorted: Vec<f64> = g.iter().map(|v| v.abs()).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        CorrelationScores {
            g,
            g_sorted_desc: sorted,
        }
    }
}

pub fn correlation_scores(instance: &RegressionInstance) -> CorrelationScores {
    let design = instance.design();
    let g = design.x().tr_mul(instance.epsilon()) / (design.n() as f64).sqrt();
    CorrelationScores::from_scores(g)
}

/// Sign pattern of beta* and psi = ||X s|| / sqrt(n k).
#[derive(Debug, Clone)]
pub struct SignVector {
    pub s: DVector<f64>,
    pub psi_s: f64,
}

impl SignVector {
    pub fn new(design: &DesignMatrix, beta_star: &DVector<f64>) -> Self {
        let s = beta_star.map(|b| {
            if b > 0.0 {
                1.0
            } else if b < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        let k = s.iter().filter(|v| **v != 0.0).count();
        let psi_s = if k == 0 {
            0.0
        } else {
            (design.x() * &s).norm() / ((design.n() * k) as f64).sqrt()
        };
        SignVector { s, psi_s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_design, DesignSpec};
    use nalgebra::DMatrix;

    fn orth(n: usize, p: usize) -> Arc<DesignMatrix> {
        Arc::new(gen_design(n, p, &DesignSpec::Orthogonal, 5).unwrap())
    }

    #[test]
    fn zero_signal_gives_y_eq_eps() {
        let d = orth(6, 3);
        let inst = sample_instance(
            d,
            DVector::zeros(3),
            &NoiseSpec::Gaussian { sigma: 1.0 },
            9,
        )
        .unwrap();
        assert_eq!(inst.y(), inst.epsilon());
        assert!(inst.support().is_empty());
    }

    #[test]
    fn noiseless_y_is_signal() {
        let d = orth(6, 3);
        let beta = DVector::from_vec(vec![1.0, 0.0, -2.0]);
        let inst = sample_instance(
            d.clone(),
            beta.clone(),
            &NoiseSpec::Fixed {
                epsilon: vec![0.0; 6],
            },
            0,
        )
        .unwrap();
        assert_eq!(inst.y(), &(d.x() * &beta));
        assert_eq!(inst.support(), &[0, 2]);
        assert_eq!(inst.k(), 2);
        assert_eq!(inst.sigma(), 0.0);
    }

    #[test]
    fn reconstruction_is_bit_exact() {
        let spec = DesignSpec::GaussianRows {
            covariance: crate::model::Covariance::Identity,
        };
        let d = Arc::new(gen_design(30, 10, &spec, 1).unwrap());
        let beta = DVector::from_fn(10, |j, _| if j % 3 == 0 { 1.7 * j as f64 } else { 0.0 });
        let inst =
            sample_instance(d.clone(), beta.clone(), &NoiseSpec::Gaussian { sigma: 0.3 }, 4)
                .unwrap();
        let resid = inst.y() - d.x() * &beta;
        assert_eq!(&resid, inst.epsilon());
    }

    #[test]
    fn dimension_mismatch() {
        let d = orth(6, 3);
        let r = sample_instance(d, DVector::zeros(4), &NoiseSpec::Gaussian { sigma: 1.0 }, 0);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn noise_second_moment() {
        let d = Arc::new(DesignMatrix::deterministic(DMatrix::identity(100_000, 1), false).unwrap());
        let inst = sample_instance(
            d,
            DVector::zeros(1),
            &NoiseSpec::Gaussian { sigma: 2.0 },
            3,
        )
        .unwrap();
        let m = inst.epsilon().norm_squared() / 100_000.0;
        assert!((m - 4.0).abs() < 0.08, "{m}");
    }

    #[test]
    fn scores_for_aligned_noise() {
        let d = orth(8, 3);
        let scale = 0.5;
        let eps: Vec<f64> = d.x().column(0).iter().map(|v| v * scale).collect();
        let inst = sample_instance(
            d.clone(),
            DVector::zeros(3),
            &NoiseSpec::Fixed { epsilon: eps },
            0,
        )
        .unwrap();
        let sc = correlation_scores(&inst);
        let want = d.column_sq_norms()[0] * scale / 8f64.sqrt();
        assert!((sc.g[0] - want).abs() < 1e-12);
        assert!(sc.g[1].abs() < 1e-12 && sc.g[2].abs() < 1e-12);
        assert_eq!(sc.g_sorted_desc[0], sc.g.amax());
    }

    #[test]
    fn zero_noise_zero_scores() {
        let d = orth(5, 2);
        let inst = sample_instance(
            d,
            DVector::from_vec(vec![1.0, 1.0]),
            &NoiseSpec::Fixed {
                epsilon: vec![0.0; 5],
            },
            0,
        )
        .unwrap();
        assert_eq!(correlation_scores(&inst).g.amax(), 0.0);
    }

    #[test]
    fn sign_vector_matches_support() {
        let d = orth(6, 4);
        let beta = DVector::from_vec(vec![0.0, -3.0, 2.0, 0.0]);
        let sv = SignVector::new(&d, &beta);
        assert_eq!(sv.s.as_slice(), &[0.0, -1.0, 1.0, 0.0]);
        // orthogonal: ||X s||^2 = n * 2
        assert!((sv.psi_s - 1.0).abs() < 1e-12);
    }
}
