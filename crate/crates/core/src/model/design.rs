use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-10;
const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Deterministic,
    GaussianRows,
}

/// Population covariance of a Gaussian-row design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    Equicorrelated { rho: f64 },
    /// Row-major p x p entries.
    Matrix { entries: Vec<Vec<f64>> },
}

impl Covariance {
    pub fn to_matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Identity => Ok(DMatrix::identity(p, p)),
            Covariance::Equicorrelated { rho } => equicorrelated(p, *rho),
            Covariance::Matrix { entries } => {
                if entries.len() != p || entries.iter().any(|r| r.len() != p) {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance must be {p} x {p}"
                    )));
                }
                Ok(DMatrix::from_fn(p, p, |i, j| entries[i][j]))
            }
        }
    }
}

/// How to build the n x p design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DesignSpec {
    /// X^T X = n I; requires n >= p.
    Orthogonal,
    /// Deterministic design with X^T X / n equal to the equicorrelated matrix; requires n >= p.
    Equicorrelated { rho: f64 },
    /// iid rows N(0, covariance).
    GaussianRows { covariance: Covariance },
    /// Matrix loaded from a CSV or LBLB1 file.
    Explicit {
        path: PathBuf,
        #[serde(default)]
        normalize: bool,
    },
}

/// The n x p design together with its population second-moment matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    kind: DesignKind,
    sigma_bar: OnceLock<Arc<DMatrix<f64>>>,
    column_sq_norms: Vec<f64>,
    column_norm_ok: bool,
}

impl DesignMatrix {
    /// Deterministic design; Sigma-bar is (1/n) X^T X, computed on first use.
    pub fn deterministic(x: DMatrix<f64>, normalize: bool) -> Result<Self> {
        let mut x = x;
        check_shape(&x)?;
        if normalize {
            let n = x.nrows() as f64;
            let max = x
                .column_iter()
                .map(|c| c.norm_squared() / n)
                .fold(0.0, f64::max);
            if max > 0.0 {
                x /= max.sqrt();
            }
        }
        Ok(Self::assemble(x, DesignKind::Deterministic, None))
    }

    /// Random-row design with known population covariance.
    pub fn gaussian_rows(x: DMatrix<f64>, covariance: Arc<DMatrix<f64>>) -> Result<Self> {
        check_shape(&x)?;
        if covariance.nrows() != x.ncols() || covariance.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch(
                "covariance does not match the number of columns".into(),
            ));
        }
        validate_psd(&covariance)?;
        Ok(Self::assemble(x, DesignKind::GaussianRows, Some(covariance)))
    }

    fn assemble(x: DMatrix<f64>, kind: DesignKind, sigma: Option<Arc<DMatrix<f64>>>) -> Self {
        let n = x.nrows() as f64;
        let column_sq_norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
        let column_norm_ok = column_sq_norms
            .iter()
            .all(|s| s / n <= 1.0 + NORMALIZATION_TOL);
        let sigma_bar = OnceLock::new();
        if let Some(s) = sigma {
            let _ = sigma_bar.set(s);
        }
        DesignMatrix {
            x,
            kind,
            sigma_bar,
            column_sq_norms,
            column_norm_ok,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    /// Population Sigma-bar: the row covariance for Gaussian rows, (1/n) X^T X otherwise.
    pub fn sigma_bar(&self) -> &DMatrix<f64> {
        self.sigma_bar.get_or_init(|| Arc::new(self.gram()))
    }

    /// Empirical Gram matrix (1/n) X^T X.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = self.x.tr_mul(&self.x);
        g /= self.n() as f64;
        g
    }

    /// Squared column norms ||X e_j||^2.
    pub fn column_sq_norms(&self) -> &[f64] {
        &self.column_sq_norms
    }

    /// max_j ||X e_j||^2 / n.
    pub fn max_column_energy(&self) -> f64 {
        let n = self.n() as f64;
        self.column_sq_norms.iter().fold(0.0, |m, s| m.max(s / n))
    }

    pub fn column_norm_ok(&self) -> bool {
        self.column_norm_ok
    }
}

fn check_shape(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("design must have n >= 1 and p >= 1"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design has non-finite entries"));
    }
    Ok(())
}

pub(crate) fn equicorrelated(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let lower = if p > 1 { -1.0 / (p as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !(rho > lower && rho < 1.0) {
        return Err(Error::invalid(format!(
            "equicorrelation rho = {rho} outside ({lower}, 1)"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }))
}

fn validate_psd(s: &DMatrix<f64>) -> Result<()> {
    let p = s.nrows();
    for i in 0..p {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::invalid(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let min = SymmetricEigen::new(s.clone()).eigenvalues.min();
    if min < PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// Right factor R with R^T R = S, so rows z R are N(0, S) for z ~ N(0, I).
fn sampling_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    match Cholesky::new(s.clone()) {
        Some(ch) => ch.l().transpose(),
        None => {
            let eig = SymmetricEigen::new(s.clone());
            let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
        }
    }
}

pub(crate) fn standard_normal_matrix<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill order fixes the stream-to-entry mapping.
    let data: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(n, p, data)
}

/// n x p matrix with orthonormal columns.
fn orthonormal_columns<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    standard_normal_matrix(n, p, rng).qr().q()
}

/// Draw a design from its spec using the keyed stream `(seed, Design)`.
pub fn gen_design(n: usize, p: usize, spec: &DesignSpec, seed: u64) -> Result<DesignMatrix> {
    let mut rng = rng::replicate_stream(seed, 0, rng::Purpose::Design);
    gen_design_with(n, p, spec, &mut rng)
}

pub fn gen_design_with<R: Rng>(
    n: usize,
    p: usize,
    spec: &DesignSpec,
    rng: &mut R,
) -> Result<DesignMatrix> {
    if n == 0 || p == 0 {
        return Err(Error::invalid("design must have n >= 1 and p >= 1"));
    }
    let sqrt_n = (n as f64).sqrt();
    match spec {
        DesignSpec::Orthogonal => {
            if n < p {
                return Err(Error::invalid(format!(
                    "orthogonal design needs n >= p (n = {n}, p = {p})"
                )));
            }
            let q = orthonormal_columns(n, p, rng);
            DesignMatrix::deterministic(q * sqrt_n, true)
        }
        DesignSpec::Equicorrelated { rho } => {
            if n < p {
                return Err(Error::invalid(format!(
                    "exact-Gram equicorrelated design needs n >= p (n = {n}, p = {p})"
                )));
            }
            let s = equicorrelated(p, *rho)?;
            let r = sampling_factor(&s);
            let q = orthonormal_columns(n, p, rng);
            DesignMatrix::deterministic(q * r * sqrt_n, true)
        }
        DesignSpec::GaussianRows { covariance } => {
            // Identity and equicorrelated covariances are PSD by construction
            // and sample in O(np); only explicit matrices need a factorization.
            let s = covariance.to_matrix(p)?;
            let mut z = standard_normal_matrix(n, p, rng);
            match covariance {
                Covariance::Identity => {}
                Covariance::Equicorrelated { rho } if *rho >= 0.0 => {
                    let shared: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    let (a, b) = ((1.0 - rho).sqrt(), rho.sqrt());
                    for mut col in z.column_iter_mut() {
                        for (v, w) in col.iter_mut().zip(&shared) {
                            *v = a * *v + b * w;
                        }
                    }
                }
                _ => {
                    validate_psd(&s)?;
                    z = z * sampling_factor(&s);
                }
            }
            check_shape(&z)?;
            Ok(DesignMatrix::assemble(z, DesignKind::GaussianRows, Some(Arc::new(s))))
        }
        DesignSpec::Explicit { path, normalize } => {
            let x = super::io::load_matrix(path)?;
            if x.nrows() != n || x.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "file holds a {} x {} matrix, expected {n} x {p}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            DesignMatrix::deterministic(x, *normalize)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_gram_is_identity() {
        let d = gen_design(4, 2, &DesignSpec::Orthogonal, 7).unwrap();
        let g = d.gram();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(d.column_norm_ok());
    }

    #[test]
    fn orthogonal_rejects_wide() {
        assert!(gen_design(3, 5, &DesignSpec::Orthogonal, 1).is_err());
    }

    #[test]
    fn equicorrelated_sigma_bar() {
        let spec = DesignSpec::GaussianRows {
            covariance: Covariance::Equicorrelated { rho: 0.5 },
        };
        let d = gen_design(5, 3, &spec, 3).unwrap();
        let s = d.sigma_bar();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.5 };
                assert_eq!(s[(i, j)], want);
            }
        }
        let det = gen_design(20, 3, &DesignSpec::Equicorrelated { rho: 0.5 }, 3).unwrap();
        let g = det.sigma_bar();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.5 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equicorrelated_range() {
        assert!(equicorrelated(3, -0.5).is_err());
        assert!(equicorrelated(3, 1.0).is_err());
        assert!(equicorrelated(3, -0.49).is_ok());
    }

    #[test]
    fn gaussian_rows_second_moments() {
        let spec = DesignSpec::GaussianRows {
            covariance: Covariance::Identity,
        };
        let d = gen_design(10_000, 4, &spec, 11).unwrap();
        for s in d.column_sq_norms() {
            let m = s / 10_000.0;
            assert!((0.95..=1.05).contains(&m), "{m}");
        }
    }

    #[test]
    fn non_psd_rejected() {
        let spec = DesignSpec::GaussianRows {
            covariance: Covariance::Matrix {
                entries: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            },
        };
        assert!(matches!(
            gen_design(10, 2, &spec, 0),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn singular_psd_accepted() {
        let spec = DesignSpec::GaussianRows {
            covariance: Covariance::Matrix {
                entries: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            },
        };
        let d = gen_design(50, 2, &spec, 0).unwrap();
        let x = d.x();
        for i in 0..50 {
            assert!((x[(i, 0)] - x[(i, 1)]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_sets_max_energy_to_one() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = DesignMatrix::deterministic(x, true).unwrap();
        assert!((d.max_column_energy() - 1.0).abs() < 1e-15);
        assert!(d.column_norm_ok());
    }

    #[test]
    fn same_seed_same_design() {
        let spec = DesignSpec::GaussianRows {
            covariance: Covariance::Equicorrelated { rho: 0.3 },
        };
        let a = gen_design(7, 5, &spec, 42).unwrap();
        let b = gen_design(7, 5, &spec, 42).unwrap();
        assert_eq!(a.x(), b.x());
    }
}
