//! K-fold cross-validation over a fixed lambda grid.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{lasso_solve, PenaltySpec, SolveOptions};

pub const CV_GRID_POINTS: usize = 30;
pub const CV_GRID_LOW: f64 = 0.01;
pub const CV_GRID_HIGH: f64 = 4.0;

/// Log-spaced grid on [0.01, 4] * sigma sqrt(2 log p), increasing.
pub fn cv_grid(sigma: f64, p: usize) -> Vec<f64> {
    let scale = sigma * (2.0 * (p as f64).ln()).sqrt();
    let (lo, hi) = (CV_GRID_LOW.ln(), CV_GRID_HIGH.ln());
    (0..CV_GRID_POINTS)
        .map(|i| scale * (lo + (hi - lo) * i as f64 / (CV_GRID_POINTS - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_hat: f64,
    pub grid: Vec<f64>,
    /// mean squared validation error per grid point
    pub cv_error: Vec<f64>,
}

/// Fold assignment is a shuffled round-robin; each fold's path runs from the
/// largest lambda down with warm starts.
pub fn cross_validate<R: Rng>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    folds: usize,
    tol: f64,
    rng: &mut R,
) -> Result<CvResult> {
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("need 2 <= folds <= n, got {folds}")));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let mut desc: Vec<usize> = (0..grid.len()).collect();
    desc.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut err = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = x.select_rows(&train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let xv = x.select_rows(&test);
        let yv = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
        let mut warm: Option<DVector<f64>> = None;
        for &g in &desc {
            let opts = SolveOptions {
                tol,
                warm_start: warm.take(),
                ..Default::default()
            };
            let res = lasso_solve(&xt, &yt, &PenaltySpec::l1(grid[g])?, &opts)?;
            err[g] += (&yv - &xv * &res.beta_hat).norm_squared();
            warm = Some(res.beta_hat);
        }
    }
    for e in err.iter_mut() {
        *e /= n as f64;
    }
    // ties resolved toward the larger lambda
    let best = desc
        .iter()
        .copied()
        .min_by(|&a, &b| err[a].total_cmp(&err[b]))
        .expect("non-empty grid");
    Ok(CvResult {
        lambda_hat: grid[best],
        grid: grid.to_vec(),
        cv_error: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_design, DesignSpec};
    use crate::rng::{replicate_stream, Purpose};
    use rand_distr::StandardNormal;

    #[test]
    fn grid_shape() {
        let g = cv_grid(2.0, 100);
        assert_eq!(g.len(), 30);
        let s = 2.0 * (2.0 * 100f64.ln()).sqrt();
        assert!((g[0] - 0.01 * s).abs() < 1e-12 && (g[29] - 4.0 * s).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn strong_signal_picks_small_lambda() {
        let d = gen_design(120, 10, &DesignSpec::Orthogonal, 1).unwrap();
        let beta = DVector::from_fn(10, |j, _| if j < 5 { 5.0 } else { 0.0 });
        let mut rng = replicate_stream(1, 0, Purpose::Noise);
        let y = d.x() * &beta + DVector::from_fn(120, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let grid = cv_grid(0.1, 10);
        let res = cross_validate(d.x(), &y, &grid, 5, 1e-9, &mut replicate_stream(1, 0, Purpose::Folds)).unwrap();
        assert!(res.lambda_hat < 0.1 * grid[29]);
        assert!(cross_validate(d.x(), &y, &grid, 1, 1e-9, &mut rng).is_err());
    }
}
