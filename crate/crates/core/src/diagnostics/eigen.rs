//! Cone-restricted and sparse eigenvalues of a second-moment matrix.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::compat::SearchMethod;
use super::support_mask;
use crate::error::{Error, Result};
use crate::model::DesignMatrix;
use crate::rng::{replicate_stream, Purpose};

/// Supports enumerated exhaustively up to this count.
pub const EXHAUSTIVE_MAX_SUPPORTS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBracket {
    /// sqrt(lambda_min(Sigma-bar)), valid over any cone
    pub lower: f64,
    /// best value found on the cone
    pub upper: f64,
    pub s_tilde: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaOptions {
    pub random_starts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        ThetaOptions {
            random_starts: 16,
            iterations: 400,
            seed: 0,
        }
    }
}

fn check_square(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != s.ncols() || s.nrows() == 0 {
        return Err(Error::DimensionMismatch("Sigma-bar must be square and non-empty".into()));
    }
    Ok(())
}

fn rayleigh(s: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(s * u)) / u.norm_squared()
}

/// Soft-threshold u off T until ||u_{T^c}||_1 <= sqrt(s_tilde) ||u||; None when u_T = 0.
fn repair(u: &DVector<f64>, mask: &[bool], root: f64) -> Option<DVector<f64>> {
    let feasible = |v: &DVector<f64>| {
        let off: f64 = v.iter().zip(mask).filter(|(_, &m)| !m).map(|(x, _)| x.abs()).sum();
        off <= root * v.norm() * (1.0 + 1e-12)
    };
    if feasible(u) {
        return Some(u.clone());
    }
    let shrink = |tau: f64| {
        DVector::from_iterator(
            u.len(),
            u.iter().zip(mask).map(|(&x, &m)| if m { x } else { x.signum() * (x.abs() - tau).max(0.0) }),
        )
    };
    let on: f64 = u.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x * x).sum();
    if on == 0.0 {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = u.iter().zip(mask).filter(|(_, &m)| !m).fold(0.0f64, |a, (x, _)| a.max(x.abs()));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if feasible(&shrink(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(shrink(hi))
}

/// Bracket for inf ||Sigma^{1/2} u|| / ||u|| over the cone ||u_{T^c}||_1 <= sqrt(s_tilde) ||u||.
pub fn cone_eigenvalue_theta(
    sigma_bar: &DMatrix<f64>,
    support: &[usize],
    s_tilde: f64,
    opts: &ThetaOptions,
) -> Result<ThetaBracket> {
    check_square(sigma_bar)?;
    if !(s_tilde > 0.0) {
        return Err(Error::invalid("s_tilde must be positive"));
    }
    let p = sigma_bar.nrows();
    let mask = support_mask(p, support)?;
    let root = s_tilde.sqrt();
    let eig = SymmetricEigen::new(sigma_bar.clone());
    let order: Vec<usize> = (0..p)
        .sorted_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .collect();
    let lam_min = eig.eigenvalues[order[0]];
    let lam_max = eig.eigenvalues[order[p - 1]].max(f64::MIN_POSITIVE);

    let mut starts: Vec<DVector<f64>> = order
        .iter()
        .take(4)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    for &j in support {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        starts.push(e);
    }
    let mut rng = replicate_stream(opts.seed, 0, Purpose::Probe);
    for _ in 0..opts.random_starts {
        starts.push(DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)));
    }

    let mut best = f64::INFINITY;
    let step = 1.0 / lam_max;
    for start in starts {
        let Some(mut u) = repair(&start, &mask, root) else { continue };
        u.normalize_mut();
        let mut r = rayleigh(sigma_bar, &u);
        best = best.min(r);
        for _ in 0..opts.iterations {
            let g = sigma_bar * &u - &u * r;
            let Some(mut next) = repair(&(&u - g * step), &mask, root) else { break };
            next.normalize_mut();
            let rn = rayleigh(sigma_bar, &next);
            if rn >= r - 1e-15 {
                break;
            }
            u = next;
            r = rn;
            best = best.min(r);
        }
    }
    if !best.is_finite() {
        return Err(Error::invalid("cone has no feasible start (empty support)"));
    }
    Ok(ThetaBracket {
        lower: lam_min.max(0.0).sqrt(),
        upper: best.max(0.0).sqrt(),
        s_tilde,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseEigenvalues {
    pub d: usize,
    /// sqrt of the largest d-sparse eigenvalue found
    pub psi: f64,
    /// sqrt of the smallest d-sparse eigenvalue found
    pub min_sparse: f64,
    pub method: SearchMethod,
    pub supports_examined: usize,
    pub psi_support: Vec<usize>,
    pub min_support: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseMode {
    Auto,
    Exhaustive,
    /// Greedy forward selection plus random supports.
    Heuristic,
    /// Random supports only.
    Sampled,
}

#[derive(Debug, Clone)]
pub struct SparseOptions {
    pub mode: SparseMode,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SparseOptions {
    fn default() -> Self {
        SparseOptions {
            mode: SparseMode::Auto,
            samples: 200,
            seed: 0,
        }
    }
}

fn ln_binomial(p: usize, d: usize) -> f64 {
    (0..d).map(|i| ((p - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn extremes(s: &DMatrix<f64>, idx: &[usize]) -> (f64, f64, DVector<f64>, DVector<f64>) {
    let sub = s.select_rows(idx).select_columns(idx);
    let eig = SymmetricEigen::new(sub);
    let (mut imin, mut imax) = (0, 0);
    for i in 0..idx.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    (
        eig.eigenvalues[imin],
        eig.eigenvalues[imax],
        eig.eigenvectors.column(imin).into_owned(),
        eig.eigenvectors.column(imax).into_owned(),
    )
}

struct Tracker {
    max: f64,
    min: f64,
    max_support: Vec<usize>,
    min_support: Vec<usize>,
    examined: usize,
}

impl Tracker {
    fn offer(&mut self, idx: &[usize], lo: f64, hi: f64) {
        self.examined += 1;
        if hi > self.max {
            self.max = hi;
            self.max_support = idx.to_vec();
        }
        if lo < self.min {
            self.min = lo;
            self.min_support = idx.to_vec();
        }
    }
}

/// Grow a support one index at a time; each candidate is scored by the extreme
/// eigenvalue of the 2x2 compression onto span{v, e_j}.
fn greedy(s: &DMatrix<f64>, d: usize, seed_index: usize, largest: bool, tr: &mut Tracker) {
    let p = s.nrows();
    let mut idx = vec![seed_index];
    let mut used = vec![false; p];
    used[seed_index] = true;
    while idx.len() < d {
        let (lo, hi, vlo, vhi) = extremes(s, &idx);
        let (lam, v) = if largest { (hi, vhi) } else { (lo, vlo) };
        let mut pick = None;
        let mut score_best = if largest { f64::NEG_INFINITY } else { f64::INFINITY };
        for j in 0..p {
            if used[j] {
                continue;
            }
            let b: f64 = idx.iter().zip(v.iter()).map(|(&i, vi)| s[(j, i)] * vi).sum();
            let a = s[(j, j)];
            let mid = 0.5 * (lam + a);
            let rad = (0.25 * (lam - a) * (lam - a) + b * b).sqrt();
            let score = if largest { mid + rad } else { mid - rad };
            if (largest && score > score_best) || (!largest && score < score_best) {
                score_best = score;
                pick = Some(j);
            }
        }
        let j = pick.expect("d <= p leaves a candidate");
        used[j] = true;
        idx.push(j);
    }
    idx.sort_unstable();
    let (lo, hi, _, _) = extremes(s, &idx);
    tr.offer(&idx, lo, hi);
}

/// Extreme eigenvalues of d x d principal submatrices of Sigma-bar (reported as square roots).
pub fn sparse_eigenvalues(sigma_bar: &DMatrix<f64>, d: usize, opts: &SparseOptions) -> Result<SparseEigenvalues> {
    check_square(sigma_bar)?;
    let p = sigma_bar.nrows();
    if d == 0 || d > p {
        return Err(Error::invalid(format!("sparsity d = {d} must lie in 1..={p}")));
    }
    let small = ln_binomial(p, d) <= EXHAUSTIVE_MAX_SUPPORTS.ln();
    let mode = match opts.mode {
        SparseMode::Auto if small => SparseMode::Exhaustive,
        SparseMode::Auto => SparseMode::Heuristic,
        SparseMode::Exhaustive if !small => {
            return Err(Error::invalid(format!(
                "C({p}, {d}) exceeds the exhaustive limit of {EXHAUSTIVE_MAX_SUPPORTS:e} supports"
            )))
        }
        m => m,
    };
    let mut tr = Tracker {
        max: f64::NEG_INFINITY,
        min: f64::INFINITY,
        max_support: Vec::new(),
        min_support: Vec::new(),
        examined: 0,
    };
    match mode {
        SparseMode::Exhaustive => {
            if d == 1 {
                for j in 0..p {
                    let v = sigma_bar[(j, j)];
                    tr.offer(&[j], v, v);
                }
            } else {
                for idx in (0..p).combinations(d) {
                    let (lo, hi, _, _) = extremes(sigma_bar, &idx);
                    tr.offer(&idx, lo, hi);
                }
            }
        }
        _ => {
            if mode == SparseMode::Heuristic {
                let diag: Vec<usize> = (0..p)
                    .sorted_by(|&a, &b| sigma_bar[(a, a)].total_cmp(&sigma_bar[(b, b)]))
                    .collect();
                greedy(sigma_bar, d, diag[p - 1], true, &mut tr);
                greedy(sigma_bar, d, diag[0], false, &mut tr);
            }
            let mut rng = replicate_stream(opts.seed, 0, Purpose::Probe);
            for _ in 0..opts.samples.max(1) {
                let mut idx = sample(&mut rng, p, d).into_vec();
                idx.sort_unstable();
                let (lo, hi, _, _) = extremes(sigma_bar, &idx);
                tr.offer(&idx, lo, hi);
            }
        }
    }
    Ok(SparseEigenvalues {
        d,
        psi: tr.max.max(0.0).sqrt(),
        min_sparse: tr.min.max(0.0).sqrt(),
        method: if mode == SparseMode::Exhaustive {
            SearchMethod::Exhaustive
        } else {
            SearchMethod::Heuristic
        },
        supports_examined: tr.examined,
        psi_support: tr.max_support,
        min_support: tr.min_support,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RipDelta {
    pub order: usize,
    /// 1 - min restricted singular value of X / sqrt(n), clamped at 0;
    /// absent when that singular value is 0
    pub delta: Option<f64>,
    pub min_singular: f64,
    pub method: SearchMethod,
}

/// delta_{2d} from (1/n) X^T X; heuristic runs under-estimate delta.
pub fn rip_delta(design: &DesignMatrix, d: usize, opts: &SparseOptions) -> Result<RipDelta> {
    let order = 2 * d;
    if order > design.p() {
        return Err(Error::invalid(format!("2d = {order} exceeds p = {}", design.p())));
    }
    let se = sparse_eigenvalues(&design.gram(), order, opts)?;
    let delta = (se.min_sparse > 1e-12).then(|| (1.0 - se.min_sparse).max(0.0));
    Ok(RipDelta {
        order,
        delta,
        min_singular: se.min_sparse,
        method: se.method,
    })
}
