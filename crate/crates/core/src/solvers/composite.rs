//! Solvers for the separable composite quadratic
//!
//! ```text
//! F(b) = 1/2 ||X b - y||^2 - q^T b + sum_j w_j |b_j|,   s_j b_j >= 0 where s_j != 0
//! ```
//!
//! The Lasso, the dual program behind the large-signal-bias certificate and
//! the per-sign-pattern compatibility programs are all instances of `F`.

use nalgebra::{DMatrix, DVector};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Sign restriction on one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SignRule {
    Free,
    NonNegative,
    NonPositive,
}

impl SignRule {
    fn clip(self, v: f64) -> f64 {
        match self {
            SignRule::Free => v,
            SignRule::NonNegative => v.max(0.0),
            SignRule::NonPositive => v.min(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Composite<'a> {
    pub x: &'a DMatrix<f64>,
    pub col_sq: &'a [f64],
    pub y: Option<&'a DVector<f64>>,
    pub linear: Option<&'a DVector<f64>>,
    pub weights: Vec<f64>,
    pub signs: Option<Vec<SignRule>>,
}

#[derive(Debug, Clone)]
pub(crate) struct CompositeOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Iterates with sup-norm above this are treated as divergence.
    pub blowup: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CompositeSolution {
    pub beta: DVector<f64>,
    /// y - X beta (or -X beta when y is absent).
    pub residual: DVector<f64>,
    pub kkt: f64,
    pub sweeps: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum CompositeFailure {
    Unbounded,
    NonConvergence {
        sweeps: usize,
        kkt: f64,
        beta: DVector<f64>,
    },
}

const ACTIVE_PASSES: usize = 9;

impl<'a> Composite<'a> {
    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    fn q(&self, j: usize) -> f64 {
        self.linear.map_or(0.0, |q| q[j])
    }

    fn rule(&self, j: usize) -> SignRule {
        self.signs.as_ref().map_or(SignRule::Free, |s| s[j])
    }

    pub fn residual(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut r = match self.y {
            Some(y) => y.clone(),
            None => DVector::zeros(self.n()),
        };
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                axpy(-*b, self.column(j), r.as_mut_slice());
            }
        }
        r
    }

    pub fn objective_from_residual(&self, beta: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let mut f = 0.5 * r.norm_squared();
        for (j, b) in beta.iter().enumerate() {
            f += self.weights[j] * b.abs() - self.q(j) * b;
        }
        f
    }

    /// Largest violation of the optimality conditions, in gradient units.
    pub fn kkt_from_residual(&self, beta: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.p() {
            let g = dot(self.column(j), r.as_slice()) + self.q(j);
            let w = self.weights[j];
            let b = beta[j];
            let v = if b != 0.0 {
                (g - w * b.signum()).abs()
            } else {
                match self.rule(j) {
                    SignRule::Free => (g.abs() - w).max(0.0),
                    SignRule::NonNegative => (g - w).max(0.0),
                    SignRule::NonPositive => (-g - w).max(0.0),
                }
            };
            worst = worst.max(v);
        }
        worst
    }

    fn zero_column_unbounded(&self, j: usize) -> bool {
        let q = self.q(j);
        let w = self.weights[j];
        match self.rule(j) {
            SignRule::Free => q.abs() > w,
            SignRule::NonNegative => q > w,
            SignRule::NonPositive => -q > w,
        }
    }

    /// One pass of exact coordinate minimization; returns the largest
    /// gradient-scale change `|delta b_j| ||X_j||^2`.
    fn sweep(&self, beta: &mut DVector<f64>, r: &mut DVector<f64>, coords: &[usize]) -> f64 {
        let mut biggest = 0.0f64;
        for &j in coords {
            let a = self.col_sq[j];
            if a == 0.0 {
                continue;
            }
            let col = self.column(j);
            let old = beta[j];
            let b = dot(col, r.as_slice()) + a * old + self.q(j);
            let new = self.rule(j).clip(soft_threshold(b, self.weights[j]) / a);
            if new != old {
                axpy(old - new, col, r.as_mut_slice());
                beta[j] = new;
                biggest = biggest.max((new - old).abs() * a);
            }
        }
        biggest
    }

    /// Exact null-space directions make the objective fall by a constant
    /// amount per sweep; a convergent run has decaying decrements. Without a
    /// linear term the objective is bounded below and slow progress is only
    /// slow convergence.
    fn diverging(&self, trace: &[f64], sweeps: usize) -> bool {
        const WINDOW: usize = 500;
        if self.linear.is_none() || sweeps < 2 * WINDOW || trace.len() < 2 * WINDOW + 1 {
            return false;
        }
        let last = trace.len() - 1;
        let recent = trace[last - WINDOW] - trace[last];
        let earlier = trace[last - 2 * WINDOW] - trace[last - WINDOW];
        let scale = trace[last].abs().max(1.0);
        recent > 1e-9 * scale && earlier > 0.0 && recent >= 0.99 * earlier
    }

    pub fn coordinate_descent(
        &self,
        start: Option<&DVector<f64>>,
        opts: &CompositeOptions,
    ) -> Result<CompositeSolution, CompositeFailure> {
        let p = self.p();
        for j in 0..p {
            if self.col_sq[j] == 0.0 && self.zero_column_unbounded(j) {
                return Err(CompositeFailure::Unbounded);
            }
        }
        let mut beta = match start {
            Some(b) => {
                let mut b = b.clone();
                for j in 0..p {
                    b[j] = if self.col_sq[j] == 0.0 { 0.0 } else { self.rule(j).clip(b[j]) };
                }
                b
            }
            None => DVector::zeros(p),
        };
        let all: Vec<usize> = (0..p).collect();
        let mut r = self.residual(&beta);
        let mut trace = vec![self.objective_from_residual(&beta, &r)];
        let mut sweeps = 0usize;
        let mut kkt;
        loop {
            self.sweep(&mut beta, &mut r, &all);
            sweeps += 1;
            r = self.residual(&beta);
            trace.push(self.objective_from_residual(&beta, &r));
            if beta.amax() > opts.blowup || self.diverging(&trace, sweeps) {
                return Err(CompositeFailure::Unbounded);
            }
            kkt = self.kkt_from_residual(&beta, &r);
            if kkt <= opts.tol {
                break;
            }
            if sweeps >= opts.max_sweeps {
                return Err(CompositeFailure::NonConvergence { sweeps, kkt, beta });
            }
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            for _ in 0..ACTIVE_PASSES {
                if sweeps >= opts.max_sweeps {
                    break;
                }
                let change = self.sweep(&mut beta, &mut r, &active);
                sweeps += 1;
                trace.push(self.objective_from_residual(&beta, &r));
                if change < 0.1 * opts.tol {
                    break;
                }
            }
            if beta.amax() > opts.blowup {
                return Err(CompositeFailure::Unbounded);
            }
        }
        Ok(CompositeSolution {
            beta,
            residual: r,
            kkt,
            sweeps,
            objective_trace: trace,
        })
    }

    fn gradient_step_input(&self, z: &DVector<f64>, inv_l: f64) -> DVector<f64> {
        // z + (1/L) (X^T (y - X z) + q)
        let r = self.residual(z);
        let mut g = self.x.tr_mul(&r);
        if let Some(q) = self.linear {
            g += q;
        }
        z + g * inv_l
    }

    fn prox(&self, v: &DVector<f64>, inv_l: f64) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(j, &vj)| self.rule(j).clip(soft_threshold(vj, self.weights[j] * inv_l))),
        )
    }

    /// Accelerated proximal gradient with adaptive restart and step 1/L.
    pub fn accelerated_gradient(
        &self,
        start: Option<&DVector<f64>>,
        lipschitz: f64,
        opts: &CompositeOptions,
    ) -> Result<CompositeSolution, CompositeFailure> {
        let p = self.p();
        for j in 0..p {
            if self.col_sq[j] == 0.0 && self.zero_column_unbounded(j) {
                return Err(CompositeFailure::Unbounded);
            }
        }
        let inv_l = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
        let mut beta = self.prox(&start.cloned().unwrap_or_else(|| DVector::zeros(p)), 0.0);
        let mut f_beta = self.objective_from_residual(&beta, &self.residual(&beta));
        let mut z = beta.clone();
        let mut t = 1.0f64;
        let mut trace = vec![f_beta];
        let mut kkt = f64::INFINITY;
        let mut iters = 0usize;
        while iters < opts.max_sweeps {
            iters += 1;
            let next = self.prox(&self.gradient_step_input(&z, inv_l), inv_l);
            let r_next = self.residual(&next);
            let f_next = self.objective_from_residual(&next, &r_next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f_next > f_beta && t > 1.0 {
                // restart momentum from the last accepted point
                t = 1.0;
                z = beta.clone();
                continue;
            }
            z = &next + (&next - &beta) * ((t - 1.0) / t_next);
            t = t_next;
            beta = next;
            f_beta = f_next;
            trace.push(f_beta);
            if beta.amax() > opts.blowup || self.diverging(&trace, iters) {
                return Err(CompositeFailure::Unbounded);
            }
            if iters % 10 == 0 || iters == opts.max_sweeps {
                kkt = self.kkt_from_residual(&beta, &r_next);
                if kkt <= opts.tol {
                    return Ok(CompositeSolution {
                        residual: r_next,
                        beta,
                        kkt,
                        sweeps: iters,
                        objective_trace: trace,
                    });
                }
            }
        }
        let r = self.residual(&beta);
        let final_kkt = self.kkt_from_residual(&beta, &r);
        if final_kkt <= opts.tol {
            return Ok(CompositeSolution {
                beta,
                residual: r,
                kkt: final_kkt,
                sweeps: iters,
                objective_trace: trace,
            });
        }
        let _ = kkt;
        Err(CompositeFailure::NonConvergence {
            sweeps: iters,
            kkt: final_kkt,
            beta,
        })
    }
}

/// Largest eigenvalue of X^T X by power iteration.
pub fn gram_spectral_norm(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(p, |j, _| 1.0 + 0.01 * ((j * 7919 % 101) as f64));
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = x.tr_mul(&(x * &v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w / nw;
        if (next - est).abs() <= 1e-12 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (DMatrix<f64>, Vec<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.2, 0.0, 0.3, 1.0, 0.5, 0.0, 0.4, 1.0, 0.5, 0.1, 0.2],
        );
        let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
        let y = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.3]);
        (x, col_sq, y)
    }

    #[test]
    fn cd_and_accelerated_agree() {
        let (x, col_sq, y) = small();
        let prob = Composite {
            x: &x,
            col_sq: &col_sq,
            y: Some(&y),
            linear: None,
            weights: vec![0.3; 3],
            signs: None,
        };
        let opts = CompositeOptions {
            tol: 1e-11,
            max_sweeps: 100_000,
            blowup: 1e12,
        };
        let a = prob.coordinate_descent(None, &opts).unwrap();
        let l = gram_spectral_norm(&x);
        let b = prob.accelerated_gradient(None, l, &opts).unwrap();
        assert!((a.beta - b.beta).amax() < 1e-9);
    }

    #[test]
    fn sign_constraints_respected() {
        let (x, col_sq, y) = small();
        let prob = Composite {
            x: &x,
            col_sq: &col_sq,
            y: Some(&y),
            linear: None,
            weights: vec![0.0; 3],
            signs: Some(vec![SignRule::NonPositive; 3]),
        };
        let opts = CompositeOptions {
            tol: 1e-10,
            max_sweeps: 100_000,
            blowup: 1e12,
        };
        let s = prob.coordinate_descent(None, &opts).unwrap();
        assert!(s.beta.iter().all(|b| *b <= 0.0));
        assert!(s.kkt <= 1e-10);
    }

    #[test]
    fn unbounded_linear_term_detected() {
        // Column 1 duplicates column 0: q = (1, -1) pushes along the null space.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
        let q = DVector::from_vec(vec![1.0, -1.0]);
        let prob = Composite {
            x: &x,
            col_sq: &col_sq,
            y: None,
            linear: Some(&q),
            weights: vec![0.0, 0.5],
            signs: None,
        };
        let opts = CompositeOptions {
            tol: 1e-10,
            max_sweeps: 100_000,
            blowup: 1e9,
        };
        assert!(matches!(
            prob.coordinate_descent(None, &opts),
            Err(CompositeFailure::Unbounded)
        ));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        assert!((gram_spectral_norm(&x) - 9.0).abs() < 1e-9);
    }
}
