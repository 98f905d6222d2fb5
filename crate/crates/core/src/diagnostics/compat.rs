//! Compatibility constant phi(c0, T) by sign-pattern enumeration.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::support_mask;
use crate::error::{Error, Result};
use crate::model::DesignMatrix;
use crate::rng::{replicate_stream, Purpose};
use crate::solvers::composite::{
    gram_spectral_norm, Composite, CompositeFailure, CompositeOptions, SignRule,
};

/// Largest |T| enumerated exhaustively.
pub const EXHAUSTIVE_MAX_SUPPORT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Exhaustive,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompatibilityMode {
    /// Exhaustive when |T| <= 12.
    Auto,
    Exhaustive,
    Heuristic,
}

#[derive(Debug, Clone)]
pub struct CompatibilityOptions {
    pub mode: CompatibilityMode,
    /// Random restarts of the heuristic pattern search.
    pub starts: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CompatibilityOptions {
    fn default() -> Self {
        CompatibilityOptions {
            mode: CompatibilityMode::Auto,
            starts: 8,
            seed: 0,
            tol: 1e-11,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Compatibility {
    pub phi: f64,
    pub c0: f64,
    pub support: Vec<usize>,
    /// Minimizer scaled so that ||u_T||_1 - ||u_{T^c}||_1 / c0 = 1; absent when phi = 0
    /// was detected through an unbounded subproblem.
    pub witness: Option<Vec<f64>>,
    pub method: SearchMethod,
    pub patterns_examined: usize,
}

impl Compatibility {
    pub fn witness_vector(&self) -> Option<DVector<f64>> {
        self.witness.as_ref().map(|w| DVector::from_column_slice(w))
    }
}

struct PatternValue {
    /// min ||Xu|| subject to the pattern's normalization
    min_norm: f64,
    witness: Option<DVector<f64>>,
}

struct Problem<'a> {
    design: &'a DesignMatrix,
    mask: Vec<bool>,
    support: Vec<usize>,
    c0: f64,
    lipschitz: f64,
    opts: &'a CompatibilityOptions,
    cache: HashMap<Vec<bool>, f64>,
    solves: usize,
}

impl<'a> Problem<'a> {
    /// For signs s on T: minimize 1/2 ||Xu||^2 - s^T u_T + ||u_{T^c}||_1 / c0 with
    /// s_j u_j >= 0 on T. The optimal value B gives min ||Xu|| = 1/sqrt(-2B).
    fn solve(&mut self, signs: &[bool], accelerated: bool) -> Result<PatternValue> {
        self.solves += 1;
        let p = self.design.p();
        let mut linear = DVector::zeros(p);
        let mut weights = vec![1.0 / self.c0; p];
        let mut rules = vec![SignRule::Free; p];
        for (i, &j) in self.support.iter().enumerate() {
            let s = if signs[i] { 1.0 } else { -1.0 };
            linear[j] = s;
            weights[j] = 0.0;
            rules[j] = if signs[i] { SignRule::NonNegative } else { SignRule::NonPositive };
        }
        let prob = Composite {
            x: self.design.x(),
            col_sq: self.design.column_sq_norms(),
            y: None,
            linear: Some(&linear),
            weights,
            signs: Some(rules),
        };
        let copts = CompositeOptions {
            tol: self.opts.tol,
            max_sweeps: self.opts.max_sweeps,
            blowup: 1e12,
        };
        let out = if accelerated {
            prob.accelerated_gradient(None, self.lipschitz, &copts)
        } else {
            prob.coordinate_descent(None, &copts)
        };
        match out {
            Ok(sol) => {
                // L(u) = s^T u_T - ||u_{T^c}||_1 / c0 equals ||Xu||^2 at the optimum.
                let u = sol.beta;
                let level = self.level(&u);
                if !(level > 0.0) {
                    return Err(Error::invalid("compatibility cone is degenerate for this design"));
                }
                let xu = sol.residual.norm();
                Ok(PatternValue {
                    min_norm: xu / level,
                    witness: Some(u / level),
                })
            }
            Err(CompositeFailure::Unbounded) => Ok(PatternValue {
                min_norm: 0.0,
                witness: None,
            }),
            Err(CompositeFailure::NonConvergence { sweeps, kkt, beta }) => Err(Error::NonConvergence {
                iterations: sweeps,
                residual: kkt,
                last_iterate: Box::new(beta),
            }),
        }
    }

    fn level(&self, u: &DVector<f64>) -> f64 {
        let mut on = 0.0;
        let mut off = 0.0;
        for j in 0..u.len() {
            if self.mask[j] {
                on += u[j].abs();
            } else {
                off += u[j].abs();
            }
        }
        on - off / self.c0
    }

    /// Patterns s and -s are equivalent; keys fix the first sign to +.
    fn key(signs: &[bool]) -> Vec<bool> {
        if signs[0] {
            signs.to_vec()
        } else {
            signs.iter().map(|b| !b).collect()
        }
    }

    fn cached(&mut self, signs: &[bool], best: &mut Option<(f64, PatternValue)>) -> Result<f64> {
        let key = Self::key(signs);
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let val = self.solve(&key, true)?;
        let m = val.min_norm;
        self.cache.insert(key, m);
        if best.as_ref().is_none_or(|(b, _)| m < *b) {
            *best = Some((m, val));
        }
        Ok(m)
    }
}

pub fn compatibility_constant(design: &DesignMatrix, support: &[usize], c0: f64) -> Result<Compatibility> {
    compatibility_constant_with(design, support, c0, &CompatibilityOptions::default())
}

pub fn compatibility_constant_with(
    design: &DesignMatrix,
    support: &[usize],
    c0: f64,
    opts: &CompatibilityOptions,
) -> Result<Compatibility> {
    if support.is_empty() {
        return Err(Error::invalid("compatibility needs a non-empty support"));
    }
    if !(c0 >= 1.0) || !c0.is_finite() {
        return Err(Error::invalid(format!("c0 must be finite and >= 1, got {c0}")));
    }
    let mask = support_mask(design.p(), support)?;
    let t = support.len();
    let exhaustive = match opts.mode {
        CompatibilityMode::Auto => t <= EXHAUSTIVE_MAX_SUPPORT,
        CompatibilityMode::Exhaustive => {
            if t > EXHAUSTIVE_MAX_SUPPORT {
                return Err(Error::invalid(format!(
                    "exhaustive compatibility limited to |T| <= {EXHAUSTIVE_MAX_SUPPORT}, got {t}"
                )));
            }
            true
        }
        CompatibilityMode::Heuristic => false,
    };
    let mut prob = Problem {
        design,
        mask,
        support: support.to_vec(),
        c0,
        lipschitz: if exhaustive { 0.0 } else { gram_spectral_norm(design.x()) },
        opts,
        cache: HashMap::new(),
        solves: 0,
    };
    let (best_norm, witness) = if exhaustive {
        let mut best: Option<PatternValue> = None;
        for code in 0..(1usize << (t - 1)) {
            let signs: Vec<bool> = (0..t).map(|i| i == 0 || code >> (i - 1) & 1 == 0).collect();
            let val = prob.solve(&signs, false)?;
            if best.as_ref().is_none_or(|b| val.min_norm < b.min_norm) {
                best = Some(val);
            }
        }
        let best = best.expect("at least one pattern");
        (best.min_norm, best.witness)
    } else {
        heuristic_search(&mut prob)?
    };
    let phi = (t as f64).sqrt() / (design.n() as f64).sqrt() * best_norm;
    Ok(Compatibility {
        phi,
        c0,
        support: support.to_vec(),
        witness: witness.map(|w| w.as_slice().to_vec()),
        method: if exhaustive { SearchMethod::Exhaustive } else { SearchMethod::Heuristic },
        patterns_examined: prob.solves,
    })
}

/// Multi-start single-flip descent over sign patterns.
fn heuristic_search(prob: &mut Problem<'_>) -> Result<(f64, Option<DVector<f64>>)> {
    let t = prob.support.len();
    let mut rng = replicate_stream(prob.opts.seed, 0, Purpose::Search);
    let mut best: Option<(f64, PatternValue)> = None;
    for start in 0..prob.opts.starts.max(1) {
        let mut signs: Vec<bool> = if start == 0 {
            vec![true; t]
        } else {
            (0..t).map(|_| rng.random::<bool>()).collect()
        };
        let mut current = prob.cached(&signs, &mut best)?;
        loop {
            let mut improved = false;
            for i in 0..t {
                signs[i] = !signs[i];
                let v = prob.cached(&signs, &mut best)?;
                if v < current - 1e-12 * current.max(1e-300) {
                    current = v;
                    improved = true;
                } else {
                    signs[i] = !signs[i];
                }
            }
            if !improved {
                break;
            }
        }
    }
    let (norm, val) = best.expect("at least one pattern");
    Ok((norm, val.witness))
}
