//! Signed Varshamov-Gilbert packings: weight-d sign vectors with pairwise
//! Hamming distance > d and bounded design energy.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DesignMatrix;
use crate::rng::{replicate_stream, Purpose};

/// Draw budget of the greedy construction.
pub const GREEDY_DRAW_BUDGET: usize = 1_000_000;
/// Targets above this many elements use the algebraic code.
pub const GREEDY_MAX_TARGET: u64 = 10_000;
/// Code-based packings are truncated to max(target, this).
const MIN_CODE_SIZE: u64 = 4096;
const SAMPLED_PAIRS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackingMethod {
    Auto,
    Greedy,
    Algebraic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceCheck {
    /// every pair compared directly
    Exhaustive,
    /// polynomial-code agreement bound, plus a sample of pairs compared directly
    Algebraic { max_overlap: usize, sampled_pairs: usize },
}

#[derive(Debug, Clone)]
enum Members {
    Explicit(Vec<Vec<usize>>),
    /// Codeword i: coefficients are the base-q digits of i; block r holds
    /// position r * block + poly(r mod q).
    Code { q: usize, m: usize, block: usize },
}

/// One element of the signed packing: sorted support with its signs.
#[derive(Debug, Clone, PartialEq)]
pub struct PackingElement {
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
}

impl PackingElement {
    pub fn to_dense(&self, p: usize) -> DVector<f64> {
        let mut v = DVector::zeros(p);
        for (&j, &s) in self.support.iter().zip(&self.signs) {
            v[j] = s as f64;
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct SignedPacking {
    p: usize,
    d: usize,
    members: Members,
    cardinality: u64,
    gram: Arc<DMatrix<f64>>,
    /// log |Omega|
    pub log_card: f64,
    /// (d/2) log(p / (5d))
    pub required_log_card: f64,
    /// max_w ||Xw||^2 / n
    pub max_energy: f64,
    /// d max_j ||X e_j||^2 / n
    pub energy_bound: f64,
    pub distance_check: DistanceCheck,
    /// smallest pairwise Hamming distance among the pairs compared
    pub min_distance_seen: usize,
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|i| i * i <= n).all(|i| n % i != 0)
}

/// Signs chosen one at a time so that the conditional expectation of
/// ||Xv||^2 / n over the remaining Rademacher signs never increases.
/// Returns the signs and the resulting energy.
fn derandomized_signs(gram: &DMatrix<f64>, support: &[usize]) -> (Vec<i8>, f64) {
    let mut signs = Vec::with_capacity(support.len());
    let mut energy: f64 = support.iter().map(|&j| gram[(j, j)]).sum();
    for (i, &j) in support.iter().enumerate() {
        let col = gram.column(j);
        let c: f64 = support[..i].iter().zip(&signs).map(|(&l, &s)| s as f64 * col[l]).sum();
        let s: i8 = if c > 0.0 { -1 } else { 1 };
        signs.push(s);
        energy -= 2.0 * c.abs();
    }
    (signs, energy)
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

impl SignedPacking {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cardinality(&self) -> u64 {
        self.cardinality
    }

    /// Support of element i (an element of the unsigned packing).
    pub fn support(&self, i: u64) -> Vec<usize> {
        match &self.members {
            Members::Explicit(s) => s[i as usize].clone(),
            Members::Code { q, m, block } => {
                let mut coeffs = Vec::with_capacity(*m);
                let mut rest = i;
                for _ in 0..*m {
                    coeffs.push((rest % *q as u64) as usize);
                    rest /= *q as u64;
                }
                (0..self.d)
                    .map(|r| {
                        let x = r % q;
                        let v = coeffs.iter().rev().fold(0usize, |acc, &c| (acc * x + c) % q);
                        r * block + v
                    })
                    .collect()
            }
        }
    }

    pub fn element(&self, i: u64) -> PackingElement {
        let support = self.support(i);
        let (signs, _) = derandomized_signs(&self.gram, &support);
        PackingElement { support, signs }
    }

    /// ||Xw||^2 / n of element i.
    pub fn energy(&self, i: u64) -> f64 {
        derandomized_signs(&self.gram, &self.support(i)).1
    }

    /// max energy over all elements, without per-element allocation.
    fn scan_max_energy(&self) -> f64 {
        let d = self.d;
        let mut support = vec![0usize; d];
        let mut signs = vec![0.0f64; d];
        let mut best = f64::NEG_INFINITY;
        let energy_of = |support: &[usize], signs: &mut [f64]| {
            // same summation order as derandomized_signs
            let mut e: f64 = support.iter().map(|&j| self.gram[(j, j)]).sum();
            for i in 0..d {
                let col = self.gram.column(support[i]);
                let col = col.as_slice();
                let c: f64 = support[..i].iter().zip(&signs[..i]).map(|(&l, &s)| s * col[l]).sum();
                signs[i] = if c > 0.0 { -1.0 } else { 1.0 };
                e -= 2.0 * c.abs();
            }
            e
        };
        match &self.members {
            Members::Explicit(sups) => {
                for s in sups {
                    best = best.max(energy_of(s, &mut signs));
                }
            }
            Members::Code { q, m, block } => {
                let (q, m, block) = (*q, *m, *block);
                // powers[r][e] = (r mod q)^e mod q
                let powers: Vec<Vec<usize>> = (0..d)
                    .map(|r| {
                        let x = r % q;
                        let mut v = vec![1 % q; m];
                        for e in 1..m {
                            v[e] = v[e - 1] * x % q;
                        }
                        v
                    })
                    .collect();
                let mut coeffs = vec![0usize; m];
                for _ in 0..self.cardinality {
                    for r in 0..d {
                        let v: usize = coeffs.iter().zip(&powers[r]).map(|(c, p)| c * p).sum::<usize>() % q;
                        support[r] = r * block + v;
                    }
                    best = best.max(energy_of(&support, &mut signs));
                    for c in coeffs.iter_mut() {
                        *c += 1;
                        if *c < q {
                            break;
                        }
                        *c = 0;
                    }
                }
            }
        }
        best
    }

    pub fn iter(&self) -> impl Iterator<Item = PackingElement> + '_ {
        (0..self.cardinality).map(move |i| self.element(i))
    }

    /// Check the three packing invariants. Energy is rescanned over every
    /// element; distance is checked on all pairs for explicit packings and on
    /// a sample (backed by the code's agreement bound) otherwise.
    pub fn verify(&self) -> std::result::Result<(), String> {
        if self.log_card < self.required_log_card {
            return Err(format!("log|Omega| = {} < {}", self.log_card, self.required_log_card));
        }
        match &self.members {
            Members::Explicit(sups) => {
                for (i, s) in sups.iter().enumerate() {
                    if s.len() != self.d || s.windows(2).any(|w| w[0] >= w[1]) || s[self.d - 1] >= self.p {
                        return Err(format!("element {i} does not have {} distinct nonzeros", self.d));
                    }
                }
            }
            Members::Code { q, block, .. } => {
                // one position per block, symbols below q <= block size
                if q > block || self.d * block > self.p {
                    return Err("code parameters do not fit the blocks".into());
                }
            }
        }
        let e = self.scan_max_energy();
        if e > self.energy_bound * (1.0 + 1e-12) {
            return Err(format!("energy {e} exceeds {}", self.energy_bound));
        }
        if self.min_distance_seen <= self.d {
            return Err(format!("pair at Hamming distance {}", self.min_distance_seen));
        }
        Ok(())
    }
}

fn target_count(required: f64) -> u64 {
    let mut c = required.exp().ceil().max(1.0) as u64;
    while (c as f64).ln() < required {
        c += 1;
    }
    c
}

/// Signed packing of weight-d vectors for the given design.
pub fn vg_signed_packing(design: &DesignMatrix, d: usize, seed: u64) -> Result<SignedPacking> {
    vg_signed_packing_with(design, d, seed, PackingMethod::Auto)
}

pub fn vg_signed_packing_with(
    design: &DesignMatrix,
    d: usize,
    seed: u64,
    method: PackingMethod,
) -> Result<SignedPacking> {
    let p = design.p();
    if d == 0 || 5 * d > p {
        return Err(Error::invalid(format!("packing needs 1 <= d <= p/5, got d = {d}, p = {p}")));
    }
    let required = 0.5 * d as f64 * (p as f64 / (5.0 * d as f64)).ln();
    let target = target_count(required);
    let gram = Arc::new(design.gram());
    let energy_bound = d as f64 * design.max_column_energy();
    let greedy = match method {
        PackingMethod::Auto => target <= GREEDY_MAX_TARGET,
        PackingMethod::Greedy => true,
        PackingMethod::Algebraic => false,
    };
    let (members, cardinality, check, min_dist) = if greedy {
        let supports = greedy_supports(p, d, target, seed)?;
        let mut min_dist = usize::MAX;
        for a in 0..supports.len() {
            for b in 0..a {
                min_dist = min_dist.min(2 * (d - overlap(&supports[a], &supports[b])));
            }
        }
        let n = supports.len() as u64;
        (Members::Explicit(supports), n, DistanceCheck::Exhaustive, min_dist)
    } else {
        let (q, m, max_overlap) = code_parameters(p, d);
        let full = (q as f64).powi(m as i32);
        let card = if full >= 1.8e19 { u64::MAX } else { (q as u64).pow(m as u32) };
        if card < target {
            return Err(Error::BudgetExhausted {
                achieved: card as usize,
                required: target as usize,
            });
        }
        let cardinality = card.min(target.max(MIN_CODE_SIZE));
        let members = Members::Code { q, m, block: p / d };
        (members, cardinality, DistanceCheck::Algebraic { max_overlap, sampled_pairs: 0 }, usize::MAX)
    };
    let mut packing = SignedPacking {
        p,
        d,
        members,
        cardinality,
        gram,
        log_card: (cardinality as f64).ln(),
        required_log_card: required,
        max_energy: 0.0,
        energy_bound,
        distance_check: check,
        min_distance_seen: min_dist,
    };
    if let DistanceCheck::Algebraic { max_overlap, .. } = packing.distance_check {
        let mut rng = replicate_stream(seed, 0, Purpose::Packing);
        let pairs = SAMPLED_PAIRS.min((cardinality * (cardinality - 1) / 2) as usize);
        let mut min_dist = 2 * (d - max_overlap);
        for _ in 0..pairs {
            let a = rng.random_range(0..cardinality);
            let mut b = rng.random_range(0..cardinality - 1);
            if b >= a {
                b += 1;
            }
            min_dist = min_dist.min(2 * (d - overlap(&packing.support(a), &packing.support(b))));
        }
        packing.min_distance_seen = min_dist;
        packing.distance_check = DistanceCheck::Algebraic {
            max_overlap,
            sampled_pairs: pairs,
        };
    }
    packing.max_energy = packing.scan_max_energy();
    Ok(packing)
}

/// Randomized greedy: keep a random weight-d support when it overlaps every
/// kept support in fewer than d/2 positions.
fn greedy_supports(p: usize, d: usize, target: u64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = replicate_stream(seed, 0, Purpose::Packing);
    let mut kept: Vec<Vec<usize>> = Vec::new();
    for _ in 0..GREEDY_DRAW_BUDGET {
        if kept.len() as u64 >= target {
            return Ok(kept);
        }
        let mut s = sample(&mut rng, p, d).into_vec();
        s.sort_unstable();
        if kept.iter().all(|k| 2 * overlap(k, &s) < d) {
            kept.push(s);
        }
    }
    if kept.len() as u64 >= target {
        return Ok(kept);
    }
    Err(Error::BudgetExhausted {
        achieved: kept.len(),
        required: target as usize,
    })
}

/// Largest prime q <= p/d and the largest polynomial length m whose
/// worst-case agreement (with repeated evaluation points) stays below d/2.
fn code_parameters(p: usize, d: usize) -> (usize, usize, usize) {
    let block = p / d;
    let q = (2..=block).rev().find(|&v| is_prime(v)).unwrap_or(1).max(2);
    // multiplicity of evaluation point x is the number of r < d with r mod q == x
    let mut mult: Vec<usize> = (0..q).map(|x| (d + q - 1 - x) / q).collect();
    mult.sort_unstable_by(|a, b| b.cmp(a));
    let mut m = 1;
    let mut agreement = 0;
    while m < q {
        let next = agreement + mult[m - 1];
        if 2 * next >= d {
            break;
        }
        agreement = next;
        m += 1;
    }
    (q, m, agreement)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SudakovBounds {
    /// (sigma/2)(1 - delta) sqrt(log |Omega|)
    pub first: f64,
    /// (sigma/4)(1 - delta) sqrt(d log(p/(5d)))
    pub second: f64,
    /// sigma (1 - delta) / 8 sqrt(log(p/(5d)))
    pub lambda_threshold: f64,
}

pub fn sudakov_bounds(log_card: f64, d: usize, p: usize, sigma: f64, delta_2d: f64) -> Result<SudakovBounds> {
    if !(0.0..=1.0).contains(&delta_2d) {
        return Err(Error::invalid(format!("delta_2d = {delta_2d} outside [0, 1]")));
    }
    if d == 0 || 5 * d > p {
        return Err(Error::invalid("sudakov bounds need 1 <= d <= p/5"));
    }
    let ratio = (p as f64 / (5.0 * d as f64)).ln();
    let f = sigma * (1.0 - delta_2d);
    Ok(SudakovBounds {
        first: 0.5 * f * log_card.max(0.0).sqrt(),
        second: 0.25 * f * (d as f64 * ratio).sqrt(),
        lambda_threshold: f / 8.0 * ratio.sqrt(),
    })
}

pub fn sudakov_lower(packing: &SignedPacking, sigma: f64, delta_2d: f64) -> Result<SudakovBounds> {
    sudakov_bounds(packing.log_card, packing.d, packing.p, sigma, delta_2d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_design, Covariance, DesignSpec};

    fn gaussian(n: usize, p: usize) -> DesignMatrix {
        let x = gen_design(
            n,
            p,
            &DesignSpec::GaussianRows {
                covariance: Covariance::Identity,
            },
            7,
        )
        .unwrap();
        DesignMatrix::deterministic(x.x().clone(), true).unwrap()
    }

    #[test]
    fn weight_one_orthogonal() {
        let d = gen_design(5, 5, &DesignSpec::Orthogonal, 1).unwrap();
        let pk = vg_signed_packing(&d, 1, 3).unwrap();
        assert!(pk.cardinality() >= 1);
        for e in pk.iter() {
            assert_eq!(e.support.len(), 1);
            assert_eq!(e.signs, vec![1]);
        }
        assert!((pk.max_energy - 1.0).abs() < 1e-12);
        pk.verify().unwrap();
    }

    #[test]
    fn greedy_hundred_ten() {
        let d = gaussian(60, 100);
        let pk = vg_signed_packing(&d, 10, 1).unwrap();
        assert!(pk.log_card >= 5.0 * 2f64.ln());
        assert_eq!(pk.distance_check, DistanceCheck::Exhaustive);
        let els: Vec<_> = pk.iter().collect();
        for a in 0..els.len() {
            for b in 0..a {
                let dist = (els[a].to_dense(100) - els[b].to_dense(100)).norm_squared();
                assert!(dist > 10.0);
            }
        }
        pk.verify().unwrap();
    }

    #[test]
    fn algebraic_code_parameters() {
        assert_eq!(code_parameters(500, 25), (19, 7, 12));
        assert_eq!(code_parameters(100, 10), (7, 3, 4));
    }

    #[test]
    fn algebraic_small_exhaustive_pairs() {
        let d = gaussian(40, 100);
        let pk = vg_signed_packing_with(&d, 10, 2, PackingMethod::Algebraic).unwrap();
        assert_eq!(pk.cardinality(), 343);
        let sups: Vec<_> = (0..pk.cardinality()).map(|i| pk.support(i)).collect();
        for a in 0..sups.len() {
            for b in 0..a {
                assert!(overlap(&sups[a], &sups[b]) <= 4);
            }
        }
        pk.verify().unwrap();
    }

    #[test]
    fn derandomization_never_exceeds_expectation() {
        let d = gaussian(30, 50);
        let g = d.gram();
        let sup = vec![0, 3, 7, 11, 20, 33, 41];
        let (signs, e) = derandomized_signs(&g, &sup);
        let mut v = DVector::zeros(50);
        for (&j, &s) in sup.iter().zip(&signs) {
            v[j] = s as f64;
        }
        let direct = (d.x() * &v).norm_squared() / 30.0;
        assert!((direct - e).abs() < 1e-10);
        let diag: f64 = sup.iter().map(|&j| g[(j, j)]).sum();
        assert!(e <= diag);
    }

    #[test]
    fn rejects_large_d() {
        let d = gaussian(20, 20);
        assert!(vg_signed_packing(&d, 5, 0).is_err());
    }

    #[test]
    fn sudakov_arithmetic() {
        let b = sudakov_bounds(16f64.ln(), 1, 5, 1.0, 0.0).unwrap();
        assert!((b.first - 0.5 * 16f64.ln().sqrt()).abs() < 1e-15);
        assert!((b.first - 0.832_554_611_157_697_8).abs() < 1e-12);
        let z = sudakov_bounds(16f64.ln(), 1, 5, 1.0, 1.0).unwrap();
        assert_eq!((z.first, z.second, z.lambda_threshold), (0.0, 0.0, 0.0));
        let t = sudakov_bounds(3.0, 4, 100, 2.0, 0.25).unwrap();
        assert!((t.lambda_threshold - 2.0 * 0.75 / 8.0 * 5f64.ln().sqrt()).abs() < 1e-15);
    }
}
