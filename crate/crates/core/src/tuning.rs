//! Closed-form tuning levels around the critical value
//! `L0(x) = sigma * sqrt(2 log x - 5 log log x - log(4 pi))`, `x = p/k`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian;

/// The slowly varying correction `f` in `L_f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FChoice {
    Zero,
    /// f(x) = sqrt(log log x)
    SqrtLogLog,
}

impl FChoice {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            FChoice::Zero => 0.0,
            FChoice::SqrtLogLog => x.ln().ln().max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "f", rename_all = "snake_case")]
pub enum TuningKind {
    /// L0(p/k)
    L0,
    /// L_f(p/k)
    Lf(FChoice),
    /// mu_f(p/k): log(8 pi) in place of log(4 pi)
    MuF(FChoice),
    /// sigma sqrt(2 log p)
    Universal,
    /// sigma sqrt(2 log(p/k))
    UniversalPk,
}

impl TuningKind {
    fn correction(self) -> Option<(f64, FChoice)> {
        match self {
            TuningKind::L0 => Some(((4.0 * PI).ln(), FChoice::Zero)),
            TuningKind::Lf(f) => Some(((4.0 * PI).ln(), f)),
            TuningKind::MuF(f) => Some(((8.0 * PI).ln(), f)),
            TuningKind::Universal | TuningKind::UniversalPk => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            TuningKind::L0 => "L0".into(),
            TuningKind::Lf(FChoice::Zero) => "Lf[f=0]".into(),
            TuningKind::Lf(FChoice::SqrtLogLog) => "Lf[f=sqrt(loglog)]".into(),
            TuningKind::MuF(FChoice::Zero) => "mu0".into(),
            TuningKind::MuF(FChoice::SqrtLogLog) => "mu_f[f=sqrt(loglog)]".into(),
            TuningKind::Universal => "universal".into(),
            TuningKind::UniversalPk => "universal_pk".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningLevel {
    pub value: f64,
    pub kind: TuningKind,
    /// p/k
    pub x: f64,
    pub f_at_x: f64,
    pub sigma: f64,
}

impl TuningLevel {
    /// Lower bound sigma^2 log 2 / (2 lambda) on lambda - mu for the matching mu_f.
    pub fn gap_lower_bound(&self) -> f64 {
        self.sigma * self.sigma * LN_2 / (2.0 * self.value)
    }
}

/// 2t - 5 log t - c + 2 f(e^t), the radicand over sigma^2 as a function of t = log x.
fn radicand(t: f64, c: f64, f: FChoice) -> f64 {
    2.0 * t - 5.0 * t.ln() - c + 2.0 * f.eval(t.exp())
}

/// Smallest ratio x from which the radicand stays positive.
///
/// Below `e` the log log term is not usable; the radicand also turns
/// positive on a spurious branch near `x = 1`, which is excluded.
pub fn critical_min_ratio(kind: TuningKind) -> f64 {
    let Some((c, f)) = kind.correction() else {
        return 1.0;
    };
    // t = log x >= 1; locate the minimum of the radicand on a grid, then bisect to its right.
    let (mut t_min, mut r_min) = (1.0, radicand(1.0, c, f));
    let steps = 20_000;
    for i in 0..=steps {
        let t = 1.0 + 49.0 * i as f64 / steps as f64;
        let r = radicand(t, c, f);
        if r < r_min {
            t_min = t;
            r_min = r;
        }
    }
    if r_min > 0.0 {
        return std::f64::consts::E;
    }
    let (mut lo, mut hi) = (t_min, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radicand(mid, c, f) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi.exp()
}

/// Level of the given kind at ratio `x = p/k`; `p` is only used by the universal level.
pub fn tuning_level_at(sigma: f64, x: f64, p: f64, kind: TuningKind) -> Result<TuningLevel> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma must be finite and >= 0"));
    }
    if !(x >= 1.0) || !x.is_finite() {
        return Err(Error::invalid(format!("p/k must be >= 1, got {x}")));
    }
    let level = |value: f64, f_at_x: f64| TuningLevel {
        value,
        kind,
        x,
        f_at_x,
        sigma,
    };
    match kind.correction() {
        None => {
            let arg = match kind {
                TuningKind::Universal => p,
                _ => x,
            };
            if !(arg > 1.0) {
                return Err(Error::BelowCriticalRange {
                    ratio: arg,
                    min_ratio: 1.0,
                });
            }
            Ok(level(sigma * (2.0 * arg.ln()).sqrt(), 0.0))
        }
        Some((c, f)) => {
            let min_ratio = critical_min_ratio(kind);
            if x < min_ratio {
                return Err(Error::BelowCriticalRange { ratio: x, min_ratio });
            }
            let t = x.ln();
            let fx = f.eval(x);
            let band = (4.0 * PI).ln() + 5.0 * t.ln();
            if !(fx >= 0.0 && 2.0 * fx <= band) {
                return Err(Error::FOutOfBand { value: fx, ratio: x });
            }
            let r = 2.0 * t - 5.0 * t.ln() - c + 2.0 * fx;
            if !(r > 0.0) {
                return Err(Error::BelowCriticalRange { ratio: x, min_ratio });
            }
            Ok(level(sigma * r.sqrt(), fx))
        }
    }
}

pub fn tuning_level(sigma: f64, p: usize, k: usize, kind: TuningKind) -> Result<TuningLevel> {
    if k == 0 || k > p {
        return Err(Error::invalid(format!("need 1 <= k <= p, got k = {k}, p = {p}")));
    }
    tuning_level_at(sigma, p as f64 / k as f64, p as f64, kind)
}

/// eta(x) = (sqrt(2 log x) / mu_0(x))^5, with sigma = 1.
pub fn eta(x: f64) -> Result<f64> {
    let mu0 = tuning_level_at(1.0, x, x, TuningKind::MuF(FChoice::Zero))?.value;
    Ok(((2.0 * x.ln()).sqrt() / mu0).powi(5))
}

/// Rem(lambda, mu) and the three terms under its square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderTerm {
    pub rem: f64,
    /// [1, sigma^2/lambda^2, (4p/k) phi(mu/sigma) sigma^5 / (lambda^2 mu^3)]
    pub components: [f64; 3],
}

/// Requires lambda >= mu > 0; the diagonal lambda == mu is allowed.
pub fn remainder(lambda: f64, mu: f64, sigma: f64, p: f64, k: f64) -> Result<RemainderTerm> {
    if !(mu > 0.0) || !(lambda >= mu) {
        return Err(Error::invalid(format!(
            "remainder needs lambda >= mu > 0, got lambda = {lambda}, mu = {mu}"
        )));
    }
    if !(sigma > 0.0) || !(k > 0.0) || !(p >= k) {
        return Err(Error::invalid("remainder needs sigma > 0 and 0 < k <= p"));
    }
    let tail = 4.0 * p / k * gaussian::pdf(mu / sigma) * sigma.powi(5) / (lambda * lambda * mu.powi(3));
    let components = [1.0, sigma * sigma / (lambda * lambda), tail];
    Ok(RemainderTerm {
        rem: components.iter().sum::<f64>().sqrt(),
        components,
    })
}

/// zeta = 1 / log log(p/k), required to lie in (0, 1).
pub fn zeta(x: f64) -> Result<f64> {
    let z = 1.0 / x.ln().ln();
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::invalid(format!(
            "zeta = 1/log log({x}) = {z} is outside (0, 1); need p/k > e^e"
        )));
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBracket {
    pub k: usize,
    pub zeta: f64,
    /// round(k / zeta)
    pub k_plus: usize,
    /// max(1, round(k zeta))
    pub k_minus: usize,
}

pub fn sparsity_bracket(p: usize, k: usize) -> Result<SparsityBracket> {
    if k == 0 || k > p {
        return Err(Error::invalid(format!("need 1 <= k <= p, got k = {k}, p = {p}")));
    }
    let z = zeta(p as f64 / k as f64)?;
    let kf = k as f64;
    Ok(SparsityBracket {
        k,
        zeta: z,
        k_plus: ((kf / z).round() as usize).max(1),
        k_minus: ((kf * z).round() as usize).max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_LL: TuningKind = TuningKind::Lf(FChoice::SqrtLogLog);

    #[test]
    fn below_range_at_e_to_the_e() {
        let x = std::f64::consts::E.powf(std::f64::consts::E);
        // direct radicand: 2e - 5 - log(4 pi)
        let r = 2.0 * std::f64::consts::E - 5.0 - (4.0 * PI).ln();
        assert!((r + 2.095).abs() < 1e-3);
        match tuning_level_at(1.0, x, x, TuningKind::L0) {
            Err(Error::BelowCriticalRange { min_ratio, .. }) => assert!(min_ratio > x),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn l0_at_ten_thousand() {
        let l = tuning_level(1.0, 10_000, 1, TuningKind::L0).unwrap();
        // 2 log 1e4 - 5 log log 1e4 - log 4pi = 4.788...; sqrt = 2.18818...
        assert!((l.value - 2.1882).abs() < 1e-4, "{}", l.value);
    }

    #[test]
    fn universal_at_ten_thousand() {
        let l = tuning_level(1.0, 10_000, 1, TuningKind::Universal).unwrap();
        assert!((l.value - 4.2919).abs() < 1e-4);
    }

    #[test]
    fn min_ratio_is_a_root() {
        let x = critical_min_ratio(TuningKind::L0);
        assert!(radicand(x.ln(), (4.0 * PI).ln(), FChoice::Zero).abs() < 1e-9);
        assert!(tuning_level_at(1.0, x * 1.001, x, TuningKind::L0).is_ok());
        assert!(tuning_level_at(1.0, x * 0.999, x, TuningKind::L0).is_err());
        // spurious branch near x = 1 is rejected
        assert!(tuning_level_at(1.0, 1.5, 1.5, TuningKind::L0).is_err());
    }

    #[test]
    fn l_minus_mu_squared_is_log2() {
        for &x in &[1e3, 1e4, 1e6, 1e9] {
            for f in [FChoice::Zero, FChoice::SqrtLogLog] {
                for sigma in [0.5, 1.0, 3.0] {
                    let l = tuning_level_at(sigma, x, x, TuningKind::Lf(f)).unwrap().value;
                    let m = tuning_level_at(sigma, x, x, TuningKind::MuF(f)).unwrap().value;
                    let d = l * l - m * m - sigma * sigma * LN_2;
                    assert!(d.abs() < 1e-12 * l * l, "{x} {sigma} {d}");
                }
            }
        }
    }

    #[test]
    fn ordering_on_grid() {
        let mut checked = 0;
        for &p in &[5_000usize, 20_000, 100_000, 1_000_000, 10_000_000] {
            for &k in &[1usize, 2, 3, 4, 5, 6, 7, 8, 9, 10] {
                let x = p as f64 / k as f64;
                if x < critical_min_ratio(TuningKind::MuF(FChoice::Zero)) {
                    continue;
                }
                let mu0 = tuning_level(1.0, p, k, TuningKind::MuF(FChoice::Zero)).unwrap().value;
                let l0 = tuning_level(1.0, p, k, TuningKind::L0).unwrap().value;
                let lf = tuning_level(1.0, p, k, SQRT_LL).unwrap().value;
                let upk = tuning_level(1.0, p, k, TuningKind::UniversalPk).unwrap().value;
                let u = tuning_level(1.0, p, k, TuningKind::Universal).unwrap().value;
                assert!(mu0 < l0 && l0 < lf && lf < upk && upk <= u, "p={p} k={k}");
                checked += 1;
            }
        }
        assert_eq!(checked, 50);
    }

    #[test]
    fn gap_bound_holds() {
        for &x in &[500.0, 1e3, 1e4, 1e6, 1e12] {
            for f in [FChoice::Zero, FChoice::SqrtLogLog] {
                let l = tuning_level_at(1.0, x, x, TuningKind::Lf(f)).unwrap();
                let m = tuning_level_at(1.0, x, x, TuningKind::MuF(f)).unwrap();
                assert!(l.value - m.value >= l.gap_lower_bound() - 1e-15);
                assert!((l.value - m.value) / l.value >= 1.0 / (6.0 * x.ln()));
            }
        }
    }

    #[test]
    fn f_band_checked() {
        // sqrt(log log x) always lies in the band where the formula is defined
        assert!(tuning_level_at(1.0, 1e5, 1e5, SQRT_LL).is_ok());
        assert!(tuning_level(1.0, 5, 0, TuningKind::L0).is_err());
    }

    #[test]
    fn remainder_limits_and_direct_formula() {
        let r = remainder(3.0, 2.0, 1.0, 100.0, 1.0).unwrap();
        let phi2 = (-2.0f64).exp() / (2.0 * PI).sqrt();
        let direct = (1.0 + 1.0 / 9.0 + 400.0 * phi2 / (9.0 * 8.0)).sqrt();
        assert!((r.rem - direct).abs() < 1e-14);
        assert!((r.rem * r.rem - r.components.iter().sum::<f64>()).abs() < 1e-14);

        let far = remainder(40.0, 39.0, 1.0, 100.0, 1.0).unwrap();
        assert!((far.rem - (1.0 + 1.0 / 1600.0f64).sqrt()).abs() < 1e-12);
        assert!(remainder(1.0, 2.0, 1.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn remainder_on_the_critical_diagonal() {
        let x = 1e4;
        let l0 = tuning_level_at(1.0, x, x, TuningKind::L0).unwrap().value;
        let r = remainder(l0, l0, 1.0, x, 1.0).unwrap();
        let excess = r.rem * r.rem - 1.0 - 1.0 / (l0 * l0);
        let closed = ((2.0 * x.ln()).sqrt() / l0).powi(5);
        assert!((excess - closed).abs() < 1e-12 * closed, "{excess} {closed}");
        assert!(excess <= eta(x).unwrap());
    }

    #[test]
    fn remainder_bound_for_lf() {
        for &x in &[1e3, 1e5, 1e8] {
            for f in [FChoice::Zero, FChoice::SqrtLogLog] {
                let l = tuning_level_at(1.0, x, x, TuningKind::Lf(f)).unwrap();
                let r = remainder(l.value, l.value, 1.0, x, 1.0).unwrap();
                let bound = 1.0 + 1.0 / (l.value * l.value) + eta(x).unwrap() * (-l.f_at_x).exp();
                assert!(r.rem * r.rem <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn bracket_values() {
        let b = sparsity_bracket(10_000, 1).unwrap();
        assert!((b.zeta - 1.0 / 10_000f64.ln().ln()).abs() < 1e-15);
        assert!((b.zeta - 0.4504).abs() < 1e-4);
        assert_eq!(b.k_minus, 1);
        assert!(b.k_minus <= b.k && b.k <= b.k_plus);
        let huge = std::f64::consts::E.powf(std::f64::consts::E.powi(4));
        assert!((zeta(huge).unwrap() - 0.25).abs() < 1e-12);
        assert!(sparsity_bracket(10, 1).is_err());
    }
}
