//! q-Pochhammer symbols and basic hypergeometric series.
//!
//! - finite and infinite Pochhammer products with a rigorous tail bound
//! - ratios of infinite products with symbolic cancellation of shared factors
//! - the `rφs` series by term recurrence
//! - `₂φ₁` outside the unit disk, through the two-series connection formula in `1/z`
//!   and through a Heine transform that yields `(z;q)_∞·₂φ₁`, an entire function of `z`

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Factors `1 - t` with `|1 - t|` below this are treated as exact zeros.
const ZERO_FACTOR_TOL: f64 = 1e3 * f64::EPSILON;

/// Deformation parameter together with the numeric policy used by every series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBase {
    q: f64,
    eps: f64,
    max_terms: usize,
}

impl QBase {
    pub const DEFAULT_EPS: f64 = 1e-15;
    pub const DEFAULT_MAX_TERMS: usize = 100_000;

    pub fn new(q: f64) -> Result<Self> {
        Self::with_policy(q, Self::DEFAULT_EPS, Self::DEFAULT_MAX_TERMS)
    }

    pub fn with_policy(q: f64, eps: f64, max_terms: usize) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidBase(format!("q = {q} is not in (0, 1)")));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidBase(format!("eps = {eps} must be positive")));
        }
        if max_terms == 0 {
            return Err(Error::InvalidBase("max_terms must be at least 1".into()));
        }
        Ok(Self { q, eps, max_terms })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    /// `q^e` for an exponent `e ∈ {1, 2}`.
    pub fn power(&self, e: u8) -> f64 {
        self.q.powi(e as i32)
    }
}

/// `(a; base)_n`.
pub fn qpoch_finite(a: C64, base: C64, n: usize) -> C64 {
    let mut p = ONE;
    let mut t = a;
    for _ in 0..n {
        p *= ONE - t;
        t *= base;
    }
    p
}

/// `(a; base)_∞` for real `0 < base < 1`.
///
/// Stops once the remaining product is provably within `eps` of one:
/// `|∏_{m≥M}(1 - a base^m) - 1| ≤ exp(|a base^M| / (1 - base)) - 1`.
pub fn qpoch_infinite(a: C64, base: f64, qb: &QBase) -> Result<C64> {
    let (value, zeros) = qpoch_infinite_split(a, base, qb)?;
    Ok(if zeros > 0 { ZERO } else { value })
}

/// Infinite product with exactly vanishing factors removed, and their count.
fn qpoch_infinite_split(a: C64, base: f64, qb: &QBase) -> Result<(C64, usize)> {
    check_real_base(base)?;
    let mut p = ONE;
    let mut t = a;
    let mut zeros = 0;
    for _ in 0..qb.max_terms {
        if (t.norm() / (1.0 - base)).exp_m1() <= qb.eps {
            return Ok((p, zeros));
        }
        let f = ONE - t;
        if f.norm() <= ZERO_FACTOR_TOL {
            zeros += 1;
        } else {
            p *= f;
        }
        t *= base;
    }
    Err(Error::TruncationFailure(format!(
        "({a}; {base})_inf needs more than {} factors",
        qb.max_terms
    )))
}

fn check_real_base(base: f64) -> Result<()> {
    if base > 0.0 && base < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidBase(format!("base {base} is not in (0, 1)")))
    }
}

/// Building block `(a q^{e·shift}; q^e)_∞` of a Pochhammer ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PochFactor {
    pub a: C64,
    pub base_exp: u8,
    pub shift: i32,
}

impl PochFactor {
    pub fn new(a: C64, base_exp: u8) -> Self {
        Self {
            a,
            base_exp,
            shift: 0,
        }
    }

    pub fn shifted(a: C64, base_exp: u8, shift: i32) -> Self {
        Self { a, base_exp, shift }
    }

    pub fn argument(&self, q: f64) -> C64 {
        self.a * q.powi(self.base_exp as i32 * self.shift)
    }
}

fn args_match(x: C64, y: C64, eps: f64) -> bool {
    (x - y).norm() <= eps * x.norm().max(1.0)
}

/// Ratio of infinite Pochhammer products over a common base.
///
/// Identical factors are cancelled before anything is evaluated, so removable
/// singularities such as `(1/λ;q²)_∞ / (1/λ;q²)_∞` at `λ = 1` come out finite.
/// Remaining exact zeros are counted: more in the numerator gives `0`, more in
/// the denominator gives [`Error::DivergentRatio`].
pub fn qpoch_ratio(numer: &[PochFactor], denom: &[PochFactor], qb: &QBase) -> Result<C64> {
    let exp = numer
        .iter()
        .chain(denom)
        .map(|f| f.base_exp)
        .next()
        .unwrap_or(1);
    if let Some(f) = numer.iter().chain(denom).find(|f| f.base_exp != exp) {
        return Err(Error::InvalidBase(format!(
            "mixed bases q^{exp} and q^{} in one ratio",
            f.base_exp
        )));
    }
    if !(1..=2).contains(&exp) {
        return Err(Error::InvalidBase(format!(
            "base exponent {exp} not in {{1, 2}}"
        )));
    }
    let q = qb.q;
    let base = qb.power(exp);

    let mut num: Vec<C64> = numer.iter().map(|f| f.argument(q)).collect();
    let mut den = Vec::with_capacity(denom.len());
    for d in denom.iter().map(|f| f.argument(q)) {
        match num.iter().position(|&n| args_match(d, n, qb.eps)) {
            Some(i) => {
                num.remove(i);
            }
            None => den.push(d),
        }
    }

    let mut value = ONE;
    let mut num_zeros = 0;
    for &a in &num {
        let (v, z) = qpoch_infinite_split(a, base, qb)?;
        value *= v;
        num_zeros += z;
    }
    let mut den_zeros = 0;
    let mut first_zero = None;
    for &a in &den {
        let (v, z) = qpoch_infinite_split(a, base, qb)?;
        value /= v;
        if z > 0 && first_zero.is_none() {
            first_zero = Some(a);
        }
        den_zeros += z;
    }
    match num_zeros.cmp(&den_zeros) {
        std::cmp::Ordering::Greater => Ok(ZERO),
        std::cmp::Ordering::Less => Err(Error::DivergentRatio {
            argument: first_zero.unwrap_or(ZERO),
            direction: value,
        }),
        std::cmp::Ordering::Equal if num_zeros > 0 => Err(Error::IndeterminateRatio),
        std::cmp::Ordering::Equal => Ok(value),
    }
}

/// Parameters of `rφs(upper; lower; base, arg)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSeriesSpec {
    upper: Vec<C64>,
    lower: Vec<C64>,
    base: C64,
    arg: C64,
}

impl HyperSeriesSpec {
    pub fn new(upper: Vec<C64>, lower: Vec<C64>, base: C64, arg: C64) -> Result<Self> {
        if !(base.norm() > 0.0 && base.norm() < 1.0) {
            return Err(Error::InvalidBase(format!(
                "|base| = {} is not in (0, 1)",
                base.norm()
            )));
        }
        for &l in &lower {
            if hits_inverse_power(l, base).is_some() {
                return Err(Error::PoleInDenominator(l));
            }
        }
        Ok(Self {
            upper,
            lower,
            base,
            arg,
        })
    }

    pub fn upper(&self) -> &[C64] {
        &self.upper
    }

    pub fn lower(&self) -> &[C64] {
        &self.lower
    }

    pub fn base(&self) -> C64 {
        self.base
    }

    pub fn arg(&self) -> C64 {
        self.arg
    }

    /// Index of the last nonzero term when some upper parameter is `base^{-m}`.
    pub fn terminating_degree(&self) -> Option<usize> {
        self.upper
            .iter()
            .filter_map(|&u| hits_inverse_power(u, self.base))
            .min()
    }
}

/// `Some(m)` when `a · base^m = 1` for an integer `m ≥ 0`.
fn hits_inverse_power(a: C64, base: C64) -> Option<usize> {
    if a.norm() == 0.0 {
        return None;
    }
    let m = (a.norm().ln() / -base.norm().ln()).round();
    if !(0.0..=1e6).contains(&m) {
        return None;
    }
    let m = m as usize;
    let t = a * base.powu(m as u32);
    ((ONE - t).norm() <= ZERO_FACTOR_TOL * 64.0).then_some(m)
}

/// Sums `rφs` by the term recurrence, including the factor
/// `[(-1)^k base^{k(k-1)/2}]^{1+s-r}` when `r ≤ s`.
pub fn phi_series(spec: &HyperSeriesSpec, qb: &QBase) -> Result<C64> {
    let r = spec.upper.len() as i32;
    let s = spec.lower.len() as i32;
    let extra = 1 + s - r;
    let z = spec.arg;
    let b = spec.base;
    let terminate = spec.terminating_degree();

    if terminate.is_none() {
        if extra < 0 {
            return Err(Error::Nonconvergent(format!(
                "{r}phi{s} with more than s+1 numerator parameters only converges when terminating"
            )));
        }
        if extra == 0 && z.norm() >= 1.0 {
            return Err(Error::Nonconvergent(format!(
                "|z| = {} >= 1 for a nonterminating series",
                z.norm()
            )));
        }
    }
    if z == ZERO {
        return Ok(ONE);
    }

    let mut sum = ONE;
    let mut term = ONE;
    let mut bk = ONE; // base^k
    let mut peak = 1.0f64;
    for k in 0..qb.max_terms {
        if terminate == Some(k) {
            return Ok(sum);
        }
        let mut ratio = z / (ONE - bk * b);
        for &u in &spec.upper {
            ratio *= ONE - u * bk;
        }
        for &l in &spec.lower {
            ratio /= ONE - l * bk;
        }
        if extra > 0 {
            ratio *= (-bk).powi(extra);
        }
        term *= ratio;
        sum += term;
        peak = peak.max(term.norm());
        bk *= b;

        if terminate.is_none() {
            if let Some(rho) = ratio_bound(spec, bk.norm(), extra) {
                let tail = term.norm() * rho / (1.0 - rho);
                if tail <= qb.eps * sum.norm().max(peak * qb.eps) {
                    return Ok(sum);
                }
            }
        }
    }
    Err(Error::TruncationFailure(format!(
        "series needs more than {} terms",
        qb.max_terms
    )))
}

/// Upper bound, valid for every later index, on `|t_{k+1}/t_k|` given `|base|^k`.
fn ratio_bound(spec: &HyperSeriesSpec, bk: f64, extra: i32) -> Option<f64> {
    let mut rho = spec.arg.norm() / (1.0 - bk * spec.base.norm());
    for &u in &spec.upper {
        rho *= 1.0 + u.norm() * bk;
    }
    for &l in &spec.lower {
        let d = 1.0 - l.norm() * bk;
        if d <= 0.0 {
            return None;
        }
        rho /= d;
    }
    if extra > 0 {
        rho *= bk.powi(extra);
    }
    (rho < 1.0).then_some(rho)
}

fn phi21(a: C64, b: C64, c: C64, base: f64, z: C64, qb: &QBase) -> Result<C64> {
    let spec = HyperSeriesSpec::new(vec![a, b], vec![c], C64::from(base), z)?;
    phi_series(&spec, qb)
}

/// `Some(n)` when `ratio = base^n` for an integer `n` (either sign).
fn integer_power_of(ratio: C64, base: f64) -> Option<i64> {
    if ratio.norm() == 0.0 {
        return None;
    }
    let n = (ratio.norm().ln() / base.ln()).round();
    if n.abs() > 1e6 {
        return None;
    }
    let target = base.powi(n as i32);
    ((ratio - target).norm() <= 1e-10 * target).then_some(n as i64)
}

/// Analytic continuation of `₂φ₁(a, b; c; base, z)` through the connection formula
///
/// ```text
/// ₂φ₁(a,b;c;q,z) = (b, c/a; q)_∞ (az, q/(az); q)_∞ / [(c, b/a; q)_∞ (z, q/z; q)_∞]
///                    · ₂φ₁(a, aq/c; aq/b; q, cq/(abz))  +  (a ↔ b).
/// ```
///
/// Terminating series are summed directly for any `z`.
pub fn phi21_continued(a: C64, b: C64, c: C64, base: f64, z: C64, qb: &QBase) -> Result<C64> {
    check_real_base(base)?;
    if hits_inverse_power(c, C64::from(base)).is_some() {
        return Err(Error::PoleInDenominator(c));
    }
    if z == ZERO {
        return Ok(ONE);
    }
    let bz = C64::from(base);
    if hits_inverse_power(a, bz).is_some() || hits_inverse_power(b, bz).is_some() {
        return phi21(a, b, c, base, z, qb);
    }
    if let Some(n) = integer_power_of(a / b, base) {
        return Err(Error::ContinuationSingular(format!(
            "a/b = base^{n} (logarithmic case)"
        )));
    }
    if z.im == 0.0 && z.re > 0.0 {
        if let Some(n) = integer_power_of(z, base) {
            return Err(Error::ContinuationSingular(format!(
                "z = base^{n} is a zero of (z, q/z; q)_inf"
            )));
        }
    }
    let w = c * base / (a * b * z);
    if w.norm() >= 1.0 {
        return Err(Error::Nonconvergent(format!(
            "connection series argument |cq/(abz)| = {} >= 1",
            w.norm()
        )));
    }

    let p = |x: C64| qpoch_infinite(x, base, qb);
    let common = p(z)? * p(bz / z)? * p(c)?;
    let term = |a: C64, b: C64| -> Result<C64> {
        let pre = p(b)? * p(c / a)? * p(a * z)? * p(bz / (a * z))? / (common * p(b / a)?);
        if pre == ZERO {
            return Ok(ZERO);
        }
        Ok(pre * phi21(a, a * base / c, a * base / b, base, w, qb)?)
    };
    Ok(term(a, b)? + term(b, a)?)
}

/// `(z; base)_∞ · ₂φ₁(a, b; c; base, z)`, an entire function of `z`, from Heine's
/// transformation
///
/// ```text
/// (z;q)_∞ ₂φ₁(a,b;c;q,z) = (b;q)_∞/(c;q)_∞ · Σ_k (c/b;q)_k (z;q)_k/(q;q)_k · b^k · (azq^k;q)_∞.
/// ```
///
/// The sum converges geometrically with ratio `min(|a|, |b|)`, which must be `< 1`.
/// Unlike [`phi21_continued`] it stays finite where `₂φ₁` has its poles
/// `z = base^{-m}` and where `a/b ∈ base^ℤ`.
pub fn phi21_regularized(a: C64, b: C64, c: C64, base: f64, z: C64, qb: &QBase) -> Result<C64> {
    check_real_base(base)?;
    if hits_inverse_power(c, C64::from(base)).is_some() {
        return Err(Error::PoleInDenominator(c));
    }
    let (a, b) = if a.norm() < b.norm() { (b, a) } else { (a, b) };
    if b.norm() >= 1.0 {
        return Err(Error::Nonconvergent(format!(
            "Heine form needs min(|a|, |b|) < 1, got {}",
            b.norm()
        )));
    }

    let pre = qpoch_infinite(b, base, qb)? / qpoch_infinite(c, base, qb)?;
    // coef_k = b^k (c/b;q)_k (z;q)_k / (q;q)_k, written without dividing by b.
    let mut coef = ONE;
    let mut tail = qpoch_infinite(a * z, base, qb)?;
    let mut qk = 1.0;
    let mut sum = ZERO;
    let mut peak = 0.0f64;
    for _ in 0..qb.max_terms {
        let t = coef * tail;
        sum += t;
        peak = peak.max(t.norm());

        coef *= (b - c * qk) * (ONE - z * qk) / (1.0 - qk * base);
        let f = ONE - a * z * qk;
        tail = if f.norm() < 1e-8 {
            qpoch_infinite(a * z * qk * base, base, qb)?
        } else {
            tail / f
        };
        qk *= base;

        let rho = (b.norm() + c.norm() * qk) * (1.0 + z.norm() * qk)
            / (1.0 - qk * base)
            / (1.0 - (a * z).norm() * qk).max(f64::MIN_POSITIVE);
        if rho < 1.0 && (a * z).norm() * qk < 0.5 {
            let next = (coef * tail).norm();
            if next / (1.0 - rho) <= qb.eps * sum.norm().max(peak * qb.eps) {
                return Ok(pre * sum);
            }
        }
    }
    Err(Error::TruncationFailure(format!(
        "Heine sum needs more than {} terms",
        qb.max_terms
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qb(q: f64) -> QBase {
        QBase::new(q).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rel(x: C64, y: C64) -> f64 {
        (x - y).norm() / y.norm().max(1e-300)
    }

    #[test]
    fn finite_products() {
        assert_eq!(qpoch_finite(c(0.3, 0.0), c(0.5, 0.0), 0), ONE);
        assert!((qpoch_finite(c(0.5, 0.0), c(0.5, 0.0), 2) - c(0.375, 0.0)).norm() < 1e-16);
        assert_eq!(qpoch_finite(ONE, c(0.5, 0.0), 3), ZERO);
    }

    #[test]
    fn infinite_product_of_half() {
        // brute force with 200 factors, Kahan-free since all factors are near 1
        let mut p = 1.0f64;
        for m in 0..200 {
            p *= 1.0 - 0.5 * 0.5f64.powi(m);
        }
        let v = qpoch_infinite(c(0.5, 0.0), 0.5, &qb(0.5)).unwrap();
        assert!((v.re - p).abs() < 1e-15 && v.im == 0.0);
        assert_eq!(qpoch_infinite(ZERO, 0.5, &qb(0.5)).unwrap(), ONE);
    }

    #[test]
    fn infinite_product_rejects_bad_base() {
        assert!(matches!(
            qpoch_infinite(ONE, 1.0, &qb(0.5)),
            Err(Error::InvalidBase(_))
        ));
    }

    #[test]
    fn truncation_failure_is_reported() {
        let tight = QBase::with_policy(0.5, 1e-15, 3).unwrap();
        assert!(matches!(
            qpoch_infinite(c(0.9, 0.0), 0.99, &tight),
            Err(Error::TruncationFailure(_))
        ));
    }

    #[test]
    fn ratio_examples() {
        let b = qb(0.5);
        let lam = ONE;
        let inv = PochFactor::new(ONE / lam, 2);
        assert_eq!(qpoch_ratio(&[inv], &[inv], &b).unwrap(), ONE);
        let minus_one = PochFactor::new(-ONE, 2);
        assert_eq!(qpoch_ratio(&[inv], &[minus_one], &b).unwrap(), ZERO);

        let b = qb(0.5);
        let f2 = PochFactor::new(c(0.2, 0.0), 2);
        let f3 = PochFactor::new(c(0.3, 0.0), 2);
        let direct = qpoch_infinite(c(0.2, 0.0), 0.25, &b).unwrap();
        assert_eq!(qpoch_ratio(&[f2, f3], &[f3], &b).unwrap(), direct);
    }

    #[test]
    fn ratio_divergence_carries_direction() {
        let b = qb(0.5);
        // (q^{-2}; q^2)_inf has the factor 1 - q^{-2} q^2 = 0
        let pole = PochFactor::new(c(4.0, 0.0), 2);
        let other = PochFactor::new(c(0.1, 0.0), 2);
        match qpoch_ratio(&[other], &[pole], &b) {
            Err(Error::DivergentRatio { direction, .. }) => assert!(direction.norm() > 0.0),
            r => panic!("expected divergence, got {r:?}"),
        }
        assert_eq!(qpoch_ratio(&[pole], &[other], &b).unwrap(), ZERO);
        assert!(matches!(
            qpoch_ratio(&[pole, other], &[PochFactor::new(c(16.0, 0.0), 2)], &b),
            Err(Error::IndeterminateRatio)
        ));
    }

    #[test]
    fn ratio_rejects_mixed_bases() {
        let b = qb(0.5);
        assert!(qpoch_ratio(&[PochFactor::new(ONE, 1)], &[PochFactor::new(ONE, 2)], &b).is_err());
    }

    #[test]
    fn shifted_factor_argument() {
        let f = PochFactor::shifted(c(3.0, 0.0), 2, 1);
        assert!((f.argument(0.5) - c(0.75, 0.0)).norm() < 1e-16);
    }

    #[test]
    fn series_trivial_cases() {
        let b = qb(0.5);
        let s = HyperSeriesSpec::new(
            vec![c(0.3, 0.0), c(0.2, 0.1)],
            vec![c(0.4, 0.0)],
            c(0.5, 0.0),
            ZERO,
        )
        .unwrap();
        assert_eq!(phi_series(&s, &b).unwrap(), ONE);

        // upper = [base^{-1}, b0] stops after two terms
        let (bb, cc, z) = (c(0.3, 0.2), c(-0.4, 0.0), c(2.5, 0.0));
        let s = HyperSeriesSpec::new(vec![c(2.0, 0.0), bb], vec![cc], c(0.5, 0.0), z).unwrap();
        let expect = ONE + (1.0 - 2.0) * (ONE - bb) / ((ONE - cc) * (1.0 - 0.5)) * z;
        assert!(rel(phi_series(&s, &b).unwrap(), expect) < 1e-15);
    }

    #[test]
    fn q_binomial_theorem() {
        let b = qb(0.5);
        let (a, z) = (c(0.3, 0.0), c(0.4, 0.0));
        let s = HyperSeriesSpec::new(vec![a], vec![], c(0.5, 0.0), z).unwrap();
        let lhs = phi_series(&s, &b).unwrap();
        let rhs = qpoch_infinite(a * z, 0.5, &b).unwrap() / qpoch_infinite(z, 0.5, &b).unwrap();
        assert!(rel(lhs, rhs) < 1e-14);
    }

    #[test]
    fn euler_series_uses_extra_factor() {
        // 0φ0(-; -; q, z) = (z; q)_inf
        let b = qb(0.6);
        let z = c(0.7, -1.3);
        let s = HyperSeriesSpec::new(vec![], vec![], c(0.6, 0.0), z).unwrap();
        assert!(
            rel(
                phi_series(&s, &b).unwrap(),
                qpoch_infinite(z, 0.6, &b).unwrap()
            ) < 1e-13
        );
    }

    #[test]
    fn series_rejects_outside_disk_and_poles() {
        let b = qb(0.5);
        let s = HyperSeriesSpec::new(
            vec![c(0.3, 0.0), c(0.2, 0.0)],
            vec![c(0.4, 0.0)],
            c(0.5, 0.0),
            c(1.2, 0.0),
        )
        .unwrap();
        assert!(matches!(phi_series(&s, &b), Err(Error::Nonconvergent(_))));
        assert!(matches!(
            HyperSeriesSpec::new(vec![ONE], vec![c(4.0, 0.0)], c(0.5, 0.0), c(0.1, 0.0)),
            Err(Error::PoleInDenominator(_))
        ));
    }

    #[test]
    fn continuation_matches_series_in_disk() {
        let b = qb(0.5);
        let (a, bb, cc) = (c(1.7, 0.4), c(-2.1, 0.9), c(0.3, -0.2));
        let z = c(0.3, 0.4);
        let series = phi21(a, bb, cc, 0.5, z, &b).unwrap();
        let cont = phi21_continued(a, bb, cc, 0.5, z, &b).unwrap();
        assert!(rel(cont, series) < 1e-10, "{cont} vs {series}");
        assert_eq!(phi21_continued(a, bb, cc, 0.5, ZERO, &b).unwrap(), ONE);
    }

    #[test]
    fn continuation_of_terminating_series() {
        let b = qb(0.5);
        let (bb, cc, z) = (c(0.3, 0.0), c(0.2, 0.1), c(3.0, 0.0));
        let a = c(4.0, 0.0);
        let mut expect = ZERO;
        for k in 0..3 {
            expect += qpoch_finite(a, c(0.5, 0.0), k) * qpoch_finite(bb, c(0.5, 0.0), k)
                / (qpoch_finite(cc, c(0.5, 0.0), k) * qpoch_finite(c(0.5, 0.0), c(0.5, 0.0), k))
                * z.powu(k as u32);
        }
        let got = phi21_continued(a, bb, cc, 0.5, z, &b).unwrap();
        assert!(rel(got, expect) < 1e-14);
    }

    #[test]
    fn continuation_logarithmic_case_is_singular() {
        let b = qb(0.5);
        let a = C64::from_polar(2.2, 0.3);
        let r = phi21_continued(a, a * 4.0, c(0.3, 0.0), 0.5, c(3.0, 0.0), &b);
        assert!(matches!(r, Err(Error::ContinuationSingular(_))));
    }

    #[test]
    fn heine_matches_series_and_continuation() {
        let b = qb(0.5);
        let (a, bb, cc) = (c(0.3, 0.1), c(-0.2, 0.0), c(0.4, 0.0));
        let z = c(0.6, 0.0);
        let direct = qpoch_infinite(z, 0.5, &b).unwrap() * phi21(a, bb, cc, 0.5, z, &b).unwrap();
        assert!(rel(phi21_regularized(a, bb, cc, 0.5, z, &b).unwrap(), direct) < 1e-14);

        let (a, bb, cc) = (c(2.5, 0.5), c(0.7, -0.3), c(0.2, 0.3));
        let z = c(-5.0, 2.0);
        let cont =
            qpoch_infinite(z, 0.5, &b).unwrap() * phi21_continued(a, bb, cc, 0.5, z, &b).unwrap();
        assert!(rel(phi21_regularized(a, bb, cc, 0.5, z, &b).unwrap(), cont) < 1e-10);
    }

    #[test]
    fn heine_is_finite_at_poles() {
        // at z = base^{-1} the 2phi1 has a pole; the regularized value is the residue-like limit
        let b = qb(0.5);
        let (a, bb, cc) = (c(-0.5, 0.0), c(-0.5, 0.0), c(-0.25, 0.0));
        let at = phi21_regularized(a, bb, cc, 0.25, c(4.0, 0.0), &b).unwrap();
        let near = phi21_regularized(a, bb, cc, 0.25, c(4.0 + 1e-7, 0.0), &b).unwrap();
        assert!(at.is_finite() && (at - near).norm() < 1e-5 * at.norm().max(1.0));
    }
}
