//! The lattice `I_q = -q^ℕ ∪ q^ℤ`, its weighted counting measure, and graded functions.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn from_i32(s: i32) -> Result<Self> {
        match s {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(Error::Input(format!("sign must be +1 or -1, got {s}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_i32(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn times(self, other: Sign) -> Sign {
        if self == other {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// A point `sign · q^k` of `I_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticePoint {
    sign: Sign,
    k: i32,
}

impl LatticePoint {
    pub fn new(sign: Sign, k: i32) -> Result<Self> {
        if sign == Sign::Minus && k < 1 {
            return Err(Error::DomainError(
                "negative branch requires k ≥ 1".to_string(),
            ));
        }
        Ok(Self { sign, k })
    }

    pub fn plus(k: i32) -> Self {
        Self {
            sign: Sign::Plus,
            k,
        }
    }

    pub fn minus(k: i32) -> Result<Self> {
        Self::new(Sign::Minus, k)
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn value(&self, q: f64) -> f64 {
        self.sign.as_f64() * q.powi(self.k)
    }

    /// `p²`, the measure of `{p}`.
    pub fn weight(&self, q: f64) -> f64 {
        q.powi(2 * self.k)
    }

    /// `|p| < 1`, where odd functions live.
    pub fn inside_unit(&self) -> bool {
        self.k >= 1
    }

    /// `-p`, when it is still a lattice point.
    pub fn negated(&self) -> Result<Self> {
        Self::new(self.sign.flip(), self.k)
    }
}

/// Descending `|p|`, then positive before negative.
impl Ord for LatticePoint {
    fn cmp(&self, other: &Self) -> Ordering {
        self.k.cmp(&other.k).then(self.sign.cmp(&other.sign))
    }
}

impl PartialOrd for LatticePoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}q^{}", self.sign.symbol(), self.k)
    }
}

/// Accepts `[+-]q^k`, `[+-]q` and `1`.
impl FromStr for LatticePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "1" || t == "+1" {
            return Ok(Self::plus(0));
        }
        let (sign, rest) = match t.as_bytes().first() {
            Some(b'-') => (Sign::Minus, &t[1..]),
            Some(b'+') => (Sign::Plus, &t[1..]),
            _ => (Sign::Plus, t),
        };
        let k = match rest {
            "q" => 1,
            _ => rest
                .strip_prefix("q^")
                .map(|e| e.trim_start_matches('(').trim_end_matches(')'))
                .and_then(|e| e.parse::<i32>().ok())
                .ok_or_else(|| Error::Input(format!("expected [+-]q^k, got {s:?}")))?,
        };
        Self::new(sign, k)
    }
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    sign: i32,
    k: i32,
}

impl Serialize for LatticePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PointRepr {
            sign: self.sign.as_i32(),
            k: self.k,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PointRepr::deserialize(d)?;
        let sign = Sign::from_i32(r.sign).map_err(serde::de::Error::custom)?;
        LatticePoint::new(sign, r.k).map_err(serde::de::Error::custom)
    }
}

/// Truncation `k ∈ [k_min, k_max]` of the lattice; the negative branch starts at `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub k_min: i32,
    pub k_max: i32,
}

impl LatticeWindow {
    pub fn new(k_min: i32, k_max: i32) -> Result<Self> {
        if k_min > k_max {
            return Err(Error::Input(format!("empty window k ∈ [{k_min}, {k_max}]")));
        }
        Ok(Self { k_min, k_max })
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        (self.k_min..=self.k_max).contains(&p.k)
    }

    pub fn points(&self) -> Vec<LatticePoint> {
        enumerate(self, None)
    }

    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for LatticeWindow {
    fn default() -> Self {
        Self {
            k_min: -6,
            k_max: 6,
        }
    }
}

pub fn enumerate(window: &LatticeWindow, sign_filter: Option<Sign>) -> Vec<LatticePoint> {
    let mut out = Vec::new();
    for k in window.k_min..=window.k_max {
        for sign in [Sign::Plus, Sign::Minus] {
            if sign_filter.is_some_and(|s| s != sign) {
                continue;
            }
            if let Ok(p) = LatticePoint::new(sign, k) {
                out.push(p);
            }
        }
    }
    out
}

pub fn mu(z: C64) -> Result<C64> {
    if z.norm() == 0.0 {
        return Err(Error::DomainError("mu is undefined at 0".into()));
    }
    Ok((z + z.inv()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// An element `f ⊕ g u₀` of `L²(N₊) ⊕ L²(N₋)` truncated to a window.
///
/// The odd part is only ever stored on `|p| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedFunction {
    q: f64,
    window: LatticeWindow,
    even: BTreeMap<LatticePoint, C64>,
    odd: BTreeMap<LatticePoint, C64>,
}

impl GradedFunction {
    pub fn zero(q: f64, window: LatticeWindow) -> Self {
        Self {
            q,
            window,
            even: BTreeMap::new(),
            odd: BTreeMap::new(),
        }
    }

    pub fn even_delta(q: f64, window: LatticeWindow, p: LatticePoint) -> Result<Self> {
        let mut f = Self::zero(q, window);
        f.set_even(p, C64::new(1.0, 0.0))?;
        Ok(f)
    }

    pub fn odd_delta(q: f64, window: LatticeWindow, p: LatticePoint) -> Result<Self> {
        let mut f = Self::zero(q, window);
        f.set_odd(p, C64::new(1.0, 0.0))?;
        Ok(f)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn window(&self) -> LatticeWindow {
        self.window
    }

    pub fn set_even(&mut self, p: LatticePoint, v: C64) -> Result<()> {
        self.check_window(&p)?;
        self.even.insert(p, v);
        Ok(())
    }

    pub fn set_odd(&mut self, p: LatticePoint, v: C64) -> Result<()> {
        self.check_window(&p)?;
        if !p.inside_unit() {
            return Err(Error::DomainError(format!(
                "odd part lives on |p| < 1, got {p}"
            )));
        }
        self.odd.insert(p, v);
        Ok(())
    }

    fn check_window(&self, p: &LatticePoint) -> Result<()> {
        if self.window.contains(p) {
            Ok(())
        } else {
            Err(Error::DomainError(format!(
                "{p} is outside the window k ∈ [{}, {}]",
                self.window.k_min, self.window.k_max
            )))
        }
    }

    pub fn even(&self, p: &LatticePoint) -> C64 {
        self.even.get(p).copied().unwrap_or_default()
    }

    pub fn odd(&self, p: &LatticePoint) -> C64 {
        self.odd.get(p).copied().unwrap_or_default()
    }

    pub fn even_entries(&self) -> impl Iterator<Item = (&LatticePoint, &C64)> {
        self.even.iter()
    }

    pub fn odd_entries(&self) -> impl Iterator<Item = (&LatticePoint, &C64)> {
        self.odd.iter()
    }

    /// No stored nonzero value on either part.
    pub fn is_even_only(&self) -> bool {
        self.odd.values().all(|v| *v == C64::default())
    }

    pub fn is_odd_only(&self) -> bool {
        self.even.values().all(|v| *v == C64::default())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GradedRepr::from(self)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: GradedRepr = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        r.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    sign: i32,
    k: i32,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct GradedRepr {
    q: f64,
    window: LatticeWindow,
    even: Vec<EntryRepr>,
    odd: Vec<EntryRepr>,
}

impl From<&GradedFunction> for GradedRepr {
    fn from(f: &GradedFunction) -> Self {
        let conv = |m: &BTreeMap<LatticePoint, C64>| {
            m.iter()
                .map(|(p, v)| EntryRepr {
                    sign: p.sign.as_i32(),
                    k: p.k,
                    re: v.re,
                    im: v.im,
                })
                .collect()
        };
        Self {
            q: f.q,
            window: f.window,
            even: conv(&f.even),
            odd: conv(&f.odd),
        }
    }
}

impl TryFrom<GradedRepr> for GradedFunction {
    type Error = Error;

    fn try_from(r: GradedRepr) -> Result<Self> {
        if !(r.q > 0.0 && r.q < 1.0) {
            return Err(Error::Input(format!("q = {} is not in (0, 1)", r.q)));
        }
        let window = LatticeWindow::new(r.window.k_min, r.window.k_max)?;
        let mut f = GradedFunction::zero(r.q, window);
        for e in r.even {
            f.set_even(
                LatticePoint::new(Sign::from_i32(e.sign)?, e.k)?,
                C64::new(e.re, e.im),
            )?;
        }
        for e in r.odd {
            f.set_odd(
                LatticePoint::new(Sign::from_i32(e.sign)?, e.k)?,
                C64::new(e.re, e.im),
            )?;
        }
        Ok(f)
    }
}

/// `δ_{p,+}` or `δ_{p,-}` as a functional on graded functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointFunctional {
    pub p: LatticePoint,
    pub parity: Parity,
}

impl PointFunctional {
    pub fn new(p: LatticePoint, parity: Parity) -> Self {
        Self { p, parity }
    }

    /// Odd functionals at `|p| ≥ 1` are the zero functional.
    pub fn is_zero(&self) -> bool {
        self.parity == Parity::Odd && !self.p.inside_unit()
    }

    pub fn apply(&self, f: &GradedFunction) -> C64 {
        let w = self.p.weight(f.q);
        match self.parity {
            Parity::Even => f.even(&self.p) * w,
            Parity::Odd if self.is_zero() => C64::default(),
            Parity::Odd => f.odd(&self.p) * w,
        }
    }
}

/// `φ♮(f) = Σ f(p) p²`; the odd part integrates to zero.
pub fn haar_weight(f: &GradedFunction) -> C64 {
    f.even.iter().map(|(p, v)| v * p.weight(f.q)).sum()
}

pub fn inner_product(f: &GradedFunction, h: &GradedFunction) -> C64 {
    let q = f.q;
    let even: C64 = f
        .even
        .iter()
        .map(|(p, v)| v * h.even(p).conj() * p.weight(q))
        .sum();
    let odd: C64 = f
        .odd
        .iter()
        .map(|(p, v)| v * h.odd(p).conj() * p.weight(q))
        .sum();
    even + odd
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(a: i32, b: i32) -> LatticeWindow {
        LatticeWindow::new(a, b).unwrap()
    }

    #[test]
    fn enumerate_orders() {
        assert_eq!(
            enumerate(&w(0, 1), None),
            vec![
                LatticePoint::plus(0),
                LatticePoint::plus(1),
                LatticePoint::minus(1).unwrap()
            ]
        );
        assert_eq!(
            enumerate(&w(-1, 0), None),
            vec![LatticePoint::plus(-1), LatticePoint::plus(0)]
        );
        assert_eq!(
            enumerate(&w(1, 1), Some(Sign::Minus)),
            vec![LatticePoint::minus(1).unwrap()]
        );
    }

    #[test]
    fn negative_branch_invariant() {
        let e = LatticePoint::minus(0).unwrap_err();
        assert!(e.to_string().contains("negative branch requires k ≥ 1"));
        assert!("-q^0".parse::<LatticePoint>().is_err());
    }

    #[test]
    fn parse_forms() {
        assert_eq!(
            "-q^1".parse::<LatticePoint>().unwrap(),
            LatticePoint::minus(1).unwrap()
        );
        assert_eq!(
            "-q".parse::<LatticePoint>().unwrap(),
            LatticePoint::minus(1).unwrap()
        );
        assert_eq!(
            "+q^-2".parse::<LatticePoint>().unwrap(),
            LatticePoint::plus(-2)
        );
        assert_eq!(
            "q^3".parse::<LatticePoint>().unwrap(),
            LatticePoint::plus(3)
        );
        assert_eq!("1".parse::<LatticePoint>().unwrap(), LatticePoint::plus(0));
        assert!("x^2".parse::<LatticePoint>().is_err());
    }

    #[test]
    fn haar_examples() {
        let win = w(-2, 2);
        let one = GradedFunction::even_delta(0.5, win, LatticePoint::plus(0)).unwrap();
        assert_eq!(haar_weight(&one), C64::new(1.0, 0.0));
        let neg = GradedFunction::even_delta(0.5, win, LatticePoint::minus(1).unwrap()).unwrap();
        assert_eq!(haar_weight(&neg), C64::new(0.25, 0.0));
        let odd = GradedFunction::odd_delta(0.5, win, LatticePoint::plus(1)).unwrap();
        assert_eq!(haar_weight(&odd), C64::default());
    }

    #[test]
    fn inner_product_examples() {
        let win = w(-2, 2);
        let one = GradedFunction::even_delta(0.5, win, LatticePoint::plus(0)).unwrap();
        let odd = GradedFunction::odd_delta(0.5, win, LatticePoint::plus(1)).unwrap();
        let other = GradedFunction::even_delta(0.5, win, LatticePoint::plus(1)).unwrap();
        assert_eq!(inner_product(&one, &one), C64::new(1.0, 0.0));
        assert_eq!(inner_product(&one, &odd), C64::default());
        assert_eq!(inner_product(&one, &other), C64::default());
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu(C64::new(1.0, 0.0)).unwrap(), C64::new(1.0, 0.0));
        assert!(mu(C64::new(0.0, 1.0)).unwrap().norm() < 1e-16);
        assert_eq!(mu(C64::new(0.125, 0.0)).unwrap(), C64::new(4.0625, 0.0));
        assert!(matches!(mu(C64::default()), Err(Error::DomainError(_))));
    }

    #[test]
    fn odd_part_rejects_outer_points() {
        let mut f = GradedFunction::zero(0.5, w(-2, 2));
        assert!(f
            .set_odd(LatticePoint::plus(0), C64::new(1.0, 0.0))
            .is_err());
        assert!(f
            .set_even(LatticePoint::plus(3), C64::new(1.0, 0.0))
            .is_err());
        let json = r#"{"q":0.5,"window":{"k_min":-2,"k_max":2},"even":[],
                       "odd":[{"sign":1,"k":-1,"re":1.0,"im":0.0}]}"#;
        assert!(GradedFunction::from_json(json).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut f = GradedFunction::zero(0.5, w(-1, 2));
        f.set_even(LatticePoint::plus(-1), C64::new(0.5, -1.0))
            .unwrap();
        f.set_odd(LatticePoint::minus(2).unwrap(), C64::new(0.0, 2.0))
            .unwrap();
        assert_eq!(GradedFunction::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn functionals() {
        let win = w(-1, 2);
        let mut f = GradedFunction::zero(0.5, win);
        f.set_even(LatticePoint::plus(1), C64::new(2.0, 0.0))
            .unwrap();
        f.set_odd(LatticePoint::plus(1), C64::new(3.0, 0.0))
            .unwrap();
        let p = LatticePoint::plus(1);
        assert_eq!(
            PointFunctional::new(p, Parity::Even).apply(&f),
            C64::new(0.5, 0.0)
        );
        assert_eq!(
            PointFunctional::new(p, Parity::Odd).apply(&f),
            C64::new(0.75, 0.0)
        );
        assert!(PointFunctional::new(LatticePoint::plus(0), Parity::Odd).is_zero());
    }
}
