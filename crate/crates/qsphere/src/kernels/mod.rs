//! Spherical matrix coefficients `K_j^{σ,τ}(p0; x)`.
//!
//! The two displayed families `(+,+)` and `(+,-)` are evaluated from the S-function;
//! `(-,-)` and `(-,+)` follow from `K_j^{σ,τ}(p0; x) = στ K_j^{-σ,-τ}(p0; -x)`.

mod phase_fit;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{mu, LatticePoint, Sign};
use crate::qseries::{phi21_regularized, qpoch_infinite, qpoch_ratio, PochFactor, QBase};

pub use phase_fit::{fit_phases, PhaseFitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpectrumPoint {
    /// `x ∈ [-1, 1]`; transform grids only use `(0, 1]`.
    Principal { x: f64 },
    /// `x = μ(q^{2n+1})`, `n ≥ 1`.
    Discrete { n: u32 },
    /// `x ∈ (1, μ(q))`.
    Complementary { x: f64 },
}

impl SpectrumPoint {
    pub fn principal(x: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::DomainError(format!(
                "principal x = {x} is not in [-1, 1]"
            )));
        }
        Ok(SpectrumPoint::Principal { x })
    }

    pub fn discrete(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::DomainError("discrete series starts at n = 1".into()));
        }
        Ok(SpectrumPoint::Discrete { n })
    }

    pub fn complementary(x: f64, q: f64) -> Result<Self> {
        let top = 0.5 * (q + 1.0 / q);
        if !(x > 1.0 && x < top) {
            return Err(Error::DomainError(format!(
                "complementary x = {x} is not in (1, {top})"
            )));
        }
        Ok(SpectrumPoint::Complementary { x })
    }

    pub fn x(&self, q: f64) -> f64 {
        match *self {
            SpectrumPoint::Principal { x } | SpectrumPoint::Complementary { x } => x,
            SpectrumPoint::Discrete { n } => {
                let l = q.powi(2 * n as i32 + 1);
                0.5 * (l + 1.0 / l)
            }
        }
    }
}

pub fn lambda_of(point: &SpectrumPoint, qb: &QBase) -> C64 {
    match *point {
        SpectrumPoint::Principal { x } => C64::from_polar(1.0, x.clamp(-1.0, 1.0).acos()),
        SpectrumPoint::Discrete { n } => C64::from(qb.q().powi(2 * n as i32 + 1)),
        SpectrumPoint::Complementary { x } => C64::from(x - (x * x - 1.0).sqrt()),
    }
}

/// Checks `μ(λ) = x` for a point; used by tests and the verify suite.
pub fn lambda_roundtrip_error(point: &SpectrumPoint, qb: &QBase) -> f64 {
    let l = lambda_of(point, qb);
    (mu(l).unwrap() - C64::from(point.x(qb.q()))).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignPair {
    pub sigma: Sign,
    pub tau: Sign,
}

impl SignPair {
    pub const PP: SignPair = SignPair {
        sigma: Sign::Plus,
        tau: Sign::Plus,
    };
    pub const PM: SignPair = SignPair {
        sigma: Sign::Plus,
        tau: Sign::Minus,
    };
    pub const MP: SignPair = SignPair {
        sigma: Sign::Minus,
        tau: Sign::Plus,
    };
    pub const MM: SignPair = SignPair {
        sigma: Sign::Minus,
        tau: Sign::Minus,
    };
    pub const ALL: [SignPair; 4] = [Self::PP, Self::MP, Self::PM, Self::MM];

    pub fn negated(self) -> Self {
        SignPair {
            sigma: self.sigma.flip(),
            tau: self.tau.flip(),
        }
    }

    /// `στ`.
    pub fn product(self) -> Sign {
        self.sigma.times(self.tau)
    }
}

impl fmt::Display for SignPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sigma.symbol(), self.tau.symbol())
    }
}

impl FromStr for SignPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sign = |c| match c {
            '+' => Ok(Sign::Plus),
            '-' => Ok(Sign::Minus),
            _ => Err(Error::Input(format!(
                "sign pair must look like +-, got {s:?}"
            ))),
        };
        let cs: Vec<char> = s.trim().chars().collect();
        if cs.len() != 2 {
            return Err(Error::Input(format!(
                "sign pair must look like +-, got {s:?}"
            )));
        }
        Ok(SignPair {
            sigma: sign(cs[0])?,
            tau: sign(cs[1])?,
        })
    }
}

/// Which sign choice of the S-function display is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SVariant {
    /// `S(λ, -p0, p0, 0)`: the `(+,-)` kernels.
    Upper,
    /// `S(-λ, p0, p0, 0)`: the `(+,+)` kernels.
    Lower,
}

impl SVariant {
    fn v(self) -> f64 {
        match self {
            SVariant::Upper => 1.0,
            SVariant::Lower => -1.0,
        }
    }
}

/// `κ(p)`, `ν(p)` and `c_q`, which enter the S-function only through `κ(p0)` and
/// the prefactor `ρ(p0) = |p0|² ν(p0)² c_q²`.
///
/// Defaults: `κ(p) = sgn(p) p²`, `ν ≡ 1`, `c_q = 1`. Individual values can be
/// overridden per point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompanionConstants {
    #[serde(default)]
    kappa: BTreeMap<i32, f64>,
    #[serde(default)]
    kappa_neg: BTreeMap<i32, f64>,
    #[serde(default)]
    nu: BTreeMap<i32, f64>,
    #[serde(default)]
    nu_neg: BTreeMap<i32, f64>,
    #[serde(default = "one")]
    c_q: f64,
}

fn one() -> f64 {
    1.0
}

impl CompanionConstants {
    pub fn new() -> Self {
        Self {
            c_q: 1.0,
            ..Default::default()
        }
    }

    pub fn with_c_q(mut self, c_q: f64) -> Result<Self> {
        if !(c_q > 0.0) {
            return Err(Error::Input(format!("c_q = {c_q} must be positive")));
        }
        self.c_q = c_q;
        Ok(self)
    }

    pub fn with_kappa(mut self, p: LatticePoint, kappa: f64, q: f64) -> Result<Self> {
        if kappa.signum() != p.sign().as_f64() || (p.inside_unit() && kappa.abs() >= 1.0) {
            return Err(Error::Input(format!(
                "kappa({p}) = {kappa} must have the sign of p and modulus < 1 inside (-1, 1) at q = {q}"
            )));
        }
        self.table_mut(p, true).insert(p.k(), kappa);
        Ok(self)
    }

    pub fn with_nu(mut self, p: LatticePoint, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Input(format!("nu({p}) = {nu} must be positive")));
        }
        self.table_mut(p, false).insert(p.k(), nu);
        Ok(self)
    }

    fn table_mut(&mut self, p: LatticePoint, kappa: bool) -> &mut BTreeMap<i32, f64> {
        match (kappa, p.sign()) {
            (true, Sign::Plus) => &mut self.kappa,
            (true, Sign::Minus) => &mut self.kappa_neg,
            (false, Sign::Plus) => &mut self.nu,
            (false, Sign::Minus) => &mut self.nu_neg,
        }
    }

    fn lookup(&self, p: LatticePoint, kappa: bool) -> Option<f64> {
        let t = match (kappa, p.sign()) {
            (true, Sign::Plus) => &self.kappa,
            (true, Sign::Minus) => &self.kappa_neg,
            (false, Sign::Plus) => &self.nu,
            (false, Sign::Minus) => &self.nu_neg,
        };
        t.get(&p.k()).copied()
    }

    pub fn kappa(&self, p: LatticePoint, q: f64) -> f64 {
        self.lookup(p, true)
            .unwrap_or_else(|| p.sign().as_f64() * p.weight(q))
    }

    pub fn nu(&self, p: LatticePoint) -> f64 {
        self.lookup(p, false).unwrap_or(1.0)
    }

    pub fn c_q(&self) -> f64 {
        self.c_q
    }

    pub fn rho(&self, p: LatticePoint, q: f64) -> f64 {
        let nu = self.nu(p);
        p.weight(q) * nu * nu * self.c_q * self.c_q
    }

    pub fn is_default(&self) -> bool {
        *self == Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchKey {
    pub j: u8,
    pub signs: SignPair,
    pub p0_sign: Sign,
}

impl BranchKey {
    /// Branches that carry an undetermined phase: `(j, (+,+), p0 > 0)` and both
    /// `(j, (+,-), ·)`. The `(j, (+,+), p0 < 0)` factor is the constant 1.
    pub fn all_free() -> Vec<BranchKey> {
        let mut out = Vec::new();
        for j in [1, 2] {
            out.push(BranchKey {
                j,
                signs: SignPair::PP,
                p0_sign: Sign::Plus,
            });
            out.push(BranchKey {
                j,
                signs: SignPair::PM,
                p0_sign: Sign::Minus,
            });
            out.push(BranchKey {
                j,
                signs: SignPair::PM,
                p0_sign: Sign::Plus,
            });
        }
        out
    }

    pub fn is_pinned(&self) -> bool {
        self.signs == SignPair::PP && self.p0_sign == Sign::Minus
    }
}

/// The phase factors `A(·)/A(·)` of the displayed kernels, stored as angles
/// sampled in `x` and linearly interpolated. Missing branches have angle 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseProvider {
    branches: BTreeMap<BranchKey, Vec<(f64, f64)>>,
}

impl PhaseProvider {
    pub fn unit() -> Self {
        Self::default()
    }

    pub fn is_unit(&self) -> bool {
        self.branches
            .values()
            .all(|v| v.iter().all(|&(_, t)| t == 0.0))
    }

    pub fn set_branch(&mut self, key: BranchKey, mut samples: Vec<(f64, f64)>) -> Result<()> {
        if key.signs.sigma != Sign::Plus {
            return Err(Error::Input(format!(
                "phase branch {} is derived from the symmetry relation and cannot be set",
                key.signs
            )));
        }
        if !(1..=2).contains(&key.j) {
            return Err(Error::Input(format!("j = {} is not in {{1, 2}}", key.j)));
        }
        if key.is_pinned() && samples.iter().any(|&(_, t)| t != 0.0) {
            return Err(Error::Input(format!(
                "branch (j={}, ++, p0<0) is fixed to 1",
                key.j
            )));
        }
        if samples
            .iter()
            .any(|&(x, t)| !x.is_finite() || !t.is_finite())
        {
            return Err(Error::Input("phase samples must be finite".into()));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.branches.insert(key, samples);
        Ok(())
    }

    pub fn branch(&self, key: &BranchKey) -> &[(f64, f64)] {
        self.branches.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn angle(&self, key: &BranchKey, x: f64) -> f64 {
        if key.is_pinned() {
            return 0.0;
        }
        interpolate(self.branch(key), x)
    }

    pub fn phase(&self, key: &BranchKey, x: f64) -> C64 {
        C64::from_polar(1.0, self.angle(key, x))
    }

    pub fn to_json(&self) -> String {
        let branches = self
            .branches
            .iter()
            .map(|(k, v)| BranchRepr {
                j: k.j,
                sigma: k.signs.sigma.symbol().to_string(),
                tau: k.signs.tau.symbol().to_string(),
                p0_sign: k.p0_sign.as_i32(),
                angles: v.iter().map(|&(x, theta)| AngleRepr { x, theta }).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&ProviderRepr { branches }).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: ProviderRepr = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        let mut p = PhaseProvider::unit();
        for b in r.branches {
            let signs: SignPair = format!("{}{}", b.sigma, b.tau).parse()?;
            let key = BranchKey {
                j: b.j,
                signs,
                p0_sign: Sign::from_i32(b.p0_sign)?,
            };
            p.set_branch(key, b.angles.iter().map(|a| (a.x, a.theta)).collect())?;
        }
        Ok(p)
    }
}

fn interpolate(samples: &[(f64, f64)], x: f64) -> f64 {
    match samples {
        [] => 0.0,
        [(_, t)] => *t,
        _ => {
            let i = samples.partition_point(|&(sx, _)| sx < x);
            if i == 0 {
                return samples[0].1;
            }
            if i == samples.len() {
                return samples[i - 1].1;
            }
            let (x0, t0) = samples[i - 1];
            let (x1, t1) = samples[i];
            if x1 == x0 {
                return t1;
            }
            t0 + (t1 - t0) * (x - x0) / (x1 - x0)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AngleRepr {
    x: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct BranchRepr {
    j: u8,
    sigma: String,
    tau: String,
    p0_sign: i32,
    angles: Vec<AngleRepr>,
}

#[derive(Serialize, Deserialize)]
struct ProviderRepr {
    branches: Vec<BranchRepr>,
}

/// Everything a kernel evaluation depends on.
#[derive(Debug, Clone)]
pub struct KernelContext {
    pub qb: QBase,
    pub consts: CompanionConstants,
    pub phases: PhaseProvider,
}

impl KernelContext {
    pub fn new(qb: QBase) -> Self {
        Self {
            qb,
            consts: CompanionConstants::new(),
            phases: PhaseProvider::unit(),
        }
    }

    pub fn q(&self) -> f64 {
        self.qb.q()
    }
}

/// The S-function display with its `±` resolved by `variant`:
///
/// ```text
/// ρ(p0) √((vκ, -κ; q²)_∞) (-v q²; q²)_∞
///   · (q², λq², 1/λ, -q/λ; q²)_∞ / (s/λ, sλq², v q/λ; q²)_∞
///   · (-q²/κ; q²)_∞ ₂φ₁(-q/λ, -λq; -q²; q², -q²/κ)
/// ```
///
/// with `s = sgn(p0)`, `κ = κ(p0)`, `v = +1` (upper) or `-1` (lower). The last
/// line is evaluated as one entire function of the argument, which keeps it finite
/// where the `₂φ₁` has a pole and `(-q²/κ; q²)_∞` a matching zero.
pub fn s_function(
    variant: SVariant,
    lambda: C64,
    p0: LatticePoint,
    consts: &CompanionConstants,
    qb: &QBase,
) -> Result<C64> {
    let at = |e: Error| Error::AtPoint {
        source: Box::new(e),
        lambda,
        p0,
    };
    if lambda.norm() == 0.0 {
        return Err(at(Error::DomainError("lambda must be nonzero".into())));
    }
    let q = qb.q();
    let qq = q * q;
    let s = p0.sign().as_f64();
    let v = variant.v();
    let kappa = consts.kappa(p0, q);
    let one = C64::from(1.0);

    let f = |a: C64| PochFactor::new(a, 2);
    let numer = [
        f(C64::from(qq)),
        f(lambda * qq),
        f(one / lambda),
        f(-q / lambda),
    ];
    let denom = [f(s / lambda), f(s * lambda * qq), f(v * q / lambda)];
    let ratio = qpoch_ratio(&numer, &denom, qb).map_err(at)?;
    if ratio == C64::default() {
        return Ok(ratio);
    }

    let sq = (qpoch_infinite(C64::from(v * kappa), qq, qb).map_err(at)?
        * qpoch_infinite(C64::from(-kappa), qq, qb).map_err(at)?)
    .sqrt();
    let pre = consts.rho(p0, q) * sq * qpoch_infinite(C64::from(-v * qq), qq, qb).map_err(at)?;
    if pre == C64::default() {
        return Ok(pre);
    }
    let series = phi21_regularized(
        -q / lambda,
        -lambda * q,
        C64::from(-qq),
        qq,
        C64::from(-qq / kappa),
        qb,
    )
    .map_err(at)?;
    Ok(pre * ratio * series)
}

/// Explicit sign in front of each displayed kernel, for `σ = +`.
fn display_sign(j: u8, signs: SignPair, p0_sign: Sign) -> f64 {
    match (signs.tau, j, p0_sign) {
        (Sign::Plus, 2, Sign::Plus) => -1.0,
        (Sign::Plus, _, _) => 1.0,
        (Sign::Minus, 1, Sign::Plus) => 1.0,
        (Sign::Minus, _, _) => -1.0,
    }
}

fn displayed(
    j: u8,
    signs: SignPair,
    p0: LatticePoint,
    lambda: C64,
    x: f64,
    ctx: &KernelContext,
) -> Result<C64> {
    debug_assert_eq!(signs.sigma, Sign::Plus);
    let variant = match signs.tau {
        Sign::Plus => SVariant::Lower,
        Sign::Minus => SVariant::Upper,
    };
    let key = BranchKey {
        j,
        signs,
        p0_sign: p0.sign(),
    };
    let s = s_function(variant, lambda, p0, &ctx.consts, &ctx.qb)?;
    Ok(s * display_sign(j, signs, p0.sign()) * ctx.phases.phase(&key, x))
}

/// `K_j^{σ,τ}(p0; x)`.
///
/// At discrete points only `(+,+)` is nonzero: there the space of invariant
/// vectors is one-dimensional and the other sign patterns have no vector to pair.
pub fn kernel(
    j: u8,
    signs: SignPair,
    p0: LatticePoint,
    point: &SpectrumPoint,
    ctx: &KernelContext,
) -> Result<C64> {
    if !(1..=2).contains(&j) {
        return Err(Error::DomainError(format!("j = {j} is not in {{1, 2}}")));
    }
    let lambda = lambda_of(point, &ctx.qb);
    let x = point.x(ctx.q());
    match (point, signs.sigma) {
        (SpectrumPoint::Discrete { .. }, _) if signs != SignPair::PP => Ok(C64::default()),
        (_, Sign::Plus) => displayed(j, signs, p0, lambda, x, ctx),
        (_, Sign::Minus) => {
            let k = displayed(
                j,
                signs.negated(),
                p0,
                reflected_lambda(point, lambda),
                -x,
                ctx,
            )?;
            Ok(k * signs.product().as_f64())
        }
    }
}

/// `K = reflection · sign · phase · S`, with `S` evaluated at `λ` or at the reflected
/// representative when `σ = -`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelFactors {
    pub value: C64,
    /// `None` where the kernel is identically zero.
    pub variant: Option<SVariant>,
    pub s_value: C64,
    pub display_sign: f64,
    pub phase: C64,
    /// `στ` for `σ = -`, else 1.
    pub reflection: f64,
}

pub fn kernel_factors(
    j: u8,
    signs: SignPair,
    p0: LatticePoint,
    point: &SpectrumPoint,
    ctx: &KernelContext,
) -> Result<KernelFactors> {
    let value = kernel(j, signs, p0, point, ctx)?;
    if matches!(point, SpectrumPoint::Discrete { .. }) && signs != SignPair::PP {
        return Ok(KernelFactors {
            value,
            variant: None,
            s_value: C64::default(),
            display_sign: 0.0,
            phase: C64::from(1.0),
            reflection: 1.0,
        });
    }
    let lambda = lambda_of(point, &ctx.qb);
    let (base, lambda, x, reflection) = match signs.sigma {
        Sign::Plus => (signs, lambda, point.x(ctx.q()), 1.0),
        Sign::Minus => (
            signs.negated(),
            reflected_lambda(point, lambda),
            -point.x(ctx.q()),
            signs.product().as_f64(),
        ),
    };
    let variant = match base.tau {
        Sign::Plus => SVariant::Lower,
        Sign::Minus => SVariant::Upper,
    };
    let key = BranchKey {
        j,
        signs: base,
        p0_sign: p0.sign(),
    };
    Ok(KernelFactors {
        value,
        variant: Some(variant),
        s_value: s_function(variant, lambda, p0, &ctx.consts, &ctx.qb)?,
        display_sign: display_sign(j, base, p0.sign()),
        phase: ctx.phases.phase(&key, x),
        reflection,
    })
}

/// The representative of `-x` under the same convention as [`lambda_of`]: on the
/// upper half circle for principal points (`-λ̄`), and `-λ` for real `λ`.
fn reflected_lambda(point: &SpectrumPoint, lambda: C64) -> C64 {
    match point {
        SpectrumPoint::Principal { .. } => -lambda.conj(),
        _ => -lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> KernelContext {
        KernelContext::new(QBase::new(0.5).unwrap())
    }

    #[test]
    fn lambda_examples() {
        let qb = QBase::new(0.5).unwrap();
        assert_eq!(
            lambda_of(&SpectrumPoint::principal(1.0).unwrap(), &qb),
            C64::from(1.0)
        );
        let i = lambda_of(&SpectrumPoint::principal(0.0).unwrap(), &qb);
        assert!((i - C64::i()).norm() < 1e-16);
        let d = SpectrumPoint::discrete(1).unwrap();
        assert_eq!(lambda_of(&d, &qb), C64::from(0.125));
        assert_eq!(d.x(0.5), 4.0625);
        let c = SpectrumPoint::complementary(1.1, 0.5).unwrap();
        assert!(lambda_roundtrip_error(&c, &qb) < 1e-14);
        assert!(SpectrumPoint::complementary(1.3, 0.5).is_err());
        assert!(SpectrumPoint::discrete(0).is_err());
    }

    #[test]
    fn lower_at_one() {
        let c = ctx();
        for k in 1..=6 {
            let p = LatticePoint::minus(k).unwrap();
            let v = s_function(SVariant::Lower, C64::from(1.0), p, &c.consts, &c.qb).unwrap();
            assert_eq!(v, C64::default());
        }
        for k in -6..=6 {
            let p = LatticePoint::plus(k);
            let v = s_function(SVariant::Lower, C64::from(1.0), p, &c.consts, &c.qb).unwrap();
            assert!(v.is_finite() && v.norm() > 0.0, "k={k}: {v}");
        }
    }

    #[test]
    fn upper_diverges_at_discrete_points() {
        let c = ctx();
        let lam = C64::from(0.5f64.powi(3));
        let r = s_function(
            SVariant::Upper,
            lam,
            LatticePoint::plus(2),
            &c.consts,
            &c.qb,
        );
        assert_eq!(r.unwrap_err().name(), "DivergentRatio");
        // approaching the point along the real axis the modulus grows without bound
        let mut last = 0.0;
        for e in [1e-3, 1e-5, 1e-7] {
            let v = s_function(
                SVariant::Upper,
                lam * (1.0 + e),
                LatticePoint::plus(2),
                &c.consts,
                &c.qb,
            )
            .unwrap()
            .norm();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn factors_multiply_back() {
        let c = ctx();
        for pt in [
            SpectrumPoint::principal(0.41).unwrap(),
            SpectrumPoint::discrete(2).unwrap(),
        ] {
            for s in SignPair::ALL {
                for p in [LatticePoint::plus(-1), LatticePoint::minus(2).unwrap()] {
                    let f = kernel_factors(2, s, p, &pt, &c).unwrap();
                    let prod = f.s_value * f.display_sign * f.phase * f.reflection;
                    assert!((prod - f.value).norm() <= 1e-14 * f.value.norm(), "{s} {p}");
                }
            }
        }
    }

    #[test]
    fn pinned_branch_is_the_bare_s_function() {
        let c = ctx();
        let pt = SpectrumPoint::principal(0.37).unwrap();
        let lam = lambda_of(&pt, &c.qb);
        for k in 1..=4 {
            let p = LatticePoint::minus(k).unwrap();
            let s = s_function(SVariant::Lower, lam, p, &c.consts, &c.qb).unwrap();
            assert_eq!(kernel(1, SignPair::PP, p, &pt, &c).unwrap(), s);
        }
    }

    #[test]
    fn symmetry_relation_holds() {
        let c = ctx();
        for x in [0.1, 0.5, 0.93] {
            let pt = SpectrumPoint::principal(x).unwrap();
            let neg = SpectrumPoint::principal(-x).unwrap();
            for p in [
                LatticePoint::plus(-2),
                LatticePoint::plus(1),
                LatticePoint::minus(3).unwrap(),
            ] {
                for signs in SignPair::ALL {
                    for j in [1, 2] {
                        let a = kernel(j, signs, p, &pt, &c).unwrap();
                        let b = kernel(j, signs.negated(), p, &neg, &c).unwrap();
                        let d = (a - b * signs.product().as_f64()).norm();
                        assert!(
                            d <= 1e-12 * a.norm().max(1e-300),
                            "{signs} {p} {x}: {a} {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn discrete_points_keep_only_the_even_kernel() {
        let c = ctx();
        let d = SpectrumPoint::discrete(1).unwrap();
        for signs in [SignPair::PM, SignPair::MP, SignPair::MM] {
            assert_eq!(
                kernel(1, signs, LatticePoint::plus(1), &d, &c).unwrap(),
                C64::default()
            );
        }
        assert!(
            kernel(1, SignPair::PP, LatticePoint::plus(-1), &d, &c)
                .unwrap()
                .norm()
                > 0.0
        );
        // the Heine sum terminates there and every surviving term carries a zero factor
        assert_eq!(
            kernel(1, SignPair::PP, LatticePoint::plus(1), &d, &c).unwrap(),
            C64::default()
        );
    }

    #[test]
    fn odd_kernels_vanish_outside_unit_interval() {
        let c = ctx();
        let pt = SpectrumPoint::principal(0.4).unwrap();
        for k in -3..=0 {
            assert_eq!(
                kernel(1, SignPair::PM, LatticePoint::plus(k), &pt, &c).unwrap(),
                C64::default()
            );
        }
    }

    #[test]
    fn phase_provider_rules() {
        let mut p = PhaseProvider::unit();
        let pinned = BranchKey {
            j: 1,
            signs: SignPair::PP,
            p0_sign: Sign::Minus,
        };
        assert!(p.set_branch(pinned, vec![(0.0, 0.3)]).is_err());
        let free = BranchKey {
            j: 2,
            signs: SignPair::PM,
            p0_sign: Sign::Plus,
        };
        p.set_branch(free, vec![(0.5, 1.0), (0.0, 0.0)]).unwrap();
        assert!((p.angle(&free, 0.25) - 0.5).abs() < 1e-15);
        assert_eq!(p.angle(&free, 2.0), 1.0);
        assert!((p.phase(&free, 0.1).norm() - 1.0).abs() < 1e-15);
        let back = PhaseProvider::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let mm = BranchKey {
            j: 1,
            signs: SignPair::MM,
            p0_sign: Sign::Plus,
        };
        assert!(p.set_branch(mm, vec![]).is_err());
    }

    #[test]
    fn companion_validation() {
        let c = CompanionConstants::new();
        assert!(c
            .clone()
            .with_kappa(LatticePoint::plus(1), -0.1, 0.5)
            .is_err());
        assert!(c
            .clone()
            .with_kappa(LatticePoint::minus(1).unwrap(), -1.2, 0.5)
            .is_err());
        let c2 = c.with_kappa(LatticePoint::plus(1), 0.2, 0.5).unwrap();
        assert_eq!(c2.kappa(LatticePoint::plus(1), 0.5), 0.2);
        assert_eq!(c2.kappa(LatticePoint::plus(2), 0.5), 0.0625);
    }

    #[test]
    fn sign_pair_parse() {
        assert_eq!("+-".parse::<SignPair>().unwrap(), SignPair::PM);
        assert!("+".parse::<SignPair>().is_err());
        assert_eq!(SignPair::MP.to_string(), "-+");
    }
}
