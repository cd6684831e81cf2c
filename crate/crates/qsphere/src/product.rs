//! The four product formulae
//!
//! ```text
//! I    K^{+,+}(p1) K^{+,+}(p2) = Σ A_{p0}(p1,p2) K^{+,+}(p0) p0²
//! II   K^{+,-}(p1) K^{-,+}(p2) = Σ B_{p0}(p1,p2) K^{-,-}(p0) p0²
//! III  K^{+,+}(p1) K^{-,+}(p3) = Σ C_{p0}(p1,p3) K^{-,+}(p0) p0²
//! IV   K^{-,+}(p3) K^{-,-}(p1) = Σ D_{p0}(p3,p1) K^{-,+}(p0) p0²
//! ```
//!
//! all at the same `(x, j)`. Coefficients come from an `a`-provider or from a fit.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{lstsq, nnls, FitReport, LsSolution, SolveOptions};
use crate::kernels::{kernel, KernelContext, SignPair, SpectrumPoint};
use crate::lattice::{LatticePoint, LatticeWindow, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProductVariant {
    I,
    II,
    III,
    IV,
}

impl ProductVariant {
    pub const ALL: [ProductVariant; 4] = [Self::I, Self::II, Self::III, Self::IV];

    pub fn left(self) -> SignPair {
        match self {
            Self::I | Self::III => SignPair::PP,
            Self::II => SignPair::PM,
            Self::IV => SignPair::MP,
        }
    }

    pub fn right(self) -> SignPair {
        match self {
            Self::I => SignPair::PP,
            Self::II | Self::III => SignPair::MP,
            Self::IV => SignPair::MM,
        }
    }

    pub fn target(self) -> SignPair {
        match self {
            Self::I => SignPair::PP,
            Self::II => SignPair::MM,
            Self::III | Self::IV => SignPair::MP,
        }
    }

    /// `sgn p0` of the support, from `a_z(x, y) = 0` when `sgn(xyz) = -1`.
    pub fn support_sign(self, p1: LatticePoint, p2: LatticePoint) -> Sign {
        let s = p1.sign().times(p2.sign());
        match self {
            Self::I | Self::II => s,
            Self::III | Self::IV => s.flip(),
        }
    }

    /// Odd legs are the zero functional off `(-1, 1)`.
    pub fn legs_nonzero(self, p1: LatticePoint, p2: LatticePoint) -> bool {
        let ok = |s: SignPair, p: LatticePoint| s.sigma == s.tau || p.inside_unit();
        ok(self.left(), p1) && ok(self.right(), p2)
    }

    pub fn target_points(self, window: LatticeWindow) -> Vec<LatticePoint> {
        let t = self.target();
        window
            .points()
            .into_iter()
            .filter(|p| t.sigma == t.tau || p.inside_unit())
            .collect()
    }
}

impl fmt::Display for ProductVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
            Self::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for ProductVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Self::I),
            "II" | "2" => Ok(Self::II),
            "III" | "3" => Ok(Self::III),
            "IV" | "4" => Ok(Self::IV),
            _ => Err(Error::Input(format!("unknown product variant {s:?}"))),
        }
    }
}

/// Source of the coefficients `a_{p0}(p1, p2)`.
pub trait AProvider {
    /// Raw value; callers go through [`a_value`], which applies the support rule.
    fn a(&self, p0: LatticePoint, p1: LatticePoint, p2: LatticePoint) -> f64;
}

/// `a_{p0}(p1, p2)` with the support rule applied.
pub fn a_value(
    provider: &dyn AProvider,
    p0: LatticePoint,
    p1: LatticePoint,
    p2: LatticePoint,
) -> f64 {
    if p0.sign().times(p1.sign()).times(p2.sign()) == Sign::Minus {
        0.0
    } else {
        provider.a(p0, p1, p2)
    }
}

/// Tabulated `a` values; absent entries are 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableAProvider {
    entries: BTreeMap<(LatticePoint, LatticePoint, LatticePoint), f64>,
}

#[derive(Serialize, Deserialize)]
struct AEntry {
    p0: LatticePoint,
    p1: LatticePoint,
    p2: LatticePoint,
    a: f64,
}

#[derive(Serialize, Deserialize)]
struct ATable {
    entries: Vec<AEntry>,
}

impl TableAProvider {
    pub fn insert(
        &mut self,
        p0: LatticePoint,
        p1: LatticePoint,
        p2: LatticePoint,
        a: f64,
    ) -> Result<()> {
        if !a.is_finite() {
            return Err(Error::Input(format!("a_{p0}({p1}, {p2}) is not finite")));
        }
        if a != 0.0 && p0.sign().times(p1.sign()).times(p2.sign()) == Sign::Minus {
            return Err(Error::Input(format!(
                "a_{p0}({p1}, {p2}) must vanish: sgn(p0 p1 p2) = -1"
            )));
        }
        self.entries.insert((p0, p1, p2), a);
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: ATable = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        let mut out = Self::default();
        for e in t.entries {
            out.insert(e.p0, e.p1, e.p2, e.a)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let t = ATable {
            entries: self
                .entries
                .iter()
                .map(|(&(p0, p1, p2), &a)| AEntry { p0, p1, p2, a })
                .collect(),
        };
        serde_json::to_string_pretty(&t).expect("table serializes")
    }
}

impl AProvider for TableAProvider {
    fn a(&self, p0: LatticePoint, p1: LatticePoint, p2: LatticePoint) -> f64 {
        self.entries.get(&(p0, p1, p2)).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Fitted,
    Planted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub variant: ProductVariant,
    pub p1: LatticePoint,
    pub p2: LatticePoint,
    pub values: BTreeMap<LatticePoint, f64>,
    pub provenance: Provenance,
    pub report: Option<FitReport>,
}

#[derive(Serialize, Deserialize)]
struct CoefEntry {
    p0: LatticePoint,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct CoefRepr {
    variant: ProductVariant,
    p1: LatticePoint,
    p2: LatticePoint,
    values: Vec<CoefEntry>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<FitReport>,
}

impl CoefficientSet {
    pub fn zero(
        variant: ProductVariant,
        p1: LatticePoint,
        p2: LatticePoint,
        provenance: Provenance,
    ) -> Self {
        Self {
            variant,
            p1,
            p2,
            values: BTreeMap::new(),
            provenance,
            report: None,
        }
    }

    pub fn get(&self, p0: &LatticePoint) -> f64 {
        self.values.get(p0).copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|c|` outside the sign-rule support, relative to the largest `|c|`.
    pub fn off_support_ratio(&self) -> f64 {
        let s = self.variant.support_sign(self.p1, self.p2);
        let max = self.max_abs();
        if max == 0.0 {
            return 0.0;
        }
        self.values
            .iter()
            .filter(|(p, _)| p.sign() != s)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
            / max
    }

    pub fn to_json(&self) -> String {
        let r = CoefRepr {
            variant: self.variant,
            p1: self.p1,
            p2: self.p2,
            values: self
                .values
                .iter()
                .map(|(p0, c)| CoefEntry { p0: *p0, c: *c })
                .collect(),
            provenance: self.provenance,
            report: self.report.clone(),
        };
        serde_json::to_string_pretty(&r).expect("coefficients serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: CoefRepr = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        Ok(Self {
            variant: r.variant,
            p1: r.p1,
            p2: r.p2,
            values: r.values.into_iter().map(|e| (e.p0, e.c)).collect(),
            provenance: r.provenance,
            report: r.report,
        })
    }
}

/// `A, B, C, D` from `a` via the coefficient identities, divided by `p0²`.
pub fn coefficients_analytic(
    variant: ProductVariant,
    p1: LatticePoint,
    p2: LatticePoint,
    window: LatticeWindow,
    provider: Option<&dyn AProvider>,
    q: f64,
) -> Result<CoefficientSet> {
    let provider =
        provider.ok_or_else(|| Error::MissingProvider("no a-provider configured".into()))?;
    let mut out = CoefficientSet::zero(variant, p1, p2, Provenance::Analytic);
    if !variant.legs_nonzero(p1, p2) {
        return Ok(out);
    }
    let a = |p0: Option<LatticePoint>, x: Option<LatticePoint>, y: Option<LatticePoint>| match (
        p0, x, y,
    ) {
        (Some(p0), Some(x), Some(y)) => a_value(provider, p0, x, y),
        _ => 0.0,
    };
    let neg = |p: LatticePoint| p.negated().ok();
    for p0 in variant.target_points(window) {
        let (s0, s1, s2) = (Some(p0), Some(p1), Some(p2));
        let v = match variant {
            ProductVariant::I => a(s0, s1, s2).powi(2),
            ProductVariant::II => a(s0, s1, s2) * a(s0, neg(p1), neg(p2)),
            ProductVariant::III => a(s0, s1, neg(p2)) * a(neg(p0), s1, s2),
            ProductVariant::IV => a(s0, neg(p1), s2) * a(neg(p0), s1, s2),
        };
        out.values.insert(p0, v / p0.weight(q));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Row phases divided out per support sign; real arithmetic.
    #[default]
    Magnitude,
    Complex,
}

/// Which sign class of `p0` carries unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportChoice {
    /// `sgn p0` from the sign rule applied to each `a`-factor.
    #[default]
    Rule,
    /// The other sign class.
    Opposite,
    /// Both classes.
    Free,
}

impl SupportChoice {
    fn admits(self, rule: Sign, p0: LatticePoint) -> bool {
        match self {
            Self::Rule => p0.sign() == rule,
            Self::Opposite => p0.sign() != rule,
            Self::Free => true,
        }
    }
}

impl FromStr for SupportChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(Self::Rule),
            "opposite" => Ok(Self::Opposite),
            "free" => Ok(Self::Free),
            _ => Err(Error::Input(format!("unknown support choice {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductFitOptions {
    pub mode: FitMode,
    pub support: SupportChoice,
    /// Solve with `c ≥ 0`.
    pub nonnegative: bool,
    pub solve: SolveOptions,
    /// Largest acceptable relative RMS training residual.
    pub residual_ceiling: f64,
}

impl Default for ProductFitOptions {
    fn default() -> Self {
        Self {
            mode: FitMode::Magnitude,
            support: SupportChoice::Rule,
            nonnegative: false,
            solve: SolveOptions::default(),
            residual_ceiling: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    j: u8,
    x: f64,
    discrete: bool,
    lhs: C64,
    cols: Vec<C64>,
}

struct MagnitudeSystem {
    a: DMatrix<f64>,
    magnitude: DVector<f64>,
    signs: DVector<f64>,
    tracked: DVector<f64>,
    /// Rows of the smallest `j` present; their signs seed the others.
    seed_rows: Vec<usize>,
    col_defect: f64,
    lhs_defect: f64,
}

/// The linear system behind one product formula on a set of spectrum points.
#[derive(Debug, Clone)]
pub struct ProductSystem {
    pub variant: ProductVariant,
    pub p1: LatticePoint,
    pub p2: LatticePoint,
    pub targets: Vec<LatticePoint>,
    rows: Vec<Row>,
    legs_nonzero: bool,
    q: f64,
}

impl ProductSystem {
    /// Rows `K(p1)K(p2)` and columns `K^{target}(p0) p0²` for both `j` at every point.
    pub fn build(
        variant: ProductVariant,
        p1: LatticePoint,
        p2: LatticePoint,
        points: &[SpectrumPoint],
        targets: Vec<LatticePoint>,
        ctx: &KernelContext,
    ) -> Result<Self> {
        let q = ctx.q();
        let legs_nonzero = variant.legs_nonzero(p1, p2);
        let mut rows = Vec::with_capacity(points.len() * 2);
        for pt in points {
            let discrete = matches!(pt, SpectrumPoint::Discrete { .. });
            for j in [1u8, 2] {
                if discrete && j == 2 {
                    continue;
                }
                let lhs = if legs_nonzero {
                    kernel(j, variant.left(), p1, pt, ctx)?
                        * kernel(j, variant.right(), p2, pt, ctx)?
                } else {
                    C64::default()
                };
                let cols = targets
                    .iter()
                    .map(|p0| kernel(j, variant.target(), *p0, pt, ctx).map(|k| k * p0.weight(q)))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(Row {
                    j,
                    x: pt.x(q),
                    discrete,
                    lhs,
                    cols,
                });
            }
        }
        Ok(Self {
            variant,
            p1,
            p2,
            targets,
            rows,
            legs_nonzero,
            q,
        })
    }

    /// Replaces the left-hand side with the right-hand side of `planted`.
    pub fn with_planted(mut self, planted: &BTreeMap<LatticePoint, f64>) -> Self {
        for r in &mut self.rows {
            r.lhs = self
                .targets
                .iter()
                .zip(&r.cols)
                .map(|(p, c)| c * planted.get(p).copied().unwrap_or(0.0))
                .sum();
        }
        self.legs_nonzero = true;
        self
    }

    /// Keeps only the rows with this `j`.
    pub fn only_j(mut self, j: u8) -> Self {
        self.rows.retain(|r| r.j == j);
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn support(&self) -> Sign {
        self.variant.support_sign(self.p1, self.p2)
    }

    /// Unit phase of the largest column of each sign class in each row.
    fn class_phases(&self, row: &Row) -> [C64; 2] {
        let mut out = [C64::from(1.0); 2];
        for (slot, s) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
            let best = self
                .targets
                .iter()
                .zip(&row.cols)
                .filter(|(p, _)| p.sign() == s)
                .map(|(_, c)| *c)
                .max_by(|a, b| a.norm().total_cmp(&b.norm()));
            if let Some(c) = best.filter(|c| c.norm() > 0.0) {
                out[slot] = c / c.norm();
            }
        }
        out
    }

    /// Real form of the system in magnitude mode.
    fn magnitude_system(&self, cols: &[usize], rows: &[usize]) -> MagnitudeSystem {
        let support = self.support();
        let phases: Vec<[C64; 2]> = rows
            .iter()
            .map(|&r| self.class_phases(&self.rows[r]))
            .collect();
        let slot = |s: Sign| if s == Sign::Plus { 0 } else { 1 };
        let mut a = DMatrix::zeros(rows.len(), cols.len());
        let mut col_defect: f64 = 0.0;
        for (ri, &r) in rows.iter().enumerate() {
            let row = &self.rows[r];
            let scale = row.cols.iter().fold(0.0, |m: f64, c| m.max(c.norm()));
            for (ci, &c) in cols.iter().enumerate() {
                let v = row.cols[c] * phases[ri][slot(self.targets[c].sign())].conj();
                a[(ri, ci)] = v.re;
                if scale > 0.0 {
                    col_defect = col_defect.max(v.im.abs() / scale);
                }
            }
        }
        let class = cols.first().map_or(support, |&c| self.targets[c].sign());
        // Starting signs: the left side against the column phase, up to a quarter turn per j.
        let magnitude =
            DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.rows[r].lhs.norm()));
        let mut signs = DVector::from_element(rows.len(), 1.0);
        let mut im_sq = 0.0;
        let mut tot_sq = 0.0;
        for j in [1u8, 2] {
            let idx: Vec<usize> = (0..rows.len())
                .filter(|&ri| self.rows[rows[ri]].j == j)
                .collect();
            let rotated = |omega: f64| -> Vec<C64> {
                idx.iter()
                    .map(|&ri| {
                        self.rows[rows[ri]].lhs
                            * phases[ri][slot(class)].conj()
                            * C64::from_polar(1.0, -omega)
                    })
                    .collect()
            };
            let energy = |v: &[C64]| v.iter().map(|z| z.re * z.re).sum::<f64>();
            let (r0, r1) = (rotated(0.0), rotated(FRAC_PI_2));
            let best = if energy(&r1) > energy(&r0) { r1 } else { r0 };
            for (k, &ri) in idx.iter().enumerate() {
                signs[ri] = if best[k].re < 0.0 { -1.0 } else { 1.0 };
                im_sq += best[k].im * best[k].im;
                tot_sq += best[k].norm_sqr();
            }
        }
        let lhs_defect = if tot_sq > 0.0 {
            (im_sq / tot_sq).sqrt()
        } else {
            0.0
        };
        // Second guess: follow arg(L φ̄) along x and flip at jumps near π, which mark
        // zero crossings when the residual phase drifts slowly.
        let mut tracked = DVector::from_element(rows.len(), 1.0);
        for j in [1u8, 2] {
            let mut idx: Vec<usize> = (0..rows.len())
                .filter(|&ri| self.rows[rows[ri]].j == j)
                .collect();
            idx.sort_by(|&u, &v| self.rows[rows[u]].x.total_cmp(&self.rows[rows[v]].x));
            let mut sign = 1.0;
            let mut prev: Option<f64> = None;
            for &ri in &idx {
                let z = self.rows[rows[ri]].lhs * phases[ri][slot(class)].conj();
                if z.norm() == 0.0 {
                    tracked[ri] = sign;
                    continue;
                }
                let ang = z.arg();
                if let Some(p) = prev {
                    let d = (ang - p + PI).rem_euclid(2.0 * PI) - PI;
                    if d.abs() > FRAC_PI_2 {
                        sign = -sign;
                    }
                }
                prev = Some(ang);
                tracked[ri] = sign;
            }
        }
        let j0 = rows.iter().map(|&r| self.rows[r].j).min().unwrap_or(1);
        let seed_rows = (0..rows.len())
            .filter(|&ri| self.rows[rows[ri]].j == j0)
            .collect();
        MagnitudeSystem {
            a,
            magnitude,
            signs,
            tracked,
            seed_rows,
            col_defect,
            lhs_defect,
        }
    }

    /// Signs of the prediction from a fit on the seed rows alone.
    fn seed_signs(
        &self,
        ms: &MagnitudeSystem,
        init: &DVector<f64>,
        opts: &ProductFitOptions,
    ) -> Result<DVector<f64>> {
        if ms.seed_rows.len() == ms.a.nrows() {
            return Ok(init.clone());
        }
        let a = ms.a.select_rows(&ms.seed_rows);
        let b = DVector::from_iterator(
            ms.seed_rows.len(),
            ms.seed_rows.iter().map(|&r| init[r] * ms.magnitude[r]),
        );
        let x = real_solve(&a, &b, opts)?.x;
        let pred = &ms.a * x;
        let floor = 1e-12 * pred.amax();
        Ok(DVector::from_iterator(
            pred.len(),
            pred.iter()
                .zip(init.iter())
                .map(|(v, s)| if v.abs() > floor { v.signum() } else { *s }),
        ))
    }

    /// Alternates between solving with right-hand side `s·|L|` and resetting `s` to the
    /// signs of the prediction. Neither step increases the residual.
    fn retrieve_signs(
        &self,
        ms: &MagnitudeSystem,
        cols: &[usize],
        opts: &ProductFitOptions,
    ) -> Result<(DVector<f64>, DVector<f64>, LsSolution, usize, usize)> {
        let mut starts = Vec::new();
        for init in [&ms.signs, &ms.tracked] {
            let seeded = self.seed_signs(ms, init, opts)?;
            if opts.nonnegative {
                starts.push(-&seeded);
            }
            starts.push(seeded);
        }
        let mut best: Option<(f64, DVector<f64>, DVector<f64>, LsSolution, usize, usize)> = None;
        for start in starts {
            let mut s = start;
            let mut flips = 0;
            let mut sweeps = 0;
            let (b, sol) = loop {
                sweeps += 1;
                let b = s.component_mul(&ms.magnitude);
                let sol = real_solve(&ms.a, &b, opts)?;
                let pred = &ms.a * &sol.x;
                let floor = 1e-12 * pred.amax();
                let mut changed = 0;
                for (r, v) in pred.iter().enumerate() {
                    if v.abs() > floor && v.signum() != s[r] {
                        s[r] = v.signum();
                        changed += 1;
                    }
                }
                flips += changed;
                if changed == 0 || sweeps >= MAX_SIGN_SWEEPS {
                    break (b, sol);
                }
            };
            let mut x = sol.x.clone();
            let mut b = b;
            let total: f64 = cols
                .iter()
                .zip(x.iter())
                .map(|(&c, v)| v * self.targets[c].weight(self.q))
                .sum();
            if !opts.nonnegative && total < 0.0 {
                x.neg_mut();
                b.neg_mut();
            }
            let r = (&ms.a * &x - &b).norm();
            if best.as_ref().is_none_or(|t| r < t.0) {
                best = Some((r, x, b, sol, sweeps, flips));
            }
        }
        let (_, x, b, sol, sweeps, flips) = best.expect("at least one start");
        Ok((x, b, sol, sweeps, flips))
    }

    fn complex_system(&self, cols: &[usize], rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * rows.len(), cols.len());
        let mut b = DVector::zeros(2 * rows.len());
        for (ri, &r) in rows.iter().enumerate() {
            let row = &self.rows[r];
            for (ci, &c) in cols.iter().enumerate() {
                a[(2 * ri, ci)] = row.cols[c].re;
                a[(2 * ri + 1, ci)] = row.cols[c].im;
            }
            b[2 * ri] = row.lhs.re;
            b[2 * ri + 1] = row.lhs.im;
        }
        (a, b)
    }

    /// Least-squares coefficients over the principal rows.
    pub fn solve(&self, opts: &ProductFitOptions) -> Result<CoefficientSet> {
        let mut out = CoefficientSet::zero(self.variant, self.p1, self.p2, Provenance::Fitted);
        let mut report = FitReport::new("coefficients_fitted");
        let support = self.support();
        let cols: Vec<usize> = (0..self.targets.len())
            .filter(|&c| opts.support.admits(support, self.targets[c]))
            .collect();
        let rows: Vec<usize> = (0..self.rows.len())
            .filter(|&r| !self.rows[r].discrete)
            .collect();
        report.unknowns = cols.len();
        for p in &self.targets {
            out.values.insert(*p, 0.0);
        }
        let lhs_norm = rows
            .iter()
            .map(|&r| self.rows[r].lhs.norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !self.legs_nonzero || lhs_norm == 0.0 || cols.is_empty() {
            report
                .warnings
                .push("zero functional: left-hand side vanishes identically".into());
            report.condition_number = 1.0;
            out.report = Some(report);
            return Ok(out);
        }
        if rows.len() < 2 * cols.len() {
            report.warnings.push(format!(
                "{} rows for {} unknowns; fewer than twice as many",
                rows.len(),
                cols.len()
            ));
        }
        let (x, a, b, sol) = match opts.mode {
            FitMode::Magnitude => {
                if cols
                    .iter()
                    .any(|&c| self.targets[c].sign() != self.targets[cols[0]].sign())
                {
                    return Err(Error::Input(
                        "magnitude mode needs a single-sign support".into(),
                    ));
                }
                let ms = self.magnitude_system(&cols, &rows);
                report.set("column_phase_defect", ms.col_defect);
                report.set("lhs_phase_defect", ms.lhs_defect);
                let (x, b, sol, sweeps, flips) = self.retrieve_signs(&ms, &cols, opts)?;
                report.set("sign_sweeps", sweeps as f64);
                report.set("sign_flips", flips as f64);
                (x, ms.a, b, sol)
            }
            FitMode::Complex => {
                let (a, b) = self.complex_system(&cols, &rows);
                let sol = real_solve(&a, &b, opts)?;
                (sol.x.clone(), a, b, sol)
            }
        };
        let resid = &a * &x - &b;
        let rel = resid.norm() / b.norm().max(f64::MIN_POSITIVE);
        report.residual_rms = rel;
        report.residual_max = resid.amax() / b.amax().max(f64::MIN_POSITIVE);
        report.condition_number = sol.condition_used;
        report.rank = sol.rank;
        report.set("condition_full", sol.condition_full);
        for (ci, &c) in cols.iter().enumerate() {
            out.values.insert(self.targets[c], x[ci]);
        }
        report.set("off_support_ratio", out.off_support_ratio());
        if rel > opts.residual_ceiling {
            return Err(Error::ResidualTooLarge {
                residual: rel,
                ceiling: opts.residual_ceiling,
            });
        }
        out.report = Some(report);
        Ok(out)
    }

    /// Residuals of `coeffs` on every row.
    pub fn verify(&self, coeffs: &CoefficientSet, mode: FitMode) -> FitReport {
        let mut report = FitReport::new("verify");
        report.unknowns = coeffs.values.len();
        let c: Vec<f64> = self.targets.iter().map(|p| coeffs.get(p)).collect();
        let slot = |s: Sign| if s == Sign::Plus { 0 } else { 1 };
        let mut per_j = [(0.0f64, 0.0f64, 0.0f64); 2];
        let mut trivial: f64 = 0.0;
        let mut disc = (0.0f64, 0.0f64);
        for row in &self.rows {
            let (l, r) = match mode {
                FitMode::Complex => {
                    let rhs: C64 = row.cols.iter().zip(&c).map(|(k, v)| k * v).sum();
                    (row.lhs.norm(), (row.lhs - rhs).norm())
                }
                FitMode::Magnitude => {
                    let ph = self.class_phases(row);
                    let rhs: f64 = self
                        .targets
                        .iter()
                        .zip(row.cols.iter().zip(&c))
                        .map(|(p, (k, v))| (k * ph[slot(p.sign())].conj()).re * v)
                        .sum();
                    (row.lhs.norm(), (row.lhs.norm() - rhs.abs()).abs())
                }
            };
            if row.discrete {
                if self.variant == ProductVariant::I {
                    disc.0 += r * r;
                    disc.1 += l * l;
                } else {
                    let rhs: f64 = row.cols.iter().zip(&c).map(|(k, v)| (k * v).norm()).sum();
                    trivial = trivial.max(row.lhs.norm()).max(rhs);
                }
                continue;
            }
            let e = &mut per_j[row.j as usize - 1];
            e.0 += r * r;
            e.1 += l * l;
            e.2 = e.2.max(r);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        let mut worst: f64 = 0.0;
        for (jj, (r2, l2, mx)) in per_j.iter().enumerate() {
            let scale = l2.sqrt().max(f64::MIN_POSITIVE);
            report.set(
                &format!("j{}_rms", jj + 1),
                (r2 / l2.max(f64::MIN_POSITIVE)).sqrt(),
            );
            report.set(&format!("j{}_max", jj + 1), mx / scale);
            num += r2;
            den += l2;
            worst = worst.max(mx / scale);
        }
        report.residual_rms = (num / den.max(f64::MIN_POSITIVE)).sqrt();
        report.residual_max = worst;
        if self.rows.iter().any(|r| r.discrete) {
            if self.variant == ProductVariant::I {
                report.set(
                    "discrete_rms",
                    (disc.0 / disc.1.max(f64::MIN_POSITIVE)).sqrt(),
                );
            } else {
                report.set("triviality_max", trivial);
            }
        }
        report
    }
}

const MAX_SIGN_SWEEPS: usize = 100;

fn real_solve(a: &DMatrix<f64>, b: &DVector<f64>, opts: &ProductFitOptions) -> Result<LsSolution> {
    if !opts.nonnegative {
        return lstsq(a, b, &opts.solve);
    }
    let s = nnls(a, b)?;
    if s.condition > opts.solve.max_condition {
        return Err(Error::IllConditioned {
            condition: s.condition,
            limit: opts.solve.max_condition,
        });
    }
    Ok(LsSolution {
        x: s.x,
        rank: s.passive.len(),
        condition_full: s.condition,
        condition_used: s.condition,
    })
}

/// Fits coefficients on principal points `x_grid`.
pub fn coefficients_fitted(
    variant: ProductVariant,
    p1: LatticePoint,
    p2: LatticePoint,
    x_grid: &[f64],
    window: LatticeWindow,
    ctx: &KernelContext,
    opts: &ProductFitOptions,
) -> Result<CoefficientSet> {
    let points = x_grid
        .iter()
        .map(|&x| SpectrumPoint::principal(x))
        .collect::<Result<Vec<_>>>()?;
    let sys = ProductSystem::build(variant, p1, p2, &points, variant.target_points(window), ctx)?;
    sys.solve(opts)
}

/// Held-out residuals of `coeffs` on `points`.
pub fn verify(
    coeffs: &CoefficientSet,
    points: &[SpectrumPoint],
    window: LatticeWindow,
    ctx: &KernelContext,
    mode: FitMode,
) -> Result<FitReport> {
    let v = coeffs.variant;
    let mut targets = v.target_points(window);
    for p in coeffs.values.keys() {
        if !targets.contains(p) {
            targets.push(*p);
        }
    }
    targets.sort();
    let sys = ProductSystem::build(v, coeffs.p1, coeffs.p2, points, targets, ctx)?;
    Ok(sys.verify(coeffs, mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub sum: f64,
    pub target: f64,
    pub deviation: f64,
    /// Estimated mass beyond the window, from the geometric decay of the edge terms.
    pub leak_bound: f64,
    pub within_bound: bool,
}

/// `Σ A_{p0} p0² - p1² p2²`, with an estimate of the mass outside the window.
pub fn normalization_check(coeffs: &CoefficientSet, q: f64) -> Result<NormalizationReport> {
    if coeffs.variant != ProductVariant::I {
        return Err(Error::Input(
            "normalization applies to variant I coefficients".into(),
        ));
    }
    let sum: f64 = coeffs.values.iter().map(|(p, c)| c * p.weight(q)).sum();
    let target = coeffs.p1.weight(q) * coeffs.p2.weight(q);
    let mut leak = 0.0;
    for s in [Sign::Plus, Sign::Minus] {
        let terms: Vec<(i32, f64)> = coeffs
            .values
            .iter()
            .filter(|(p, _)| p.sign() == s)
            .map(|(p, c)| (p.k(), (c * p.weight(q)).abs()))
            .collect();
        if terms.iter().all(|(_, t)| *t == 0.0) {
            continue;
        }
        let mut tail = |edge: f64, inner: f64| {
            if edge == 0.0 {
                return;
            }
            let r = if inner > 0.0 {
                edge / inner
            } else {
                f64::INFINITY
            };
            leak += if r < 1.0 {
                edge * r / (1.0 - r)
            } else {
                f64::INFINITY
            };
        };
        let n = terms.len();
        if n >= 2 {
            tail(terms[n - 1].1, terms[n - 2].1);
            // the negative branch ends at k = 1; the positive one continues to k → -∞
            if s == Sign::Plus {
                tail(terms[0].1, terms[1].1);
            }
        } else {
            leak = f64::INFINITY;
        }
    }
    let deviation = sum - target;
    Ok(NormalizationReport {
        sum,
        target,
        deviation,
        leak_bound: leak,
        within_bound: deviation.abs() <= leak,
    })
}
