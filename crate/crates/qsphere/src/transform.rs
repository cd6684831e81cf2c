//! Graded spherical Fourier transform between functions on the lattice and
//! 2×2-matrix fields on the spherical spectrum.
//!
//! Field entries follow the printed layout
//!
//! ```text
//! [[ (+,+)  (-,+) ]
//!  [ (+,-)  (-,-) ]]
//! ```
//!
//! The diagonal carries the even part of a function and the off-diagonal the odd part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{hermitian_norm, lstsq, nnls, FitReport, SolveOptions};
use crate::kernels::{kernel, KernelContext, SignPair, SpectrumPoint};
use crate::lattice::{mu, GradedFunction, LatticePoint, LatticeWindow, Sign};

/// Entry positions, row-major.
pub const LAYOUT: [SignPair; 4] = SignPair::ALL;

const PP: usize = 0;
const MP: usize = 1;
const PM: usize = 2;
const MM: usize = 3;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let step = pn / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((t, 2.0 / ((1.0 - t * t) * dp * dp)));
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub x: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub principal: Vec<Node>,
    pub discrete_ns: Vec<u32>,
    pub j_values: Vec<u8>,
}

impl SpectralGrid {
    /// `nodes` Gauss–Legendre points mapped to `(0, 1)` and discrete `n = 1..=n_max`.
    pub fn gauss(nodes: usize, n_max: u32) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Input(
                "grid needs at least one principal node".into(),
            ));
        }
        let principal = gauss_legendre(nodes)
            .into_iter()
            .map(|(t, w)| Node {
                x: 0.5 * (t + 1.0),
                w: 0.5 * w,
            })
            .collect();
        Ok(Self {
            principal,
            discrete_ns: (1..=n_max).collect(),
            j_values: vec![1, 2],
        })
    }

    pub fn from_parts(principal: Vec<Node>, discrete_ns: Vec<u32>) -> Result<Self> {
        let g = Self {
            principal,
            discrete_ns,
            j_values: vec![1, 2],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for n in &self.principal {
            if !(n.x > 0.0 && n.x <= 1.0) || !(n.w > 0.0) {
                return Err(Error::Input(format!(
                    "principal node x = {}, w = {} is invalid",
                    n.x, n.w
                )));
            }
        }
        if self.discrete_ns.contains(&0) {
            return Err(Error::Input("discrete series starts at n = 1".into()));
        }
        if self.j_values != [1, 2] {
            return Err(Error::Input("j_values must be [1, 2]".into()));
        }
        Ok(())
    }

    pub fn principal_points(&self) -> Vec<SpectrumPoint> {
        self.principal
            .iter()
            .map(|n| SpectrumPoint::Principal { x: n.x })
            .collect()
    }

    pub fn discrete_points(&self) -> Vec<SpectrumPoint> {
        self.discrete_ns
            .iter()
            .map(|&n| SpectrumPoint::Discrete { n })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.principal.len() + self.discrete_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Plancherel density: one value per principal node and per discrete `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub principal: Vec<f64>,
    pub discrete: Vec<f64>,
}

impl Density {
    pub fn constant(grid: &SpectralGrid, value: f64) -> Self {
        Self {
            principal: vec![value; grid.principal.len()],
            discrete: vec![value; grid.discrete_ns.len()],
        }
    }

    pub fn check(&self, grid: &SpectralGrid) -> Result<()> {
        if self.principal.len() != grid.principal.len()
            || self.discrete.len() != grid.discrete_ns.len()
        {
            return Err(Error::GridMismatch(format!(
                "density has {}+{} values, grid has {}+{} nodes",
                self.principal.len(),
                self.discrete.len(),
                grid.principal.len(),
                grid.discrete_ns.len()
            )));
        }
        if self
            .principal
            .iter()
            .chain(&self.discrete)
            .any(|d| !(*d >= 0.0) || !d.is_finite())
        {
            return Err(Error::Input(
                "density must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn to_repr(&self, grid: &SpectralGrid) -> DensityRepr {
        DensityRepr {
            principal: grid
                .principal
                .iter()
                .zip(&self.principal)
                .map(|(n, d)| DensityX { x: n.x, d: *d })
                .collect(),
            discrete: grid
                .discrete_ns
                .iter()
                .zip(&self.discrete)
                .map(|(n, d)| DensityN { n: *n, d: *d })
                .collect(),
        }
    }

    pub fn to_json(&self, grid: &SpectralGrid) -> String {
        serde_json::to_string_pretty(&self.to_repr(grid)).expect("density serializes")
    }

    /// Parses a density and matches it to `grid` node by node.
    pub fn from_json(s: &str, grid: &SpectralGrid) -> Result<Self> {
        let r: DensityRepr = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        let xs: Vec<f64> = r.principal.iter().map(|e| e.x).collect();
        let ns: Vec<u32> = r.discrete.iter().map(|e| e.n).collect();
        let gx: Vec<f64> = grid.principal.iter().map(|n| n.x).collect();
        if xs != gx || ns != grid.discrete_ns {
            return Err(Error::GridMismatch(
                "density nodes differ from the grid".into(),
            ));
        }
        let d = Self {
            principal: r.principal.iter().map(|e| e.d).collect(),
            discrete: r.discrete.iter().map(|e| e.d).collect(),
        };
        d.check(grid)?;
        Ok(d)
    }
}

#[derive(Serialize, Deserialize)]
struct DensityX {
    x: f64,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityN {
    n: u32,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityRepr {
    principal: Vec<DensityX>,
    discrete: Vec<DensityN>,
}

/// A transform value: a 2×2 matrix per principal node and `j`, a scalar per discrete `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalField {
    pub grid: SpectralGrid,
    /// Indexed `[node][j - 1]`, entries in [`LAYOUT`] order.
    pub principal: Vec<[[C64; 4]; 2]>,
    pub discrete: Vec<C64>,
}

impl SphericalField {
    pub fn zero(grid: &SpectralGrid) -> Self {
        Self {
            grid: grid.clone(),
            principal: vec![[[C64::default(); 4]; 2]; grid.principal.len()],
            discrete: vec![C64::default(); grid.discrete_ns.len()],
        }
    }

    pub fn is_diagonal_only(&self) -> bool {
        self.principal
            .iter()
            .flatten()
            .all(|m| m[MP] == C64::default() && m[PM] == C64::default())
    }

    pub fn is_off_diagonal_only(&self) -> bool {
        self.principal
            .iter()
            .flatten()
            .all(|m| m[PP] == C64::default() && m[MM] == C64::default())
            && self.discrete.iter().all(|v| *v == C64::default())
    }

    pub fn to_json(&self, density: Option<&Density>) -> String {
        let repr = FieldRepr {
            grid: self.grid.clone(),
            principal: self
                .grid
                .principal
                .iter()
                .zip(&self.principal)
                .flat_map(|(n, mats)| {
                    mats.iter().enumerate().map(move |(jj, m)| PrincipalEntry {
                        x: n.x,
                        w: n.w,
                        j: jj as u8 + 1,
                        m: m.map(|c| [c.re, c.im]),
                    })
                })
                .collect(),
            discrete: self
                .grid
                .discrete_ns
                .iter()
                .zip(&self.discrete)
                .map(|(n, v)| DiscreteEntry {
                    n: *n,
                    re: v.re,
                    im: v.im,
                })
                .collect(),
            density: density.map(|d| d.to_repr(&self.grid)),
        };
        serde_json::to_string_pretty(&repr).expect("field serializes")
    }

    /// Parses a field and its optional density.
    pub fn from_json(s: &str) -> Result<(Self, Option<Density>)> {
        let r: FieldRepr = serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))?;
        r.grid.validate()?;
        let mut field = Self::zero(&r.grid);
        let mut seen = vec![[false; 2]; r.grid.principal.len()];
        for e in &r.principal {
            let i = r
                .grid
                .principal
                .iter()
                .position(|n| n.x == e.x)
                .ok_or_else(|| Error::GridMismatch(format!("x = {} is not a grid node", e.x)))?;
            if !(1..=2).contains(&e.j) {
                return Err(Error::Input(format!("j = {} is not in {{1, 2}}", e.j)));
            }
            field.principal[i][e.j as usize - 1] = e.m.map(|[re, im]| C64::new(re, im));
            seen[i][e.j as usize - 1] = true;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::GridMismatch(
                "field is not defined on every principal node".into(),
            ));
        }
        if r.discrete.iter().map(|e| e.n).collect::<Vec<_>>() != r.grid.discrete_ns {
            return Err(Error::GridMismatch(
                "discrete entries differ from the grid".into(),
            ));
        }
        field.discrete = r.discrete.iter().map(|e| C64::new(e.re, e.im)).collect();
        let density = match r.density {
            Some(d) => Some(Density::from_json(
                &serde_json::to_string(&d).expect("reserialize"),
                &r.grid,
            )?),
            None => None,
        };
        Ok((field, density))
    }

    /// One row per `(x, j, entry)`, then one per discrete point.
    pub fn to_csv(&self, q: f64) -> String {
        let mut out = String::from("kind,x,j,entry,re,im\n");
        for (n, mats) in self.grid.principal.iter().zip(&self.principal) {
            for (jj, m) in mats.iter().enumerate() {
                for (s, v) in LAYOUT.iter().zip(m) {
                    out.push_str(&format!(
                        "principal,{},{},{},{},{}\n",
                        n.x,
                        jj + 1,
                        s,
                        v.re,
                        v.im
                    ));
                }
            }
        }
        for (n, v) in self.grid.discrete_ns.iter().zip(&self.discrete) {
            let x = SpectrumPoint::Discrete { n: *n }.x(q);
            out.push_str(&format!("discrete,{x},1,++,{},{}\n", v.re, v.im));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct PrincipalEntry {
    x: f64,
    w: f64,
    j: u8,
    m: [[f64; 2]; 4],
}

#[derive(Serialize, Deserialize)]
struct DiscreteEntry {
    n: u32,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    grid: SpectralGrid,
    principal: Vec<PrincipalEntry>,
    discrete: Vec<DiscreteEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<DensityRepr>,
}

/// Kernel values for every window point on every grid node.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub points: Vec<LatticePoint>,
    principal: Vec<C64>,
    discrete: Vec<C64>,
    nodes: usize,
}

impl KernelTable {
    pub fn build(
        grid: &SpectralGrid,
        points: &[LatticePoint],
        ctx: &KernelContext,
    ) -> Result<Self> {
        let np = points.len();
        let mut principal = Vec::with_capacity(grid.principal.len() * 8 * np);
        for pt in grid.principal_points() {
            for j in [1u8, 2] {
                for s in LAYOUT {
                    for p in points {
                        principal.push(kernel(j, s, *p, &pt, ctx)?);
                    }
                }
            }
        }
        let mut discrete = Vec::with_capacity(grid.discrete_ns.len() * np);
        for pt in grid.discrete_points() {
            for p in points {
                discrete.push(kernel(1, SignPair::PP, *p, &pt, ctx)?);
            }
        }
        Ok(Self {
            points: points.to_vec(),
            principal,
            discrete,
            nodes: grid.principal.len(),
        })
    }

    /// `K_j^{entry}(points[p]; x_node)`.
    pub fn principal(&self, node: usize, j: u8, entry: usize, p: usize) -> C64 {
        let np = self.points.len();
        self.principal[((node * 2 + j as usize - 1) * 4 + entry) * np + p]
    }

    pub fn discrete(&self, n: usize, p: usize) -> C64 {
        self.discrete[n * self.points.len() + p]
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }
}

/// `F₂(f ⊕ g)` on `grid`.
pub fn forward(
    f: &GradedFunction,
    grid: &SpectralGrid,
    ctx: &KernelContext,
) -> Result<SphericalField> {
    let q = ctx.q();
    let even: Vec<(LatticePoint, C64)> = f
        .even_entries()
        .map(|(p, v)| (*p, v * p.weight(q)))
        .collect();
    let odd: Vec<(LatticePoint, C64)> = f
        .odd_entries()
        .map(|(p, v)| (*p, v * p.weight(q)))
        .collect();
    let mut out = SphericalField::zero(grid);
    for (i, pt) in grid.principal_points().iter().enumerate() {
        for j in [1u8, 2] {
            let m = &mut out.principal[i][j as usize - 1];
            for (entry, terms) in [(PP, &even), (MP, &odd), (PM, &odd), (MM, &even)] {
                for (p, v) in terms.iter() {
                    m[entry] += kernel(j, LAYOUT[entry], *p, pt, ctx)? * v;
                }
            }
        }
    }
    for (i, pt) in grid.discrete_points().iter().enumerate() {
        for (p, v) in &even {
            out.discrete[i] += kernel(1, SignPair::PP, *p, pt, ctx)? * v;
        }
    }
    Ok(out)
}

/// Inverse transform with density `d`, evaluated on `window`.
///
/// The odd part pairs the `(-,+)` entry with `conj K^{+,-}` and the `(+,-)` entry
/// with `conj K^{-,+}`.
pub fn inverse(
    field: &SphericalField,
    grid: &SpectralGrid,
    density: &Density,
    window: LatticeWindow,
    ctx: &KernelContext,
) -> Result<GradedFunction> {
    if field.grid != *grid {
        return Err(Error::GridMismatch(
            "field was computed on a different grid".into(),
        ));
    }
    density.check(grid)?;
    let mut out = GradedFunction::zero(ctx.q(), window);
    let pts = grid.principal_points();
    let has_odd = !field.is_diagonal_only();
    let has_even = !field.is_off_diagonal_only();
    for p in window.points() {
        let mut even = C64::default();
        let mut odd = C64::default();
        for (i, pt) in pts.iter().enumerate() {
            let wd = grid.principal[i].w * density.principal[i];
            for j in [1u8, 2] {
                let m = &field.principal[i][j as usize - 1];
                let k = |s: usize| kernel(j, LAYOUT[s], p, pt, ctx).map(|v| v.conj());
                if has_even {
                    even += (m[PP] * k(PP)? + m[MM] * k(MM)?) * wd;
                }
                if has_odd && p.inside_unit() {
                    odd += (m[MP] * k(PM)? + m[PM] * k(MP)?) * wd;
                }
            }
        }
        if has_even {
            for (i, pt) in grid.discrete_points().iter().enumerate() {
                even += field.discrete[i]
                    * kernel(1, SignPair::PP, p, pt, ctx)?.conj()
                    * density.discrete[i];
            }
        }
        out.set_even(p, even)?;
        if p.inside_unit() {
            out.set_odd(p, odd)?;
        }
    }
    Ok(out)
}

/// A basis vector `δ_p` in one parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisVector {
    pub odd: bool,
    pub p: LatticePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSelection {
    /// Even and odd basis vectors on the whole window.
    #[default]
    Full,
    Even,
    /// Even basis vectors with `sgn p` fixed.
    EvenSign(Sign),
}

impl BasisSelection {
    pub fn vectors(self, window: LatticeWindow) -> Vec<BasisVector> {
        let pts = window.points();
        let even = |filter: Option<Sign>| {
            pts.iter()
                .filter(move |p| filter.is_none_or(|s| p.sign() == s))
                .map(|p| BasisVector { odd: false, p: *p })
                .collect::<Vec<_>>()
        };
        match self {
            BasisSelection::Full => {
                let mut v = even(None);
                v.extend(
                    pts.iter()
                        .filter(|p| p.inside_unit())
                        .map(|p| BasisVector { odd: true, p: *p }),
                );
                v
            }
            BasisSelection::Even => even(None),
            BasisSelection::EvenSign(s) => even(Some(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityFitOptions {
    pub basis: BasisSelection,
    /// Weight of a first-difference penalty between adjacent principal nodes.
    pub tikhonov: Option<f64>,
    pub max_condition: f64,
}

impl Default for DensityFitOptions {
    fn default() -> Self {
        Self {
            basis: BasisSelection::Full,
            tikhonov: None,
            max_condition: 1e10,
        }
    }
}

#[derive(Clone, Copy)]
enum Pairing {
    /// `inverse ∘ forward`.
    RoundTrip,
    /// `⟨F e_p, F e_p'⟩` in `L²(N̂)`.
    Plancherel,
}

/// Per-node contribution to the matrix `[(e_{p'}, T e_p)]` for unit density, where
/// `e_p = δ_p/|p|` is orthonormal. Columns are nodes, principal first.
fn node_matrices(
    table: &KernelTable,
    grid: &SpectralGrid,
    basis: &[BasisVector],
    pairing: Pairing,
    q: f64,
) -> Vec<DMatrix<C64>> {
    let idx: Vec<usize> = basis
        .iter()
        .map(|b| {
            table
                .points
                .iter()
                .position(|p| *p == b.p)
                .expect("basis in table")
        })
        .collect();
    let nb = basis.len();
    let mut out = Vec::with_capacity(grid.len());
    for node in 0..grid.principal.len() {
        let w = grid.principal[node].w;
        let mut m = DMatrix::<C64>::zeros(nb, nb);
        for (a, ba) in basis.iter().enumerate() {
            for (b, bb) in basis.iter().enumerate() {
                if ba.odd != bb.odd {
                    continue;
                }
                let (pa, pb) = (idx[a], idx[b]);
                let mut s = C64::default();
                for j in [1u8, 2] {
                    let k = |e: usize, p: usize| table.principal(node, j, e, p);
                    s += if !ba.odd {
                        k(PP, pb) * k(PP, pa).conj() + k(MM, pb) * k(MM, pa).conj()
                    } else {
                        match pairing {
                            Pairing::RoundTrip => {
                                k(MP, pb) * k(PM, pa).conj() + k(PM, pb) * k(MP, pa).conj()
                            }
                            Pairing::Plancherel => {
                                k(MP, pb) * k(MP, pa).conj() + k(PM, pb) * k(PM, pa).conj()
                            }
                        }
                    };
                }
                m[(a, b)] = s * w * ba.p.value(q).abs() * bb.p.value(q).abs();
            }
        }
        out.push(m);
    }
    for n in 0..grid.discrete_ns.len() {
        let mut m = DMatrix::<C64>::zeros(nb, nb);
        for (a, ba) in basis.iter().enumerate() {
            for (b, bb) in basis.iter().enumerate() {
                if ba.odd || bb.odd {
                    continue;
                }
                let s = table.discrete(n, idx[b]) * table.discrete(n, idx[a]).conj();
                m[(a, b)] = s * ba.p.value(q).abs() * bb.p.value(q).abs();
            }
        }
        out.push(m);
    }
    out
}

fn weighted_sum(mats: &[DMatrix<C64>], d: &[f64]) -> DMatrix<C64> {
    let n = mats.first().map_or(0, |m| m.nrows());
    let mut acc = DMatrix::<C64>::zeros(n, n);
    for (m, w) in mats.iter().zip(d) {
        if *w != 0.0 {
            acc += m * C64::from(*w);
        }
    }
    acc
}

fn flatten_density(d: &Density) -> Vec<f64> {
    d.principal.iter().chain(&d.discrete).copied().collect()
}

/// Fits `d ≥ 0` so that `inverse ∘ forward` is the identity on the chosen basis.
pub fn fit_density(
    grid: &SpectralGrid,
    window: LatticeWindow,
    ctx: &KernelContext,
    opts: &DensityFitOptions,
) -> Result<(Density, FitReport)> {
    grid.validate()?;
    let basis = opts.basis.vectors(window);
    if basis.is_empty() {
        return Err(Error::Input(
            "density fit needs at least one basis vector".into(),
        ));
    }
    let table = KernelTable::build(grid, &window.points(), ctx)?;
    let mats = node_matrices(&table, grid, &basis, Pairing::RoundTrip, ctx.q());
    let nb = basis.len();
    let nn = mats.len();

    // Only same-parity entries carry information; the rest are zero on both sides.
    let entries: Vec<(usize, usize)> = (0..nb)
        .flat_map(|a| (0..nb).map(move |b| (a, b)))
        .filter(|&(a, b)| basis[a].odd == basis[b].odd)
        .collect();
    let np = grid.principal.len();
    let smooth_rows = if opts.tikhonov.is_some() && np > 1 {
        np - 1
    } else {
        0
    };
    let rows = 2 * entries.len() + smooth_rows;
    let mut a = DMatrix::<f64>::zeros(rows, nn);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, &(i, k)) in entries.iter().enumerate() {
        for (c, m) in mats.iter().enumerate() {
            a[(2 * r, c)] = m[(i, k)].re;
            a[(2 * r + 1, c)] = m[(i, k)].im;
        }
        b[2 * r] = if i == k { 1.0 } else { 0.0 };
    }
    if let Some(tau) = opts.tikhonov {
        let s = tau.sqrt();
        for r in 0..smooth_rows {
            a[(2 * entries.len() + r, r)] = s;
            a[(2 * entries.len() + r, r + 1)] = -s;
        }
    }

    let sol = nnls(&a, &b)?;
    if sol.condition > opts.max_condition {
        return Err(Error::IllConditioned {
            condition: sol.condition,
            limit: opts.max_condition,
        });
    }
    let mut report = FitReport::new("fit_density");
    report.unknowns = nn;
    report.rank = sol.passive.len();
    report.condition_number = sol.condition;

    let free = lstsq(
        &a,
        &b,
        &SolveOptions {
            rcond: Some(1e-12),
            max_condition: f64::INFINITY,
        },
    )?;
    let scale = free.x.amax().max(f64::MIN_POSITIVE);
    let negative = free.x.iter().filter(|v| **v < -1e-9 * scale).count();
    if negative > 0 {
        report.warnings.push(format!(
            "NegativePressure: unconstrained solution has {negative} negative components (min {:.3e}), clipped",
            free.x.min()
        ));
    }

    let d: Vec<f64> = sol.x.iter().copied().collect();
    let density = Density {
        principal: d[..np].to_vec(),
        discrete: d[np..].to_vec(),
    };
    let g = weighted_sum(&mats, &d);
    let mut sq_sum = 0.0;
    let mut worst: f64 = 0.0;
    for (c, bv) in basis.iter().enumerate() {
        let col: f64 = (0..nb)
            .map(|r| {
                (g[(r, c)]
                    - if r == c {
                        C64::from(1.0)
                    } else {
                        C64::default()
                    })
                .norm_sqr()
            })
            .sum();
        sq_sum += col;
        worst = worst.max(col.sqrt());
        let tag = if bv.odd { "odd" } else { "even" };
        report.set(&format!("residual.{tag}[{}]", bv.p), col.sqrt());
    }
    report.residual_rms = (sq_sum / nb as f64).sqrt();
    report.residual_max = worst;
    report.set("objective", sq_sum);
    report.set("active_nodes", sol.passive.len() as f64);
    Ok((density, report))
}

/// Gram matrix of `F₂ e_p` in `L²(N̂)` with density `d`, as real and imaginary parts.
pub fn gram_matrix(
    table: &KernelTable,
    grid: &SpectralGrid,
    density: &Density,
    basis: &[BasisVector],
    q: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mats = node_matrices(table, grid, basis, Pairing::Plancherel, q);
    let g = weighted_sum(&mats, &flatten_density(density));
    (g.map(|c| c.re), g.map(|c| c.im))
}

fn deviation(re: &DMatrix<f64>, im: &DMatrix<f64>) -> (f64, f64) {
    let n = re.nrows();
    let dre = re - DMatrix::<f64>::identity(n, n);
    let max_entry = dre
        .iter()
        .zip(im.iter())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    (max_entry, hermitian_norm(&dre, im))
}

fn sub_block(re: &DMatrix<f64>, im: &DMatrix<f64>, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        re.select_rows(idx).select_columns(idx),
        im.select_rows(idx).select_columns(idx),
    )
}

/// Deviation of the Plancherel Gram matrix from the identity, overall and per block.
pub fn roundtrip_report(
    window: LatticeWindow,
    grid: &SpectralGrid,
    density: &Density,
    ctx: &KernelContext,
) -> Result<FitReport> {
    density.check(grid)?;
    let basis = BasisSelection::Full.vectors(window);
    let table = KernelTable::build(grid, &window.points(), ctx)?;
    let (re, im) = gram_matrix(&table, grid, density, &basis, ctx.q());
    let mut report = FitReport::new("roundtrip");
    report.unknowns = basis.len();

    let (max_entry, opnorm) = deviation(&re, &im);
    report.residual_max = max_entry;
    report.set("gram_max_entry", max_entry);
    report.set("gram_opnorm", opnorm);

    let select = |f: &dyn Fn(&BasisVector) -> bool| -> Vec<usize> {
        basis
            .iter()
            .enumerate()
            .filter(|(_, b)| f(b))
            .map(|(i, _)| i)
            .collect()
    };
    let blocks: [(&str, Vec<usize>); 4] = [
        ("even", select(&|b| !b.odd)),
        ("even_plus", select(&|b| !b.odd && b.p.sign() == Sign::Plus)),
        (
            "even_minus",
            select(&|b| !b.odd && b.p.sign() == Sign::Minus),
        ),
        ("odd", select(&|b| b.odd)),
    ];
    let mut fixed_sign: f64 = 0.0;
    for (name, idx) in &blocks {
        if idx.is_empty() {
            continue;
        }
        let (r, i) = sub_block(&re, &im, idx);
        let (m, o) = deviation(&r, &i);
        report.set(&format!("{name}_max_entry"), m);
        report.set(&format!("{name}_opnorm"), o);
        if name.starts_with("even_") {
            fixed_sign = fixed_sign.max(o);
        }
    }
    report.set("even_fixed_sign_opnorm", fixed_sign);

    let cross: f64 = basis
        .iter()
        .enumerate()
        .flat_map(|(a, ba)| {
            basis
                .iter()
                .enumerate()
                .filter(move |(_, bb)| bb.odd != ba.odd)
                .map(move |(b, _)| (a, b))
        })
        .map(|(a, b)| re[(a, b)].hypot(im[(a, b)]))
        .fold(0.0, f64::max);
    report.set("parity_cross_max", cross);

    let mut sq = 0.0;
    for (i, b) in basis.iter().enumerate() {
        let r = C64::new(re[(i, i)] - 1.0, im[(i, i)]).norm();
        sq += r * r;
        let tag = if b.odd { "odd" } else { "even" };
        report.set(&format!("diag.{tag}[{}]", b.p), r);
    }
    report.residual_rms = (sq / basis.len().max(1) as f64).sqrt();

    if let (Some(last), Some(d)) = (
        grid.discrete_ns.len().checked_sub(1),
        density.discrete.last(),
    ) {
        let term = (0..table.points.len())
            .map(|p| table.discrete(last, p).norm_sqr() * table.points[p].weight(ctx.q()))
            .fold(0.0, f64::max)
            * d;
        report.set("discrete_last_term", term);
    }
    Ok(report)
}

/// `x = μ(λ)` for each discrete `n`, for plotting.
pub fn discrete_x(grid: &SpectralGrid, q: f64) -> Vec<f64> {
    grid.discrete_ns
        .iter()
        .map(|&n| {
            mu(C64::from(q.powi(2 * n as i32 + 1)))
                .map(|z| z.re)
                .unwrap_or(f64::NAN)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qseries::QBase;

    fn ctx() -> KernelContext {
        KernelContext::new(QBase::new(0.5).unwrap())
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let g = gauss_legendre(12);
        let s: f64 = g.iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
        let i: f64 = g.iter().map(|(t, w)| w * t.powi(22)).sum();
        assert!((i - 2.0 / 23.0).abs() < 1e-14);
        assert!(g.windows(2).all(|p| p[0].0 < p[1].0));
    }

    #[test]
    fn grid_weights_sum_to_interval_length() {
        let g = SpectralGrid::gauss(64, 4).unwrap();
        let s: f64 = g.principal.iter().map(|n| n.w).sum();
        assert!((s - 1.0).abs() < 1e-13);
        assert!(g.principal.iter().all(|n| n.x > 0.0 && n.x < 1.0));
        assert_eq!(g.discrete_ns, vec![1, 2, 3, 4]);
    }

    #[test]
    fn forward_of_zero_is_zero() {
        let c = ctx();
        let g = SpectralGrid::gauss(8, 2).unwrap();
        let f = GradedFunction::zero(0.5, LatticeWindow::default());
        let out = forward(&f, &g, &c).unwrap();
        assert_eq!(out, SphericalField::zero(&g));
    }

    #[test]
    fn forward_of_even_delta_is_diagonal() {
        let c = ctx();
        let g = SpectralGrid::gauss(8, 2).unwrap();
        let p = LatticePoint::minus(2).unwrap();
        let f = GradedFunction::even_delta(0.5, LatticeWindow::default(), p).unwrap();
        let out = forward(&f, &g, &c).unwrap();
        assert!(out.is_diagonal_only());
        let pt = SpectrumPoint::Principal {
            x: g.principal[3].x,
        };
        let expect = kernel(2, SignPair::MM, p, &pt, &c).unwrap() * p.weight(0.5);
        assert_eq!(out.principal[3][1][MM], expect);
    }

    #[test]
    fn off_diagonal_field_inverts_to_odd_only() {
        let c = ctx();
        let g = SpectralGrid::gauss(8, 2).unwrap();
        let w = LatticeWindow::new(-2, 2).unwrap();
        let p = LatticePoint::plus(1);
        let f = GradedFunction::odd_delta(0.5, w, p).unwrap();
        let field = forward(&f, &g, &c).unwrap();
        assert!(field.is_off_diagonal_only());
        let back = inverse(&field, &g, &Density::constant(&g, 1.0), w, &c).unwrap();
        assert!(back.is_odd_only());
    }

    #[test]
    fn inverse_rejects_other_grid() {
        let c = ctx();
        let g = SpectralGrid::gauss(8, 2).unwrap();
        let h = SpectralGrid::gauss(9, 2).unwrap();
        let field = SphericalField::zero(&g);
        let r = inverse(
            &field,
            &h,
            &Density::constant(&h, 1.0),
            LatticeWindow::default(),
            &c,
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn field_json_roundtrip() {
        let c = ctx();
        let g = SpectralGrid::gauss(6, 2).unwrap();
        let mut f = GradedFunction::zero(0.5, LatticeWindow::new(-1, 1).unwrap());
        f.set_even(LatticePoint::plus(0), C64::new(0.5, -1.0))
            .unwrap();
        f.set_odd(LatticePoint::minus(1).unwrap(), C64::new(2.0, 0.0))
            .unwrap();
        let field = forward(&f, &g, &c).unwrap();
        let d = Density::constant(&g, 0.25);
        let (back, dens) = SphericalField::from_json(&field.to_json(Some(&d))).unwrap();
        assert_eq!(back, field);
        assert_eq!(dens, Some(d));
        let csv = field.to_csv(0.5);
        assert_eq!(csv.lines().count(), 1 + 6 * 2 * 4 + 2);
    }

    #[test]
    fn single_point_density_fit_is_exact() {
        let c = ctx();
        let g = SpectralGrid::gauss(32, 0).unwrap();
        let w = LatticeWindow::new(0, 0).unwrap();
        let (d, rep) = fit_density(&g, w, &c, &DensityFitOptions::default()).unwrap();
        assert!(rep.residual_max < 1e-8, "{rep:?}");
        let rt = roundtrip_report(w, &g, &d, &c).unwrap();
        assert!((rt.get("gram_opnorm").unwrap() - rep.residual_max).abs() < 1e-10);
    }
}
