//! Estimation of the branch phases from the product formulae.
//!
//! Within one sign class of `p0` the target kernels share their phase, so a
//! product formula with real coefficients can only hold if, at every `(x, j)`,
//!
//! ```text
//! arg K_left(p1) + arg K_right(p2) ≡ arg K_target(p0)   (mod π)
//! ```
//!
//! and, since the coefficients do not depend on `j`, the `j = 2` over `j = 1`
//! ratios of both sides agree exactly. The first family fixes the `j = 1` angles
//! modulo `π`; the second fixes the `j = 2` angles relative to them.
//!
//! Kernels with `σ = -` carry the phase of the `σ = +` branch at `-x`, so the
//! unknowns are branch angles at `±x` for every grid node.

use std::collections::BTreeMap;

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kernel, BranchKey, KernelContext, PhaseProvider, SignPair, SpectrumPoint};
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::lattice::{LatticePoint, Sign};
use crate::product::ProductVariant;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFitOptions {
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub max_condition: f64,
    /// Variants whose balance conditions enter the fit. III and IV are left out by
    /// default: their balance depends on which `p0` class carries the support.
    pub variants: Vec<ProductVariant>,
    /// Variants balanced against the `p0` class opposite to the sign rule.
    pub opposite_support: Vec<ProductVariant>,
    /// Random restarts per node when the warm start stalls above `tolerance`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PhaseFitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 2000,
            tolerance: 1e-13,
            max_condition: 1e10,
            variants: vec![ProductVariant::I, ProductVariant::II],
            opposite_support: Vec::new(),
            restarts: 32,
            seed: 0,
        }
    }
}

/// Unknown: the angle correction of one branch at `+x` (`neg = false`) or `-x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Slot {
    key: BranchKey,
    neg: bool,
}

#[derive(Debug, Clone)]
struct Equation {
    /// `(unknown index, exponent)`; pinned branches are already dropped.
    terms: Vec<(usize, i32)>,
    target: C64,
}

fn slot_of(j: u8, signs: SignPair, p0: Sign, neg_x: bool) -> Slot {
    let (signs, neg) = if signs.sigma == Sign::Plus {
        (signs, neg_x)
    } else {
        (signs.negated(), !neg_x)
    };
    Slot {
        key: BranchKey {
            j,
            signs,
            p0_sign: p0,
        },
        neg,
    }
}

fn representative(s: Sign) -> LatticePoint {
    LatticePoint::new(s, 1).expect("k = 1 exists on both branches")
}

/// Exponents of each slot in `left + right - target`, pinned slots removed.
fn combine(parts: [(Slot, i32); 3], index: &BTreeMap<Slot, usize>) -> Vec<(usize, i32)> {
    let mut acc: BTreeMap<usize, i32> = BTreeMap::new();
    for (slot, e) in parts {
        if let Some(&i) = index.get(&slot) {
            *acc.entry(i).or_default() += e;
        }
    }
    acc.into_iter().filter(|(_, e)| *e != 0).collect()
}

fn residual(eq: &Equation, z: &[C64]) -> f64 {
    let mut v = C64::from(1.0);
    for &(i, e) in &eq.terms {
        v *= z[i].powi(e);
    }
    (v - eq.target).norm()
}

/// Gauss–Seidel on unit complex numbers for `Π z_i^{e_i} = target`, `|e_i| ≤ 2`.
/// A squared unknown takes the square root nearest its current value.
fn solve_unit(eqs: &[Equation], mut z: Vec<C64>, opts: &PhaseFitOptions) -> Vec<C64> {
    let n = z.len();
    let mut by_unknown: Vec<Vec<(usize, i32)>> = vec![Vec::new(); n];
    for (k, eq) in eqs.iter().enumerate() {
        for &(i, e) in &eq.terms {
            by_unknown[i].push((k, e));
        }
    }
    for _ in 0..opts.max_sweeps {
        let mut change: f64 = 0.0;
        for u in 0..n {
            let mut acc = C64::default();
            for &(k, e) in &by_unknown[u] {
                let eq = &eqs[k];
                let mut rest = C64::from(1.0);
                for &(i, ei) in &eq.terms {
                    if i != u {
                        rest *= z[i].powi(ei);
                    }
                }
                let mut implied = eq.target / rest;
                if e < 0 {
                    implied = implied.conj();
                }
                acc += match e.abs() {
                    1 => implied,
                    2 => {
                        let r = implied.sqrt();
                        if (r - z[u]).norm() <= (r + z[u]).norm() {
                            r
                        } else {
                            -r
                        }
                    }
                    _ => C64::default(),
                };
            }
            if acc.norm() > 0.0 {
                let new = acc / acc.norm();
                change = change.max((new - z[u]).norm());
                z[u] = new;
            }
        }
        if change < opts.tolerance {
            break;
        }
    }
    z
}

fn worst_residual(eqs: &[Equation], z: &[C64]) -> f64 {
    eqs.iter().map(|eq| residual(eq, z)).fold(0.0, f64::max)
}

fn rank_and_condition(eqs: &[Equation], n: usize) -> (usize, f64) {
    if eqs.is_empty() || n == 0 {
        return (0, 1.0);
    }
    let mut m = DMatrix::<f64>::zeros(eqs.len(), n);
    for (r, eq) in eqs.iter().enumerate() {
        for &(i, e) in &eq.terms {
            m[(r, i)] = e as f64;
        }
    }
    let sv = m.singular_values();
    let hi = sv.max();
    let kept: Vec<f64> = sv.iter().copied().filter(|s| *s > 1e-10 * hi).collect();
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    (
        kept.len(),
        if lo.is_finite() && lo > 0.0 {
            (hi / lo).powi(2)
        } else {
            f64::INFINITY
        },
    )
}

/// Shifts by multiples of `2π` so consecutive angles differ by at most `π`.
fn unwrap(angles: &mut [f64]) {
    for i in 1..angles.len() {
        let d = angles[i] - angles[i - 1];
        angles[i] -= TAU * (d / TAU).round();
    }
}

/// Fits the branch angles at `±x` for every principal point of `grid`.
///
/// Starts from the phases already in `ctx` and returns them corrected. Pinned
/// branches keep angle 0. The report lists per-branch residuals, the rank of the
/// angle system and its gauge dimension.
pub fn fit_phases(
    grid: &[SpectrumPoint],
    ctx: &KernelContext,
    opts: &PhaseFitOptions,
) -> Result<(PhaseProvider, FitReport)> {
    let xs: Vec<f64> = grid
        .iter()
        .filter_map(|p| match p {
            SpectrumPoint::Principal { x } if *x > 0.0 => Some(*x),
            _ => None,
        })
        .collect();
    let mut xs = xs;
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 8 {
        return Err(Error::Input(format!(
            "phase fit needs at least 8 principal points, got {}",
            xs.len()
        )));
    }

    let free = BranchKey::all_free();
    // pinned slots are absent from the index and drop out of every equation
    let mut slots = Vec::new();
    for key in &free {
        for neg in [false, true] {
            slots.push(Slot { key: *key, neg });
        }
    }
    let index: BTreeMap<Slot, usize> = slots.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = slots.len();

    let mut angles: BTreeMap<BranchKey, Vec<(f64, f64)>> =
        free.iter().map(|k| (*k, Vec::new())).collect();
    let mut report = FitReport::new("fit_phases");
    let mut worst: f64 = 0.0;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut max_cond: f64 = 1.0;
    let mut min_rank = usize::MAX;
    let mut restarts_used = 0usize;
    let mut per_branch: BTreeMap<BranchKey, f64> = BTreeMap::new();
    let mut warm = vec![C64::from(1.0); n];

    for (node, &a) in xs.iter().enumerate() {
        let mut eqs = Vec::new();
        for &v in &opts.variants {
            for s1 in [Sign::Plus, Sign::Minus] {
                for s2 in [Sign::Plus, Sign::Minus] {
                    let (p1, p2) = (representative(s1), representative(s2));
                    let rule = v.support_sign(p1, p2);
                    let s0 = if opts.opposite_support.contains(&v) {
                        rule.flip()
                    } else {
                        rule
                    };
                    let p0 = representative(s0);
                    for neg in [false, true] {
                        let x = if neg { -a } else { a };
                        let pt = SpectrumPoint::Principal { x };
                        let mut lt = [(C64::default(), C64::default()); 2];
                        for (jj, j) in [1u8, 2].into_iter().enumerate() {
                            let l = kernel(j, v.left(), p1, &pt, ctx)?
                                * kernel(j, v.right(), p2, &pt, ctx)?;
                            let t = kernel(j, v.target(), p0, &pt, ctx)?;
                            lt[jj] = (l, t);
                        }
                        if !lt.iter().all(|(l, t)| l.norm() > 0.0 && t.norm() > 0.0) {
                            continue;
                        }
                        let parts = |j: u8| {
                            [
                                (slot_of(j, v.left(), s1, neg), 1),
                                (slot_of(j, v.right(), s2, neg), 1),
                                (slot_of(j, v.target(), s0, neg), -1),
                            ]
                        };
                        let (l1, t1) = lt[0];
                        let (l2, t2) = lt[1];
                        // j = 1 balance, squared so that the sign of the real coefficient sum drops out
                        let w = (t1 / l1).powi(2);
                        let terms = combine(parts(1), &index)
                            .into_iter()
                            .map(|(i, e)| (i, 2 * e))
                            .collect();
                        eqs.push(Equation {
                            terms,
                            target: w / w.norm(),
                        });
                        // j = 2 over j = 1, full angle
                        let r = (t2 / t1) / (l2 / l1);
                        let mut terms = combine(parts(2), &index);
                        for (i, e) in combine(parts(1), &index) {
                            terms.push((i, -e));
                        }
                        eqs.push(Equation {
                            terms,
                            target: r / r.norm(),
                        });
                    }
                }
            }
        }

        let mut z = solve_unit(&eqs, warm.clone(), opts);
        let mut best = worst_residual(&eqs, &z);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ node as u64);
        for _ in 0..opts.restarts {
            if best < 1e3 * opts.tolerance.max(f64::EPSILON) {
                break;
            }
            restarts_used += 1;
            let init = (0..n)
                .map(|_| C64::from_polar(1.0, rng.random_range(-PI..PI)))
                .collect();
            let cand = solve_unit(&eqs, init, opts);
            let r = worst_residual(&eqs, &cand);
            if r < best {
                best = r;
                z = cand;
            }
        }
        let (rank, cond) = rank_and_condition(&eqs, n);
        if cond > opts.max_condition {
            return Err(Error::IllConditioned {
                condition: cond,
                limit: opts.max_condition,
            });
        }
        max_cond = max_cond.max(cond);
        min_rank = min_rank.min(rank);

        for eq in &eqs {
            let r = residual(eq, &z);
            worst = worst.max(r);
            sq += r * r;
            count += 1;
            for &(i, _) in &eq.terms {
                let e = per_branch.entry(slots[i].key).or_default();
                *e = e.max(r);
            }
        }
        for (i, s) in slots.iter().enumerate() {
            let x = if s.neg { -a } else { a };
            angles
                .get_mut(&s.key)
                .unwrap()
                .push((x, z[i].arg() + ctx.phases.angle(&s.key, x)));
        }
        warm = z;
    }

    let mut provider = PhaseProvider::unit();
    for (key, mut samples) in angles {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut th: Vec<f64> = samples.iter().map(|s| s.1).collect();
        unwrap(&mut th);
        let samples: Vec<(f64, f64)> = samples.iter().zip(th).map(|(s, t)| (s.0, t)).collect();
        provider.set_branch(key, samples)?;
    }

    report.unknowns = slots.len() * xs.len();
    report.rank = if min_rank == usize::MAX { 0 } else { min_rank };
    report.condition_number = max_cond;
    report.residual_max = worst;
    report.residual_rms = if count > 0 {
        (sq / count as f64).sqrt()
    } else {
        0.0
    };
    report.set("gauge_dim_per_node", (n - report.rank) as f64);
    report.set("restarts", restarts_used as f64);
    report.set("equations", count as f64);
    for (k, r) in per_branch {
        report.set(
            &format!("residual[j={},{},p0{}]", k.j, k.signs, k.p0_sign.symbol()),
            r,
        );
    }
    Ok((provider, report))
}
