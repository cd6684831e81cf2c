//! Least-squares machinery shared by the density, phase and coefficient fits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residuals, conditioning and fitted quantities of one fit or check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: String,
    pub residual_rms: f64,
    pub residual_max: f64,
    /// Condition number of the normal equations of the system that was solved.
    pub condition_number: f64,
    pub rank: usize,
    pub unknowns: usize,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Singular values below `rcond · σ_max` of the column-equilibrated matrix are
    /// dropped. `None` keeps all of them.
    pub rcond: Option<f64>,
    /// Largest acceptable condition number of the normal equations actually solved.
    pub max_condition: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rcond: None,
            max_condition: 1e10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    /// `(σ_max/σ_min)²` over all columns.
    pub condition_full: f64,
    /// `(σ_max/σ_min)²` over the retained singular values.
    pub condition_used: f64,
}

fn column_scales(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Minimum-norm least squares on the column-equilibrated matrix.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, opts: &SolveOptions) -> Result<LsSolution> {
    let n = a.ncols();
    if n == 0 {
        return Ok(LsSolution {
            x: DVector::zeros(0),
            rank: 0,
            condition_full: 1.0,
            condition_used: 1.0,
        });
    }
    let scales = column_scales(a);
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(LsSolution {
            x: DVector::zeros(n),
            rank: 0,
            condition_full: f64::INFINITY,
            condition_used: 1.0,
        });
    }
    let live = scales.iter().filter(|s| **s > 0.0).count();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let smin_full = sorted.get(live.saturating_sub(1)).copied().unwrap_or(0.0);
    let cutoff = opts
        .rcond
        .map_or(smax * f64::EPSILON * (a.nrows().max(n) as f64), |r| {
            r * smax
        });
    let kept: Vec<f64> = sorted.iter().copied().filter(|s| *s > cutoff).collect();
    let smin_used = *kept.last().unwrap_or(&smax);
    let condition_full = if smin_full > 0.0 {
        (smax / smin_full).powi(2)
    } else {
        f64::INFINITY
    };
    let condition_used = (smax / smin_used).powi(2);
    if condition_used > opts.max_condition {
        return Err(Error::IllConditioned {
            condition: condition_used,
            limit: opts.max_condition,
        });
    }
    let y = svd
        .solve(b, cutoff)
        .map_err(|e| Error::Input(format!("svd solve failed: {e}")))?;
    let x = DVector::from_iterator(n, y.iter().zip(&scales).map(|(v, s)| v * s));
    Ok(LsSolution {
        x,
        rank: kept.len(),
        condition_full,
        condition_used,
    })
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// Indices with strictly positive components.
    pub passive: Vec<usize>,
    /// Normal-equation condition number on the equilibrated passive columns.
    pub condition: f64,
    pub iterations: usize,
}

/// Lawson–Hanson active-set NNLS, `min ‖Ax - b‖` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (m, n) = a.shape();
    let scales = column_scales(a);
    let mut s = a.clone();
    for (j, sc) in scales.iter().enumerate() {
        s.column_mut(j).scale_mut(*sc);
    }
    let tol = 10.0 * f64::EPSILON * s.norm() * (m.max(n) as f64);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let max_iter = 30 * n.max(1);
    let mut iterations = 0;

    let sub_solve = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut z = DVector::zeros(n);
        if idx.is_empty() {
            return z;
        }
        let sub = s.select_columns(&idx);
        let svd = sub.svd(true, true);
        let cut = svd.singular_values.max() * f64::EPSILON * (m.max(idx.len()) as f64);
        if let Ok(sol) = svd.solve(b, cut) {
            for (k, &j) in idx.iter().enumerate() {
                z[j] = sol[k];
            }
        }
        z
    };

    loop {
        let w = s.transpose() * (b - &s * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && scales[j] > 0.0 && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = cand else { break };
        passive[t] = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::TruncationFailure(format!(
                    "NNLS did not converge in {max_iter} steps"
                )));
            }
            let z = sub_solve(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..n).filter(|&j| passive[j] && z[j] <= 0.0) {
                let d = x[j] - z[j];
                if d > 0.0 {
                    alpha = alpha.min(x[j] / d);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }

    let idx: Vec<usize> = (0..n).filter(|&j| passive[j] && x[j] > 0.0).collect();
    let condition = if idx.is_empty() {
        1.0
    } else {
        let sv = s.select_columns(&idx).singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo > 0.0 {
            (hi / lo).powi(2)
        } else {
            f64::INFINITY
        }
    };
    let x = DVector::from_iterator(n, x.iter().zip(&scales).map(|(v, sc)| v * sc));
    Ok(NnlsSolution {
        x,
        passive: idx,
        condition,
        iterations,
    })
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

/// Largest singular value of a Hermitian matrix given as real and imaginary parts,
/// via the real embedding `[[R, -I], [I, R]]`.
pub fn hermitian_norm(re: &DMatrix<f64>, im: &DMatrix<f64>) -> f64 {
    let n = re.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(re);
    big.view_mut((n, n), (n, n)).copy_from(re);
    big.view_mut((n, 0), (n, n)).copy_from(im);
    big.view_mut((0, n), (n, n)).copy_from(&(-im));
    spectral_norm(&big)
}
