//! Paired ergodic solves measuring how the corrector and the ergodic
//! constant move with the coefficients.
//!
//! The sup-norm law checked here is
//! `‖v₁ − v₂‖∞ ≤ C·(C_ℓ·(|a₁−a₂| + |f₁−f₂|) + |ℓ₁−ℓ₂|)` with
//! `C_ℓ = 1 + min_i (K_ℓi + L_ℓi)`; `C` itself is only fitted.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::ergodic::{solve_ergodic_operator, ErgodicOptions, ErgodicSolution};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fit::fit_power_law;
use crate::grid::{norms, TorusGrid};
use crate::hjb::discretize;
use crate::model::{coefficient_distance, CoefficientField, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CdeReport {
    pub da: f64,
    pub df: f64,
    pub dl: f64,
    pub sup_dist: f64,
    pub c2_dist: f64,
    #[serde(rename = "dU")]
    pub du: f64,
    #[serde(rename = "C_ell")]
    pub c_ell: f64,
    pub bound_rhs_sup: f64,
}

/// Default continuation tolerance for paired solves: tight enough that the
/// smallest perturbations in a study are far above solver noise.
pub const PAIRED_TOL: f64 = 1e-8;

fn ergodic(p: &CoefficientField, grid: &TorusGrid, opts: &ErgodicOptions) -> Result<ErgodicSolution> {
    solve_ergodic_operator(&discretize(p, grid)?, opts)
}

fn c_ell(p1: &CoefficientField, p2: &CoefficientField) -> f64 {
    let (b1, b2) = (p1.bounds(), p2.bounds());
    1.0 + (b1.k_ell + b1.l_ell).min(b2.k_ell + b2.l_ell)
}

fn report(
    p1: &CoefficientField,
    s1: &ErgodicSolution,
    p2: &CoefficientField,
    s2: &ErgodicSolution,
    grid: &TorusGrid,
) -> Result<CdeReport> {
    let d = coefficient_distance(p1, p2, grid)?;
    let diff = s1.v.sub(&s2.v)?;
    let c = c_ell(p1, p2);
    Ok(CdeReport {
        da: d.da,
        df: d.df,
        dl: d.dl,
        sup_dist: diff.sup_norm(),
        c2_dist: norms(&diff)?.c2_norm,
        du: (s1.u - s2.u).abs(),
        c_ell: c,
        bound_rhs_sup: c * (d.da + d.df) + d.dl,
    })
}

pub fn compare_ergodic(p1: &CoefficientField, p2: &CoefficientField, grid: &TorusGrid) -> Result<CdeReport> {
    compare_ergodic_with(
        p1,
        p2,
        grid,
        &ErgodicOptions {
            tol: PAIRED_TOL,
            ..ErgodicOptions::default()
        },
    )
}

pub fn compare_ergodic_with(
    p1: &CoefficientField,
    p2: &CoefficientField,
    grid: &TorusGrid,
    opts: &ErgodicOptions,
) -> Result<CdeReport> {
    // Fail on mismatched controls before spending time on solves.
    coefficient_distance(p1, p2, grid)?;
    let (s1, s2) = rayon::join(|| ergodic(p1, grid, opts), || ergodic(p2, grid, opts));
    report(p1, &s1?, p2, &s2?, grid)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub direction: Direction,
    pub deltas: Vec<f64>,
    pub reports: Vec<CdeReport>,
    pub sup_dists: Vec<f64>,
    pub c2_dists: Vec<f64>,
    pub fitted_slope_sup: f64,
    pub fitted_slope_c2: f64,
    /// Smallest `C` with `sup_dist ≤ C·bound_rhs_sup` over the family.
    #[serde(rename = "C_fit")]
    pub c_fit: f64,
    /// Perturbation sizes rejected by validation (typically ellipticity).
    pub dropped: Vec<f64>,
}

impl ScalingReport {
    /// Max over min of `c2_dist / δ`.
    pub fn c2_ratio_spread(&self) -> f64 {
        let r: Vec<f64> = self.deltas.iter().zip(&self.c2_dists).map(|(d, c)| c / d).collect();
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        use crate::fmt::num;
        writeln!(out, "delta,da,df,dl,sup_dist,c2_dist,dU")?;
        for (d, r) in self.deltas.iter().zip(&self.reports) {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                num(*d),
                num(r.da),
                num(r.df),
                num(r.dl),
                num(r.sup_dist),
                num(r.c2_dist),
                num(r.du)
            )?;
        }
        Ok(())
    }
}

pub fn scaling_study(
    base: &CoefficientField,
    direction: Direction,
    shape: &Expr,
    deltas: &[f64],
    grid: &TorusGrid,
) -> Result<ScalingReport> {
    scaling_study_with(
        base,
        direction,
        shape,
        deltas,
        grid,
        &ErgodicOptions {
            tol: PAIRED_TOL,
            ..ErgodicOptions::default()
        },
    )
}

pub fn scaling_study_with(
    base: &CoefficientField,
    direction: Direction,
    shape: &Expr,
    deltas: &[f64],
    grid: &TorusGrid,
    opts: &ErgodicOptions,
) -> Result<ScalingReport> {
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::invalid(
            "deltas",
            format!("perturbation sizes must be positive, got {d}"),
        ));
    }
    let base_solution = ergodic(base, grid, opts)?;
    let outcomes: Vec<Result<Option<CdeReport>>> = deltas
        .par_iter()
        .map(|&delta| {
            let perturbed = match base.perturbed(direction, shape, delta) {
                Ok(p) => p,
                Err(e) if e.is_validation() => {
                    log::warn!("dropping delta = {delta} from the {direction} family: {e}");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let s = ergodic(&perturbed, grid, opts)?;
            report(base, &base_solution, &perturbed, &s, grid).map(Some)
        })
        .collect();
    let mut kept = Vec::new();
    let mut reports = Vec::new();
    let mut dropped = Vec::new();
    for (delta, outcome) in deltas.iter().zip(outcomes) {
        match outcome? {
            Some(r) => {
                kept.push(*delta);
                reports.push(r);
            }
            None => dropped.push(*delta),
        }
    }
    if kept.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: kept.len(),
        });
    }
    let sup_dists: Vec<f64> = reports.iter().map(|r| r.sup_dist).collect();
    let c2_dists: Vec<f64> = reports.iter().map(|r| r.c2_dist).collect();
    let fitted_slope_sup = fit_power_law(&kept, &sup_dists)?.slope;
    let fitted_slope_c2 = fit_power_law(&kept, &c2_dists)?.slope;
    let c_fit = reports.iter().map(|r| r.sup_dist / r.bound_rhs_sup).fold(0.0, f64::max);
    Ok(ScalingReport {
        direction,
        deltas: kept,
        reports,
        sup_dists,
        c2_dists,
        fitted_slope_sup,
        fitted_slope_c2,
        c_fit,
        dropped,
    })
}
