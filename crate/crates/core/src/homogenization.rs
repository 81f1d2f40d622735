//! Periodic homogenization of `u^ε + H(x, x/ε, Du^ε, D²u^ε) = 0`:
//! cell problems for the effective Hamiltonian, the effective equation, the
//! oscillatory problem itself and the measured rate `‖u^ε − u‖∞ ≈ M ε^θ`.

use std::io::{self, Write};

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{solve_ergodic_operator, ErgodicOptions};
use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::grid::{point_derivatives, GridFunction, TorusGrid};
use crate::hjb::{discretize, solve_discounted, upwind_weights, DiscreteBellmanOperator};
use crate::model::{freeze_cell_problem, CellProblemSpec, TwoScaleCoefficientField};
use crate::small::{SymMatrix, Vector, MAX_DIM};

/// Tolerance of the `λ = 1` Howard solves on outer and fine grids.
const LINEAR_TOL: f64 = 1e-10;

/// Coefficients averaged against the invariant measure of an optimal cell
/// policy. `−tr(a X) − f·p − ℓ` reproduces the cell value at the sampled
/// `(p, X)` and bounds the effective Hamiltonian from below elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveCoefficients {
    pub a: SymMatrix,
    pub f: Vector,
    pub ell: f64,
}

impl EffectiveCoefficients {
    pub fn value(&self, p: &Vector, x: &SymMatrix) -> f64 {
        -self.a.trace_product(x) - self.f.dot(p) - self.ell
    }
}

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonianSample {
    pub x_bar: Vector,
    pub p_bar: Vector,
    pub x_mat: SymMatrix,
    pub value: f64,
    pub cell_n: usize,
    /// Cell corrector, zero at the origin.
    pub corrector: GridFunction,
    pub coefficients: EffectiveCoefficients,
}

pub fn effective_hamiltonian(
    source: &TwoScaleCoefficientField,
    x_bar: &Vector,
    p_bar: &Vector,
    x_mat: &SymMatrix,
    cell_n: usize,
    tol: f64,
) -> Result<EffectiveHamiltonianSample> {
    let frozen = freeze_cell_problem(&CellProblemSpec {
        source,
        x_bar: *x_bar,
        p_bar: *p_bar,
        x_mat: *x_mat,
    })?;
    let grid = TorusGrid::new(source.dim(), cell_n)?;
    let op = discretize(&frozen, &grid)?;
    let sol = solve_ergodic_operator(
        &op,
        &ErgodicOptions {
            tol,
            ..ErgodicOptions::default()
        },
    )?;
    let m = op.invariant_measure(&sol.last.policy)?;
    let dim = source.dim();
    let mut a = SymMatrix::zeros(dim);
    let mut f = Vector::zeros(dim);
    let mut ell = 0.0;
    for node in grid.nodes() {
        let (ay, fy, ly) = source.sample(x_bar, &grid.coord(node), sol.last.policy[node] as usize);
        let w = m.value(node);
        a = a.add(&ay.scale(w));
        f = f.add(&fy.scale(w));
        ell += w * ly;
    }
    Ok(EffectiveHamiltonianSample {
        x_bar: *x_bar,
        p_bar: *p_bar,
        x_mat: *x_mat,
        value: sol.u,
        cell_n,
        corrector: sol.v,
        coefficients: EffectiveCoefficients { a, f, ell },
    })
}

pub fn write_samples_csv<W: Write>(samples: &[EffectiveHamiltonianSample], mut out: W) -> io::Result<()> {
    use crate::fmt::num;
    let Some(first) = samples.first() else {
        return writeln!(out, "value");
    };
    let dim = first.x_bar.dim();
    let mut header: Vec<String> = Vec::new();
    header.extend((0..dim).map(|i| format!("x_bar_{i}")));
    header.extend((0..dim).map(|i| format!("p_bar_{i}")));
    for i in 0..dim {
        for j in i..dim {
            header.push(format!("X_bar_{i}{j}"));
        }
    }
    header.push("value".into());
    header.push("cell_N".into());
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let mut row: Vec<String> = Vec::new();
        row.extend(s.x_bar.as_slice().iter().map(|v| num(*v)));
        row.extend(s.p_bar.as_slice().iter().map(|v| num(*v)));
        for i in 0..dim {
            for j in i..dim {
                row.push(num(s.x_mat.get(i, j)));
            }
        }
        row.push(num(s.value));
        row.push(s.cell_n.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Midpoints `(j + ½)/n` of the cell, all `n^dim` of them.
fn cell_midpoints(dim: usize, n: usize) -> Vec<Vector> {
    let h = 1.0 / n as f64;
    (0..n.pow(dim as u32))
        .map(|k| {
            let mut c = [0.0; MAX_DIM];
            let mut r = k;
            for i in (0..dim).rev() {
                c[i] = ((r % n) as f64 + 0.5) * h;
                r /= n;
            }
            Vector::from_slice(&c[..dim])
        })
        .collect()
}

fn require_semilinear(source: &TwoScaleCoefficientField) -> Result<()> {
    if source.is_semilinear() {
        Ok(())
    } else {
        Err(Error::invalid(
            "source.a",
            "averaging formula needs a diffusion depending on x only and shared by all controls",
        ))
    }
}

/// `∫ max_α {−f(x,y,α)·p − ℓ(x,y,α)} dy` by the midpoint rule with `cell_n`
/// points per axis.
pub fn semilinear_oracle(source: &TwoScaleCoefficientField, x: &Vector, p: &Vector, cell_n: usize) -> Result<f64> {
    require_semilinear(source)?;
    if cell_n == 0 {
        return Err(Error::invalid("cell_n", "need at least one quadrature point"));
    }
    let ys = cell_midpoints(source.dim(), cell_n);
    let total: f64 = ys
        .iter()
        .map(|y| {
            (0..source.controls().len())
                .map(|alpha| {
                    let (_, f, l) = source.sample(x, y, alpha);
                    -f.dot(p) - l
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / ys.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectiveRoute {
    /// Pick the cheapest exact route for the instance.
    Auto,
    /// No fast dependence: the effective equation is the one-scale problem.
    SlowOnly,
    /// Averaged nonlinearity, discretized as a block operator.
    Semilinear,
    /// Outer policy iteration over effective coefficients from cell solves.
    CellPolicies,
}

#[derive(Clone, Debug)]
pub struct EffectiveOptions {
    pub route: EffectiveRoute,
    /// Stopping tolerance on successive outer iterates (cell-policy route).
    pub tol: f64,
    /// Continuation tolerance of each cell solve.
    pub cell_tol: f64,
    pub max_iterations: usize,
    /// Grid used to quantize `(p, X)` before a cell solve.
    pub quantum: f64,
}

impl Default for EffectiveOptions {
    fn default() -> Self {
        EffectiveOptions {
            route: EffectiveRoute::Auto,
            tol: 1e-6,
            cell_tol: 1e-6,
            max_iterations: 50,
            quantum: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EffectiveSolution {
    pub u: GridFunction,
    pub route: EffectiveRoute,
    pub iterations: usize,
    /// Sup distance between successive outer iterates.
    pub history: Vec<f64>,
    pub cell_solves: usize,
}

pub fn solve_effective(
    source: &TwoScaleCoefficientField,
    outer_n: usize,
    cell_n: usize,
    tol: f64,
) -> Result<GridFunction> {
    let opts = EffectiveOptions {
        tol,
        ..EffectiveOptions::default()
    };
    Ok(solve_effective_with(source, outer_n, cell_n, &opts)?.u)
}

pub fn solve_effective_with(
    source: &TwoScaleCoefficientField,
    outer_n: usize,
    cell_n: usize,
    opts: &EffectiveOptions,
) -> Result<EffectiveSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    let grid = TorusGrid::new(source.dim(), outer_n)?;
    let route = match opts.route {
        EffectiveRoute::Auto if source.is_fast_independent() => EffectiveRoute::SlowOnly,
        EffectiveRoute::Auto if source.is_semilinear() => EffectiveRoute::Semilinear,
        EffectiveRoute::Auto => EffectiveRoute::CellPolicies,
        r => r,
    };
    let single = |u: GridFunction| EffectiveSolution {
        u,
        route,
        iterations: 1,
        history: Vec::new(),
        cell_solves: 0,
    };
    match route {
        EffectiveRoute::SlowOnly => {
            let op = discretize(&source.slow_part()?, &grid)?;
            Ok(single(solve_discounted(&op, 1.0, LINEAR_TOL)?.v()))
        }
        EffectiveRoute::Semilinear => {
            require_semilinear(source)?;
            if cell_n == 0 {
                return Err(Error::invalid("cell_n", "need at least one quadrature point"));
            }
            let op = averaged_operator(source, &grid, cell_n)?;
            Ok(single(solve_discounted(&op, 1.0, LINEAR_TOL)?.v()))
        }
        _ => cell_policy_iteration(source, &grid, cell_n, opts),
    }
}

/// `u ↦ −tr(a(x) D²u) + mean_j max_α {−f(x,y_j,α)·Du − ℓ(x,y_j,α)}` with one
/// block per cell midpoint `y_j`.
fn averaged_operator(
    source: &TwoScaleCoefficientField,
    grid: &TorusGrid,
    cell_n: usize,
) -> Result<DiscreteBellmanOperator> {
    let dim = grid.dim();
    let h = grid.spacing();
    let ys = cell_midpoints(dim, cell_n);
    let m = source.controls().len();
    let mut weights = Vec::with_capacity(grid.len() * ys.len() * m);
    let mut load = Vec::with_capacity(weights.capacity());
    for node in grid.nodes() {
        let x = grid.coord(node);
        for y in &ys {
            for alpha in 0..m {
                let (a, f, l) = source.sample(&x, y, alpha);
                if !a.is_diagonal() {
                    return Err(Error::NonDiagonalDiffusion {
                        control: source.controls().labels()[alpha].clone(),
                        node,
                        value: a.get(0, 1),
                    });
                }
                let diag: Vec<f64> = (0..dim).map(|i| a.get(i, i)).collect();
                weights.push(upwind_weights(dim, h, &diag, f.as_slice()));
                load.push(l);
            }
        }
    }
    Ok(DiscreteBellmanOperator::from_parts(
        *grid,
        source.controls().labels().to_vec(),
        ys.len(),
        weights,
        load,
    ))
}

type CellKey = (usize, Vec<i64>);

/// Outer Howard iteration on the max-affine surrogate
/// `H̄(x,p,X) ≈ max_c {−tr(ā_c X) − f̄_c·p − ℓ̄_c}`, where every candidate
/// `c` at node `x` comes from a cell solve at a (quantized) `(Du, D²u)`
/// visited by an earlier iterate. The surrogate touches `H̄` at each visited
/// point, so at the fixed point the equation holds at the nodes' own
/// derivatives.
fn cell_policy_iteration(
    source: &TwoScaleCoefficientField,
    grid: &TorusGrid,
    cell_n: usize,
    opts: &EffectiveOptions,
) -> Result<EffectiveSolution> {
    if !(opts.quantum > 0.0) {
        return Err(Error::invalid("quantum", "quantization step must be positive"));
    }
    let dim = grid.dim();
    let h = grid.spacing();
    let q = opts.quantum;
    let cache: DashMap<CellKey, EffectiveCoefficients> = DashMap::new();
    let mut candidates: Vec<Vec<(Vec<i64>, EffectiveCoefficients)>> = vec![Vec::new(); grid.len()];
    let mut u = GridFunction::constant(*grid, 0.0);
    let mut history = Vec::new();
    for iteration in 1..=opts.max_iterations {
        let keys: Vec<Vec<i64>> = grid
            .nodes()
            .map(|node| {
                let (p, x) = point_derivatives(&u, node);
                let mut k: Vec<i64> = p.as_slice().iter().map(|v| (v / q).round() as i64).collect();
                for i in 0..dim {
                    for j in i..dim {
                        k.push((x.get(i, j) / q).round() as i64);
                    }
                }
                k
            })
            .collect();
        let fresh: Vec<usize> = grid
            .nodes()
            .filter(|&node| !candidates[node].iter().any(|(k, _)| *k == keys[node]))
            .collect();
        let solved: Vec<Result<(usize, EffectiveCoefficients)>> = fresh
            .par_iter()
            .map(|&node| {
                let key = (node, keys[node].clone());
                if let Some(c) = cache.get(&key) {
                    return Ok((node, *c));
                }
                let k = &keys[node];
                let p = Vector::from_slice(&k[..dim].iter().map(|v| *v as f64 * q).collect::<Vec<_>>());
                let mut x = SymMatrix::zeros(dim);
                let mut idx = dim;
                for i in 0..dim {
                    for j in i..dim {
                        x.set(i, j, k[idx] as f64 * q);
                        idx += 1;
                    }
                }
                let s = effective_hamiltonian(source, &grid.coord(node), &p, &x, cell_n, opts.cell_tol)?;
                // Identical keys give identical solves, so the last write wins.
                cache.insert(key, s.coefficients);
                Ok((node, s.coefficients))
            })
            .collect();
        for r in solved {
            let (node, c) = r?;
            candidates[node].push((keys[node].clone(), c));
        }

        let width = candidates.iter().map(Vec::len).max().unwrap_or(1);
        let mut weights = Vec::with_capacity(grid.len() * width);
        let mut load = Vec::with_capacity(grid.len() * width);
        for node in grid.nodes() {
            let list = &candidates[node];
            for c in 0..width {
                // Short lists are padded by repeating their last entry.
                let e = &list[c.min(list.len() - 1)].1;
                let diag: Vec<f64> = (0..dim).map(|i| e.a.get(i, i)).collect();
                weights.push(upwind_weights(dim, h, &diag, e.f.as_slice()));
                load.push(e.ell);
            }
        }
        let labels = (0..width).map(|c| format!("candidate{c}")).collect();
        let op = DiscreteBellmanOperator::from_parts(*grid, labels, 1, weights, load);
        let next = solve_discounted(&op, 1.0, LINEAR_TOL)?.v();
        let change = next.sub(&u)?.sup_norm();
        history.push(change);
        log::debug!(
            "effective iteration {iteration}: {} new cell solves, change {change:.3e}",
            fresh.len()
        );
        u = next;
        if fresh.is_empty() && change <= opts.tol {
            return Ok(EffectiveSolution {
                u,
                route: EffectiveRoute::CellPolicies,
                iterations: iteration,
                history,
                cell_solves: cache.len(),
            });
        }
    }
    Err(Error::FixedPointStagnated {
        iterations: opts.max_iterations,
        history,
    })
}

/// `1/ε` as an integer, or an error when `ε` is not a reciprocal integer.
pub fn inverse_epsilon(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1]"));
    }
    let m = (1.0 / epsilon).round();
    if ((1.0 / epsilon) - m).abs() > 1e-9 * m {
        return Err(Error::invalid(
            "epsilon",
            format!("1/epsilon must be an integer, got {}", 1.0 / epsilon),
        ));
    }
    Ok(m as usize)
}

/// Minimum points per fast period on the fine grid.
pub const MIN_POINTS_PER_PERIOD: usize = 32;

/// Solves `u^ε + H(x, x/ε, Du^ε, D²u^ε) = 0` on a grid of `fine_n` points
/// per axis.
pub fn solve_oscillatory(source: &TwoScaleCoefficientField, epsilon: f64, fine_n: usize) -> Result<GridFunction> {
    let m = inverse_epsilon(epsilon)?;
    if !fine_n.is_multiple_of(m) {
        return Err(Error::invalid(
            "fine_n",
            format!("must be a multiple of 1/epsilon = {m}"),
        ));
    }
    if fine_n / m < MIN_POINTS_PER_PERIOD {
        return Err(Error::invalid(
            "fine_n",
            format!(
                "need at least {MIN_POINTS_PER_PERIOD} points per period (fine_n >= {})",
                MIN_POINTS_PER_PERIOD * m
            ),
        ));
    }
    let grid = TorusGrid::new(source.dim(), fine_n)?;
    let problem = source.oscillatory(m as i64)?;
    let op = discretize(&problem, &grid)?;
    Ok(solve_discounted(&op, 1.0, LINEAR_TOL)?.v())
}

/// How the fine grid is chosen for each `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineRule {
    #[serde(default = "default_cells_per_period")]
    pub points_per_period: usize,
    #[serde(default)]
    pub min_points: usize,
}

fn default_cells_per_period() -> usize {
    MIN_POINTS_PER_PERIOD
}

impl Default for FineRule {
    fn default() -> Self {
        FineRule {
            points_per_period: MIN_POINTS_PER_PERIOD,
            min_points: 0,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl FineRule {
    /// Smallest multiple of `lcm(1/ε, outer_n)` with enough points.
    pub fn fine_n(&self, inv_epsilon: usize, outer_n: usize) -> usize {
        let lcm = inv_epsilon / gcd(inv_epsilon, outer_n) * outer_n;
        let need = (inv_epsilon * self.points_per_period.max(MIN_POINTS_PER_PERIOD)).max(self.min_points);
        need.div_ceil(lcm) * lcm
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
    pub fitted_theta: f64,
    #[serde(rename = "fitted_M")]
    pub fitted_m: f64,
    #[serde(rename = "fine_grid_N")]
    pub fine_n: Vec<usize>,
    pub outer_n: usize,
    pub cell_n: usize,
}

impl RateReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        use crate::fmt::num;
        writeln!(out, "epsilon,fine_N,error")?;
        for ((e, n), err) in self.epsilons.iter().zip(&self.fine_n).zip(&self.errors) {
            writeln!(out, "{},{},{}", num(*e), n, num(*err))?;
        }
        Ok(())
    }
}

pub fn measure_rate(
    source: &TwoScaleCoefficientField,
    epsilons: &[f64],
    outer_n: usize,
    cell_n: usize,
    rule: &FineRule,
) -> Result<RateReport> {
    measure_rate_with(source, epsilons, outer_n, cell_n, rule, &EffectiveOptions::default())
}

pub fn measure_rate_with(
    source: &TwoScaleCoefficientField,
    epsilons: &[f64],
    outer_n: usize,
    cell_n: usize,
    rule: &FineRule,
    opts: &EffectiveOptions,
) -> Result<RateReport> {
    if epsilons.len() < 3 {
        return Err(Error::invalid("epsilons", "need at least three values"));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("epsilons", "must be strictly decreasing"));
    }
    let inv: Vec<usize> = epsilons.iter().map(|e| inverse_epsilon(*e)).collect::<Result<_>>()?;
    let fine_n: Vec<usize> = inv.iter().map(|m| rule.fine_n(*m, outer_n)).collect();
    let coarse = TorusGrid::new(source.dim(), outer_n)?;
    let (u, fine) = rayon::join(
        || solve_effective_with(source, outer_n, cell_n, opts),
        || {
            epsilons
                .par_iter()
                .zip(&fine_n)
                .map(|(e, n)| solve_oscillatory(source, *e, *n)?.restrict_to(&coarse))
                .collect::<Result<Vec<_>>>()
        },
    );
    let u = u?.u;
    let errors = fine?
        .iter()
        .map(|ue| Ok(ue.sub(&u)?.sup_norm()))
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_power_law(epsilons, &errors)?;
    Ok(RateReport {
        epsilons: epsilons.to_vec(),
        errors,
        fitted_theta: fit.slope,
        fitted_m: fit.prefactor,
        fine_n,
        outer_n,
        cell_n,
    })
}
