//! Periodic lattices on the unit torus, grid functions, and the centered
//! difference diagnostics (derivatives, sup/C² norms, Hölder seminorms)
//! used to measure solutions independently of the solver stencils.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::fmt::num;
use crate::small::{SymMatrix, Vector, MAX_DIM};

/// Uniform lattice with `n` nodes per axis on `[0,1)^dim`.
///
/// Only `n` is stored; the spacing is always derived as `1/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub const MIN_POINTS: usize = 4;

    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(
                "dim",
                format!("unsupported dimension {dim}; only 1 and 2 are supported"),
            ));
        }
        if points_per_axis < Self::MIN_POINTS {
            return Err(Error::invalid(
                "points_per_axis",
                format!(
                    "{points_per_axis} is below the minimum of {} points per axis",
                    Self::MIN_POINTS
                ),
            ));
        }
        Ok(TorusGrid {
            dim,
            n: points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis indices of a node; the first axis varies slowest.
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        match self.dim {
            1 => [node, 0],
            _ => [node / self.n, node % self.n],
        }
    }

    /// Node for per-axis indices, wrapping every axis modulo `n`.
    pub fn node(&self, index: &[isize]) -> usize {
        let n = self.n as isize;
        index[..self.dim]
            .iter()
            .fold(0usize, |acc, &i| acc * self.n + i.rem_euclid(n) as usize)
    }

    pub fn coord(&self, node: usize) -> Vector {
        let idx = self.multi_index(node);
        let h = self.spacing();
        let c: Vec<f64> = idx[..self.dim].iter().map(|&i| i as f64 * h).collect();
        Vector::from_slice(&c)
    }

    /// Node reached from `node` by moving `shift` steps along `axis`.
    pub fn neighbor(&self, node: usize, axis: usize, shift: isize) -> usize {
        let idx = self.multi_index(node);
        let mut i = [idx[0] as isize, idx[1] as isize];
        i[axis] += shift;
        self.node(&i)
    }

    /// Euclidean distance on the torus between two nodes.
    pub fn torus_distance(&self, a: usize, b: usize) -> f64 {
        let ia = self.multi_index(a);
        let ib = self.multi_index(b);
        let h = self.spacing();
        (0..self.dim)
            .map(|k| {
                let d = ia[k].abs_diff(ib[k]);
                let d = d.min(self.n - d) as f64 * h;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn nodes(&self) -> std::ops::Range<usize> {
        0..self.len()
    }
}

/// Values attached to every node of a [`TorusGrid`], with a fixed number of
/// components per node (1 for scalars, `dim` for gradients, `dim²` for
/// Hessians stored row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: TorusGrid,
    components: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.len() * components {
            return Err(Error::invalid(
                "values",
                format!(
                    "expected {} values ({} nodes x {} components), got {}",
                    grid.len() * components,
                    grid.len(),
                    components,
                    values.len()
                ),
            ));
        }
        Ok(GridFunction {
            grid,
            components,
            values,
        })
    }

    pub fn scalar(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        GridFunction {
            grid,
            components: 1,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&Vector) -> f64) -> Self {
        let values = grid.nodes().map(|k| f(&grid.coord(k))).collect();
        GridFunction {
            grid,
            components: 1,
            values,
        }
    }

    /// Scalar function from a per-node rule.
    pub fn from_fn_nodes(grid: TorusGrid, f: impl Fn(usize) -> f64) -> Self {
        GridFunction {
            grid,
            components: 1,
            values: grid.nodes().map(f).collect(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node * self.components]
    }

    pub fn component(&self, node: usize, c: usize) -> f64 {
        self.values[node * self.components + c]
    }

    pub fn node_values(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    /// Scalar value at wrapped per-axis indices.
    pub fn at(&self, index: &[isize]) -> f64 {
        self.value(self.grid.node(index))
    }

    /// Cyclic shift along `axis`: the result at node `j` is the input at
    /// `j + k·e_axis`.
    pub fn shifted(&self, axis: usize, k: isize) -> GridFunction {
        let mut values = Vec::with_capacity(self.values.len());
        for node in self.grid.nodes() {
            let src = self.grid.neighbor(node, axis, k);
            values.extend_from_slice(self.node_values(src));
        }
        GridFunction {
            grid: self.grid,
            components: self.components,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            components: self.components,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_compatible(other)?;
        Ok(GridFunction {
            grid: self.grid,
            components: self.components,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::invalid(
                "grid function",
                "operands live on different grids or have different component counts",
            ));
        }
        Ok(())
    }

    /// Largest absolute entry (all components).
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest per-node Euclidean norm over components.
    pub fn sup_of_pointwise_norm(&self) -> f64 {
        self.values
            .chunks(self.components)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Max minus min of a scalar function.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    /// Samples a fine-grid function on a coarser grid whose nodes are a
    /// subset of the fine nodes.
    pub fn restrict_to(&self, coarse: &TorusGrid) -> Result<GridFunction> {
        let (nf, nc) = (self.grid.n, coarse.n);
        if coarse.dim != self.grid.dim || nc > nf || nf % nc != 0 {
            return Err(Error::invalid(
                "outer_n",
                format!("fine grid with {nf} points per axis is not a refinement of {nc}"),
            ));
        }
        let ratio = (nf / nc) as isize;
        let mut values = Vec::with_capacity(coarse.len() * self.components);
        for node in coarse.nodes() {
            let idx = coarse.multi_index(node);
            let fine = self.grid.node(&[idx[0] as isize * ratio, idx[1] as isize * ratio]);
            values.extend_from_slice(self.node_values(fine));
        }
        GridFunction::new(*coarse, self.components, values)
    }

    /// CSV with one row per node in lexicographic node order: per-axis
    /// indices, coordinates, then one column per component.
    pub fn write_csv<W: Write>(&self, mut out: W, value_names: &[&str]) -> io::Result<()> {
        let dim = self.grid.dim;
        let axes = ["i", "j"];
        let coords = ["x", "y"];
        let mut header: Vec<String> = Vec::new();
        header.extend(axes[..dim].iter().map(|s| s.to_string()));
        header.extend(coords[..dim].iter().map(|s| s.to_string()));
        for c in 0..self.components {
            header.push(
                value_names
                    .get(c)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("value{c}")),
            );
        }
        writeln!(out, "{}", header.join(","))?;
        for node in self.grid.nodes() {
            let idx = self.grid.multi_index(node);
            let x = self.grid.coord(node);
            let mut row: Vec<String> = Vec::new();
            row.extend(idx[..dim].iter().map(|i| i.to_string()));
            row.extend(x.as_slice().iter().map(|v| num(*v)));
            row.extend(self.node_values(node).iter().map(|v| num(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn require_scalar(u: &GridFunction) -> Result<()> {
    if u.components != 1 {
        return Err(Error::invalid(
            "grid function",
            format!("expected a scalar function, got {} components", u.components),
        ));
    }
    Ok(())
}

/// Centered second-order derivatives with periodic wraparound.
///
/// Returns the gradient (`dim` components) and the Hessian (`dim²`
/// components, row-major, symmetric).
pub fn derivatives(u: &GridFunction) -> Result<(GridFunction, GridFunction)> {
    require_scalar(u)?;
    let grid = *u.grid();
    let dim = grid.dim();
    let mut grad = Vec::with_capacity(grid.len() * dim);
    let mut hess = Vec::with_capacity(grid.len() * dim * dim);
    for node in grid.nodes() {
        let (g, x) = point_derivatives(u, node);
        grad.extend_from_slice(&g.as_slice()[..dim]);
        for i in 0..dim {
            for j in 0..dim {
                hess.push(x.get(i, j));
            }
        }
    }
    Ok((
        GridFunction::new(grid, dim, grad)?,
        GridFunction::new(grid, dim * dim, hess)?,
    ))
}

/// Centered gradient and Hessian at a single node of a scalar function.
pub fn point_derivatives(u: &GridFunction, node: usize) -> (Vector, SymMatrix) {
    let grid = u.grid();
    let dim = grid.dim();
    let h = grid.spacing();
    let center = u.value(node);
    let mut gv = [0.0; MAX_DIM];
    let mut x = SymMatrix::zeros(dim);
    for i in 0..dim {
        let fwd = u.value(grid.neighbor(node, i, 1));
        let bwd = u.value(grid.neighbor(node, i, -1));
        gv[i] = (fwd - bwd) / (2.0 * h);
        x.set(i, i, (fwd - 2.0 * center + bwd) / (h * h));
    }
    if dim == 2 {
        let idx = grid.multi_index(node);
        let (a, b) = (idx[0] as isize, idx[1] as isize);
        let pp = u.at(&[a + 1, b + 1]);
        let pm = u.at(&[a + 1, b - 1]);
        let mp = u.at(&[a - 1, b + 1]);
        let mm = u.at(&[a - 1, b - 1]);
        x.set(0, 1, (pp - pm - mp + mm) / (4.0 * h * h));
    }
    (Vector::from_slice(&gv[..dim]), x)
}

/// Sup norms of a function and of its discrete gradient and Hessian.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct NormReport {
    pub sup_norm: f64,
    pub grad_sup: f64,
    pub hess_sup: f64,
    pub c2_norm: f64,
}

impl NormReport {
    fn from_parts(sup_norm: f64, grad_sup: f64, hess_sup: f64) -> Self {
        NormReport {
            sup_norm,
            grad_sup,
            hess_sup,
            c2_norm: sup_norm + grad_sup + hess_sup,
        }
    }
}

pub fn norms(u: &GridFunction) -> Result<NormReport> {
    let (grad, hess) = derivatives(u)?;
    Ok(NormReport::from_parts(
        u.sup_norm(),
        grad.sup_of_pointwise_norm(),
        hess.sup_of_pointwise_norm(),
    ))
}

/// Discrete θ-Hölder seminorm, by exhaustive sweep over node pairs with the
/// torus distance. Quadratic in the number of nodes, so only meant for
/// desk-scale grids; callers opt in explicitly.
pub fn holder_seminorm(u: &GridFunction, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid("theta", "Hölder exponent must lie in (0, 1]"));
    }
    let grid = u.grid();
    let mut best: f64 = 0.0;
    for a in grid.nodes() {
        let va = u.node_values(a);
        for b in (a + 1)..grid.len() {
            let vb = u.node_values(b);
            let diff = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let d = grid.torus_distance(a, b);
            best = best.max(diff / d.powf(theta));
        }
    }
    Ok(best)
}

/// Hölder seminorm of the discrete Hessian, the top-order part of a
/// discrete C^{2,θ} norm.
pub fn hessian_holder_seminorm(u: &GridFunction, theta: f64) -> Result<f64> {
    let (_, hess) = derivatives(u)?;
    holder_seminorm(&hess, theta)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn derivatives_commute_with_cyclic_shift(
            values in prop::collection::vec(-10.0f64..10.0, 36),
            axis in 0usize..2,
            k in -7isize..7,
        ) {
            let g = TorusGrid::new(2, 6).unwrap();
            let u = GridFunction::scalar(g, values).unwrap();
            let (gu, hu) = derivatives(&u).unwrap();
            let (gs, hs) = derivatives(&u.shifted(axis, k)).unwrap();
            prop_assert_eq!(gs, gu.shifted(axis, k));
            prop_assert_eq!(hs, hu.shifted(axis, k));
        }

        #[test]
        fn norms_are_absolutely_homogeneous(
            values in prop::collection::vec(-10.0f64..10.0, 16),
            c in -100.0f64..100.0,
        ) {
            let g = TorusGrid::new(1, 16).unwrap();
            let u = GridFunction::scalar(g, values).unwrap();
            let a = norms(&u.scale(c)).unwrap();
            let b = norms(&u).unwrap();
            let close = |x: f64, y: f64| (x - c.abs() * y).abs() <= 1e-14 * (1.0 + x.abs());
            prop_assert!(close(a.sup_norm, b.sup_norm));
            prop_assert!(close(a.grad_sup, b.grad_sup));
            prop_assert!(close(a.hess_sup, b.hess_sup));
        }
    }
}
