//! Bellman problem instances: a finite control set with closed-form
//! coefficients `a` (diffusion), `f` (drift) and `ℓ` (running cost), their
//! declared bounds, and pointwise evaluation of
//!
//! ```text
//! H(x, p, X) = max_α { −tr(a(x,α) X) − f(x,α)·p − ℓ(x,α) }.
//! ```
//!
//! Declared bounds are checked against samples when an instance is built.
//! Bounds left undeclared are derived from the expression trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::TorusGrid;
use crate::small::{SymMatrix, Vector, MAX_DIM};

/// Ordered, duplicate-free list of control labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlSet {
    labels: Vec<String>,
}

impl ControlSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("controls", "at least one control is required"));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::invalid(
                    format!("controls[{i}].label"),
                    format!("duplicate control label `{l}`"),
                ));
            }
        }
        Ok(ControlSet { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Coefficient expressions for one control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCoefficients {
    pub label: String,
    /// `dim × dim` rows; must be symmetric.
    pub a: Vec<Vec<Expr>>,
    pub f: Vec<Expr>,
    pub ell: Expr,
}

impl ControlCoefficients {
    /// Diffusion `a·I`-style diagonal coefficients with the given drift and
    /// cost, mostly for building instances in code.
    pub fn diagonal(label: &str, a: Vec<Expr>, f: Vec<Expr>, ell: Expr) -> Self {
        let dim = a.len();
        let mut rows = vec![vec![Expr::Const(0.0); dim]; dim];
        for (i, e) in a.into_iter().enumerate() {
            rows[i][i] = e;
        }
        ControlCoefficients {
            label: label.to_string(),
            a: rows,
            f,
            ell,
        }
    }

    /// One-dimensional shorthand.
    pub fn scalar(label: &str, a: Expr, f: Expr, ell: Expr) -> Self {
        Self::diagonal(label, vec![a], vec![f], ell)
    }

    fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.a
            .iter()
            .flatten()
            .chain(self.f.iter())
            .chain(std::iter::once(&self.ell))
    }
}

/// Ellipticity constant plus sup (`k_*`) and Lipschitz (`l_*`) bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub nu: f64,
    pub k_a: f64,
    pub k_f: f64,
    pub k_ell: f64,
    pub l_a: f64,
    pub l_f: f64,
    pub l_ell: f64,
}

impl Bounds {
    /// Common sup bound `K` over all three coefficients.
    pub fn k(&self) -> f64 {
        self.k_a.max(self.k_f).max(self.k_ell)
    }

    /// Common Lipschitz bound `L` over all three coefficients.
    pub fn l(&self) -> f64 {
        self.l_a.max(self.l_f).max(self.l_ell)
    }
}

/// Optional user-declared bounds; missing entries are derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredBounds {
    pub k_a: Option<f64>,
    pub k_f: Option<f64>,
    pub k_ell: Option<f64>,
    pub l_a: Option<f64>,
    pub l_f: Option<f64>,
    pub l_ell: Option<f64>,
}

/// Serializable description of a problem, the configuration-file form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    pub nu: f64,
    pub controls: Vec<ControlCoefficients>,
    #[serde(default)]
    pub bounds: DeclaredBounds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scales {
    One,
    Two,
}

/// Shared storage and validation for one- and two-scale fields.
#[derive(Clone, Debug)]
struct Coefficients {
    dim: usize,
    controls: ControlSet,
    terms: Vec<ControlCoefficients>,
    bounds: Bounds,
}

const SAMPLE_TOL: f64 = 1e-9;

impl Coefficients {
    fn build(spec: &ProblemSpec, scales: Scales) -> Result<Self> {
        let dim = spec.dim;
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(
                "dim",
                format!("unsupported dimension {dim}; only 1 and 2 are supported"),
            ));
        }
        if !(spec.nu > 0.0) || !spec.nu.is_finite() {
            return Err(Error::invalid("nu", "ellipticity constant must be positive"));
        }
        let controls = ControlSet::new(spec.controls.iter().map(|c| c.label.clone()).collect())?;
        for (i, c) in spec.controls.iter().enumerate() {
            let key = |field: &str| format!("controls[{i}].{field}");
            if c.a.len() != dim || c.a.iter().any(|row| row.len() != dim) {
                return Err(Error::invalid(key("a"), format!("expected a {dim}x{dim} matrix")));
            }
            if c.f.len() != dim {
                return Err(Error::invalid(key("f"), format!("expected {dim} components")));
            }
            for e in c.exprs() {
                if let Some(axis) = e.max_axis() {
                    if axis >= dim {
                        return Err(Error::invalid(
                            key("*"),
                            format!("axis {axis} out of range for dimension {dim}"),
                        ));
                    }
                }
                if scales == Scales::One && e.uses(Var::Y) {
                    return Err(Error::invalid(
                        key("*"),
                        "single-scale coefficients may only depend on `x`",
                    ));
                }
            }
        }
        let derived = derive_bounds(dim, &spec.controls);
        let d = spec.bounds;
        let bounds = Bounds {
            nu: spec.nu,
            k_a: d.k_a.unwrap_or(derived.k_a),
            k_f: d.k_f.unwrap_or(derived.k_f),
            k_ell: d.k_ell.unwrap_or(derived.k_ell),
            l_a: d.l_a.unwrap_or(derived.l_a),
            l_f: d.l_f.unwrap_or(derived.l_f),
            l_ell: d.l_ell.unwrap_or(derived.l_ell),
        };
        let coeffs = Coefficients {
            dim,
            controls,
            terms: spec.controls.clone(),
            bounds,
        };
        coeffs.validate_samples(scales)?;
        Ok(coeffs)
    }

    fn with_bounds(mut self, bounds: Bounds, scales: Scales) -> Result<Self> {
        self.bounds = bounds;
        self.validate_samples(scales)?;
        Ok(self)
    }

    fn sample(&self, x: &[f64; MAX_DIM], y: &[f64; MAX_DIM], alpha: usize) -> (SymMatrix, Vector, f64) {
        let c = &self.terms[alpha];
        let dim = self.dim;
        let mut a = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                a.set(i, j, c.a[i][j].eval(x, y));
            }
        }
        let f: Vec<f64> = c.f.iter().map(|e| e.eval(x, y)).collect();
        (a, Vector::from_slice(&f), c.ell.eval(x, y))
    }

    /// Sample lattice used for validation: (x, y) pairs.
    fn lattice(&self, scales: Scales) -> (Vec<[f64; MAX_DIM]>, Vec<[f64; MAX_DIM]>, f64) {
        let n = match (scales, self.dim) {
            (Scales::One, 1) => 64,
            (Scales::One, _) => 24,
            (Scales::Two, 1) => 32,
            (Scales::Two, _) => 8,
        };
        let h = 1.0 / n as f64;
        let pts: Vec<[f64; MAX_DIM]> = match self.dim {
            1 => (0..n).map(|i| [i as f64 * h, 0.0]).collect(),
            _ => (0..n * n).map(|k| [(k / n) as f64 * h, (k % n) as f64 * h]).collect(),
        };
        let ys = match scales {
            Scales::One => vec![[0.0; MAX_DIM]],
            Scales::Two => pts.clone(),
        };
        (pts, ys, h)
    }

    fn validate_samples(&self, scales: Scales) -> Result<()> {
        let b = self.bounds;
        let (xs, ys, h) = self.lattice(scales);
        let exceeds = |v: f64, bound: f64| v > bound * (1.0 + SAMPLE_TOL) + SAMPLE_TOL;
        for (alpha, label) in self.controls.labels().iter().enumerate() {
            let key = |field: &str| format!("controls[{alpha}].{field}");
            let c = &self.terms[alpha];
            for x in &xs {
                for y in &ys {
                    // Symmetry of the expression matrix, not just the sample.
                    for i in 0..self.dim {
                        for j in 0..i {
                            let (aij, aji) = (c.a[i][j].eval(x, y), c.a[j][i].eval(x, y));
                            if (aij - aji).abs() > SAMPLE_TOL {
                                return Err(Error::invalid(key("a"), "diffusion matrix is not symmetric"));
                            }
                        }
                    }
                    let (a, f, l) = self.sample(x, y, alpha);
                    if a.min_eigenvalue() < b.nu * (1.0 - SAMPLE_TOL) {
                        return Err(Error::invalid(
                            key("a"),
                            format!(
                                "control `{label}` violates ellipticity a >= nu I at x = {:?}, y = {:?} (min eigenvalue {:.6}, nu {})",
                                &x[..self.dim],
                                &y[..self.dim],
                                a.min_eigenvalue(),
                                b.nu
                            ),
                        ));
                    }
                    if exceeds(a.frobenius(), b.k_a) {
                        return Err(Error::invalid(
                            "bounds.k_a",
                            format!("|a| = {} exceeds declared bound {}", a.frobenius(), b.k_a),
                        ));
                    }
                    if exceeds(f.norm(), b.k_f) {
                        return Err(Error::invalid(
                            "bounds.k_f",
                            format!("|f| = {} exceeds declared bound {}", f.norm(), b.k_f),
                        ));
                    }
                    if exceeds(l.abs(), b.k_ell) {
                        return Err(Error::invalid(
                            "bounds.k_ell",
                            format!("|ell| = {} exceeds declared bound {}", l.abs(), b.k_ell),
                        ));
                    }
                    // Periodicity and Lipschitz quotients along each axis of
                    // every variable.
                    let vars: &[Var] = match scales {
                        Scales::One => &[Var::X],
                        Scales::Two => &[Var::X, Var::Y],
                    };
                    for &var in vars {
                        for axis in 0..self.dim {
                            let moved = |delta: f64| {
                                let (mut x2, mut y2) = (*x, *y);
                                match var {
                                    Var::X => x2[axis] += delta,
                                    Var::Y => y2[axis] += delta,
                                }
                                self.sample(&x2, &y2, alpha)
                            };
                            let (ap, fp, lp) = moved(1.0);
                            if a.sub(&ap).frobenius() > SAMPLE_TOL
                                || f.sub(&fp).norm() > SAMPLE_TOL
                                || (l - lp).abs() > SAMPLE_TOL
                            {
                                return Err(Error::invalid(key("*"), "coefficients are not 1-periodic"));
                            }
                            let (an, fn_, ln) = moved(h);
                            if exceeds(a.sub(&an).frobenius() / h, b.l_a) {
                                return Err(Error::invalid(
                                    "bounds.l_a",
                                    "sampled Lipschitz quotient of a exceeds declared bound",
                                ));
                            }
                            if exceeds(f.sub(&fn_).norm() / h, b.l_f) {
                                return Err(Error::invalid(
                                    "bounds.l_f",
                                    "sampled Lipschitz quotient of f exceeds declared bound",
                                ));
                            }
                            if exceeds((l - ln).abs() / h, b.l_ell) {
                                return Err(Error::invalid(
                                    "bounds.l_ell",
                                    "sampled Lipschitz quotient of ell exceeds declared bound",
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn spec(&self) -> ProblemSpec {
        let b = self.bounds;
        ProblemSpec {
            dim: self.dim,
            nu: b.nu,
            controls: self.terms.clone(),
            bounds: DeclaredBounds {
                k_a: Some(b.k_a),
                k_f: Some(b.k_f),
                k_ell: Some(b.k_ell),
                l_a: Some(b.l_a),
                l_f: Some(b.l_f),
                l_ell: Some(b.l_ell),
            },
        }
    }
}

fn derive_bounds(dim: usize, controls: &[ControlCoefficients]) -> Bounds {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let mut b = Bounds {
        nu: 0.0,
        k_a: 0.0,
        k_f: 0.0,
        k_ell: 0.0,
        l_a: 0.0,
        l_f: 0.0,
        l_ell: 0.0,
    };
    for c in controls {
        let a = c.a.iter().take(dim).flat_map(|r| r.iter().take(dim));
        b.k_a = b.k_a.max(norm(&mut a.clone().map(Expr::sup_bound)));
        b.l_a = b.l_a.max(norm(&mut a.map(Expr::lipschitz_bound)));
        b.k_f = b.k_f.max(norm(&mut c.f.iter().map(Expr::sup_bound)));
        b.l_f = b.l_f.max(norm(&mut c.f.iter().map(Expr::lipschitz_bound)));
        b.k_ell = b.k_ell.max(c.ell.sup_bound());
        b.l_ell = b.l_ell.max(c.ell.lipschitz_bound());
    }
    b
}

/// A single-scale Bellman problem on the torus.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    inner: Coefficients,
}

impl CoefficientField {
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        Ok(CoefficientField {
            inner: Coefficients::build(spec, Scales::One)?,
        })
    }

    /// Convenience constructor with derived bounds.
    pub fn new(dim: usize, nu: f64, controls: Vec<ControlCoefficients>) -> Result<Self> {
        Self::from_spec(&ProblemSpec {
            dim,
            nu,
            controls,
            bounds: DeclaredBounds::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn controls(&self) -> &ControlSet {
        &self.inner.controls
    }

    pub fn bounds(&self) -> Bounds {
        self.inner.bounds
    }

    pub fn terms(&self) -> &[ControlCoefficients] {
        &self.inner.terms
    }

    pub fn spec(&self) -> ProblemSpec {
        self.inner.spec()
    }

    /// `(a, f, ℓ)` at `x` for control index `alpha`.
    pub fn sample(&self, x: &Vector, alpha: usize) -> (SymMatrix, Vector, f64) {
        self.inner.sample(&x.raw(), &[0.0; MAX_DIM], alpha)
    }

    /// True when every control's off-diagonal diffusion vanishes at all
    /// nodes of `grid`.
    pub fn first_off_diagonal(&self, grid: &TorusGrid) -> Option<(usize, usize, f64)> {
        if self.dim() < 2 {
            return None;
        }
        for alpha in 0..self.controls().len() {
            for node in grid.nodes() {
                let (a, _, _) = self.sample(&grid.coord(node), alpha);
                if a.get(0, 1) != 0.0 {
                    return Some((alpha, node, a.get(0, 1)));
                }
            }
        }
        None
    }

    /// Adds `c` to the running cost of every control.
    pub fn shift_cost(&self, c: f64) -> Result<Self> {
        let mut spec = self.spec();
        for ctrl in &mut spec.controls {
            ctrl.ell = ctrl.ell.clone().plus(Expr::Const(c)).simplify();
        }
        spec.bounds.k_ell = Some(self.bounds().k_ell + c.abs());
        Self::from_spec(&spec)
    }

    /// Adds `delta·shape` to one coefficient of every control: the running
    /// cost, every drift component, or every diagonal diffusion entry.
    pub fn perturbed(&self, direction: Direction, shape: &Expr, delta: f64) -> Result<Self> {
        let mut spec = self.spec();
        let dim = self.dim();
        let bump = shape.clone().scaled(delta);
        let (sup, lip) = (delta.abs() * shape.sup_bound(), delta.abs() * shape.lipschitz_bound());
        let root_dim = (dim as f64).sqrt();
        let b = &mut spec.bounds;
        match direction {
            Direction::Ell => {
                b.k_ell = b.k_ell.map(|k| k + sup);
                b.l_ell = b.l_ell.map(|l| l + lip);
            }
            Direction::F => {
                b.k_f = b.k_f.map(|k| k + root_dim * sup);
                b.l_f = b.l_f.map(|l| l + root_dim * lip);
            }
            Direction::A => {
                b.k_a = b.k_a.map(|k| k + root_dim * sup);
                b.l_a = b.l_a.map(|l| l + root_dim * lip);
            }
        }
        for ctrl in &mut spec.controls {
            match direction {
                Direction::Ell => ctrl.ell = ctrl.ell.clone().plus(bump.clone()),
                Direction::F => {
                    for f in &mut ctrl.f {
                        *f = f.clone().plus(bump.clone());
                    }
                }
                Direction::A => {
                    for i in 0..dim {
                        ctrl.a[i][i] = ctrl.a[i][i].clone().plus(bump.clone());
                    }
                }
            }
        }
        Self::from_spec(&spec)
    }
}

/// Which coefficient a perturbation family moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    A,
    F,
    Ell,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::A => "a",
            Direction::F => "f",
            Direction::Ell => "ell",
        })
    }
}

/// Coefficients depending on a slow variable `x` and a fast, periodic cell
/// variable `y`. Both are taken 1-periodic.
#[derive(Clone, Debug)]
pub struct TwoScaleCoefficientField {
    inner: Coefficients,
}

impl TwoScaleCoefficientField {
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        Ok(TwoScaleCoefficientField {
            inner: Coefficients::build(spec, Scales::Two)?,
        })
    }

    pub fn new(dim: usize, nu: f64, controls: Vec<ControlCoefficients>) -> Result<Self> {
        Self::from_spec(&ProblemSpec {
            dim,
            nu,
            controls,
            bounds: DeclaredBounds::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn controls(&self) -> &ControlSet {
        &self.inner.controls
    }

    pub fn bounds(&self) -> Bounds {
        self.inner.bounds
    }

    pub fn terms(&self) -> &[ControlCoefficients] {
        &self.inner.terms
    }

    pub fn spec(&self) -> ProblemSpec {
        self.inner.spec()
    }

    pub fn sample(&self, x: &Vector, y: &Vector, alpha: usize) -> (SymMatrix, Vector, f64) {
        self.inner.sample(&x.raw(), &y.raw(), alpha)
    }

    /// Two-scale Hamiltonian `H(x, y, p, X)`.
    pub fn hamiltonian(&self, x: &Vector, y: &Vector, p: &Vector, xx: &SymMatrix) -> f64 {
        (0..self.controls().len())
            .map(|alpha| {
                let (a, f, l) = self.sample(x, y, alpha);
                -a.trace_product(xx) - f.dot(p) - l
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when no coefficient depends on the fast variable.
    pub fn is_fast_independent(&self) -> bool {
        self.terms().iter().all(|c| c.exprs().all(|e| !e.uses(Var::Y)))
    }

    /// True when the diffusion depends on `x` alone and is shared by every
    /// control, so the Hamiltonian splits as `−tr(a(x)X) + F(x, y, p)`.
    pub fn is_semilinear(&self) -> bool {
        let first = &self.terms()[0].a;
        self.terms()
            .iter()
            .all(|c| c.a.iter().flatten().all(|e| !e.uses(Var::Y)) && &c.a == first)
    }

    /// One-scale field `x ↦ (a, f, ℓ)(x, m·x)`, i.e. `ε = 1/m`.
    pub fn oscillatory(&self, m: i64) -> Result<CoefficientField> {
        let mut spec = self.spec();
        for c in &mut spec.controls {
            for row in &mut c.a {
                for e in row {
                    *e = e.compose_fast(m);
                }
            }
            for e in &mut c.f {
                *e = e.compose_fast(m);
            }
            c.ell = c.ell.compose_fast(m);
        }
        // Sup bounds carry over; Lipschitz bounds grow with m and are
        // re-derived.
        spec.bounds.l_a = None;
        spec.bounds.l_f = None;
        spec.bounds.l_ell = None;
        CoefficientField::from_spec(&spec)
    }

    /// Drops the fast variable when the coefficients do not depend on it.
    pub fn slow_part(&self) -> Result<CoefficientField> {
        if !self.is_fast_independent() {
            return Err(Error::invalid("source", "coefficients depend on the fast variable"));
        }
        CoefficientField::from_spec(&self.spec())
    }
}

/// Frozen slow data for a cell problem: `H(x̄, y, p̄, X̄ + D²v) = H̄`.
#[derive(Clone, Copy, Debug)]
pub struct CellProblemSpec<'a> {
    pub source: &'a TwoScaleCoefficientField,
    pub x_bar: Vector,
    pub p_bar: Vector,
    pub x_mat: SymMatrix,
}

/// `max_α {−tr(a X) − f·p − ℓ}` at `x`, with the first maximizing control in
/// label order.
pub fn hamiltonian_argmax(problem: &CoefficientField, x: &Vector, p: &Vector, xx: &SymMatrix) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for alpha in 0..problem.controls().len() {
        let (a, f, l) = problem.sample(x, alpha);
        let v = -a.trace_product(xx) - f.dot(p) - l;
        if v > best.0 {
            best = (v, alpha);
        }
    }
    best
}

pub fn evaluate_hamiltonian(problem: &CoefficientField, x: &Vector, p: &Vector, xx: &SymMatrix) -> f64 {
    hamiltonian_argmax(problem, x, p, xx).0
}

/// The cell problem as an ordinary ergodic problem in the fast variable:
/// diffusion `a(x̄, y)`, no drift (the gradient slot is frozen at `p̄`), and
/// running cost `ℓ(x̄,y) + tr(a(x̄,y) X̄) + f(x̄,y)·p̄`.
pub fn freeze_cell_problem(spec: &CellProblemSpec<'_>) -> Result<CoefficientField> {
    let source = spec.source;
    let dim = source.dim();
    if spec.x_bar.dim() != dim || spec.p_bar.dim() != dim || spec.x_mat.dim() != dim {
        return Err(Error::invalid(
            "cell problem",
            "x_bar, p_bar and X_bar must match the dimension",
        ));
    }
    let freeze = |e: &Expr| e.freeze_slow(&spec.x_bar).fast_as_slow();
    let controls = source
        .terms()
        .iter()
        .map(|c| {
            let a: Vec<Vec<Expr>> = c.a.iter().map(|row| row.iter().map(freeze).collect()).collect();
            let mut ell = vec![freeze(&c.ell)];
            for i in 0..dim {
                for j in 0..dim {
                    let xij = spec.x_mat.get(i, j);
                    if xij != 0.0 {
                        ell.push(a[i][j].clone().scaled(xij));
                    }
                }
                let pi = spec.p_bar[i];
                if pi != 0.0 {
                    ell.push(freeze(&c.f[i]).scaled(pi));
                }
            }
            ControlCoefficients {
                label: c.label.clone(),
                a,
                f: vec![Expr::Const(0.0); dim],
                ell: Expr::Sum(ell).simplify(),
            }
        })
        .collect();
    let b = source.bounds();
    let growth = 1.0 + spec.p_bar.norm() + spec.x_mat.frobenius();
    let frozen = Bounds {
        nu: b.nu,
        k_a: b.k_a,
        k_f: 0.0,
        k_ell: b.k() * growth,
        l_a: b.l_a,
        l_f: 0.0,
        l_ell: b.l() * growth,
    };
    let spec = ProblemSpec {
        dim,
        nu: b.nu,
        controls,
        bounds: DeclaredBounds::default(),
    };
    let inner = Coefficients::build(&spec, Scales::One)?;
    Ok(CoefficientField {
        inner: inner.with_bounds(frozen, Scales::One)?,
    })
}

/// Sampled sup distances between the coefficients of two problems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoefficientDistance {
    pub da: f64,
    pub df: f64,
    pub dl: f64,
}

pub fn coefficient_distance(
    p1: &CoefficientField,
    p2: &CoefficientField,
    grid: &TorusGrid,
) -> Result<CoefficientDistance> {
    if p1.controls() != p2.controls() {
        return Err(Error::ControlMismatch(format!(
            "{:?} vs {:?}",
            p1.controls().labels(),
            p2.controls().labels()
        )));
    }
    if p1.dim() != p2.dim() || p1.dim() != grid.dim() {
        return Err(Error::invalid("dim", "problems and grid must share the dimension"));
    }
    let mut d = CoefficientDistance {
        da: 0.0,
        df: 0.0,
        dl: 0.0,
    };
    for node in grid.nodes() {
        let x = grid.coord(node);
        for alpha in 0..p1.controls().len() {
            let (a1, f1, l1) = p1.sample(&x, alpha);
            let (a2, f2, l2) = p2.sample(&x, alpha);
            d.da = d.da.max(a1.sub(&a2).frobenius());
            d.df = d.df.max(f1.sub(&f2).norm());
            d.dl = d.dl.max((l1 - l2).abs());
        }
    }
    Ok(d)
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::expr::Var::X;
    use proptest::prelude::*;

    fn sample_problem() -> CoefficientField {
        CoefficientField::new(
            2,
            0.5,
            vec![
                ControlCoefficients {
                    label: "full".into(),
                    a: vec![
                        vec![Expr::Const(1.5).plus(Expr::sin(X, 0, 1).scaled(0.5)), Expr::Const(0.3)],
                        vec![Expr::Const(0.3), Expr::Const(1.2)],
                    ],
                    f: vec![Expr::cos(X, 1, 1), Expr::Const(-0.5)],
                    ell: Expr::sin(X, 0, 1).times(Expr::cos(X, 1, 2)),
                },
                ControlCoefficients::diagonal(
                    "diag",
                    vec![Expr::Const(0.8), Expr::Const(2.0).plus(Expr::cos(X, 0, 1))],
                    vec![Expr::Const(0.4), Expr::sin(X, 0, 1)],
                    Expr::Const(0.2),
                ),
            ],
        )
        .unwrap()
    }

    fn sym(a: f64, b: f64, d: f64) -> SymMatrix {
        SymMatrix::from_rows(&[&[a, b], &[b, d]])
    }

    proptest! {
        #[test]
        fn monotone_in_hessian(
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, p0 in -3.0f64..3.0, p1 in -3.0f64..3.0,
            a in -3.0f64..3.0, b in -3.0f64..3.0, d in -3.0f64..3.0,
            s in 0.0f64..2.0, t in 0.0f64..2.0, r in -1.0f64..1.0,
        ) {
            let prob = sample_problem();
            let x = Vector::from_slice(&[x0, x1]);
            let p = Vector::from_slice(&[p0, p1]);
            let y = sym(a, b, d);
            // y + PSD matrix (built as s·I + rank-one t·vvᵀ).
            let bump = sym(s + t, t * r, s + t * r * r);
            prop_assert!(bump.min_eigenvalue() >= -1e-12);
            let hi = evaluate_hamiltonian(&prob, &x, &p, &y.add(&bump));
            let lo = evaluate_hamiltonian(&prob, &x, &p, &y);
            prop_assert!(hi <= lo + 1e-12);
        }

        #[test]
        fn uniformly_elliptic(
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, p0 in -3.0f64..3.0, p1 in -3.0f64..3.0,
            a in -3.0f64..3.0, b in -3.0f64..3.0, d in -3.0f64..3.0, t in 0.001f64..2.0,
        ) {
            let prob = sample_problem();
            let x = Vector::from_slice(&[x0, x1]);
            let p = Vector::from_slice(&[p0, p1]);
            let y = sym(a, b, d);
            let moved = evaluate_hamiltonian(&prob, &x, &p, &y.add(&SymMatrix::identity(2).scale(t)));
            let base = evaluate_hamiltonian(&prob, &x, &p, &y);
            prop_assert!(moved <= base - prob.bounds().nu * 2.0 * t + 1e-12);
        }

        #[test]
        fn convex_in_gradient_and_hessian(
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0,
            p in prop::array::uniform4(-3.0f64..3.0),
            m in prop::array::uniform6(-3.0f64..3.0),
        ) {
            let prob = sample_problem();
            let x = Vector::from_slice(&[x0, x1]);
            let (pa, pb) = (Vector::from_slice(&p[..2]), Vector::from_slice(&p[2..]));
            let (xa, xb) = (sym(m[0], m[1], m[2]), sym(m[3], m[4], m[5]));
            let mid = evaluate_hamiltonian(&prob, &x, &pa.add(&pb).scale(0.5), &xa.add(&xb).scale(0.5));
            let avg = 0.5 * (evaluate_hamiltonian(&prob, &x, &pa, &xa) + evaluate_hamiltonian(&prob, &x, &pb, &xb));
            prop_assert!(mid <= avg + 1e-12);
        }
    }

    #[test]
    fn frozen_hamiltonian_composes_with_cell_hessian() {
        let src = TwoScaleCoefficientField::new(
            1,
            0.5,
            vec![
                ControlCoefficients::scalar(
                    "p",
                    Expr::Const(1.0).plus(Expr::sin(crate::expr::Var::Y, 0, 1).scaled(0.4)),
                    Expr::cos(X, 0, 1),
                    Expr::sin(crate::expr::Var::Y, 0, 2).plus(Expr::cos(X, 0, 1)),
                ),
                ControlCoefficients::scalar("m", Expr::Const(2.0), Expr::Const(-0.5), Expr::Const(0.3)),
            ],
        )
        .unwrap();
        let x_bar = Vector::from_slice(&[0.37]);
        let p_bar = Vector::from_slice(&[1.3]);
        let x_mat = SymMatrix::diagonal(&[-0.7]);
        let frozen = freeze_cell_problem(&CellProblemSpec {
            source: &src,
            x_bar,
            p_bar,
            x_mat,
        })
        .unwrap();
        for k in 0..32 {
            let y = Vector::from_slice(&[k as f64 / 32.0]);
            for yy in [-2.0, -0.1, 0.0, 0.5, 3.0] {
                let cell = SymMatrix::diagonal(&[yy]);
                let lhs = evaluate_hamiltonian(&frozen, &y, &Vector::zeros(1), &cell);
                let rhs = src.hamiltonian(&x_bar, &y, &p_bar, &x_mat.add(&cell));
                assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
            }
        }
    }
}
