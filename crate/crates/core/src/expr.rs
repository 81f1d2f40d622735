//! Closed-form coefficient expressions.
//!
//! Coefficients are built from constants, integer-frequency sines and
//! cosines of one coordinate, sums, products and scalings. Integer
//! frequencies make every expression exactly 1-periodic, and the tree shape
//! gives cheap rigorous bounds on the sup norm and on each partial
//! derivative. Two variables exist: the slow variable `x` and the fast
//! (cell) variable `y`.
//!
//! JSON form: a bare number is a constant; otherwise a single-key object,
//! e.g. `{"sin": {"var": "y", "axis": 0, "freq": 1}}`,
//! `{"sum": [1.0, {"cos": {"var": "x"}}]}`, `{"scale": [0.5, {...}]}`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::small::{Vector, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X,
    Y,
}

/// `sin(2π·freq·var[axis])` or the cosine counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub var: Var,
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "unit_freq")]
    pub freq: i64,
}

fn unit_freq() -> i64 {
    1
}

impl Wave {
    pub fn new(var: Var, axis: usize, freq: i64) -> Self {
        Wave { var, axis, freq }
    }

    fn phase(&self, x: &[f64; MAX_DIM], y: &[f64; MAX_DIM]) -> f64 {
        let coord = match self.var {
            Var::X => x[self.axis],
            Var::Y => y[self.axis],
        };
        // Reduce before multiplying by 2π so large frequencies keep accuracy.
        2.0 * PI * (self.freq as f64 * coord).rem_euclid(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", from = "ExprRepr")]
pub enum Expr {
    Const(f64),
    Sin(Wave),
    Cos(Wave),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Scale(f64, Box<Expr>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExprRepr {
    Number(f64),
    Tagged(TaggedExpr),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum TaggedExpr {
    Const(f64),
    Sin(Wave),
    Cos(Wave),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Scale(f64, Box<Expr>),
}

impl From<ExprRepr> for Expr {
    fn from(r: ExprRepr) -> Self {
        match r {
            ExprRepr::Number(c) => Expr::Const(c),
            ExprRepr::Tagged(t) => match t {
                TaggedExpr::Const(c) => Expr::Const(c),
                TaggedExpr::Sin(w) => Expr::Sin(w),
                TaggedExpr::Cos(w) => Expr::Cos(w),
                TaggedExpr::Sum(v) => Expr::Sum(v),
                TaggedExpr::Product(v) => Expr::Product(v),
                TaggedExpr::Scale(c, e) => Expr::Scale(c, e),
            },
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn sin(var: Var, axis: usize, freq: i64) -> Self {
        Expr::Sin(Wave::new(var, axis, freq))
    }

    pub fn cos(var: Var, axis: usize, freq: i64) -> Self {
        Expr::Cos(Wave::new(var, axis, freq))
    }

    pub fn scaled(self, c: f64) -> Self {
        Expr::Scale(c, Box::new(self))
    }

    pub fn plus(self, other: Expr) -> Self {
        match self {
            Expr::Sum(mut terms) => {
                terms.push(other);
                Expr::Sum(terms)
            }
            e => Expr::Sum(vec![e, other]),
        }
    }

    pub fn times(self, other: Expr) -> Self {
        Expr::Product(vec![self, other])
    }

    pub fn eval(&self, x: &[f64; MAX_DIM], y: &[f64; MAX_DIM]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Sin(w) => w.phase(x, y).sin(),
            Expr::Cos(w) => w.phase(x, y).cos(),
            Expr::Sum(terms) => terms.iter().map(|t| t.eval(x, y)).sum(),
            Expr::Product(terms) => terms.iter().map(|t| t.eval(x, y)).product(),
            Expr::Scale(c, e) => c * e.eval(x, y),
        }
    }

    /// Evaluation for single-scale expressions (no `y` dependence).
    pub fn eval_at(&self, x: &Vector) -> f64 {
        self.eval(&x.raw(), &[0.0; MAX_DIM])
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Sin(w) | Expr::Cos(w) => w.var == var && w.freq != 0,
            Expr::Sum(t) | Expr::Product(t) => t.iter().any(|e| e.uses(var)),
            Expr::Scale(_, e) => e.uses(var),
        }
    }

    /// Largest axis index referenced (for dimension checks).
    pub fn max_axis(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Sin(w) | Expr::Cos(w) => Some(w.axis),
            Expr::Sum(t) | Expr::Product(t) => t.iter().filter_map(|e| e.max_axis()).max(),
            Expr::Scale(_, e) => e.max_axis(),
        }
    }

    /// Upper bound on `sup |e|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Expr::Const(c) => c.abs(),
            Expr::Sin(w) | Expr::Cos(w) => {
                if w.freq == 0 {
                    if matches!(self, Expr::Cos(_)) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    1.0
                }
            }
            Expr::Sum(t) => t.iter().map(Expr::sup_bound).sum(),
            Expr::Product(t) => t.iter().map(Expr::sup_bound).product(),
            Expr::Scale(c, e) => c.abs() * e.sup_bound(),
        }
    }

    /// Upper bounds on `sup |∂e/∂v|` for v = x₀, x₁, y₀, y₁.
    pub fn partial_bounds(&self) -> [f64; 2 * MAX_DIM] {
        match self {
            Expr::Const(_) => [0.0; 4],
            Expr::Sin(w) | Expr::Cos(w) => {
                let mut out = [0.0; 4];
                let slot = match w.var {
                    Var::X => w.axis,
                    Var::Y => MAX_DIM + w.axis,
                };
                out[slot] = 2.0 * PI * w.freq.unsigned_abs() as f64;
                out
            }
            Expr::Sum(t) => t.iter().fold([0.0; 4], |acc, e| {
                let p = e.partial_bounds();
                std::array::from_fn(|i| acc[i] + p[i])
            }),
            Expr::Product(t) => {
                let sups: Vec<f64> = t.iter().map(Expr::sup_bound).collect();
                let mut out = [0.0; 4];
                for (i, e) in t.iter().enumerate() {
                    let others: f64 = sups
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, s)| s)
                        .product();
                    let p = e.partial_bounds();
                    for k in 0..4 {
                        out[k] += p[k] * others;
                    }
                }
                out
            }
            Expr::Scale(c, e) => e.partial_bounds().map(|v| v * c.abs()),
        }
    }

    /// Bound on the Euclidean norm of the gradient in all variables, which
    /// is a Lipschitz constant for both the Euclidean metric and the
    /// `|x₁−x₂| + |y₁−y₂|` metric.
    pub fn lipschitz_bound(&self) -> f64 {
        self.partial_bounds().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Replaces the slow variable by the fixed point `x_bar` and folds
    /// constants.
    pub fn freeze_slow(&self, x_bar: &Vector) -> Expr {
        self.map_waves(&|kind, w| {
            if w.var == Var::X {
                let v = match kind {
                    WaveKind::Sin => w.phase(&x_bar.raw(), &[0.0; MAX_DIM]).sin(),
                    WaveKind::Cos => w.phase(&x_bar.raw(), &[0.0; MAX_DIM]).cos(),
                };
                Expr::Const(v)
            } else {
                kind.build(*w)
            }
        })
        .simplify()
    }

    /// Renames the fast variable to the slow one, turning a cell-variable
    /// expression into an ordinary single-scale coefficient.
    pub fn fast_as_slow(&self) -> Expr {
        self.map_waves(&|kind, w| {
            let mut w = *w;
            if w.var == Var::Y {
                w.var = Var::X;
            }
            kind.build(w)
        })
    }

    /// Substitutes `y = m·x`, i.e. `x/ε` with `ε = 1/m`. Frequencies stay
    /// integers so the result is still exactly 1-periodic.
    pub fn compose_fast(&self, m: i64) -> Expr {
        self.map_waves(&|kind, w| {
            let mut w = *w;
            if w.var == Var::Y {
                w.var = Var::X;
                w.freq *= m;
            }
            kind.build(w)
        })
    }

    fn map_waves(&self, f: &dyn Fn(WaveKind, &Wave) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Sin(w) => f(WaveKind::Sin, w),
            Expr::Cos(w) => f(WaveKind::Cos, w),
            Expr::Sum(t) => Expr::Sum(t.iter().map(|e| e.map_waves(f)).collect()),
            Expr::Product(t) => Expr::Product(t.iter().map(|e| e.map_waves(f)).collect()),
            Expr::Scale(c, e) => Expr::Scale(*c, Box::new(e.map_waves(f))),
        }
    }

    /// Constant folding; keeps the value identical up to rounding.
    pub fn simplify(self) -> Expr {
        match self {
            Expr::Sum(t) => {
                let mut c = 0.0;
                let mut rest = Vec::new();
                for e in t.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(v) => c += v,
                        e => rest.push(e),
                    }
                }
                if rest.is_empty() {
                    return Expr::Const(c);
                }
                if c != 0.0 {
                    rest.push(Expr::Const(c));
                }
                if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Expr::Sum(rest)
                }
            }
            Expr::Product(t) => {
                let mut c = 1.0;
                let mut rest = Vec::new();
                for e in t.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(v) => c *= v,
                        e => rest.push(e),
                    }
                }
                if rest.is_empty() || c == 0.0 {
                    return Expr::Const(if rest.is_empty() { c } else { 0.0 });
                }
                let inner = if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Expr::Product(rest)
                };
                if c == 1.0 {
                    inner
                } else {
                    Expr::Scale(c, Box::new(inner))
                }
            }
            Expr::Scale(c, e) => match e.simplify() {
                Expr::Const(v) => Expr::Const(c * v),
                e if c == 1.0 => e,
                e => Expr::Scale(c, Box::new(e)),
            },
            e => e,
        }
    }
}

#[derive(Clone, Copy)]
enum WaveKind {
    Sin,
    Cos,
}

impl WaveKind {
    fn build(self, w: Wave) -> Expr {
        match self {
            WaveKind::Sin => Expr::Sin(w),
            WaveKind::Cos => Expr::Cos(w),
        }
    }
}
