//! Ergodic pair `(v, U)` with `H(x, Dv, D²v) = U`, `v(0) = 0`, by
//! vanishing-discount continuation `λ_k = 2^{−k}`, and the evolutive
//! long-time slope as an independent estimate of `U`.
//!
//! Sign convention: `U = −lim λ v^λ`.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::hjb::{
    discretize, march_evolutive, solve_discounted_with, DiscountedSolution, DiscreteBellmanOperator, HowardOptions,
};
use crate::model::CoefficientField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaStep {
    pub lambda: f64,
    /// `U_k = −mean(λ_k v^{λ_k})`.
    pub u: f64,
    /// Sup-node spread of `−λ_k v^{λ_k}`.
    pub spread: f64,
    pub howard_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct ErgodicOptions {
    pub tol: f64,
    pub howard_tol: f64,
    pub first_k: u32,
    pub last_k: u32,
    /// Keep going at least until this exponent even once converged.
    pub min_k: u32,
    /// Report `2U_k − U_{k−1}` instead of `U_k`.
    pub richardson: bool,
}

impl Default for ErgodicOptions {
    fn default() -> Self {
        ErgodicOptions {
            tol: 1e-6,
            howard_tol: 1e-10,
            first_k: 3,
            last_k: 30,
            min_k: 0,
            richardson: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ErgodicSolution {
    /// Corrector, zero at node 0.
    pub v: GridFunction,
    pub u: f64,
    pub lambda_trace: Vec<LambdaStep>,
    pub converged: bool,
    /// Discounted solve at the last `λ`; its policy is the optimal feedback.
    pub last: DiscountedSolution,
}

pub fn solve_ergodic(problem: &CoefficientField, grid: &TorusGrid, tol: f64) -> Result<ErgodicSolution> {
    let op = discretize(problem, grid)?;
    solve_ergodic_operator(
        &op,
        &ErgodicOptions {
            tol,
            ..ErgodicOptions::default()
        },
    )
}

pub fn solve_ergodic_operator(op: &DiscreteBellmanOperator, opts: &ErgodicOptions) -> Result<ErgodicSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    if opts.first_k > opts.last_k || opts.last_k > 60 {
        return Err(Error::invalid("lambda schedule", "need first_k <= last_k <= 60"));
    }
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut policy = None;
    let mut last_du = f64::INFINITY;
    for k in opts.first_k..=opts.last_k {
        let lambda = (-(k as f64)).exp2();
        let shift = prev.map_or(0.0, |u| -u / lambda);
        let sol = solve_discounted_with(
            op,
            lambda,
            &HowardOptions {
                tol: opts.howard_tol,
                shift,
                initial_policy: policy.take(),
                ..HowardOptions::default()
            },
        )?;
        let u = -lambda * shift - lambda * sol.deviation.mean();
        let spread = lambda * sol.deviation.spread();
        trace.push(LambdaStep {
            lambda,
            u,
            spread,
            howard_iterations: sol.iterations,
        });
        log::debug!(
            "lambda = 2^-{k}: U = {u:.12e}, spread = {spread:.3e}, howard = {}",
            sol.iterations
        );
        let done = match prev {
            Some(p) => {
                last_du = (u - p).abs();
                last_du <= opts.tol && spread <= 10.0 * opts.tol && k >= opts.min_k
            }
            None => false,
        };
        if done {
            let u_out = if opts.richardson { 2.0 * u - prev.unwrap() } else { u };
            let w0 = sol.deviation.value(0);
            return Ok(ErgodicSolution {
                v: sol.deviation.map(|w| w - w0),
                u: u_out,
                lambda_trace: trace,
                converged: true,
                last: sol,
            });
        }
        prev = Some(u);
        policy = Some(sol.policy);
    }
    let last = trace.last().copied().unwrap();
    Err(Error::ErgodicNotConverged {
        lambda: last.lambda,
        du: last_du,
        spread: last.spread,
        trace,
    })
}

pub fn write_lambda_trace<W: Write>(trace: &[LambdaStep], mut out: W) -> io::Result<()> {
    use crate::fmt::num;
    writeln!(out, "lambda,U,spread,howard_iterations")?;
    for s in trace {
        writeln!(
            out,
            "{},{},{},{}",
            num(s.lambda),
            num(s.u),
            num(s.spread),
            s.howard_iterations
        )?;
    }
    Ok(())
}

/// `U` from the long-time slope `−(V(T) − V(T/2))·2/T` (node average) and
/// the corrector estimate `V(T) + U·T`, shifted to vanish at node 0.
pub fn ergodic_from_evolutive(problem: &CoefficientField, grid: &TorusGrid, t_end: f64) -> Result<(f64, GridFunction)> {
    evolutive_from_operator(&discretize(problem, grid)?, t_end)
}

pub fn evolutive_from_operator(op: &DiscreteBellmanOperator, t_end: f64) -> Result<(f64, GridFunction)> {
    if !(t_end >= 10.0) {
        return Err(Error::invalid("T", "final time must be at least 10"));
    }
    let trace = march_evolutive(op, t_end, t_end / 2.0)?;
    let (t_half, half) = trace.at(t_end / 2.0);
    let (t, last) = trace.last();
    let slope = last.sub(half)?.mean() / (t - t_half);
    let u = -slope;
    let corrector = last.map(|x| x + u * t);
    let c0 = corrector.value(0);
    Ok((u, corrector.map(|x| x - c0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Var::X};
    use crate::model::ControlCoefficients;
    use std::f64::consts::PI;

    fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    fn single(ell: Expr) -> CoefficientField {
        CoefficientField::new(1, 1.0, vec![ControlCoefficients::scalar("u", c(1.0), c(0.0), ell)]).unwrap()
    }

    fn constants() -> CoefficientField {
        CoefficientField::new(
            1,
            1.0,
            vec![
                ControlCoefficients::scalar("two", c(1.0), c(0.0), c(2.0)),
                ControlCoefficients::scalar("five", c(1.0), c(0.0), c(5.0)),
            ],
        )
        .unwrap()
    }

    fn corrector_error(v: &GridFunction) -> f64 {
        let g = v.grid();
        g.nodes()
            .map(|k| (v.value(k) - (2.0 * PI * g.coord(k)[0]).sin() / (4.0 * PI * PI)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_costs() {
        let g = TorusGrid::new(1, 32).unwrap();
        let s = solve_ergodic(&constants(), &g, 1e-6).unwrap();
        assert!((s.u + 2.0).abs() < 1e-9);
        assert!(s.v.sup_norm() < 1e-9);
        assert_eq!(s.v.value(0), 0.0);
        let (u, corr) = ergodic_from_evolutive(&constants(), &g, 10.0).unwrap();
        assert!((u + 2.0).abs() < 1e-10);
        assert!(corr.sup_norm() < 1e-9);
    }

    #[test]
    fn sine_oracles() {
        let g = TorusGrid::new(1, 256).unwrap();
        for (ell, u_exact) in [(c(1.0).plus(Expr::sin(X, 0, 1)), -1.0), (Expr::sin(X, 0, 1), 0.0)] {
            let s = solve_ergodic(&single(ell), &g, 1e-6).unwrap();
            assert!((s.u - u_exact).abs() < 1e-3);
            assert!(corrector_error(&s.v) < 1e-3);
            assert!(s.converged);
        }
    }

    #[test]
    fn spread_decreases_along_trace() {
        let g = TorusGrid::new(1, 128).unwrap();
        let opts = ErgodicOptions {
            min_k: 12,
            ..ErgodicOptions::default()
        };
        let s = solve_ergodic_operator(&discretize(&single(Expr::sin(X, 0, 1)), &g).unwrap(), &opts).unwrap();
        for w in s.lambda_trace.windows(2) {
            assert!(w[1].spread < w[0].spread);
        }
        // Warm starts keep continuation cheap.
        assert!(s.lambda_trace[1..].iter().all(|st| st.howard_iterations <= 3));
    }

    #[test]
    fn shift_covariance() {
        let g = TorusGrid::new(1, 64).unwrap();
        let p = CoefficientField::new(
            1,
            0.5,
            vec![
                ControlCoefficients::scalar("a", c(1.0), Expr::sin(X, 0, 1), Expr::cos(X, 0, 1)),
                ControlCoefficients::scalar("b", c(0.5), c(0.3), Expr::sin(X, 0, 2).scaled(0.5)),
            ],
        )
        .unwrap();
        let s1 = solve_ergodic(&p, &g, 1e-8).unwrap();
        let s2 = solve_ergodic(&p.shift_cost(0.7).unwrap(), &g, 1e-8).unwrap();
        assert!((s2.u - (s1.u - 0.7)).abs() < 1e-7);
        assert!(s1.v.sub(&s2.v).unwrap().sup_norm() < 1e-6);
    }

    #[test]
    fn evolutive_agrees_with_continuation() {
        let g = TorusGrid::new(1, 128).unwrap();
        let p = single(c(1.0).plus(Expr::sin(X, 0, 1)));
        let (u, _) = ergodic_from_evolutive(&p, &g, 40.0).unwrap();
        assert!((u + 1.0).abs() < 5e-3);
        assert!(ergodic_from_evolutive(&p, &g, 5.0).is_err());
    }

    #[test]
    fn exhausted_schedule_reports_trace() {
        let g = TorusGrid::new(1, 32).unwrap();
        let opts = ErgodicOptions {
            tol: 1e-14,
            first_k: 3,
            last_k: 5,
            ..ErgodicOptions::default()
        };
        let err = solve_ergodic_operator(&discretize(&single(Expr::sin(X, 0, 1)), &g).unwrap(), &opts).unwrap_err();
        match err {
            Error::ErgodicNotConverged { trace, .. } => assert_eq!(trace.len(), 3),
            other => panic!("{other}"),
        }
    }
}
