//! Dispatch of a parsed config to the solvers. Produces a JSON summary and
//! in-memory artifacts; writing them to disk is left to `output`.

use ergodic_core::cde::{compare_ergodic_with, scaling_study_with, ScalingReport};
use ergodic_core::ergodic::{evolutive_from_operator, solve_ergodic_operator, write_lambda_trace, ErgodicOptions};
use ergodic_core::fmt::round12;
use ergodic_core::grid::norms;
use ergodic_core::hjb::{discretize, solve_discounted_with, write_iteration_log, HowardOptions};
use ergodic_core::homogenization::{
    effective_hamiltonian, measure_rate_with, semilinear_oracle, write_samples_csv, EffectiveHamiltonianSample,
    EffectiveOptions,
};
use ergodic_core::{CoefficientField, GridFunction, SymMatrix, TorusGrid, TwoScaleCoefficientField, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{
    CompareParams, ConfigError, DiscountedParams, EffectiveHParams, ErgodicParams, Experiment, ExperimentConfig,
    RateParams, ScalingParams,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("output: {0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Solver(_) => 3,
            _ => 2,
        }
    }
}

impl From<ergodic_core::Error> for RunError {
    fn from(e: ergodic_core::Error) -> Self {
        use ergodic_core::Error as E;
        match e {
            e if e.is_validation() => RunError::Validation(e.to_string()),
            e @ E::InsufficientData { .. } => RunError::Validation(e.to_string()),
            e => RunError::Solver(e.to_string()),
        }
    }
}

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct RunOutput {
    pub summary: Map<String, Value>,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn number(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round12(x))
    } else {
        Value::Null
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

/// Rounds every float in a serialized value to 12 significant digits.
fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap()),
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

fn csv(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Artifact, RunError> {
    let mut bytes = Vec::new();
    write(&mut bytes).map_err(|e| RunError::Output(e.to_string()))?;
    Ok(Artifact {
        name: name.to_string(),
        bytes,
    })
}

fn grid_csv(name: &str, u: &GridFunction, columns: &[&str]) -> Result<Artifact, RunError> {
    csv(name, |out| u.write_csv(out, columns))
}

pub fn execute(config: &ExperimentConfig, verbose: bool) -> Result<RunOutput, RunError> {
    let mut out = match &config.experiment {
        Experiment::Discounted(p) => discounted(p, verbose)?,
        Experiment::Ergodic(p) => ergodic(p, verbose)?,
        Experiment::CdeCompare(p) => compare(p)?,
        Experiment::CdeScaling(p) => scaling(p)?,
        Experiment::EffectiveH(p) => effective_h(p, config.common.seed)?,
        Experiment::HomogenizeRate(p) => rate(p)?,
    };
    let mut checks = Vec::new();
    let mut all = true;
    for (i, e) in config.common.expected.iter().enumerate() {
        let Some(value) = out.number(&e.quantity) else {
            return Err(ConfigError::Invalid {
                key: format!("expected[{i}].quantity"),
                message: format!("`{}` is not reported by {} runs", e.quantity, config.experiment.kind()),
            }
            .into());
        };
        let pass = e.holds(value);
        all &= pass;
        checks.push(json!({
            "quantity": e.quantity,
            "expected": e.describe(),
            "value": num(value),
            "pass": pass,
            "provenance": e.provenance,
        }));
    }
    out.summary.insert("checks".into(), Value::Array(checks));
    out.summary.insert("all_checks_pass".into(), Value::Bool(all));
    Ok(out)
}

fn discounted(p: &DiscountedParams, verbose: bool) -> Result<RunOutput, RunError> {
    let problem = CoefficientField::from_spec(&p.problem)?;
    let grid = TorusGrid::new(problem.dim(), p.points_per_axis)?;
    let op = discretize(&problem, &grid)?;
    let s = solve_discounted_with(
        &op,
        p.lambda,
        &HowardOptions {
            tol: p.tol,
            ..HowardOptions::default()
        },
    )?;
    let v = s.v();
    let mut summary = Map::new();
    summary.insert("lambda".into(), num(p.lambda));
    summary.insert("iterations".into(), json!(s.iterations));
    summary.insert("residual".into(), num(s.residual));
    summary.insert("lambda_v_sup".into(), num(s.lambda_v().sup_norm()));
    summary.insert("K_ell".into(), num(problem.bounds().k_ell));
    let (min, max) = v
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    summary.insert("v_min".into(), num(min));
    summary.insert("v_max".into(), num(max));
    summary.insert("v_mean".into(), num(v.mean()));
    let mut artifacts = vec![grid_csv("solution.csv", &v, &["v"])?];
    if verbose {
        artifacts.push(csv("howard_log.csv", |o| write_iteration_log(&s.log, o))?);
    }
    Ok(RunOutput { summary, artifacts })
}

fn ergodic(p: &ErgodicParams, verbose: bool) -> Result<RunOutput, RunError> {
    let problem = CoefficientField::from_spec(&p.problem)?;
    let grid = TorusGrid::new(problem.dim(), p.points_per_axis)?;
    let op = discretize(&problem, &grid)?;
    let s = solve_ergodic_operator(
        &op,
        &ErgodicOptions {
            tol: p.tol,
            richardson: p.richardson,
            ..ErgodicOptions::default()
        },
    )?;
    let n = norms(&s.v)?;
    let last = s.lambda_trace.last().unwrap();
    let mut summary = Map::new();
    summary.insert("U".into(), num(s.u));
    summary.insert("lambda_final".into(), num(last.lambda));
    summary.insert("final_spread".into(), num(last.spread));
    summary.insert("continuation_steps".into(), json!(s.lambda_trace.len()));
    summary.insert("corrector_sup".into(), num(n.sup_norm));
    summary.insert("corrector_c2".into(), num(n.c2_norm));
    if let Some(t) = p.evolutive_horizon {
        let (u_evol, _) = evolutive_from_operator(&op, t)?;
        summary.insert("U_evolutive".into(), num(u_evol));
        summary.insert("route_gap".into(), num((u_evol - s.u).abs()));
    }
    let mut artifacts = vec![
        grid_csv("corrector.csv", &s.v, &["v"])?,
        csv("lambda_trace.csv", |o| write_lambda_trace(&s.lambda_trace, o))?,
    ];
    if verbose {
        artifacts.push(csv("howard_log.csv", |o| write_iteration_log(&s.last.log, o))?);
    }
    Ok(RunOutput { summary, artifacts })
}

fn compare(p: &CompareParams) -> Result<RunOutput, RunError> {
    let p1 = CoefficientField::from_spec(&p.problem_1)?;
    let p2 = CoefficientField::from_spec(&p.problem_2)?;
    let grid = TorusGrid::new(p1.dim(), p.points_per_axis)?;
    let opts = ErgodicOptions {
        tol: p.tol,
        ..ErgodicOptions::default()
    };
    let r = compare_ergodic_with(&p1, &p2, &grid, &opts)?;
    let summary = match rounded(serde_json::to_value(r).expect("report serializes")) {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    let artifacts = vec![csv("distances.csv", |o| {
        use ergodic_core::fmt::num as n;
        use std::io::Write;
        writeln!(o, "da,df,dl,sup_dist,c2_dist,dU,C_ell,bound_rhs_sup")?;
        writeln!(
            o,
            "{},{},{},{},{},{},{},{}",
            n(r.da),
            n(r.df),
            n(r.dl),
            n(r.sup_dist),
            n(r.c2_dist),
            n(r.du),
            n(r.c_ell),
            n(r.bound_rhs_sup)
        )
    })?];
    Ok(RunOutput { summary, artifacts })
}

fn scaling_summary(r: &ScalingReport, summary: &mut Map<String, Value>, suffix: &str) {
    summary.insert(format!("fitted_slope_sup{suffix}"), num(r.fitted_slope_sup));
    summary.insert(format!("fitted_slope_c2{suffix}"), num(r.fitted_slope_c2));
    summary.insert(format!("C_fit{suffix}"), num(r.c_fit));
    summary.insert(format!("c2_ratio_spread{suffix}"), num(r.c2_ratio_spread()));
    summary.insert(format!("C_ell{suffix}"), num(r.reports[0].c_ell));
}

fn scaling(p: &ScalingParams) -> Result<RunOutput, RunError> {
    let base = CoefficientField::from_spec(&p.base)?;
    let grid = TorusGrid::new(base.dim(), p.points_per_axis)?;
    let opts = ErgodicOptions {
        tol: p.tol,
        ..ErgodicOptions::default()
    };
    let r = scaling_study_with(&base, p.direction, &p.shape, &p.deltas, &grid, &opts)?;
    let mut summary = Map::new();
    summary.insert("direction".into(), json!(p.direction.to_string()));
    summary.insert("deltas".into(), nums(&r.deltas));
    summary.insert("dropped".into(), nums(&r.dropped));
    summary.insert("sup_dists".into(), nums(&r.sup_dists));
    summary.insert("c2_dists".into(), nums(&r.c2_dists));
    scaling_summary(&r, &mut summary, "");
    let mut artifacts = vec![csv("scaling.csv", |o| r.write_csv(o))?];
    if let Some(shift) = p.cost_shift {
        let shifted = base.shift_cost(shift)?;
        let rs = scaling_study_with(&shifted, p.direction, &p.shape, &p.deltas, &grid, &opts)?;
        scaling_summary(&rs, &mut summary, "_shifted");
        summary.insert("cost_shift".into(), num(shift));
        summary.insert("K_ell".into(), num(base.bounds().k_ell));
        summary.insert("K_ell_shifted".into(), num(shifted.bounds().k_ell));
        let ratio = (r.c_fit / rs.c_fit).max(rs.c_fit / r.c_fit);
        summary.insert("C_fit_ratio".into(), num(ratio));
        artifacts.push(csv("scaling_shifted.csv", |o| rs.write_csv(o))?);
    }
    Ok(RunOutput { summary, artifacts })
}

/// One seeded test point of the effective Hamiltonian and its companions.
#[derive(Clone, Debug)]
pub struct SamplePoint {
    pub x_bar: Vector,
    pub p_bar: Vector,
    pub x_mat: SymMatrix,
    /// Second matrix for the midpoint convexity check.
    pub x_other: SymMatrix,
}

pub fn sample_points(dim: usize, count: usize, p_range: f64, x_range: f64, seed: u64) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = |rng: &mut ChaCha8Rng| {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, rng.gen_range(-x_range..=x_range));
            }
        }
        m
    };
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-p_range..=p_range)).collect();
            let x_mat = sym(&mut rng);
            let x_other = sym(&mut rng);
            SamplePoint {
                x_bar: Vector::from_slice(&x),
                p_bar: Vector::from_slice(&p),
                x_mat,
                x_other,
            }
        })
        .collect()
}

/// Results of the effective-Hamiltonian property checks at one point.
#[derive(Clone, Debug)]
pub struct SampleChecks {
    pub base: EffectiveHamiltonianSample,
    /// `H̄(X + tI) − H̄(X) + ν·dim·t` per step; nonpositive up to tolerance.
    pub ellipticity_excess: Vec<f64>,
    /// `H̄((X+Y)/2) − (H̄(X) + H̄(Y))/2`; nonpositive up to tolerance.
    pub convexity_excess: f64,
    /// `H̄ − (−tr(a X) + averaged nonlinearity)` for semilinear sources.
    pub oracle_deviation: Option<f64>,
}

pub fn check_samples(
    source: &TwoScaleCoefficientField,
    points: &[SamplePoint],
    steps: &[f64],
    cell_n: usize,
    tol: f64,
) -> Result<Vec<SampleChecks>, RunError> {
    let nu = source.bounds().nu;
    let dim = source.dim() as f64;
    let semilinear = source.is_semilinear();
    points
        .par_iter()
        .map(|pt| {
            let h = |x: &SymMatrix| effective_hamiltonian(source, &pt.x_bar, &pt.p_bar, x, cell_n, tol);
            let base = h(&pt.x_mat)?;
            let ellipticity_excess = steps
                .iter()
                .map(|t| {
                    let moved = h(&pt.x_mat.add(&SymMatrix::identity(source.dim()).scale(*t)))?;
                    Ok(moved.value - base.value + nu * dim * t)
                })
                .collect::<ergodic_core::Result<Vec<f64>>>()?;
            let other = h(&pt.x_other)?;
            let mid = h(&pt.x_mat.add(&pt.x_other).scale(0.5))?;
            let convexity_excess = mid.value - 0.5 * (base.value + other.value);
            let oracle_deviation = if semilinear {
                let (a, _, _) = source.sample(&pt.x_bar, &Vector::zeros(source.dim()), 0);
                let oracle = -a.trace_product(&pt.x_mat) + semilinear_oracle(source, &pt.x_bar, &pt.p_bar, cell_n)?;
                Some(base.value - oracle)
            } else {
                None
            };
            Ok(SampleChecks {
                base,
                ellipticity_excess,
                convexity_excess,
                oracle_deviation,
            })
        })
        .collect::<ergodic_core::Result<Vec<_>>>()
        .map_err(RunError::from)
}

fn effective_h(p: &EffectiveHParams, seed: u64) -> Result<RunOutput, RunError> {
    let source = TwoScaleCoefficientField::from_spec(&p.problem)?;
    if p.samples == 0 {
        return Err(RunError::Validation("invalid samples: need at least one sample".into()));
    }
    let points = sample_points(source.dim(), p.samples, p.p_range, p.x_range, seed);
    let checks = check_samples(&source, &points, &p.ellipticity_steps, p.cell_points, p.tol)?;
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let mut summary = Map::new();
    summary.insert("samples".into(), json!(checks.len()));
    summary.insert("cell_N".into(), json!(p.cell_points));
    summary.insert("nu".into(), num(source.bounds().nu));
    summary.insert(
        "max_ellipticity_excess".into(),
        num(max(&mut checks
            .iter()
            .flat_map(|c| c.ellipticity_excess.iter().copied()))),
    );
    summary.insert(
        "max_convexity_excess".into(),
        num(max(&mut checks.iter().map(|c| c.convexity_excess))),
    );
    if source.is_semilinear() {
        summary.insert(
            "max_oracle_deviation".into(),
            num(max(&mut checks.iter().filter_map(|c| c.oracle_deviation.map(f64::abs)))),
        );
    }
    let samples: Vec<EffectiveHamiltonianSample> = checks.into_iter().map(|c| c.base).collect();
    let artifacts = vec![csv("samples.csv", |o| write_samples_csv(&samples, o))?];
    Ok(RunOutput { summary, artifacts })
}

fn rate(p: &RateParams) -> Result<RunOutput, RunError> {
    let source = TwoScaleCoefficientField::from_spec(&p.problem)?;
    let opts = EffectiveOptions {
        route: p.route,
        tol: p.tol,
        ..EffectiveOptions::default()
    };
    let r = measure_rate_with(&source, &p.epsilons, p.outer_points, p.cell_points, &p.fine_rule, &opts)?;
    let bound_ratio = r
        .epsilons
        .iter()
        .zip(&r.errors)
        .map(|(e, err)| err / (r.fitted_m * e.powf(p.bound_exponent)))
        .fold(0.0, f64::max);
    let mut summary = Map::new();
    summary.insert("fitted_theta".into(), num(r.fitted_theta));
    summary.insert("fitted_M".into(), num(r.fitted_m));
    summary.insert("epsilons".into(), nums(&r.epsilons));
    summary.insert("errors".into(), nums(&r.errors));
    summary.insert("fine_grid_N".into(), json!(r.fine_n));
    summary.insert("outer_N".into(), json!(r.outer_n));
    summary.insert("cell_N".into(), json!(r.cell_n));
    summary.insert("bound_exponent".into(), num(p.bound_exponent));
    summary.insert("max_bound_ratio".into(), num(bound_ratio));
    summary.insert(
        "errors_decreasing".into(),
        json!(r.errors.windows(2).all(|w| w[1] < w[0])),
    );
    let artifacts = vec![csv("rate.csv", |o| r.write_csv(o))?];
    Ok(RunOutput { summary, artifacts })
}
