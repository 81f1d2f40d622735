//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Reference values come from closed forms and quadrature
//! computed here, not from the library's own helpers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ergodic_cli::config::{load, Experiment};
use ergodic_cli::run::sample_points;
use ergodic_core::cde::ScalingReport;
use ergodic_core::expr::Var::{X, Y};
use ergodic_core::{
    discretize, effective_hamiltonian, ergodic_from_evolutive, measure_rate, scaling_study, solve_discounted,
    solve_ergodic, CoefficientField, ControlCoefficients, Direction, Expr, FineRule, ProblemSpec, SymMatrix, TorusGrid,
    TwoScaleCoefficientField, Vector,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

/// Least-squares slope of `log y` against `log x`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn within(t: Duration, limit: Duration) -> Result<(), String> {
    if t <= limit {
        Ok(())
    } else {
        Err(format!("took {t:.2?}, limit {limit:?}"))
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sine_instance(offset: f64) -> CoefficientField {
    CoefficientField::new(
        1,
        1.0,
        vec![ControlCoefficients::scalar(
            "u",
            c(1.0),
            c(0.0),
            c(offset).plus(Expr::sin(X, 0, 1)),
        )],
    )
    .unwrap()
}

/// `(|U + 1|, ‖v − sin(2πx)/(4π²)‖∞)` for the shifted sine instance.
fn oracle_errors(n: usize) -> Result<(f64, f64), String> {
    let grid = TorusGrid::new(1, n).map_err(err)?;
    let s = solve_ergodic(&sine_instance(1.0), &grid, 1e-8).map_err(err)?;
    // −∫(1 + sin 2πx)dx by a fine midpoint rule.
    let m = 100_000;
    let mean_ell = (0..m)
        .map(|i| 1.0 + (2.0 * PI * (i as f64 + 0.5) / m as f64).sin())
        .sum::<f64>()
        / m as f64;
    let v_err = (0..n)
        .map(|k| (s.v.value(k) - (2.0 * PI * k as f64 / n as f64).sin() / (4.0 * PI * PI)).abs())
        .fold(0.0, f64::max);
    Ok(((s.u + mean_ell).abs(), v_err))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (du, dv) = oracle_errors(256)?;
    let t = t.elapsed();
    let detail = format!("|U+1| = {du:.3e}, corrector error = {dv:.3e}, {t:.2?}");
    if du <= 1e-3 && dv <= 1e-3 {
        within(t, Duration::from_secs(5)).map_err(|e| format!("{detail}; {e}"))?;
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// One-scale problems appearing in the shipped configs, with their grid size.
fn shipped_instances() -> Result<Vec<(String, CoefficientField, usize)>, String> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(examples())
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_stem().unwrap().to_string_lossy().into_owned();
        let cfg = load(&p).map_err(err)?;
        let field = |s: &ProblemSpec| CoefficientField::from_spec(s).map_err(err);
        match &cfg.experiment {
            Experiment::Discounted(e) => out.push((name, field(&e.problem)?, e.points_per_axis)),
            Experiment::Ergodic(e) => out.push((name, field(&e.problem)?, e.points_per_axis)),
            Experiment::CdeCompare(e) => {
                out.push((format!("{name}/1"), field(&e.problem_1)?, e.points_per_axis));
                out.push((format!("{name}/2"), field(&e.problem_2)?, e.points_per_axis));
            }
            Experiment::CdeScaling(e) => {
                let base = field(&e.base)?;
                if let Some(s) = e.cost_shift {
                    out.push((
                        format!("{name}/shifted"),
                        base.shift_cost(s).map_err(err)?,
                        e.points_per_axis,
                    ));
                }
                out.push((name, base, e.points_per_axis));
            }
            Experiment::EffectiveH(_) | Experiment::HomogenizeRate(_) => {}
        }
    }
    Ok(out)
}

/// `max |ℓ|` over grid nodes and controls, the bound the discrete maximum
/// principle gives for `λv`.
fn node_sup_ell(p: &CoefficientField, grid: &TorusGrid) -> f64 {
    grid.nodes()
        .flat_map(|k| (0..p.controls().len()).map(move |a| (k, a)))
        .map(|(k, a)| p.sample(&grid.coord(k), a).2.abs())
        .fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let instances = shipped_instances()?;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut solves = 0;
    for (name, p, n) in &instances {
        let grid = TorusGrid::new(p.dim(), *n).map_err(err)?;
        let op = discretize(p, &grid).map_err(err)?;
        let k_ell = node_sup_ell(p, &grid).min(p.bounds().k_ell);
        for lambda in [0.5, 0.1, 0.01] {
            let s = solve_discounted(&op, lambda, 1e-10).map_err(err)?;
            let excess = s.lambda_v().sup_norm() - k_ell;
            worst = worst.max(excess);
            solves += 1;
            if excess > 1e-10 {
                return Err(format!(
                    "{name}, lambda = {lambda}: ||lambda v|| exceeds K_ell by {excess:.3e}"
                ));
            }
        }
    }
    Ok(format!(
        "{} instances, {solves} solves, max(||lambda v|| - K_ell) = {worst:.3e}",
        instances.len()
    ))
}

fn criterion_3() -> Outcome {
    let grid = TorusGrid::new(1, 256).map_err(err)?;
    let op = discretize(&sine_instance(0.0), &grid).map_err(err)?;
    let mut spreads = Vec::new();
    for k in 3..=12 {
        let lambda = (-(k as f64)).exp2();
        let s = solve_discounted(&op, lambda, 1e-12).map_err(err)?;
        spreads.push(s.lambda_v().spread());
    }
    let monotone = spreads.windows(2).all(|w| w[1] < w[0]);
    let last = *spreads.last().unwrap();
    let detail = format!("spreads {:.2e} .. {last:.2e}, monotone = {monotone}", spreads[0]);
    if monotone && last <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let instances = shipped_instances()?;
    for (name, p, n) in &instances {
        let n = (*n).min(if p.dim() == 1 { 64 } else { 32 });
        let grid = TorusGrid::new(p.dim(), n).map_err(err)?;
        let u_disc = solve_ergodic(p, &grid, 1e-8).map_err(err)?.u;
        let (u_evol, _) = ergodic_from_evolutive(p, &grid, 40.0).map_err(err)?;
        let gap = (u_disc - u_evol).abs();
        if gap > worst.0 {
            worst = (gap, name.clone());
        }
    }
    let detail = format!("{} instances, max gap {:.3e} ({})", instances.len(), worst.0, worst.1);
    if worst.0 <= 1e-2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Family {
    name: &'static str,
    base: CoefficientField,
    direction: Direction,
    shape: Expr,
    deltas: Vec<f64>,
    n: usize,
}

fn scaling_family(file: &str) -> Result<Family, String> {
    let cfg = load(&examples().join(file)).map_err(err)?;
    match cfg.experiment {
        Experiment::CdeScaling(e) => Ok(Family {
            name: match e.direction {
                Direction::A => "a",
                Direction::F => "f",
                Direction::Ell => "ell",
            },
            base: CoefficientField::from_spec(&e.base).map_err(err)?,
            direction: e.direction,
            shape: e.shape,
            deltas: e.deltas,
            n: e.points_per_axis,
        }),
        _ => Err(format!("{file} is not a scaling config")),
    }
}

fn families() -> Result<Vec<Family>, String> {
    ["cde_scaling_ell.json", "cde_scaling_f.json", "cde_scaling_a.json"]
        .iter()
        .map(|f| scaling_family(f))
        .collect()
}

fn study(f: &Family, base: &CoefficientField) -> Result<(ScalingReport, Duration), String> {
    let grid = TorusGrid::new(base.dim(), f.n).map_err(err)?;
    let t = Instant::now();
    let r = scaling_study(base, f.direction, &f.shape, &f.deltas, &grid).map_err(err)?;
    Ok((r, t.elapsed()))
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for f in families()? {
        let (r, t) = study(&f, &f.base)?;
        let s = slope(&r.deltas, &r.sup_dists);
        let (lo, hi) = if f.direction == Direction::Ell {
            (0.95, 1.05)
        } else {
            (0.9, 1.1)
        };
        let pass = (lo..=hi).contains(&s) && r.dropped.is_empty() && t <= Duration::from_secs(60);
        if f.direction == Direction::Ell {
            let sine = Expr::sin(X, 0, 1);
            ok &= f.shape == sine && f.deltas == [1e-1, 3e-2, 1e-2, 3e-3];
        }
        ok &= pass;
        parts.push(format!("{}: slope {s:.4} ({t:.2?})", f.name));
    }
    let detail = parts.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `max sup_dist / (C_ell (da + df) + dl)` with `C_ell` from the bounds.
fn c_fit(r: &ScalingReport, base: &CoefficientField, deltas: &[f64], f: &Family) -> Result<f64, String> {
    let mut best: f64 = 0.0;
    for (d, rep) in deltas.iter().zip(&r.reports) {
        let p = base.perturbed(f.direction, &f.shape, *d).map_err(err)?;
        let (b1, b2) = (base.bounds(), p.bounds());
        let c_ell = 1.0 + (b1.k_ell + b1.l_ell).min(b2.k_ell + b2.l_ell);
        best = best.max(rep.sup_dist / (c_ell * (rep.da + rep.df) + rep.dl));
    }
    Ok(best)
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for f in families()? {
        let shifted = f.base.shift_cost(10.0).map_err(err)?;
        let (r0, _) = study(&f, &f.base)?;
        let (r1, _) = study(&f, &shifted)?;
        let (c0, c1) = (
            c_fit(&r0, &f.base, &r0.deltas, &f)?,
            c_fit(&r1, &shifted, &r1.deltas, &f)?,
        );
        let ratio = (c0 / c1).max(c1 / c0);
        let k = shifted.bounds().k_ell / f.base.bounds().k_ell;
        ok &= ratio <= 2.0;
        parts.push(format!(
            "{}: C_fit {c0:.3e} -> {c1:.3e}, ratio {ratio:.3} (K_ell x{k:.1})",
            f.name
        ));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let f = scaling_family("cde_scaling_ell.json")?;
    let (r, _) = study(&f, &f.base)?;
    let ratios: Vec<f64> = r.deltas.iter().zip(&r.c2_dists).map(|(d, c)| c / d).collect();
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let s = slope(&r.deltas, &r.c2_dists);
    let detail = format!("c2_dist/delta max/min = {spread:.4}, slope = {s:.4}");
    if spread <= 3.0 && (0.9..=1.1).contains(&s) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn switching_source() -> TwoScaleCoefficientField {
    let ell = Expr::sin(Y, 0, 1).plus(Expr::cos(X, 0, 1).scaled(0.5));
    let f = Expr::sin(X, 0, 1).scaled(0.5);
    TwoScaleCoefficientField::new(
        1,
        0.5,
        vec![
            ControlCoefficients::scalar(
                "soft",
                c(1.0).plus(Expr::sin(Y, 0, 1).scaled(0.5)),
                f.clone(),
                ell.clone(),
            ),
            ControlCoefficients::scalar("stiff", c(1.5).plus(Expr::cos(Y, 0, 1).scaled(0.5)), f, ell),
        ],
    )
    .unwrap()
}

fn criterion_8() -> Outcome {
    let source = switching_source();
    let nu = 0.5;
    let tol = 1e-6;
    let points = sample_points(1, 20, 2.0, 2.0, 20261015);
    let (mut ell, mut conv) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pt in &points {
        let h = |x: &SymMatrix| -> Result<f64, String> {
            Ok(effective_hamiltonian(&source, &pt.x_bar, &pt.p_bar, x, 128, tol)
                .map_err(err)?
                .value)
        };
        let base = h(&pt.x_mat)?;
        for t in [0.1, 0.5, 1.0] {
            let moved = h(&pt.x_mat.add(&SymMatrix::identity(1).scale(t)))?;
            ell = ell.max(moved - (base - nu * t));
        }
        let other = h(&pt.x_other)?;
        let mid = h(&pt.x_mat.add(&pt.x_other).scale(0.5))?;
        conv = conv.max(mid - 0.5 * (base + other));
    }
    let detail = format!("20 samples: max ellipticity excess {ell:.3e}, max convexity excess {conv:.3e}");
    if ell <= 2e-3 && conv <= 2e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `−tr(a(x)X) + ∫ max_α{−f·p − ℓ} dy`, the integral by a 4096-point
/// midpoint rule evaluated directly from the coefficients.
fn averaged_operator(source: &TwoScaleCoefficientField, x: &Vector, p: &Vector, xx: &SymMatrix) -> f64 {
    let m = 4096;
    let controls = source.controls().len();
    let integral = (0..m)
        .map(|j| {
            let y = Vector::from_slice(&[(j as f64 + 0.5) / m as f64]);
            (0..controls)
                .map(|a| {
                    let (_, f, l) = source.sample(x, &y, a);
                    -f.dot(p) - l
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / m as f64;
    let (a, _, _) = source.sample(x, &Vector::zeros(1), 0);
    -a.trace_product(xx) + integral
}

fn semilinear_sources() -> Result<Vec<TwoScaleCoefficientField>, String> {
    let cfg = load(&examples().join("effective_h_semilinear.json")).map_err(err)?;
    let shipped = match cfg.experiment {
        Experiment::EffectiveH(e) => TwoScaleCoefficientField::from_spec(&e.problem).map_err(err)?,
        _ => return Err("effective_h_semilinear.json has the wrong kind".into()),
    };
    let a = c(1.2).plus(Expr::cos(X, 0, 1).scaled(0.3));
    let switching = TwoScaleCoefficientField::new(
        1,
        0.5,
        vec![
            ControlCoefficients::scalar("up", a.clone(), c(1.0), Expr::sin(Y, 0, 2)),
            ControlCoefficients::scalar(
                "down",
                a,
                c(-1.0),
                Expr::cos(Y, 0, 1).times(c(1.0).plus(Expr::sin(X, 0, 1).scaled(0.5))),
            ),
        ],
    )
    .map_err(err)?;
    Ok(vec![shipped, switching])
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, source) in semilinear_sources()?.iter().enumerate() {
        for pt in sample_points(1, 20, 2.0, 2.0, 9 + i as u64) {
            let h = effective_hamiltonian(source, &pt.x_bar, &pt.p_bar, &pt.x_mat, 256, 1e-6).map_err(err)?;
            worst = worst.max((h.value - averaged_operator(source, &pt.x_bar, &pt.p_bar, &pt.x_mat)).abs());
            count += 1;
        }
    }
    let t = t.elapsed();
    let detail = format!("{count} samples, max deviation {worst:.3e}, {t:.2?}");
    if worst <= 5e-3 {
        within(t, Duration::from_secs(120)).map_err(|e| format!("{detail}; {e}"))?;
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let eps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let single =
        |ell: Expr| TwoScaleCoefficientField::new(1, 1.0, vec![ControlCoefficients::scalar("u", c(1.0), c(0.0), ell)]);
    let analytic = single(c(1.0).plus(Expr::sin(Y, 0, 1))).map_err(err)?;
    let coupled = single(
        c(1.0)
            .plus(Expr::sin(X, 0, 1).scaled(0.5))
            .times(c(1.0).plus(Expr::sin(Y, 0, 1))),
    )
    .map_err(err)?;
    let rule = FineRule::default();

    let ra = measure_rate(&analytic, &eps, 256, 256, &rule).map_err(err)?;
    let closed: Vec<f64> = eps.iter().map(|e| 1.0 / (1.0 + 4.0 * PI * PI / (e * e))).collect();
    let theta_closed = slope(&eps, &closed);
    let theta_a = slope(&eps, &ra.errors);
    let closed_dev = ra
        .errors
        .iter()
        .zip(&closed)
        .map(|(e, c)| (e / c - 1.0).abs())
        .fold(0.0, f64::max);

    let rc = measure_rate(&coupled, &eps, 256, 256, &rule).map_err(err)?;
    let theta_c = slope(&eps, &rc.errors);
    let m = rc.fitted_m;
    let bound = eps.iter().zip(&rc.errors).all(|(e, err)| *err <= m * e.powf(0.9));
    let resolved = eps.iter().zip(&rc.fine_n).all(|(e, n)| *n as f64 * e >= 32.0 - 1e-9);
    let decreasing = [&ra.errors, &rc.errors]
        .iter()
        .all(|es| es.windows(2).all(|w| w[1] < w[0]));
    let t = t.elapsed();

    let detail = format!(
        "analytic theta {theta_a:.4} (closed form {theta_closed:.4}, max rel. dev {closed_dev:.2e}); \
         coupled theta {theta_c:.4}, bound {bound}, h <= eps/32 {resolved}, decreasing {decreasing}, {t:.2?}"
    );
    let pass = (theta_a - 2.0).abs() <= 0.1
        && closed_dev <= 0.1
        && theta_c >= 0.9
        && bound
        && resolved
        && decreasing
        && t <= Duration::from_secs(300);
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_11() -> Outcome {
    let (_, e128) = oracle_errors(128)?;
    let (_, e256) = oracle_errors(256)?;
    let ratio = e128 / e256;
    let detail = format!("corrector error {e128:.3e} -> {e256:.3e}, ratio {ratio:.3}");
    if ratio >= 1.8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("ergodic oracle", criterion_1),
        ("discounted maximum principle", criterion_2),
        ("vanishing-discount flatness", criterion_3),
        ("two-route agreement", criterion_4),
        ("sup-norm scaling", criterion_5),
        ("constant independent of cost bounds", criterion_6),
        ("C2 scaling", criterion_7),
        ("effective operator ellipticity and convexity", criterion_8),
        ("semilinear averaging oracle", criterion_9),
        ("homogenization rate", criterion_10),
        ("grid convergence", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
