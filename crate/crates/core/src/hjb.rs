//! Monotone upwind discretization of the Bellman operator, Howard policy
//! iteration for the discounted problem and explicit time marching for the
//! evolutive one.
//!
//! Every discrete operator here has the form
//!
//! ```text
//! H_h[v](x) = Σ_b ω_b · max_c { Σ_k w_{x,b,c,k} (v(x) − v(n_k(x))) − ℓ_{x,b,c} }
//! ```
//!
//! with nonnegative weights `w` on the `2·dim` axis neighbours `n_k`. A plain
//! Bellman operator has a single block (`ω = 1`) whose choices are the
//! controls; averaged operators with several blocks are built by the
//! homogenization code.

use std::io::{self, Write};

use serde::Serialize;

use crate::banded::{fold, BandedMatrix};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::model::CoefficientField;
use crate::small::MAX_DIM;

const STENCIL: usize = 2 * MAX_DIM;

#[derive(Clone, Debug)]
pub struct DiscreteBellmanOperator {
    grid: TorusGrid,
    labels: Vec<String>,
    choices: usize,
    blocks: usize,
    block_weight: f64,
    /// `STENCIL` weights per (node, block, choice); per axis forward then
    /// backward neighbour. Unused slots in 1D stay zero.
    weights: Vec<[f64; STENCIL]>,
    load: Vec<f64>,
    neighbors: Vec<[usize; STENCIL]>,
    max_diag: f64,
}

/// Upwind weights for diagonal diffusion `a_ii` and drift `f` at spacing `h`.
pub(crate) fn upwind_weights(dim: usize, h: f64, a_diag: &[f64], f: &[f64]) -> [f64; STENCIL] {
    let mut w = [0.0; STENCIL];
    for i in 0..dim {
        let diff = a_diag[i] / (h * h);
        w[2 * i] = diff + f[i].max(0.0) / h;
        w[2 * i + 1] = diff + (-f[i]).max(0.0) / h;
    }
    w
}

/// Builds the monotone scheme for a one-scale problem.
pub fn discretize(problem: &CoefficientField, grid: &TorusGrid) -> Result<DiscreteBellmanOperator> {
    if problem.dim() != grid.dim() {
        return Err(Error::invalid("grid.dim", "grid and problem dimensions differ"));
    }
    if let Some((alpha, node, value)) = problem.first_off_diagonal(grid) {
        return Err(Error::NonDiagonalDiffusion {
            control: problem.controls().labels()[alpha].clone(),
            node,
            value,
        });
    }
    let dim = grid.dim();
    let h = grid.spacing();
    let m = problem.controls().len();
    let mut weights = Vec::with_capacity(grid.len() * m);
    let mut load = Vec::with_capacity(grid.len() * m);
    for node in grid.nodes() {
        let x = grid.coord(node);
        for alpha in 0..m {
            let (a, f, l) = problem.sample(&x, alpha);
            let diag: Vec<f64> = (0..dim).map(|i| a.get(i, i)).collect();
            weights.push(upwind_weights(dim, h, &diag, f.as_slice()));
            load.push(l);
        }
    }
    Ok(DiscreteBellmanOperator::from_parts(
        *grid,
        problem.controls().labels().to_vec(),
        1,
        weights,
        load,
    ))
}

impl DiscreteBellmanOperator {
    /// `weights` and `load` are indexed by `(node·blocks + block)·choices + choice`.
    pub(crate) fn from_parts(
        grid: TorusGrid,
        labels: Vec<String>,
        blocks: usize,
        weights: Vec<[f64; STENCIL]>,
        load: Vec<f64>,
    ) -> Self {
        let choices = labels.len();
        assert_eq!(weights.len(), grid.len() * blocks * choices);
        assert_eq!(load.len(), weights.len());
        let dim = grid.dim();
        let neighbors = grid
            .nodes()
            .map(|node| {
                let mut nb = [node; STENCIL];
                for i in 0..dim {
                    nb[2 * i] = grid.neighbor(node, i, 1);
                    nb[2 * i + 1] = grid.neighbor(node, i, -1);
                }
                nb
            })
            .collect();
        let block_weight = 1.0 / blocks as f64;
        let mut max_diag: f64 = 0.0;
        for node in grid.nodes() {
            let mut d = 0.0;
            for b in 0..blocks {
                let e0 = (node * blocks + b) * choices;
                d += block_weight
                    * weights[e0..e0 + choices]
                        .iter()
                        .map(|w| w.iter().sum::<f64>())
                        .fold(0.0, f64::max);
            }
            max_diag = max_diag.max(d);
        }
        DiscreteBellmanOperator {
            grid,
            labels,
            choices,
            blocks,
            block_weight,
            weights,
            load,
            neighbors,
            max_diag,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Choice labels; the control labels for a plain Bellman operator.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn choices(&self) -> usize {
        self.choices
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// Largest diagonal entry over all policies.
    pub fn max_diagonal(&self) -> f64 {
        self.max_diag
    }

    #[inline]
    fn entry(&self, node: usize, block: usize, choice: usize) -> usize {
        (node * self.blocks + block) * self.choices + choice
    }

    /// Row of `L_α` at `node` for a single-block operator: the diagonal entry
    /// and the (neighbour, entry) pairs, entries being nonpositive.
    pub fn stencil(&self, node: usize, choice: usize) -> (f64, Vec<(usize, f64)>) {
        let w = &self.weights[self.entry(node, 0, choice)];
        let k = 2 * self.grid.dim();
        let diag = w[..k].iter().sum();
        let off = (0..k).map(|s| (self.neighbors[node][s], -w[s])).collect();
        (diag, off)
    }

    pub fn load(&self, node: usize, choice: usize) -> f64 {
        self.load[self.entry(node, 0, choice)]
    }

    #[inline]
    fn choice_value(&self, v: &[f64], node: usize, e: usize, load_shift: f64) -> f64 {
        let w = &self.weights[e];
        let nb = &self.neighbors[node];
        let vx = v[node];
        let mut s = 0.0;
        for k in 0..2 * self.grid.dim() {
            s += w[k] * (vx - v[nb[k]]);
        }
        s - (self.load[e] - load_shift)
    }

    fn node_value(&self, v: &[f64], node: usize, load_shift: f64) -> f64 {
        let mut total = 0.0;
        for b in 0..self.blocks {
            let e0 = self.entry(node, b, 0);
            let best = (0..self.choices)
                .map(|c| self.choice_value(v, node, e0 + c, load_shift))
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        total * self.block_weight
    }

    /// `H_h[u]` at every node.
    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        assert_eq!(u.grid(), &self.grid);
        let v = u.values();
        GridFunction::from_fn_nodes(self.grid, |node| self.node_value(v, node, 0.0))
    }

    /// Policy improvement. Without a current policy the first maximizing
    /// choice (in label order) wins; with one, a choice is only replaced when
    /// another beats it by more than `tie`.
    fn improve(&self, v: &[f64], load_shift: f64, current: Option<&[u32]>, tie: f64) -> (Vec<u32>, usize) {
        let mut policy = Vec::with_capacity(self.grid.len() * self.blocks);
        let mut changes = 0;
        for node in self.grid.nodes() {
            for b in 0..self.blocks {
                let slot = node * self.blocks + b;
                let e0 = self.entry(node, b, 0);
                let start = current.map_or(0, |p| p[slot] as usize);
                let mut best = start;
                let mut best_v = self.choice_value(v, node, e0 + start, load_shift);
                for c in 0..self.choices {
                    let val = self.choice_value(v, node, e0 + c, load_shift);
                    if val > best_v + tie {
                        best = c;
                        best_v = val;
                    }
                }
                if best != start {
                    changes += 1;
                }
                policy.push(best as u32);
            }
        }
        (policy, changes)
    }

    fn position(&self, node: usize) -> usize {
        let n = self.grid.points_per_axis();
        let idx = self.grid.multi_index(node);
        match self.grid.dim() {
            1 => fold(idx[0], n),
            _ => fold(idx[0], n) * n + fold(idx[1], n),
        }
    }

    fn half_bandwidth(&self) -> usize {
        match self.grid.dim() {
            1 => 2,
            _ => 2 * self.grid.points_per_axis(),
        }
    }

    /// Combined weights of a policy at one node.
    fn policy_weights(&self, policy: &[u32], node: usize) -> [f64; STENCIL] {
        let mut w = [0.0; STENCIL];
        for b in 0..self.blocks {
            let e = self.entry(node, b, policy[node * self.blocks + b] as usize);
            for (acc, x) in w.iter_mut().zip(&self.weights[e]) {
                *acc += self.block_weight * x;
            }
        }
        w
    }

    fn policy_load(&self, policy: &[u32], node: usize) -> f64 {
        (0..self.blocks)
            .map(|b| self.load[self.entry(node, b, policy[node * self.blocks + b] as usize)])
            .sum::<f64>()
            * self.block_weight
    }

    /// Factored `λI + L_π` in folded order.
    fn assemble(&self, policy: &[u32], lambda: f64) -> Result<BandedMatrix> {
        let mut m = BandedMatrix::zeros(self.grid.len(), self.half_bandwidth());
        for node in self.grid.nodes() {
            let w = self.policy_weights(policy, node);
            let r = self.position(node);
            m.add(r, r, lambda);
            for (k, wk) in w.iter().enumerate().take(2 * self.grid.dim()) {
                m.add(r, r, *wk);
                m.add(r, self.position(self.neighbors[node][k]), -wk);
            }
        }
        m.factor()?;
        Ok(m)
    }

    /// `(λI + L_π) v` in node order.
    fn multiply(&self, policy: &[u32], lambda: f64, v: &[f64]) -> Vec<f64> {
        self.grid
            .nodes()
            .map(|node| {
                let w = self.policy_weights(policy, node);
                let mut s = lambda * v[node];
                for (k, wk) in w.iter().enumerate().take(2 * self.grid.dim()) {
                    s += wk * (v[node] - v[self.neighbors[node][k]]);
                }
                s
            })
            .collect()
    }

    /// Solves `(λI + L_π) v = ℓ_π − load_shift` with two refinement sweeps.
    fn evaluate_policy(&self, policy: &[u32], lambda: f64, load_shift: f64) -> Result<Vec<f64>> {
        let m = self.assemble(policy, lambda)?;
        let rhs: Vec<f64> = self
            .grid
            .nodes()
            .map(|node| self.policy_load(policy, node) - load_shift)
            .collect();
        let pos: Vec<usize> = self.grid.nodes().map(|node| self.position(node)).collect();
        let solve = |r: &[f64]| {
            let mut buf = vec![0.0; r.len()];
            for (node, p) in pos.iter().enumerate() {
                buf[*p] = r[node];
            }
            m.solve(&mut buf);
            pos.iter().map(|p| buf[*p]).collect::<Vec<f64>>()
        };
        let mut v = solve(&rhs);
        for _ in 0..2 {
            let av = self.multiply(policy, lambda, &v);
            let r: Vec<f64> = rhs.iter().zip(&av).map(|(b, a)| b - a).collect();
            let dv = solve(&r);
            v.iter_mut().zip(&dv).for_each(|(x, d)| *x += d);
        }
        Ok(v)
    }

    /// Invariant probability measure of the policy chain: `L_πᵀ m = 0`,
    /// `Σ m = 1`, by one step of shifted inverse iteration.
    pub fn invariant_measure(&self, policy: &[u32]) -> Result<GridFunction> {
        let shift = 1e-10 * self.max_diag.max(1.0);
        let m = self.assemble(policy, shift)?;
        let n = self.grid.len();
        let mut buf = vec![1.0 / n as f64; n];
        m.solve_transpose(&mut buf);
        let total: f64 = buf.iter().sum();
        let values = self.grid.nodes().map(|node| buf[self.position(node)] / total).collect();
        GridFunction::scalar(self.grid, values)
    }

    /// Loads with `ℓ` replaced by `ℓ + c` for every choice.
    pub fn with_load_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.load.iter_mut().for_each(|l| *l += c);
        out
    }
}

#[derive(Clone, Debug)]
pub struct HowardOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Constant `s` with `v = s + w`; the solver works with `w`, which keeps
    /// full precision when `v` is dominated by a large constant.
    pub shift: f64,
    pub initial_policy: Option<Vec<u32>>,
}

impl Default for HowardOptions {
    fn default() -> Self {
        HowardOptions {
            tol: 1e-10,
            max_iterations: 100,
            shift: 0.0,
            initial_policy: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HowardStep {
    pub iteration: usize,
    pub residual: f64,
    pub policy_changes: usize,
}

#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub lambda: f64,
    pub shift: f64,
    /// `v − shift`.
    pub deviation: GridFunction,
    pub iterations: usize,
    /// Sup norm of `λv + H_h[v]`.
    pub residual: f64,
    /// Chosen index per (node, block).
    pub policy: Vec<u32>,
    pub log: Vec<HowardStep>,
}

impl DiscountedSolution {
    pub fn v(&self) -> GridFunction {
        self.deviation.map(|w| w + self.shift)
    }

    /// `λ·v` without forming `v`.
    pub fn lambda_v(&self) -> GridFunction {
        self.deviation.map(|w| self.lambda * (w + self.shift))
    }
}

/// Discounted problem `λv + H_h[v] = 0` with default options.
pub fn solve_discounted(op: &DiscreteBellmanOperator, lambda: f64, tol: f64) -> Result<DiscountedSolution> {
    solve_discounted_with(
        op,
        lambda,
        &HowardOptions {
            tol,
            ..HowardOptions::default()
        },
    )
}

pub fn solve_discounted_with(
    op: &DiscreteBellmanOperator,
    lambda: f64,
    opts: &HowardOptions,
) -> Result<DiscountedSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "discount rate must be positive"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    let slots = op.grid.len() * op.blocks;
    let load_shift = lambda * opts.shift;
    let mut policy = match &opts.initial_policy {
        Some(p) if p.len() == slots && p.iter().all(|&c| (c as usize) < op.choices) => p.clone(),
        Some(_) => return Err(Error::invalid("initial_policy", "policy does not match the operator")),
        None => op.improve(&vec![0.0; op.grid.len()], load_shift, None, 0.0).0,
    };
    let eps = f64::EPSILON;
    let mut log = Vec::new();
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        let w = op.evaluate_policy(&policy, lambda, load_shift)?;
        let scale = op.max_diag * w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let (next, changes) = op.improve(&w, load_shift, Some(&policy), 4.0 * eps * scale);
        residual = op
            .grid
            .nodes()
            .map(|node| (lambda * w[node] + op.node_value(&w, node, load_shift)).abs())
            .fold(0.0, f64::max);
        log.push(HowardStep {
            iteration,
            residual,
            policy_changes: changes,
        });
        log::trace!("howard {iteration}: residual {residual:.3e}, {changes} changes");
        if changes == 0 {
            // Below the rounding floor of the stencil the requested tolerance
            // cannot be met; accept the floor instead.
            let floor = 16.0 * eps * scale;
            if residual > opts.tol.max(floor) {
                return Err(Error::HowardNotConverged {
                    iterations: iteration,
                    residual,
                });
            }
            return Ok(DiscountedSolution {
                lambda,
                shift: opts.shift,
                deviation: GridFunction::scalar(op.grid, w)?,
                iterations: iteration,
                residual,
                policy,
                log,
            });
        }
        policy = next;
    }
    Err(Error::HowardNotConverged {
        iterations: opts.max_iterations,
        residual,
    })
}

pub fn write_iteration_log<W: Write>(log: &[HowardStep], mut out: W) -> io::Result<()> {
    writeln!(out, "iteration,residual,policy_changes")?;
    for s in log {
        writeln!(
            out,
            "{},{},{}",
            s.iteration,
            crate::fmt::num(s.residual),
            s.policy_changes
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EvolutiveTrace {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridFunction>,
}

impl EvolutiveTrace {
    pub fn last(&self) -> (f64, &GridFunction) {
        (*self.times.last().unwrap(), self.snapshots.last().unwrap())
    }

    /// Snapshot recorded closest to `t`.
    pub fn at(&self, t: f64) -> (f64, &GridFunction) {
        let k = (0..self.times.len())
            .min_by(|&i, &j| (self.times[i] - t).abs().total_cmp(&(self.times[j] - t).abs()))
            .unwrap();
        (self.times[k], &self.snapshots[k])
    }
}

/// Explicit Euler for `V_t + H_h[V] = 0`, `V(0) = 0`, with
/// `dt·max_diagonal ≤ 1`. Snapshots at every multiple of `record_every`
/// and at `T`.
pub fn march_evolutive(op: &DiscreteBellmanOperator, t_end: f64, record_every: f64) -> Result<EvolutiveTrace> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::invalid("T", "final time must be positive"));
    }
    if !(record_every > 0.0) {
        return Err(Error::invalid("record_every", "recording interval must be positive"));
    }
    let record_every = record_every.min(t_end);
    let per_record = (record_every * op.max_diag).ceil().max(1.0) as usize;
    let dt = record_every / per_record as f64;
    let n = op.grid.len();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut times = vec![0.0];
    let mut snapshots = vec![GridFunction::constant(op.grid, 0.0)];
    let mut t = 0.0;
    let mut step = 0usize;
    while t < t_end * (1.0 - 1e-14) {
        let tau = dt.min(t_end - t);
        for (node, out) in next.iter_mut().enumerate() {
            *out = v[node] - tau * op.node_value(&v, node, 0.0);
        }
        std::mem::swap(&mut v, &mut next);
        step += 1;
        t = if tau < dt { t_end } else { step as f64 * dt };
        if step.is_multiple_of(per_record) || t >= t_end * (1.0 - 1e-14) {
            times.push(t);
            snapshots.push(GridFunction::scalar(op.grid, v.clone())?);
        }
    }
    Ok(EvolutiveTrace { times, snapshots })
}
