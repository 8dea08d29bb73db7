//! Monte Carlo simulation of the equilibrium wealth process and statistical
//! checks of the identities the equilibrium value function must satisfy.
//!
//! Wealth under a policy that is linear in wealth is a geometric Brownian
//! motion with deterministic, piecewise-constant coefficients, so each step
//! is the exact log-normal update
//!
//! ```text
//! X_{k+1} = X_k exp((r + mu z_k - c_k - sigma^2 z_k^2 / 2) dt + sigma z_k sqrt(dt) Z_k)
//! ```
//!
//! with the controls frozen at the left node of the step.

mod rng;
mod stats;

use rayon::prelude::*;

pub use rng::PathStream;
pub use stats::{tree_reduce, Stats};

use crate::csv::{fmt_f64, CsvWriter};
use crate::error::{invalid, Result};
use crate::lambda::{LambdaSolution, Objective};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use crate::policy::EquilibriumPolicy;

/// Paths per parallel work unit. Fixed so the reduction tree depends only on
/// `n_paths`, never on the worker count.
const BLOCK: usize = 1024;

/// Verdicts use this many standard errors.
pub const Z_CRITICAL: f64 = 3.0;

/// Fewest paths accepted by the statistical verdicts.
pub const MIN_STAT_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    pub x0: f64,
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64, grid: TimeGrid, x0: f64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            seed,
            grid,
            x0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if !(self.x0.is_finite() && self.x0 > 0.0) {
            return Err(invalid("x0", format!("must be positive, got {}", self.x0)));
        }
        Ok(())
    }

    fn require_statistical(&self) -> Result<()> {
        self.validate()?;
        if self.n_paths < MIN_STAT_PATHS {
            return Err(invalid(
                "n_paths",
                format!(
                    "statistical checks need at least {MIN_STAT_PATHS}, got {}",
                    self.n_paths
                ),
            ));
        }
        Ok(())
    }
}

/// Stock fraction per step and consumption rate per node of a grid.
///
/// The consumption rate at node `k` is the one in force on `[t_k, t_{k+1})`;
/// the last entry only enters the consumption integral at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    grid: TimeGrid,
    stock_fraction: Vec<f64>,
    consumption: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(grid: TimeGrid, stock_fraction: Vec<f64>, consumption: Vec<f64>) -> Result<Self> {
        if stock_fraction.len() != grid.n_steps() {
            return Err(invalid(
                "stock_fraction",
                format!(
                    "expected {} steps, got {}",
                    grid.n_steps(),
                    stock_fraction.len()
                ),
            ));
        }
        if consumption.len() != grid.len() {
            return Err(invalid(
                "consumption",
                format!("expected {} nodes, got {}", grid.len(), consumption.len()),
            ));
        }
        if stock_fraction.iter().any(|z| !z.is_finite()) {
            return Err(invalid("stock_fraction", "must be finite"));
        }
        if consumption.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("consumption", "rates must be finite and >= 0"));
        }
        Ok(Self {
            grid,
            stock_fraction,
            consumption,
        })
    }

    /// The equilibrium controls sampled on `grid`.
    pub fn from_equilibrium(pol: &EquilibriumPolicy, grid: &TimeGrid) -> Self {
        Self {
            grid: *grid,
            stock_fraction: vec![pol.stock_fraction(); grid.n_steps()],
            consumption: grid
                .nodes()
                .iter()
                .map(|t| pol.consumption_at(*t))
                .collect(),
        }
    }

    /// Same schedule with steps `start .. start + steps` replaced by `spike`.
    pub fn with_spike(&self, start: usize, steps: usize, spike: &Spike) -> Self {
        let mut out = self.clone();
        for k in start..(start + steps).min(self.grid.n_steps()) {
            out.stock_fraction[k] = spike.stock_fraction;
            if let Some(c) = spike.consumption {
                out.consumption[k] = c;
            }
        }
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn stock_fraction(&self) -> &[f64] {
        &self.stock_fraction
    }

    pub fn consumption(&self) -> &[f64] {
        &self.consumption
    }
}

/// Alternative constant controls applied on `[t, t + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub stock_fraction: f64,
    /// `None` keeps the equilibrium consumption rate during the spike.
    pub consumption: Option<f64>,
}

/// Per-step coefficients and quadrature weights for paths started at node
/// `start` of the schedule grid.
struct Plan {
    start: usize,
    drift: Vec<f64>,
    vol: Vec<f64>,
    /// `h(t_k - t_start) * trapezoid weight * c_k^p / p`, zero when running
    /// consumption is not valued.
    running: Vec<f64>,
    /// `h(T - t_start) / p`.
    terminal: f64,
    p: f64,
}

impl Plan {
    fn new(
        sched: &ControlSchedule,
        start: usize,
        objective: Objective,
        m: &MarketParams,
        u: &CrraUtility,
        d: &DiscountSpec,
    ) -> Self {
        let g = &sched.grid;
        let n = g.n_steps();
        let dt = g.step();
        let (r, mu, sigma) = (m.r(), m.mu(), m.sigma());
        let p = u.p();
        let mut drift = vec![0.0; n];
        let mut vol = vec![0.0; n];
        for k in start..n {
            let z = sched.stock_fraction[k];
            let c = sched.consumption[k];
            drift[k] = (r + mu * z - c - 0.5 * sigma * sigma * z * z) * dt;
            vol[k] = sigma * z * dt.sqrt();
        }
        let t0 = g.node(start);
        let mut running = vec![0.0; n + 1];
        if objective == Objective::ConsumptionAndBequest && start < n {
            for (k, w) in running.iter_mut().enumerate().skip(start) {
                let edge = k == start || k == n;
                let weight = if edge { 0.5 * dt } else { dt };
                let c = sched.consumption[k];
                *w = weight * d.h(g.node(k) - t0) * c.powf(p) / p;
            }
        }
        Self {
            start,
            drift,
            vol,
            running,
            terminal: d.h(g.horizon() - t0) / p,
            p,
        }
    }

    /// Simulates one path from `x0`, calling `visit(k, X_k)` at every node
    /// from `start` to `n`, and returns the realised utility functional.
    fn run(&self, x0: f64, normals: &[f64], mut visit: impl FnMut(usize, f64)) -> f64 {
        let mut x = x0;
        let mut acc = 0.0;
        for (j, z) in normals.iter().enumerate() {
            let k = self.start + j;
            visit(k, x);
            if self.running[k] != 0.0 {
                acc += self.running[k] * x.powf(self.p);
            }
            x *= (self.drift[k] + self.vol[k] * z).exp();
        }
        let n = self.start + normals.len();
        visit(n, x);
        let xp = x.powf(self.p);
        if self.running[n] != 0.0 {
            acc += self.running[n] * xp;
        }
        acc + self.terminal * xp
    }
}

fn path_normals(seed: u64, path: usize, start: usize, buf: &mut [f64]) {
    let mut stream = PathStream::new(seed, path as u64);
    stream.seek(start);
    stream.fill_normals(buf);
}

/// Runs `per_path` over `0..n_paths` in fixed blocks, in parallel, and
/// tree-reduces the block accumulators.
fn blocked<A, I, P, M>(n_paths: usize, init: I, per_path: P, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    P: Fn(usize, &mut A) + Sync,
    M: Fn(A, A) -> A,
{
    let blocks: Vec<A> = (0..n_paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for i in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
                per_path(i, &mut acc);
            }
            acc
        })
        .collect();
    tree_reduce(blocks, &merge).unwrap_or_else(init)
}

/// Sample mean of `X^order` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub order: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Cross-sectional statistics at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub t: f64,
    pub wealth_mean: f64,
    pub wealth_std_error: f64,
    /// Mean of `v(s, X(s)) / h(T - s)` when a value function was supplied.
    pub scaled_value_mean: Option<f64>,
    pub scaled_value_std_error: Option<f64>,
    pub moments: Vec<MomentEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub n_paths: usize,
    pub seed: u64,
    pub start_time: f64,
    pub x0: f64,
    pub j_estimate: f64,
    pub j_std_error: f64,
    pub terminal_moments: Vec<MomentEstimate>,
    /// One entry per node from the start node to `T`.
    pub path_summary: Vec<NodeSummary>,
    /// Smallest wealth seen on any path at any node.
    pub min_wealth: f64,
    pub terminal_wealth_min: f64,
    pub terminal_wealth_max: f64,
}

impl SimBatch {
    /// Per-node summary table.
    pub fn to_csv(&self) -> String {
        let orders: Vec<f64> = self
            .path_summary
            .first()
            .map(|s| s.moments.iter().map(|m| m.order).collect())
            .unwrap_or_default();
        let mut header = vec![
            "t".to_string(),
            "wealth_mean".into(),
            "wealth_se".into(),
            "scaled_value_mean".into(),
            "scaled_value_se".into(),
        ];
        for q in &orders {
            header.push(format!("moment_{q}_mean"));
            header.push(format!("moment_{q}_se"));
        }
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = CsvWriter::new(&header_refs);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for s in &self.path_summary {
            let mut row = vec![
                fmt_f64(s.t),
                fmt_f64(s.wealth_mean),
                fmt_f64(s.wealth_std_error),
                opt(s.scaled_value_mean),
                opt(s.scaled_value_std_error),
            ];
            for m in &s.moments {
                row.push(fmt_f64(m.mean));
                row.push(fmt_f64(m.std_error));
            }
            w.row(&row);
        }
        w.finish()
    }

    /// The node summary at time `t`, if `t` is a simulated node.
    pub fn at(&self, t: f64) -> Option<&NodeSummary> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.path_summary.iter().find(|s| (s.t - t).abs() <= tol)
    }
}

#[derive(Clone)]
struct NodeAcc {
    wealth: Stats,
    scaled: Stats,
    moments: Vec<Stats>,
}

#[derive(Clone)]
struct BatchAcc {
    j: Stats,
    nodes: Vec<NodeAcc>,
    min_wealth: f64,
    terminal_min: f64,
    terminal_max: f64,
}

impl BatchAcc {
    fn new(nodes: usize, orders: usize) -> Self {
        Self {
            j: Stats::default(),
            nodes: vec![
                NodeAcc {
                    wealth: Stats::default(),
                    scaled: Stats::default(),
                    moments: vec![Stats::default(); orders],
                };
                nodes
            ],
            min_wealth: f64::INFINITY,
            terminal_min: f64::INFINITY,
            terminal_max: f64::NEG_INFINITY,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.j = self.j.merge(&other.j);
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            a.wealth = a.wealth.merge(&b.wealth);
            a.scaled = a.scaled.merge(&b.scaled);
            for (x, y) in a.moments.iter_mut().zip(&b.moments) {
                *x = x.merge(y);
            }
        }
        self.min_wealth = self.min_wealth.min(other.min_wealth);
        self.terminal_min = self.terminal_min.min(other.terminal_min);
        self.terminal_max = self.terminal_max.max(other.terminal_max);
        self
    }
}

/// Simulates `sched` from node `start` with initial wealth `x`.
///
/// `value`, when given, supplies `lambda` for the scaled value
/// `v(s, X) / h(T - s)` tracked at every node; `orders` lists the moments
/// `E[X^q]` to record.
#[allow(clippy::too_many_arguments)]
pub fn simulate_schedule(
    sched: &ControlSchedule,
    objective: Objective,
    cfg: &SimConfig,
    start: usize,
    x: f64,
    value: Option<&LambdaSolution>,
    orders: &[f64],
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<SimBatch> {
    cfg.validate()?;
    let g = sched.grid;
    if start > g.n_steps() {
        return Err(invalid(
            "start",
            format!("node {start} is past the grid end"),
        ));
    }
    if !(x.is_finite() && x > 0.0) {
        return Err(invalid("x", format!("wealth must be positive, got {x}")));
    }
    if let Some(sol) = value {
        check_horizon(sol.grid(), &g)?;
    }
    d.validate_on(g.horizon())?;

    let plan = Plan::new(sched, start, objective, m, u, d);
    let n = g.n_steps();
    let nodes = n + 1 - start;
    let horizon = g.horizon();
    let scale: Option<Vec<f64>> = value.map(|sol| {
        (start..=n)
            .map(|k| {
                let t = g.node(k);
                sol.value_at(t) / (d.h(horizon - t) * u.p())
            })
            .collect()
    });
    let p = u.p();

    let acc = blocked(
        cfg.n_paths,
        || BatchAcc::new(nodes, orders.len()),
        |i, acc| {
            let mut z = vec![0.0; n - start];
            path_normals(cfg.seed, i, start, &mut z);
            let j = plan.run(x, &z, |k, w| {
                let node = &mut acc.nodes[k - start];
                node.wealth.push(w);
                acc.min_wealth = acc.min_wealth.min(w);
                if let Some(s) = &scale {
                    node.scaled.push(s[k - start] * w.powf(p));
                }
                for (st, q) in node.moments.iter_mut().zip(orders) {
                    st.push(w.powf(*q));
                }
                if k == n {
                    acc.terminal_min = acc.terminal_min.min(w);
                    acc.terminal_max = acc.terminal_max.max(w);
                }
            });
            acc.j.push(j);
        },
        BatchAcc::merge,
    );

    let moments_of = |a: &NodeAcc| -> Vec<MomentEstimate> {
        a.moments
            .iter()
            .zip(orders)
            .map(|(s, q)| MomentEstimate {
                order: *q,
                mean: s.mean(),
                std_error: s.std_error(),
            })
            .collect()
    };
    let path_summary: Vec<NodeSummary> = acc
        .nodes
        .iter()
        .enumerate()
        .map(|(j, a)| NodeSummary {
            t: g.node(start + j),
            wealth_mean: a.wealth.mean(),
            wealth_std_error: a.wealth.std_error(),
            scaled_value_mean: scale.as_ref().map(|_| a.scaled.mean()),
            scaled_value_std_error: scale.as_ref().map(|_| a.scaled.std_error()),
            moments: moments_of(a),
        })
        .collect();
    let terminal_moments = path_summary
        .last()
        .map(|s| s.moments.clone())
        .unwrap_or_default();

    Ok(SimBatch {
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        start_time: g.node(start),
        x0: x,
        j_estimate: acc.j.mean(),
        j_std_error: acc.j.std_error(),
        terminal_moments,
        path_summary,
        min_wealth: acc.min_wealth,
        terminal_wealth_min: acc.terminal_min,
        terminal_wealth_max: acc.terminal_max,
    })
}

fn check_horizon(solution: &TimeGrid, sim: &TimeGrid) -> Result<()> {
    let tol = 1e-12 * solution.horizon().max(1.0);
    if (solution.horizon() - sim.horizon()).abs() > tol {
        return Err(invalid(
            "grid",
            format!(
                "simulation horizon {} differs from the solution horizon {}",
                sim.horizon(),
                solution.horizon()
            ),
        ));
    }
    if sim.start() + tol < solution.start() {
        return Err(invalid(
            "grid",
            "simulation starts before the solution grid",
        ));
    }
    Ok(())
}

/// Simulates the equilibrium wealth process from `(0, x0)` on `cfg.grid`,
/// recording the moments `E[X^q]` for each `q` in `orders`.
pub fn simulate_equilibrium(
    pol: &EquilibriumPolicy,
    cfg: &SimConfig,
    orders: &[f64],
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<SimBatch> {
    let sched = ControlSchedule::from_equilibrium(pol, &cfg.grid);
    simulate_schedule(
        &sched,
        pol.lambda().objective(),
        cfg,
        0,
        cfg.x0,
        Some(pol.lambda()),
        orders,
        m,
        u,
        d,
    )
}

/// Differences below this fraction of the target are rounding, not signal.
const ROUNDING_FLOOR: f64 = 1e-12;

/// `|estimate - target| / se`, treating rounding-level gaps as zero.
fn gap_z(estimate: f64, target: f64, se: f64) -> f64 {
    let diff = (estimate - target).abs();
    if diff <= ROUNDING_FLOOR * target.abs() {
        0.0
    } else {
        z_score(diff, se)
    }
}

/// `diff / se`, with `0/0 = 0` and `x/0 = inf`.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueVerdict {
    pub t: f64,
    pub x: f64,
    /// `lambda(t) x^p / p`.
    pub claimed: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub passed: bool,
}

/// Compares `lambda(t) x^p / p` with the Monte Carlo estimate of the utility
/// functional of the equilibrium policy started at `(t, x)`.
#[allow(clippy::too_many_arguments)]
pub fn verify_value_identity(
    sol: &LambdaSolution,
    cfg: &SimConfig,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    t: f64,
    x: f64,
) -> Result<ValueVerdict> {
    cfg.require_statistical()?;
    check_horizon(sol.grid(), &cfg.grid)?;
    let start = cfg
        .grid
        .index_of(t)
        .ok_or_else(|| invalid("t", format!("{t} is not a simulation grid node")))?;
    // the policy is built from the solution as given, so a perturbed lambda
    // perturbs both the claim and the simulated consumption
    let pol = crate::policy::equilibrium_policy(sol, m, u)?;
    let sched = ControlSchedule::from_equilibrium(&pol, &cfg.grid);
    let batch = simulate_schedule(&sched, sol.objective(), cfg, start, x, None, &[], m, u, d)?;
    let claimed = sol.value_at(cfg.grid.node(start)) * u.eval(x)?;
    let z = gap_z(batch.j_estimate, claimed, batch.j_std_error);
    Ok(ValueVerdict {
        t: cfg.grid.node(start),
        x,
        claimed,
        estimate: batch.j_estimate,
        std_error: batch.j_std_error,
        z_score: z,
        passed: z <= Z_CRITICAL,
    })
}

/// Evenly spaced node indices `0 = i_0 < ... < i_{count-1} = n`.
pub fn checkpoint_indices(n_steps: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let mut out: Vec<usize> = (0..count)
                .map(|j| ((j * n_steps) as f64 / (count - 1) as f64).round() as usize)
                .collect();
            out.dedup();
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMean {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleVerdict {
    pub equilibrium: Vec<CheckpointMean>,
    pub alternative_fraction: f64,
    pub alternative: Vec<CheckpointMean>,
    /// Largest pairwise `|m_a - m_b| / sqrt(se_a^2 + se_b^2)` under the
    /// equilibrium policy.
    pub max_flat_z: f64,
    /// Smallest `(m_k - m_{k+1}) / pooled se` under the alternative policy.
    pub min_decrease_z: f64,
    pub flat: bool,
    pub decreasing: bool,
}

impl MartingaleVerdict {
    pub fn passed(&self) -> bool {
        self.flat && self.decreasing
    }
}

fn checkpoint_means(batch: &SimBatch, idx: &[usize]) -> Vec<CheckpointMean> {
    idx.iter()
        .map(|&k| {
            let s = &batch.path_summary[k];
            CheckpointMean {
                t: s.t,
                mean: s.scaled_value_mean.unwrap_or(f64::NAN),
                std_error: s.scaled_value_std_error.unwrap_or(f64::NAN),
            }
        })
        .collect()
}

fn pooled(a: &CheckpointMean, b: &CheckpointMean) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}

/// Checks that `v(s, X(s)) / h(T - s)` has constant mean under the
/// equilibrium policy and falling mean under the constant stock fraction
/// `alternative_fraction`, at `checkpoints` evenly spaced dates.
///
/// Only meaningful for the terminal-utility problem.
#[allow(clippy::too_many_arguments)]
pub fn martingale_check(
    sol: &LambdaSolution,
    cfg: &SimConfig,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    checkpoints: usize,
    alternative_fraction: f64,
) -> Result<MartingaleVerdict> {
    cfg.require_statistical()?;
    if sol.objective() != Objective::TerminalOnly {
        return Err(invalid(
            "solution",
            "the martingale check applies to the terminal-utility problem only",
        ));
    }
    let pol = crate::policy::equilibrium_policy(sol, m, u)?;
    let idx = checkpoint_indices(cfg.grid.n_steps(), checkpoints);

    let eq_sched = ControlSchedule::from_equilibrium(&pol, &cfg.grid);
    let eq = simulate_schedule(
        &eq_sched,
        sol.objective(),
        cfg,
        0,
        cfg.x0,
        Some(sol),
        &[],
        m,
        u,
        d,
    )?;
    let alt_sched = ControlSchedule::new(
        cfg.grid,
        vec![alternative_fraction; cfg.grid.n_steps()],
        vec![0.0; cfg.grid.len()],
    )?;
    let alt = simulate_schedule(
        &alt_sched,
        sol.objective(),
        cfg,
        0,
        cfg.x0,
        Some(sol),
        &[],
        m,
        u,
        d,
    )?;

    let equilibrium = checkpoint_means(&eq, &idx);
    let alternative = checkpoint_means(&alt, &idx);

    let mut max_flat_z: f64 = 0.0;
    for (i, a) in equilibrium.iter().enumerate() {
        for b in &equilibrium[i + 1..] {
            max_flat_z = max_flat_z.max(z_score((a.mean - b.mean).abs(), pooled(a, b)));
        }
    }
    let min_decrease_z = alternative
        .windows(2)
        .map(|w| z_score(w[0].mean - w[1].mean, pooled(&w[0], &w[1])))
        .fold(f64::INFINITY, f64::min);

    Ok(MartingaleVerdict {
        equilibrium,
        alternative_fraction,
        alternative,
        max_flat_z,
        min_decrease_z,
        flat: max_flat_z <= Z_CRITICAL,
        decreasing: min_decrease_z > Z_CRITICAL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRow {
    pub epsilon_requested: f64,
    /// Spike length after snapping to whole grid steps.
    pub epsilon: f64,
    pub steps: usize,
    /// Mean of `(J(equilibrium) - J(spiked)) / epsilon`.
    pub d_mean: f64,
    pub d_std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub t: f64,
    pub x: f64,
    pub spike: Spike,
    /// In the order the epsilons were given (decreasing).
    pub rows: Vec<PerturbationRow>,
}

impl PerturbationReport {
    /// Row for the smallest epsilon.
    pub fn smallest(&self) -> &PerturbationRow {
        self.rows.last().expect("at least one epsilon")
    }

    /// One-sided check `D >= -3 se` at the smallest epsilon.
    pub fn stationary(&self) -> bool {
        self.smallest().z_score >= -Z_CRITICAL
    }

    /// `D > 3 se` at the smallest epsilon.
    pub fn strict_loss(&self) -> bool {
        self.smallest().z_score > Z_CRITICAL
    }

    /// `|D| <= 3 se` at the smallest epsilon.
    pub fn indistinguishable_from_zero(&self) -> bool {
        self.smallest().z_score.abs() <= Z_CRITICAL
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&[
            "epsilon_requested",
            "epsilon",
            "steps",
            "d_mean",
            "d_se",
            "z",
        ]);
        for r in &self.rows {
            w.row(&[
                fmt_f64(r.epsilon_requested),
                fmt_f64(r.epsilon),
                r.steps.to_string(),
                fmt_f64(r.d_mean),
                fmt_f64(r.d_std_error),
                fmt_f64(r.z_score),
            ]);
        }
        w.finish()
    }
}

/// Estimates `(J(equilibrium) - J(spike on [t, t + eps))) / eps` for each
/// `eps`, with both policies driven by the same normals path by path.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_test(
    pol: &EquilibriumPolicy,
    cfg: &SimConfig,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    t: f64,
    epsilons: &[f64],
    spike: Spike,
) -> Result<PerturbationReport> {
    cfg.require_statistical()?;
    check_horizon(pol.lambda().grid(), &cfg.grid)?;
    let g = cfg.grid;
    let start = g
        .index_of(t)
        .filter(|&i| i < g.n_steps())
        .ok_or_else(|| invalid("t", format!("{t} is not a grid node before T")))?;
    if epsilons.is_empty() {
        return Err(invalid("epsilons", "need at least one"));
    }
    if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(invalid("epsilons", "must be positive"));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("epsilons", "must be strictly decreasing"));
    }
    if !spike.stock_fraction.is_finite()
        || spike
            .consumption
            .is_some_and(|c| !(c.is_finite() && c >= 0.0))
    {
        return Err(invalid(
            "spike",
            "controls must be finite, consumption >= 0",
        ));
    }
    let remaining = g.n_steps() - start;
    let steps: Vec<usize> = epsilons
        .iter()
        .map(|e| ((e / g.step()).round() as usize).clamp(1, remaining))
        .collect();

    let objective = pol.lambda().objective();
    let base = ControlSchedule::from_equilibrium(pol, &g);
    let eq_plan = Plan::new(&base, start, objective, m, u, d);
    let spiked: Vec<Plan> = steps
        .iter()
        .map(|&s| {
            Plan::new(
                &base.with_spike(start, s, &spike),
                start,
                objective,
                m,
                u,
                d,
            )
        })
        .collect();
    let eps_eff: Vec<f64> = steps.iter().map(|&s| s as f64 * g.step()).collect();

    let acc = blocked(
        cfg.n_paths,
        || vec![Stats::default(); steps.len()],
        |i, acc| {
            let mut z = vec![0.0; remaining];
            path_normals(cfg.seed, i, start, &mut z);
            let j_eq = eq_plan.run(cfg.x0, &z, |_, _| {});
            for ((plan, e), st) in spiked.iter().zip(&eps_eff).zip(acc.iter_mut()) {
                st.push((j_eq - plan.run(cfg.x0, &z, |_, _| {})) / e);
            }
        },
        |a, b| a.iter().zip(&b).map(|(x, y)| x.merge(y)).collect(),
    );

    let rows = epsilons
        .iter()
        .zip(&steps)
        .zip(&eps_eff)
        .zip(&acc)
        .map(|(((req, s), e), st)| PerturbationRow {
            epsilon_requested: *req,
            epsilon: *e,
            steps: *s,
            d_mean: st.mean(),
            d_std_error: st.std_error(),
            z_score: z_score(st.mean(), st.std_error()),
        })
        .collect();
    Ok(PerturbationReport {
        t: g.node(start),
        x: cfg.x0,
        spike,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub order: f64,
    pub t: f64,
    pub sample: f64,
    pub std_error: f64,
    pub predicted: f64,
    pub z_score: f64,
}

/// Compares the sample moment of order `order` with `predicted(t)` at
/// `checkpoints` evenly spaced nodes of `batch`. The order must have been
/// requested when the batch was simulated.
pub fn moment_check(
    batch: &SimBatch,
    order: f64,
    checkpoints: usize,
    predicted: impl Fn(f64) -> f64,
) -> Result<Vec<MomentCheck>> {
    let slot = batch
        .path_summary
        .first()
        .and_then(|s| s.moments.iter().position(|m| m.order == order))
        .ok_or_else(|| invalid("order", format!("moment {order} was not recorded")))?;
    let idx = checkpoint_indices(batch.path_summary.len() - 1, checkpoints);
    Ok(idx
        .iter()
        .map(|&k| {
            let s = &batch.path_summary[k];
            let est = s.moments[slot];
            let want = predicted(s.t);
            MomentCheck {
                order,
                t: s.t,
                sample: est.mean,
                std_error: est.std_error,
                predicted: want,
                z_score: gap_z(est.mean, want, est.std_error),
            }
        })
        .collect())
}

/// Monte Carlo estimate of the utility functional from date 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareEstimate {
    pub j_estimate: f64,
    pub j_std_error: f64,
}

/// Date-0 welfare of the equilibrium, the date-0 precommitment plan and the
/// naive re-optimizer, all driven by the same normals.
///
/// No ordering between the three is asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareReport {
    pub equilibrium: WelfareEstimate,
    pub precommitment: WelfareEstimate,
    pub naive: WelfareEstimate,
}

pub fn welfare_comparison(
    equilibrium: &LambdaSolution,
    cfg: &SimConfig,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<WelfareReport> {
    cfg.validate()?;
    check_horizon(equilibrium.grid(), &cfg.grid)?;
    if equilibrium.objective() != Objective::ConsumptionAndBequest {
        return Err(invalid(
            "solution",
            "welfare comparison needs the consumption problem",
        ));
    }
    let g = cfg.grid;
    let pol = crate::policy::equilibrium_policy(equilibrium, m, u)?;
    let plan0 = crate::policy::solve_precommitment(g.start(), m, u, d, &g)?;
    let fraction = vec![pol.stock_fraction(); g.n_steps()];
    let schedules = [
        ControlSchedule::from_equilibrium(&pol, &g),
        ControlSchedule::new(
            g,
            fraction.clone(),
            g.nodes()
                .iter()
                .map(|t| plan0.consumption_at(*t, u))
                .collect(),
        )?,
        ControlSchedule::new(g, fraction, crate::policy::naive_consumption(m, u, d, &g)?)?,
    ];
    let mut out = schedules.iter().map(|s| {
        simulate_schedule(
            s,
            Objective::ConsumptionAndBequest,
            cfg,
            0,
            cfg.x0,
            None,
            &[],
            m,
            u,
            d,
        )
        .map(|b| WelfareEstimate {
            j_estimate: b.j_estimate,
            j_std_error: b.j_std_error,
        })
    });
    let mut next = || out.next().expect("three schedules");
    Ok(WelfareReport {
        equilibrium: next()?,
        precommitment: next()?,
        naive: next()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_cover_both_ends() {
        assert_eq!(checkpoint_indices(100, 5), vec![0, 25, 50, 75, 100]);
        assert_eq!(checkpoint_indices(3, 5), vec![0, 1, 2, 3]);
        assert_eq!(checkpoint_indices(10, 1), vec![0]);
    }

    #[test]
    fn z_score_edge_cases() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(z_score(1.0, 0.5), 2.0);
    }

    #[test]
    fn schedule_shape_is_checked() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(ControlSchedule::new(g, vec![0.5; 3], vec![0.0; 5]).is_err());
        assert!(ControlSchedule::new(g, vec![0.5; 4], vec![0.0; 4]).is_err());
        assert!(ControlSchedule::new(g, vec![0.5; 4], vec![-1.0; 5]).is_err());
        let s = ControlSchedule::new(g, vec![0.5; 4], vec![0.1; 5]).unwrap();
        let spiked = s.with_spike(
            1,
            2,
            &Spike {
                stock_fraction: 2.0,
                consumption: None,
            },
        );
        assert_eq!(spiked.stock_fraction(), &[0.5, 2.0, 2.0, 0.5]);
        assert_eq!(spiked.consumption(), s.consumption());
    }
}
