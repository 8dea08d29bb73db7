//! Config-driven pipelines behind the `solve`, `verify`, `compare` and
//! `simulate` commands. Every command writes its tables plus a
//! `manifest.toml` that holds the resolved configuration and can be fed back
//! in as a configuration.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{
    CheckKind, CompareConfig, DiscountConfig, GridConfig, MarketConfig, Method, Model,
    OutputConfig, Problem, RunConfig, SimSection, SolverConfig, UtilityConfig, VerifyConfig,
};

use crate::csv::{fmt_f64, CsvWriter};
use crate::dual::{
    dual_from_primal, dual_pde_residual, primal_dual_roundtrip, primal_pde_residual,
};
use crate::error::{Error, Result};
use crate::lambda::{
    a_priori_bounds, fit_exponential_mixture, growth_constant, log_spaced_rates,
    merton_exponential, mixture_ode_solve, no_consumption_ode, picard_iterate,
    residual_differential_form, residual_integral_equation, solve_no_consumption, LambdaSolution,
};
use crate::model::DiscountSpec;
use crate::policy::{equilibrium_policy, inconsistency_report_with, InconsistencyReport};
use crate::sim::{
    checkpoint_indices, martingale_check, moment_check, perturbation_test, simulate_equilibrium,
    verify_value_identity, Spike, Z_CRITICAL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_RUNTIME,
    }
}

/// What a command wrote and how the process should exit.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub exit_code: i32,
    /// Why `exit_code` is nonzero.
    pub failure: Option<String>,
}

/// Collects output files and writes them in order once a command is done.
struct OutputDir {
    dir: PathBuf,
    files: Vec<(&'static str, String)>,
}

impl OutputDir {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn flush(self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, contents) in self.files {
            let path = self.dir.join(name);
            fs::write(&path, contents)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn finish(out: OutputDir, failure: Option<(i32, String)>) -> Result<Outcome> {
    let written = out.flush()?;
    let (exit_code, failure) = match failure {
        Some((code, why)) => (code, Some(why)),
        None => (EXIT_OK, None),
    };
    Ok(Outcome {
        written,
        exit_code,
        failure,
    })
}

/// A lambda from the configured method, plus what the solver reported.
/// `failure` is set when the solver stopped without converging; `solution`
/// then holds its last iterate.
struct Solved {
    solution: LambdaSolution,
    diagnostics: toml::Table,
    failure: Option<Error>,
}

fn solve_lambda(cfg: &RunConfig, model: &Model, discount: &DiscountSpec) -> Result<Solved> {
    let Model {
        market: m,
        utility: u,
        grid: g,
        ..
    } = model;
    let s = &cfg.solver;
    let mut diag = toml::Table::new();
    diag.insert("method".into(), s.method.as_str().into());
    diag.insert("discount".into(), discount.label().into());

    let mut failure = None;
    let solution =
        match (s.problem, s.method) {
            (Problem::TerminalOnly, Method::ClosedForm) => solve_no_consumption(m, u, discount, g)?,
            (Problem::TerminalOnly, _) => return Err(Error::Config(
                "the terminal-only problem is solved in closed form; use method = \"closed_form\""
                    .into(),
            )),
            (Problem::Consumption, Method::ClosedForm) => match discount {
                DiscountSpec::Exponential { rho } => merton_exponential(m, u, *rho, g)?,
                _ => {
                    return Err(Error::Config(
                        "closed_form with consumption needs exponential discounting".into(),
                    ))
                }
            },
            (Problem::Consumption, Method::Picard) => {
                let report = picard_iterate(m, u, discount, g, &s.picard_options())?;
                diag.insert("iterations".into(), (report.iterations as i64).into());
                diag.insert("last_delta".into(), report.last_delta.into());
                diag.insert("converged".into(), report.converged.into());
                if !report.converged {
                    failure = Some(Error::NonConvergence {
                        iterations: report.iterations,
                        last_delta: report.last_delta,
                        residual: report.residual,
                    });
                }
                report.solution
            }
            (Problem::Consumption, Method::Mixture) => match discount {
                DiscountSpec::Hyperbolic { .. } => {
                    let rates = log_spaced_rates(s.fit_size, s.fit_rate_min, s.fit_rate_max);
                    let fit = fit_exponential_mixture(discount, &rates, g, s.fit_ceiling)?;
                    diag.insert("fit_size".into(), (s.fit_size as i64).into());
                    diag.insert("fit_sup_error".into(), fit.sup_error.into());
                    diag.insert("fit_sup_error_h".into(), fit.sup_error_h.into());
                    diag.insert("fit_sup_error_dh".into(), fit.sup_error_dh.into());
                    mixture_ode_solve(m, u, &fit.discount, g)?
                }
                _ => mixture_ode_solve(m, u, discount, g)?,
            },
        };
    diag.insert("provenance".into(), solution.provenance().as_str().into());
    diag.insert("lambda_0".into(), solution.initial().into());
    Ok(Solved {
        solution,
        diagnostics: diag,
        failure,
    })
}

fn residual_rows(
    cfg: &RunConfig,
    model: &Model,
    sol: &LambdaSolution,
) -> Result<Vec<(&'static str, f64)>> {
    let Model {
        market: m,
        utility: u,
        discount: d,
        ..
    } = model;
    let bounds = a_priori_bounds(m, u, d, sol.grid());
    let mut rows = Vec::new();
    match cfg.solver.problem {
        Problem::Consumption => {
            rows.push((
                "integral_equation",
                residual_integral_equation(sol, m, u, d),
            ));
            rows.push((
                "differential_form",
                residual_differential_form(sol, m, u, d)?,
            ));
        }
        Problem::TerminalOnly => {
            rows.push(("primal_equation", primal_pde_residual(sol, m, u, d)?));
            let ode = no_consumption_ode(m, u, d, sol.grid())?;
            let gap = ode
                .iter()
                .zip(sol.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rows.push(("closed_form_vs_ode", gap));
        }
    }
    rows.push(("bounds_violations", bounds.violations(sol) as f64));
    Ok(rows)
}

fn two_column_csv(header: [&str; 2], rows: &[(&str, f64)]) -> String {
    let mut w = CsvWriter::new(&header);
    for (name, value) in rows {
        w.row(&[name.to_string(), fmt_f64(*value)]);
    }
    w.finish()
}

/// Solves for lambda and writes `lambda.csv`, `bounds.csv`, `residuals.csv`
/// and the manifest. Diagnostics are written even when the solver fails to
/// converge, in which case the exit code is 3.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let solved = solve_lambda(cfg, &model, &model.discount)?;
    let sol = &solved.solution;
    let bounds = a_priori_bounds(&model.market, &model.utility, &model.discount, &model.grid);
    let residuals = residual_rows(cfg, &model, sol)?;

    let mut diag = solved.diagnostics.clone();
    diag.insert("command".into(), "solve".into());
    for (name, value) in &residuals {
        diag.insert(format!("residual_{name}"), (*value).into());
    }

    let mut dir = OutputDir::new(out);
    dir.add("lambda.csv", sol.to_csv(&model.utility));
    dir.add("bounds.csv", bounds.to_csv());
    dir.add(
        "residuals.csv",
        two_column_csv(["diagnostic", "value"], &residuals),
    );
    dir.add("manifest.toml", cfg.manifest(diag)?);
    let failure = solved.failure.map(|e| (exit_code(&e), e.to_string()));
    finish(dir, failure)
}

/// One row of `verification.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &str, statistic: f64, threshold: f64, pass: bool) -> Self {
        Self {
            check: check.to_string(),
            statistic,
            threshold,
            pass,
        }
    }
}

pub fn verification_csv(rows: &[CheckRow]) -> String {
    let mut w = CsvWriter::new(&["check", "statistic", "threshold", "pass"]);
    for r in rows {
        w.row(&[
            r.check.clone(),
            fmt_f64(r.statistic),
            fmt_f64(r.threshold),
            r.pass.to_string(),
        ]);
    }
    w.finish()
}

const DUAL_TOL: f64 = 1e-6;
const PRIMAL_TOL: f64 = 1e-8;
const ENVELOPE_TOL: f64 = 1e-4;

fn default_checks(problem: Problem) -> Vec<CheckKind> {
    match problem {
        Problem::Consumption => vec![CheckKind::ValueIdentity, CheckKind::Perturbation],
        Problem::TerminalOnly => vec![
            CheckKind::ValueIdentity,
            CheckKind::Martingale,
            CheckKind::Perturbation,
            CheckKind::Moments,
            CheckKind::Duality,
        ],
    }
}

fn run_check(
    kind: CheckKind,
    cfg: &RunConfig,
    vc: &VerifyConfig,
    model: &Model,
    sol: &LambdaSolution,
) -> Result<Vec<CheckRow>> {
    let Model {
        market: m,
        utility: u,
        discount: d,
        grid: g,
    } = model;
    let sim = cfg.sim_config(g)?;
    let terminal_only = |name: &str| -> Result<()> {
        match cfg.solver.problem {
            Problem::TerminalOnly => Ok(()),
            Problem::Consumption => Err(Error::Config(format!(
                "check `{name}` applies to the terminal-only problem"
            ))),
        }
    };
    let rows = match kind {
        CheckKind::ValueIdentity => {
            let v = verify_value_identity(sol, &sim, m, u, d, vc.value_time, sim.x0)?;
            vec![CheckRow::new(
                "value_identity",
                v.z_score,
                Z_CRITICAL,
                v.passed,
            )]
        }
        CheckKind::Martingale => {
            terminal_only("martingale")?;
            let v = martingale_check(sol, &sim, m, u, d, vc.checkpoints, vc.alternative_fraction)?;
            vec![
                CheckRow::new("martingale_flat", v.max_flat_z, Z_CRITICAL, v.flat),
                CheckRow::new(
                    "martingale_decreasing",
                    v.min_decrease_z,
                    Z_CRITICAL,
                    v.decreasing,
                ),
            ]
        }
        CheckKind::Perturbation => {
            let pol = equilibrium_policy(sol, m, u)?;
            let shifted = |shift: f64| Spike {
                stock_fraction: pol.stock_fraction() + shift,
                consumption: None,
            };
            let t = vc.perturbation_time;
            let gross = perturbation_test(
                &pol,
                &sim,
                m,
                u,
                d,
                t,
                &vc.epsilons,
                shifted(vc.gross_shift),
            )?;
            let small = perturbation_test(
                &pol,
                &sim,
                m,
                u,
                d,
                t,
                &vc.epsilons,
                shifted(vc.small_shift),
            )?;
            vec![
                CheckRow::new(
                    "perturbation_gross",
                    gross.smallest().z_score,
                    Z_CRITICAL,
                    gross.strict_loss(),
                ),
                CheckRow::new(
                    "perturbation_small",
                    small.smallest().z_score.abs(),
                    Z_CRITICAL,
                    small.indistinguishable_from_zero(),
                ),
            ]
        }
        CheckKind::Moments => {
            terminal_only("moments")?;
            let pol = equilibrium_policy(sol, m, u)?;
            let p = u.p();
            let batch = simulate_equilibrium(&pol, &sim, &[p], m, u, d)?;
            let k = growth_constant(m, u).value();
            let x0p = sim.x0.powf(p);
            let checks = moment_check(&batch, p, vc.checkpoints, |s| x0p * (k * s).exp())?;
            let worst = checks.iter().map(|c| c.z_score).fold(0.0, f64::max);
            vec![CheckRow::new(
                "moment_growth",
                worst,
                Z_CRITICAL,
                worst <= Z_CRITICAL,
            )]
        }
        CheckKind::Duality => {
            terminal_only("duality")?;
            let dv = dual_from_primal(sol, u)?;
            let pde = dual_pde_residual(&dv, m, d)?;
            let points: Vec<(f64, f64)> = checkpoint_indices(g.n_steps(), vc.checkpoints)
                .into_iter()
                .flat_map(|i| [0.1, 1.0, 10.0].map(|x| (g.node(i), x)))
                .collect();
            let rt = primal_dual_roundtrip(&dv, u, &points)?;
            let primal = primal_pde_residual(sol, m, u, d)?;
            vec![
                CheckRow::new("primal_equation", primal, PRIMAL_TOL, primal <= PRIMAL_TOL),
                CheckRow::new("dual_equation", pde, DUAL_TOL, pde <= DUAL_TOL),
                CheckRow::new(
                    "biconjugate",
                    rt.max_error(),
                    DUAL_TOL,
                    rt.max_error() <= DUAL_TOL,
                ),
                CheckRow::new(
                    "envelope",
                    rt.envelope,
                    ENVELOPE_TOL,
                    rt.envelope <= ENVELOPE_TOL,
                ),
            ]
        }
    };
    Ok(rows)
}

/// Runs the configured checks and writes `verification.csv` and the
/// manifest. Exit code 4 when any check fails; every row is still written.
///
/// `perturb_lambda` multiplies lambda before verification, as a negative
/// control.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, perturb_lambda: Option<f64>) -> Result<Outcome> {
    let model = cfg.model()?;
    let vc = cfg.verify.clone().unwrap_or_default();
    let checks = vc
        .checks
        .clone()
        .unwrap_or_else(|| default_checks(cfg.solver.problem));
    if !checks.is_empty() {
        cfg.sim_config(&model.grid)?;
    }

    let solved = solve_lambda(cfg, &model, &model.discount)?;
    if let Some(e) = solved.failure {
        return Err(e);
    }
    let sol = match perturb_lambda {
        Some(f) => solved.solution.scaled(f)?,
        None => solved.solution,
    };

    let mut rows = Vec::new();
    for kind in checks {
        rows.extend(run_check(kind, cfg, &vc, &model, &sol)?);
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check.as_str())
        .collect();

    let mut diag = solved.diagnostics;
    diag.insert("command".into(), "verify".into());
    if let Some(f) = perturb_lambda {
        diag.insert("perturb_lambda".into(), f.into());
    }
    diag.insert(
        "failed_checks".into(),
        failed
            .iter()
            .map(|s| toml::Value::from(*s))
            .collect::<Vec<_>>()
            .into(),
    );

    let failure = (!failed.is_empty()).then(|| {
        (
            EXIT_VERIFICATION,
            format!("failed checks: {}", failed.join(", ")),
        )
    });
    let mut dir = OutputDir::new(out);
    dir.add("verification.csv", verification_csv(&rows));
    dir.add("manifest.toml", cfg.manifest(diag)?);
    finish(dir, failure)
}

/// Solves every discount in `[compare]` on the shared grid, concurrently,
/// and writes `compare.csv`, `inconsistency.csv` and the manifest. A spec
/// that fails is recorded in the manifest and skipped in the tables.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let cc = cfg
        .compare
        .as_ref()
        .ok_or_else(|| Error::Config("missing [compare] section".into()))?;
    if cc.discounts.is_empty() {
        return Err(Error::Config("[compare] lists no discounts".into()));
    }
    let specs: Vec<DiscountSpec> = cc
        .discounts
        .iter()
        .map(|d| d.to_spec())
        .collect::<Result<_>>()?;

    let results: Vec<Result<(LambdaSolution, InconsistencyReport)>> = specs
        .par_iter()
        .map(|d| {
            let solved = solve_lambda(cfg, &model, d)?;
            if let Some(e) = solved.failure {
                return Err(e);
            }
            let report = match cfg.solver.problem {
                Problem::Consumption => inconsistency_report_with(
                    &solved.solution,
                    &model.market,
                    &model.utility,
                    d,
                    &cc.probe_times,
                )?,
                Problem::TerminalOnly => InconsistencyReport::default(),
            };
            Ok((solved.solution, report))
        })
        .collect();

    let mut compare = CsvWriter::new(&["spec", "t", "consumption_rate", "lambda"]);
    let mut header = vec!["spec"];
    header.extend(InconsistencyReport::HEADER);
    let mut inconsistency = CsvWriter::new(&header);
    let mut statuses = Vec::new();
    let mut first_failure = None;
    for (d, result) in specs.iter().zip(&results) {
        let label = d.label();
        let mut status = toml::Table::new();
        status.insert("spec".into(), label.clone().into());
        match result {
            Ok((sol, report)) => {
                let rates = match cfg.solver.problem {
                    Problem::Consumption => sol.consumption_rates(&model.utility),
                    Problem::TerminalOnly => vec![0.0; sol.grid().len()],
                };
                for ((t, c), l) in sol.grid().nodes().iter().zip(&rates).zip(sol.values()) {
                    compare.row(&[label.clone(), fmt_f64(*t), fmt_f64(*c), fmt_f64(*l)]);
                }
                for row in &report.rows {
                    let mut fields = vec![label.clone()];
                    fields.extend(InconsistencyReport::fields(row));
                    inconsistency.row(&fields);
                }
                status.insert("status".into(), "ok".into());
                status.insert("max_gap_naive".into(), report.max_gap_naive().into());
            }
            Err(e) => {
                status.insert("status".into(), "failed".into());
                status.insert("error".into(), e.to_string().into());
                first_failure.get_or_insert_with(|| (exit_code(e), format!("{label}: {e}")));
            }
        }
        statuses.push(toml::Value::Table(status));
    }

    let mut diag = toml::Table::new();
    diag.insert("command".into(), "compare".into());
    diag.insert("specs".into(), statuses.into());
    let mut dir = OutputDir::new(out);
    dir.add("compare.csv", compare.finish());
    dir.add("inconsistency.csv", inconsistency.finish());
    dir.add("manifest.toml", cfg.manifest(diag)?);
    finish(dir, first_failure)
}

/// Simulates the equilibrium wealth process and writes `simulation.csv`
/// (one row per node) and the manifest, which carries the estimate of the
/// utility functional.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let sim = cfg.sim_config(&model.grid)?;
    let solved = solve_lambda(cfg, &model, &model.discount)?;
    if let Some(e) = solved.failure {
        return Err(e);
    }
    let sol = &solved.solution;
    let pol = equilibrium_policy(sol, &model.market, &model.utility)?;
    let orders = cfg
        .sim
        .as_ref()
        .map(|s| s.moments.clone())
        .unwrap_or_default();
    let batch = simulate_equilibrium(
        &pol,
        &sim,
        &orders,
        &model.market,
        &model.utility,
        &model.discount,
    )?;

    let mut diag = solved.diagnostics;
    diag.insert("command".into(), "simulate".into());
    diag.insert("j_estimate".into(), batch.j_estimate.into());
    diag.insert("j_std_error".into(), batch.j_std_error.into());
    diag.insert(
        "value_claimed".into(),
        (sol.initial() * model.utility.eval(sim.x0)?).into(),
    );
    diag.insert("min_wealth".into(), batch.min_wealth.into());

    let mut dir = OutputDir::new(out);
    dir.add("simulation.csv", batch.to_csv());
    dir.add("manifest.toml", cfg.manifest(diag)?);
    finish(dir, None)
}
