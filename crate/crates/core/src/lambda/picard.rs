use super::integral::IntegralOperator;
use super::{a_priori_bounds, LambdaSolution, Objective, Provenance};
use crate::error::{invalid, Error, Result};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

/// Controls for the damped fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardOptions {
    /// Stop once the sup-norm change between iterates is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate, in `(0, 1]`.
    pub damping: f64,
    /// Starting point on the grid; `lambda = 1` everywhere when `None`.
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            damping: 0.5,
            initial_guess: None,
        }
    }
}

impl PicardOptions {
    pub fn validate(&self, nodes: usize) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid(
                "tol",
                format!("must be positive, got {}", self.tol),
            ));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid(
                "damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        if let Some(guess) = &self.initial_guess {
            if guess.len() != nodes {
                return Err(invalid(
                    "initial_guess",
                    format!("expected {nodes} nodes, got {}", guess.len()),
                ));
            }
            if guess.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("initial_guess", "values must be positive"));
            }
        }
        Ok(())
    }
}

/// Outcome of a Picard run, converged or not.
#[derive(Debug, Clone)]
pub struct PicardReport {
    /// Last iterate; its derivative comes from the differential form.
    pub solution: LambdaSolution,
    pub iterations: usize,
    pub last_delta: f64,
    /// Sup-norm integral-equation residual of the last iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Runs the damped iteration `lambda <- clip((1-d) lambda + d Phi(lambda))`
/// until the iterates settle or `max_iter` is reached. Iterates are clipped
/// into the a priori bounds box and the terminal node is pinned to 1.
pub fn picard_iterate(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
    opts: &PicardOptions,
) -> Result<PicardReport> {
    d.validate_on(g.horizon())?;
    opts.validate(g.len())?;
    let op = IntegralOperator::new(m, u, d, g);
    let bounds = a_priori_bounds(m, u, d, g);
    let n = g.n_steps();

    let mut lambda: Vec<f64> = match &opts.initial_guess {
        Some(guess) => guess.iter().map(|v| bounds.clip(*v)).collect(),
        None => vec![1.0; n + 1],
    };
    lambda[n] = 1.0;

    let mut last_delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let image = op.apply(&lambda);
        let mut delta: f64 = 0.0;
        for (l, new) in lambda.iter_mut().zip(&image).take(n) {
            let next = bounds.clip((1.0 - opts.damping) * *l + opts.damping * new);
            delta = delta.max((next - *l).abs());
            *l = next;
        }
        if !delta.is_finite() {
            break;
        }
        last_delta = delta;
        if delta <= opts.tol {
            break;
        }
    }

    let residual = op
        .apply(&lambda)
        .iter()
        .zip(&lambda)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let derivative = op.differential_rhs(&lambda);
    let solution = LambdaSolution::from_parts(
        *g,
        lambda,
        derivative,
        Provenance::Picard,
        Objective::ConsumptionAndBequest,
    )?;
    Ok(PicardReport {
        solution,
        iterations,
        last_delta,
        residual,
        converged: last_delta <= opts.tol,
    })
}

/// Solves the integral equation by Picard iteration, failing with
/// [`Error::NonConvergence`] when the iteration budget runs out.
pub fn picard_solve_ie(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
    opts: &PicardOptions,
) -> Result<LambdaSolution> {
    let report = picard_iterate(m, u, d, g, opts)?;
    if report.converged {
        Ok(report.solution)
    } else {
        Err(Error::NonConvergence {
            iterations: report.iterations,
            last_delta: report.last_delta,
            residual: report.residual,
        })
    }
}
