use super::quadrature::rk4_backward;
use super::{GrowthConstant, LambdaSolution, Objective, Provenance};
use crate::error::{invalid, Error, Result};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

/// Agreement required between the closed form and its ODE integration.
const NO_CONSUMPTION_CHECK_TOL: f64 = 1e-8;

/// The check integration uses at least this many RK4 steps over the grid.
const CHECK_MIN_STEPS: usize = 1000;

/// Terminal-utility-only problem: `lambda(t) = h(T-t) e^{K(T-t)}`.
///
/// The closed form is cross-checked against backward RK4 integration of
/// `lambda' + (h'(T-t)/h(T-t) + K) lambda = 0, lambda(T) = 1`; a sup-norm
/// disagreement above `1e-8` is reported as a step failure.
pub fn solve_no_consumption(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> Result<LambdaSolution> {
    d.validate_on(g.horizon())?;
    let k = GrowthConstant::new(m, u).value();
    let horizon = g.horizon();
    let mut values = Vec::with_capacity(g.len());
    let mut derivative = Vec::with_capacity(g.len());
    for t in g.nodes() {
        let tau = horizon - t;
        let (h, dh) = d.eval(tau);
        let growth = (k * tau).exp();
        values.push(h * growth);
        // d/dt [h(T-t) e^{K(T-t)}]
        derivative.push(-(dh + k * h) * growth);
    }
    *values.last_mut().expect("grid has nodes") = 1.0;

    let numeric = no_consumption_ode(m, u, d, g)?;
    let gap = numeric
        .iter()
        .zip(&values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > NO_CONSUMPTION_CHECK_TOL {
        return Err(Error::StepFailure {
            t: g.start(),
            reason: format!("closed form and backward integration differ by {gap:e}"),
        });
    }

    LambdaSolution::from_parts(
        *g,
        values,
        derivative,
        Provenance::ClosedForm,
        Objective::TerminalOnly,
    )
}

/// Backward RK4 integration of the terminal-only ODE, sampled at the nodes
/// of `g` (internally refined to at least 1000 steps).
pub fn no_consumption_ode(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> Result<Vec<f64>> {
    let k = GrowthConstant::new(m, u).value();
    let horizon = g.horizon();
    let refine = CHECK_MIN_STEPS.div_ceil(g.n_steps()).max(1);
    let fine = TimeGrid::window(g.start(), horizon, g.n_steps() * refine)?;
    let states = rk4_backward(
        &fine,
        &[1.0],
        |t, y, dy| dy[0] = -(d.log_slope(horizon - t) + k) * y[0],
        |y| y[0] > 0.0,
    )?;
    Ok((0..g.len()).map(|i| states[i * refine][0]).collect())
}

/// Merton's solution for exponential discounting at rate `rho`:
/// `lambda = theta^{1-p}` with `theta(t) = 1/a + (1 - 1/a) e^{-a(T-t)}` and
/// `a = (rho - K)/(1 - p)`, so that the consumption rate is `1/theta`.
pub fn merton_exponential(
    m: &MarketParams,
    u: &CrraUtility,
    rho: f64,
    g: &TimeGrid,
) -> Result<LambdaSolution> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid(
            "rho",
            format!("must be finite and >= 0, got {rho}"),
        ));
    }
    let p = u.p();
    let a = (rho - GrowthConstant::new(m, u).value()) / (1.0 - p);
    let horizon = g.horizon();
    let mut values = Vec::with_capacity(g.len());
    let mut derivative = Vec::with_capacity(g.len());
    for t in g.nodes() {
        let tau = horizon - t;
        // theta = e^{-a tau} + (1 - e^{-a tau})/a, stable as a -> 0
        let annuity = if a.abs() < 1e-12 {
            tau
        } else {
            -(-a * tau).exp_m1() / a
        };
        let theta = (-a * tau).exp() + annuity;
        values.push(theta.powf(1.0 - p));
        derivative.push((1.0 - p) * theta.powf(-p) * (a * theta - 1.0));
    }
    *values.last_mut().expect("grid has nodes") = 1.0;
    LambdaSolution::from_parts(
        *g,
        values,
        derivative,
        Provenance::MertonClosedForm,
        Objective::ConsumptionAndBequest,
    )
}
