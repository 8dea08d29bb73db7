//! Feedback policies built from `lambda`, the per-date precommitment
//! (t-optimal) problem and the resulting time-inconsistency diagnostics.
//!
//! With `V(t0, s, x) = lambda_{t0}(s) x^p / p`, the precommitment HJB anchored
//! at `t0` reduces to
//!
//! ```text
//! lambda_{t0}'(s) = -(K + h'(s-t0)/h(s-t0)) lambda_{t0}(s) + (p-1) lambda_{t0}(s)^{p/(p-1)},
//! lambda_{t0}(T) = 1,
//! ```
//!
//! with the Merton stock fraction `mu / (sigma^2 (1-p))` and consumption rate
//! `lambda_{t0}^{1/(p-1)}`. [`precommitment_hjb_residual`] re-derives this
//! independently by plugging the solution into the full HJB with the
//! supremum taken numerically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csv::{fmt_f64, CsvWriter};
use crate::error::{invalid, Error, Result};
use crate::lambda::quadrature::{five_point_derivative, rk4_backward};
use crate::lambda::{
    solve_equilibrium, GrowthConstant, LambdaSolution, Objective, PicardOptions, Provenance,
};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

/// Relative tolerance of the feedback-map identities checked on construction.
const FEEDBACK_CHECK_TOL: f64 = 1e-10;

/// `mu / (sigma^2 (1-p))`, the Merton fraction of wealth held in the stock.
pub fn merton_fraction(m: &MarketParams, u: &CrraUtility) -> f64 {
    m.mu() / (m.sigma() * m.sigma() * (1.0 - u.p()))
}

/// Equilibrium feedback policy for `v = lambda U_p`.
#[derive(Debug, Clone)]
pub struct EquilibriumPolicy {
    stock_fraction: f64,
    consumption_rate: Vec<f64>,
    lambda: LambdaSolution,
    utility: CrraUtility,
}

impl EquilibriumPolicy {
    pub fn stock_fraction(&self) -> f64 {
        self.stock_fraction
    }

    /// Consumption per unit wealth at each node of the lambda grid; zero
    /// throughout when only terminal wealth is valued.
    pub fn consumption_rate(&self) -> &[f64] {
        &self.consumption_rate
    }

    /// Consumption rate at an arbitrary date, via interpolation of `lambda`.
    pub fn consumption_at(&self, t: f64) -> f64 {
        match self.lambda.objective() {
            Objective::TerminalOnly => 0.0,
            Objective::ConsumptionAndBequest => self
                .lambda
                .value_at(t)
                .powf(self.utility.consumption_exponent()),
        }
    }

    pub fn lambda(&self) -> &LambdaSolution {
        &self.lambda
    }

    pub fn utility(&self) -> &CrraUtility {
        &self.utility
    }

    /// `v(t, x) = lambda(t) x^p / p`.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.lambda.value_at(t) * self.utility.eval_unchecked(x)
    }
}

/// Turns `lambda` into the feedback maps `F1 = -mu v_x / (sigma^2 v_xx)` and
/// `F2 = I(v_x)`, checking at ten pseudo-random `(t, x)` that both reduce to
/// their CRRA closed forms.
pub fn equilibrium_policy(
    sol: &LambdaSolution,
    m: &MarketParams,
    u: &CrraUtility,
) -> Result<EquilibriumPolicy> {
    let stock_fraction = merton_fraction(m, u);
    let consumption_rate = match sol.objective() {
        Objective::TerminalOnly => vec![0.0; sol.grid().len()],
        Objective::ConsumptionAndBequest => sol.consumption_rates(u),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let sigma2 = m.sigma() * m.sigma();
    for _ in 0..10 {
        let i = rng.random_range(0..sol.grid().len());
        let x = 10f64.powf(rng.random_range(-3.0..3.0));
        let lambda = sol.values()[i];
        let v_x = lambda * u.marginal(x)?;
        let v_xx = lambda * u.curvature(x)?;
        let f1 = -m.mu() * v_x / (sigma2 * v_xx);
        let f2 = u.inverse_marginal(v_x)?;
        let checks = [
            (f1, stock_fraction * x),
            (f2, lambda.powf(u.consumption_exponent()) * x),
        ];
        for (got, want) in checks {
            if (got - want).abs() > FEEDBACK_CHECK_TOL * want.abs() {
                return Err(invalid(
                    "policy",
                    format!("feedback map mismatch at node {i}, x = {x}: {got} vs {want}"),
                ));
            }
        }
    }

    Ok(EquilibriumPolicy {
        stock_fraction,
        consumption_rate,
        lambda: sol.clone(),
        utility: *u,
    })
}

/// The `t0`-optimal policy on `[t0, T]`.
#[derive(Debug, Clone)]
pub struct PrecommitmentPolicy {
    pub anchor_time: f64,
    pub lambda: LambdaSolution,
    pub consumption_rate: Vec<f64>,
    pub stock_fraction: f64,
}

impl PrecommitmentPolicy {
    pub fn consumption_at(&self, s: f64, u: &CrraUtility) -> f64 {
        self.lambda.value_at(s).powf(u.consumption_exponent())
    }
}

/// Solves the precommitment problem anchored at `t0` by backward RK4 on a
/// grid over `[t0, T]` whose step matches `g` as closely as possible.
pub fn solve_precommitment(
    t0: f64,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> Result<PrecommitmentPolicy> {
    let horizon = g.horizon();
    if !(t0 >= 0.0 && t0 < horizon) {
        return Err(invalid(
            "t0",
            format!("anchor must lie in [0, {horizon}), got {t0}"),
        ));
    }
    let steps = (((horizon - t0) / g.step()).round() as usize).max(2);
    let window = TimeGrid::window(t0, horizon, steps)?;
    solve_precommitment_on(&window, m, u, d)
}

fn solve_precommitment_on(
    window: &TimeGrid,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<PrecommitmentPolicy> {
    d.validate_on(window.horizon())?;
    let t0 = window.start();
    let k = GrowthConstant::new(m, u).value();
    let p = u.p();
    let q = u.conjugate_exponent();
    let rhs = |s: f64, l: f64| -(k + d.log_slope(s - t0)) * l + (p - 1.0) * l.powf(q);
    let states = rk4_backward(
        window,
        &[1.0],
        |s, y, dy| dy[0] = rhs(s, y[0]),
        |y| y[0] > 0.0,
    )?;
    let values: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let derivative = window
        .nodes()
        .iter()
        .zip(&values)
        .map(|(&s, &l)| rhs(s, l))
        .collect();
    let lambda = LambdaSolution::from_parts(
        *window,
        values,
        derivative,
        Provenance::Precommitment,
        Objective::ConsumptionAndBequest,
    )?;
    Ok(PrecommitmentPolicy {
        anchor_time: t0,
        consumption_rate: lambda.consumption_rates(u),
        lambda,
        stock_fraction: merton_fraction(m, u),
    })
}

/// Largest relative residual `|HJB| / |V|` of the anchored HJB at `samples`
/// pseudo-random interior `(s, x)` points.
///
/// `V_s` comes from a five-point stencil on the solution's nodes and the
/// supremum over `(zeta, c)` is found by golden-section search, so the check
/// does not reuse the reduced ODE.
pub fn precommitment_hjb_residual(
    pol: &PrecommitmentPolicy,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let grid = pol.lambda.grid();
    let n = grid.n_steps();
    if n < 5 {
        return Err(invalid(
            "precommitment",
            "HJB residual needs at least 5 intervals",
        ));
    }
    let values = pol.lambda.values();
    let dt = grid.step();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(2..=n - 2);
        let x = 10f64.powf(rng.random_range(-2.0..2.0));
        let s = grid.node(i);
        let lambda = values[i];
        let util = u.eval_unchecked(x);
        let v = lambda * util;
        let v_s = five_point_derivative(values, i, dt) * util;
        let v_x = lambda * u.marginal(x)?;
        let v_xx = lambda * u.curvature(x)?;

        let invest = |zeta: f64| {
            m.mu() * zeta * x * v_x + 0.5 * m.sigma().powi(2) * zeta * zeta * x * x * v_xx
        };
        let consume = |log_c: f64| {
            let c = log_c.exp();
            -c * x * v_x + u.eval_unchecked(x * c)
        };
        let best_invest = invest(golden_max(invest, -1e3, 1e3));
        let best_consume = consume(golden_max(consume, -40.0, 40.0));
        let hjb = v_s
            + m.r() * x * v_x
            + best_invest
            + best_consume
            + d.log_slope(s - pol.anchor_time) * v;
        worst = worst.max(hjb.abs() / v.abs());
    }
    Ok(worst)
}

/// Golden-section search for the maximizer of a unimodal `f` on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Consumption rate of the naive agent, who at every node re-solves the
/// precommitment problem and follows its current action `c~_t(t)`.
pub fn naive_consumption(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> Result<Vec<f64>> {
    let n = g.n_steps();
    (0..=n)
        .into_par_iter()
        .map(|i| {
            if i == n {
                return Ok(1.0);
            }
            let window = if i + 2 <= n {
                g.tail(i)?
            } else {
                TimeGrid::window(g.node(i), g.horizon(), 2)?
            };
            let pol = solve_precommitment_on(&window, m, u, d)?;
            Ok(pol.consumption_rate[0])
        })
        .collect()
}

/// One probe date of an [`InconsistencyReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InconsistencyRow {
    pub t_probe: f64,
    /// `c~_0(t')`: what the date-0 self planned for `t'`.
    pub c_precommit_0: f64,
    /// `c~_{t'}(t')`: what the date-`t'` self wants when re-optimizing.
    pub c_precommit_t: f64,
    /// Equilibrium consumption rate at `t'`.
    pub c_equilibrium: f64,
    /// `|c_precommit_0 - c_precommit_t|`.
    pub gap_naive: f64,
    /// `|c_precommit_t - c_equilibrium|`.
    pub gap_equilibrium: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InconsistencyReport {
    pub rows: Vec<InconsistencyRow>,
}

impl InconsistencyReport {
    pub fn max_gap_naive(&self) -> f64 {
        self.rows.iter().map(|r| r.gap_naive).fold(0.0, f64::max)
    }

    pub fn max_gap_equilibrium(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.gap_equilibrium)
            .fold(0.0, f64::max)
    }

    pub const HEADER: [&'static str; 6] = [
        "t_probe",
        "c_precommit_0",
        "c_precommit_t",
        "c_equilibrium",
        "gap_naive",
        "gap_equilibrium",
    ];

    pub(crate) fn fields(row: &InconsistencyRow) -> [String; 6] {
        [
            fmt_f64(row.t_probe),
            fmt_f64(row.c_precommit_0),
            fmt_f64(row.c_precommit_t),
            fmt_f64(row.c_equilibrium),
            fmt_f64(row.gap_naive),
            fmt_f64(row.gap_equilibrium),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&Self::HEADER);
        for row in &self.rows {
            w.row(&Self::fields(row));
        }
        w.finish()
    }
}

/// Compares, at each probe date, the date-0 plan, the re-optimized plan and
/// the equilibrium policy.
pub fn inconsistency_report(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
    probe_times: &[f64],
) -> Result<InconsistencyReport> {
    if probe_times.is_empty() {
        return Ok(InconsistencyReport::default());
    }
    let equilibrium = solve_equilibrium(m, u, d, g, &PicardOptions::default())?;
    inconsistency_report_with(&equilibrium, m, u, d, probe_times)
}

/// [`inconsistency_report`] against an already computed equilibrium.
pub fn inconsistency_report_with(
    equilibrium: &LambdaSolution,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    probe_times: &[f64],
) -> Result<InconsistencyReport> {
    let g = equilibrium.grid();
    if let Some(bad) = probe_times
        .iter()
        .find(|t| !(**t >= g.start() && **t < g.horizon()))
    {
        return Err(invalid("probe_times", format!("{bad} is outside [0, T)")));
    }
    if probe_times.is_empty() {
        return Ok(InconsistencyReport::default());
    }
    let plan0 = solve_precommitment(g.start(), m, u, d, g)?;
    let e = u.consumption_exponent();
    let rows = probe_times
        .par_iter()
        .map(|&t| {
            let later = solve_precommitment(t, m, u, d, g)?;
            let c0 = plan0.consumption_at(t, u);
            let ct = later.consumption_rate[0];
            let ceq = equilibrium.value_at(t).powf(e);
            Ok::<_, Error>(InconsistencyRow {
                t_probe: t,
                c_precommit_0: c0,
                c_precommit_t: ct,
                c_equilibrium: ceq,
                gap_naive: (c0 - ct).abs(),
                gap_equilibrium: (ct - ceq).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InconsistencyReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_quadratic_peak() {
        let x = golden_max(|z| -(z - 3.5).powi(2), -1e3, 1e3);
        assert!((x - 3.5).abs() < 1e-8);
    }

    #[test]
    fn merton_fraction_value() {
        let m = MarketParams::from_excess_return(0.05, 0.07, 0.2).unwrap();
        let u = CrraUtility::new(0.5).unwrap();
        assert!((merton_fraction(&m, &u) - 3.5).abs() < 1e-14);
    }

    #[test]
    fn anchor_must_precede_horizon() {
        let m = MarketParams::from_excess_return(0.05, 0.07, 0.2).unwrap();
        let u = CrraUtility::new(0.5).unwrap();
        let d = DiscountSpec::exponential(0.1).unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert!(solve_precommitment(1.0, &m, &u, &d, &g).is_err());
        assert!(solve_precommitment(-0.1, &m, &u, &d, &g).is_err());
    }
}
