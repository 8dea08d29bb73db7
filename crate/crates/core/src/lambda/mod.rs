//! The scalar function `lambda(t)` behind the CRRA equilibrium value function
//! `v(t, x) = lambda(t) x^p / p`.
//!
//! Three routes are provided:
//!
//! * [`picard_solve_ie`]: damped fixed-point iteration on the nonlinear
//!   Volterra-type integral equation, valid for any discount function;
//! * [`mixture_ode_solve`]: backward RK4 on the equivalent ODE system when the
//!   discount function is a finite exponential mixture;
//! * [`solve_no_consumption`] and [`merton_exponential`]: closed forms for the
//!   terminal-utility-only problem and for exponential discounting.
//!
//! [`a_priori_bounds`] gives the solver-independent box every solution must
//! lie in, and the `residual_*` functions measure how well a candidate
//! satisfies the integral and differential characterizations.

mod closed_form;
mod integral;
mod mixture;
mod picard;
pub(crate) mod quadrature;

pub use closed_form::{merton_exponential, no_consumption_ode, solve_no_consumption};
pub use integral::{differential_form_rhs, residual_differential_form, residual_integral_equation};
pub use mixture::{fit_exponential_mixture, log_spaced_rates, mixture_ode_solve, MixtureFit};
pub use picard::{picard_iterate, picard_solve_ie, PicardOptions, PicardReport};

use crate::csv::{fmt_f64, CsvWriter};
use crate::error::{invalid, Result};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

/// Smallest admissible value of the bounds constant `A`.
const MIN_BOUNDS_CONSTANT: f64 = 1e-10;

/// `K = p (r + mu^2 / (2 (1-p) sigma^2))`, the certainty-equivalent growth
/// rate of `x^p` under the Merton stock fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstant(f64);

impl GrowthConstant {
    pub fn new(m: &MarketParams, u: &CrraUtility) -> Self {
        let p = u.p();
        let sigma2 = m.sigma() * m.sigma();
        GrowthConstant(p * (m.r() + m.mu() * m.mu() / (2.0 * (1.0 - p) * sigma2)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn growth_constant(m: &MarketParams, u: &CrraUtility) -> GrowthConstant {
    GrowthConstant::new(m, u)
}

/// Which solver produced a [`LambdaSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Picard,
    MixtureOde,
    /// `lambda(t) = h(T-t) e^{K(T-t)}` for the terminal-utility-only problem.
    ClosedForm,
    /// Classical Merton solution for exponential discounting.
    MertonClosedForm,
    /// Backward integration of the precommitment HJB reduction.
    Precommitment,
    /// Built by hand, e.g. a perturbed copy used as a negative control.
    Manual,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Picard => "picard",
            Provenance::MixtureOde => "mixture_ode",
            Provenance::ClosedForm => "closed_form",
            Provenance::MertonClosedForm => "merton_closed_form",
            Provenance::Precommitment => "precommitment",
            Provenance::Manual => "manual",
        }
    }
}

/// The two objectives the solvers handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Discounted utility of consumption plus utility of terminal wealth.
    ConsumptionAndBequest,
    /// Utility of terminal wealth only; no intertemporal consumption.
    TerminalOnly,
}

/// `lambda` on a grid, with its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    grid: TimeGrid,
    values: Vec<f64>,
    derivative: Vec<f64>,
    provenance: Provenance,
    objective: Objective,
    components: Vec<Vec<f64>>,
}

impl LambdaSolution {
    /// Assembles a solution from raw node values.
    ///
    /// Only shape and positivity are checked; the terminal condition is not
    /// enforced so that perturbed candidates can be built for diagnostics.
    pub fn from_parts(
        grid: TimeGrid,
        values: Vec<f64>,
        derivative: Vec<f64>,
        provenance: Provenance,
        objective: Objective,
    ) -> Result<Self> {
        if values.len() != grid.len() || derivative.len() != grid.len() {
            return Err(invalid(
                "lambda",
                format!(
                    "expected {} nodes, got {} values and {} derivatives",
                    grid.len(),
                    values.len(),
                    derivative.len()
                ),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(
                "lambda",
                format!("values must be positive, found {bad}"),
            ));
        }
        if derivative.iter().any(|v| !v.is_finite()) {
            return Err(invalid("lambda", "derivative must be finite"));
        }
        Ok(Self {
            grid,
            values,
            derivative,
            provenance,
            objective,
            components: Vec::new(),
        })
    }

    pub(crate) fn with_components(mut self, components: Vec<Vec<f64>>) -> Self {
        self.components = components;
        self
    }

    /// A constant `lambda` with zero derivative.
    pub fn constant(grid: TimeGrid, value: f64, objective: Objective) -> Result<Self> {
        Self::from_parts(
            grid,
            vec![value; grid.len()],
            vec![0.0; grid.len()],
            Provenance::Manual,
            objective,
        )
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    /// Per-term functions `lambda_n` for mixture solutions; empty otherwise.
    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// `lambda` at the first grid node.
    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    /// Cubic Hermite interpolation of `lambda` using the stored derivative.
    /// Arguments outside the grid are clamped to its ends.
    pub fn value_at(&self, t: f64) -> f64 {
        let (i, s) = self.locate(t);
        if s == 0.0 {
            return self.values[i];
        }
        let h = self.grid.step();
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.derivative[i] * h, self.derivative[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.grid.n_steps();
        if t <= self.grid.start() {
            return (0, 0.0);
        }
        if t >= self.grid.horizon() {
            return (n, 0.0);
        }
        if let Some(i) = self.grid.index_of(t) {
            return (i, 0.0);
        }
        let x = (t - self.grid.start()) / self.grid.step();
        let i = (x.floor() as usize).min(n - 1);
        (i, x - i as f64)
    }

    /// `lambda^{1/(p-1)}` at every node.
    pub fn consumption_rates(&self, u: &CrraUtility) -> Vec<f64> {
        let e = u.consumption_exponent();
        self.values.iter().map(|l| l.powf(e)).collect()
    }

    /// Copy with every value and derivative multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_parts(
            self.grid,
            self.values.iter().map(|v| v * factor).collect(),
            self.derivative.iter().map(|v| v * factor).collect(),
            Provenance::Manual,
            self.objective,
        )
    }

    /// Writes `t, lambda, lambda_prime, consumption_rate` with a header row.
    pub fn to_csv(&self, u: &CrraUtility) -> String {
        let mut w = CsvWriter::new(&["t", "lambda", "lambda_prime", "consumption_rate"]);
        let rates = self.consumption_rates(u);
        for i in 0..self.grid.len() {
            w.row(&[
                fmt_f64(self.grid.node(i)),
                fmt_f64(self.values[i]),
                fmt_f64(self.derivative[i]),
                fmt_f64(rates[i]),
            ]);
        }
        w.finish()
    }
}

/// The a priori box `[e^{-AT}, upper]` for solutions of the integral equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsCertificate {
    /// The constant `A` bounding the linear part of the differential form.
    pub a: f64,
    pub lower: f64,
    /// `[(1-p)/A + ((1-p)/A + 1) e^{AT/(1-p)}]^{1-p}`.
    pub upper: f64,
    /// `[((1-p)/A + 1) e^{AT/(1-p)} - (1-p)/A]^{1-p}`, the bound obtained by
    /// integrating the comparison inequality exactly. Never larger than
    /// `upper`, and tends to 1 with the horizon.
    pub upper_sharp: f64,
}

impl BoundsCertificate {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// Number of nodes of `sol` outside `[lower, upper]`.
    pub fn violations(&self, sol: &LambdaSolution) -> usize {
        sol.values().iter().filter(|v| !self.contains(**v)).count()
    }

    pub fn clip(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&["a", "lower", "upper", "upper_sharp"]);
        w.row(&[
            fmt_f64(self.a),
            fmt_f64(self.lower),
            fmt_f64(self.upper),
            fmt_f64(self.upper_sharp),
        ]);
        w.finish()
    }
}

/// Bounds on any solution of the integral equation on `g`.
///
/// `A` is the grid supremum of `|h'(T-t)/h(T-t) + K|` plus the grid supremum
/// of `|d/dt log(h(s-t)/h(T-t))|` over `t <= s <= T`; both terms bound the
/// linear part of the differential form of the equation.
pub fn a_priori_bounds(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> BoundsCertificate {
    let k = GrowthConstant::new(m, u).value();
    let n = g.n_steps();
    let dt = g.step();
    // log-slope h'/h at every lag m*dt
    let slope: Vec<f64> = (0..=n).map(|i| d.log_slope(i as f64 * dt)).collect();

    let drift = slope.iter().map(|s| (s + k).abs()).fold(0.0, f64::max);

    // d/dt log(h(s-t)/h(T-t)) = slope(T-t) - slope(s-t); for lag M = T-t the
    // inner lag s-t ranges over [0, M].
    let mut kernel: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in &slope {
        lo = lo.min(s);
        hi = hi.max(s);
        kernel = kernel.max((s - lo).abs()).max((hi - s).abs());
    }

    let a = (drift + kernel).max(MIN_BOUNDS_CONSTANT);
    bounds_from_constant(a, u.p(), g.horizon() - g.start())
}

pub(crate) fn bounds_from_constant(a: f64, p: f64, horizon: f64) -> BoundsCertificate {
    let ratio = (1.0 - p) / a;
    let growth = (a * horizon / (1.0 - p)).exp();
    BoundsCertificate {
        a,
        lower: (-a * horizon).exp(),
        upper: (ratio + (ratio + 1.0) * growth).powf(1.0 - p),
        upper_sharp: ((ratio + 1.0) * growth - ratio).powf(1.0 - p),
    }
}

/// Chooses the natural equilibrium solver for `d`: the ODE system for
/// exponential mixtures, Picard iteration otherwise.
pub fn solve_equilibrium(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
    opts: &PicardOptions,
) -> Result<LambdaSolution> {
    match d {
        DiscountSpec::Exponential { .. } | DiscountSpec::ExponentialMixture(_) => {
            mixture_ode_solve(m, u, d, g)
        }
        DiscountSpec::Hyperbolic { .. } => picard_solve_ie(m, u, d, g, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_market() -> MarketParams {
        MarketParams::from_excess_return(0.05, 0.07, 0.2).unwrap()
    }

    #[test]
    fn growth_constant_values() {
        let m = base_market();
        let k = growth_constant(&m, &CrraUtility::new(0.5).unwrap()).value();
        assert_relative_eq!(k, 0.08625, max_relative = 1e-14);
        let k = growth_constant(&m, &CrraUtility::new(-1.0).unwrap()).value();
        assert_relative_eq!(k, -0.080625, max_relative = 1e-14);
        let tiny = MarketParams::from_excess_return(0.05, 1e-9, 0.2).unwrap();
        let k = growth_constant(&tiny, &CrraUtility::new(0.5).unwrap()).value();
        assert_relative_eq!(k, 0.025, max_relative = 1e-12);
    }

    #[test]
    fn exponential_bounds_reduce_to_drift() {
        let m = base_market();
        let u = CrraUtility::new(0.5).unwrap();
        let d = DiscountSpec::exponential(0.3).unwrap();
        let g = TimeGrid::new(1.0, 100).unwrap();
        let b = a_priori_bounds(&m, &u, &d, &g);
        let k = growth_constant(&m, &u).value();
        assert_relative_eq!(b.a, (k - 0.3).abs(), max_relative = 1e-14);
        assert!(b.lower < 1.0 && 1.0 < b.upper);
        assert!(b.upper_sharp <= b.upper);
    }

    #[test]
    fn short_horizon_bounds_collapse() {
        let m = base_market();
        let u = CrraUtility::new(0.5).unwrap();
        let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
        let g = TimeGrid::new(1e-6, 10).unwrap();
        let b = a_priori_bounds(&m, &u, &d, &g);
        assert!((b.lower - 1.0).abs() < 1e-3);
        assert!((b.upper_sharp - 1.0).abs() < 1e-3);
        // the closed-form upper bound keeps a horizon-free offset of (1-p)/A
        assert!(b.upper > 1.0);
    }

    #[test]
    fn hermite_interpolation_is_exact_for_cubics() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let f = |t: f64| 1.0 + t + 0.5 * t * t - 0.25 * t * t * t;
        let df = |t: f64| 1.0 + t - 0.75 * t * t;
        let sol = LambdaSolution::from_parts(
            g,
            g.nodes().iter().map(|&t| f(t)).collect(),
            g.nodes().iter().map(|&t| df(t)).collect(),
            Provenance::Manual,
            Objective::ConsumptionAndBequest,
        )
        .unwrap();
        for &t in &[0.0, 0.1, 0.33, 0.5, 0.77, 1.0] {
            assert_relative_eq!(sol.value_at(t), f(t), max_relative = 1e-14);
        }
    }

    #[test]
    fn from_parts_rejects_bad_input() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let obj = Objective::TerminalOnly;
        assert!(
            LambdaSolution::from_parts(g, vec![1.0; 4], vec![0.0; 5], Provenance::Manual, obj)
                .is_err()
        );
        assert!(LambdaSolution::from_parts(
            g,
            vec![1.0, -1.0, 1.0, 1.0, 1.0],
            vec![0.0; 5],
            Provenance::Manual,
            obj
        )
        .is_err());
    }
}
