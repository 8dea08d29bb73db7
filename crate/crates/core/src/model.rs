//! Economic primitives: the market, CRRA preferences, discount functions and
//! the time discretization shared by every solver.
//!
//! All types validate their parameters on construction and are immutable
//! afterwards.

use crate::error::{invalid, Error, Result};

/// Tolerance on `sum(beta) == 1` for exponential mixtures.
const MIXTURE_WEIGHT_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Market
// ---------------------------------------------------------------------------

/// One riskless asset and one log-normal stock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    r: f64,
    alpha: f64,
    sigma: f64,
    mu: f64,
}

impl MarketParams {
    /// Builds the market from the riskless rate, the stock's mean return and
    /// its volatility.
    pub fn new(r: f64, alpha: f64, sigma: f64) -> Result<Self> {
        Self::build(r, alpha, sigma, alpha - r)
    }

    /// Builds the market from the riskless rate and the excess return
    /// `mu = alpha - r`.
    pub fn from_excess_return(r: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::build(r, r + mu, sigma, mu)
    }

    fn build(r: f64, alpha: f64, sigma: f64, mu: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid(
                "r",
                format!("riskless rate must be positive, got {r}"),
            ));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid(
                "sigma",
                format!("volatility must be positive, got {sigma}"),
            ));
        }
        if !alpha.is_finite() {
            return Err(invalid("alpha", "stock drift must be finite"));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(invalid(
                "mu",
                format!("excess return must be positive, got {mu}"),
            ));
        }
        Ok(Self {
            r,
            alpha,
            sigma,
            mu,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Excess return of the stock over the riskless rate.
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

/// Power utility `U(x) = x^p / p` with `p < 1`, `p != 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrraUtility {
    p: f64,
}

impl CrraUtility {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p >= 1.0 {
            return Err(invalid(
                "p",
                format!("risk-aversion exponent must be < 1, got {p}"),
            ));
        }
        if p == 0.0 {
            return Err(invalid("p", "log utility (p = 0) is not supported"));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `p / (p - 1)`, the exponent of `lambda` in the running utility term.
    pub fn conjugate_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// `1 / (p - 1)`, the exponent mapping `lambda` to a consumption rate.
    pub fn consumption_exponent(&self) -> f64 {
        1.0 / (self.p - 1.0)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        positive("utility", x)?;
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        x.powf(self.p) / self.p
    }

    /// `U'(x) = x^(p-1)`.
    pub fn marginal(&self, x: f64) -> Result<f64> {
        positive("marginal utility", x)?;
        Ok(x.powf(self.p - 1.0))
    }

    /// `U''(x) = (p-1) x^(p-2)`.
    pub fn curvature(&self, x: f64) -> Result<f64> {
        positive("utility curvature", x)?;
        Ok((self.p - 1.0) * x.powf(self.p - 2.0))
    }

    /// Inverse of the marginal utility, `I(y) = y^(1/(p-1))`.
    pub fn inverse_marginal(&self, y: f64) -> Result<f64> {
        positive("inverse marginal utility", y)?;
        Ok(y.powf(self.consumption_exponent()))
    }

    /// Convex conjugate `sup_{x>0} [U(x) - x y] = ((1-p)/p) y^(p/(p-1))`.
    pub fn legendre_dual(&self, y: f64) -> Result<f64> {
        positive("Legendre dual", y)?;
        Ok((1.0 - self.p) / self.p * y.powf(self.conjugate_exponent()))
    }

    /// Derivative of the conjugate; equals `-I(y)`.
    pub fn legendre_dual_slope(&self, y: f64) -> Result<f64> {
        Ok(-self.inverse_marginal(y)?)
    }
}

fn positive(function: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, value })
    }
}

// ---------------------------------------------------------------------------
// Discounting
// ---------------------------------------------------------------------------

/// One term `beta * exp(-rho t)` of an exponential mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureTerm {
    pub weight: f64,
    pub rate: f64,
}

/// A continuously differentiable, positive discount function with `h(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscountSpec {
    /// `h(t) = exp(-rho t)`.
    Exponential { rho: f64 },
    /// `h(t) = sum_n beta_n exp(-rho_n t)` with `sum_n beta_n = 1`.
    ExponentialMixture(Vec<MixtureTerm>),
    /// `h(t) = (1 + k t)^(-gamma)`.
    Hyperbolic { k: f64, gamma: f64 },
}

impl DiscountSpec {
    pub fn exponential(rho: f64) -> Result<Self> {
        let d = DiscountSpec::Exponential { rho };
        d.validate()?;
        Ok(d)
    }

    pub fn hyperbolic(k: f64, gamma: f64) -> Result<Self> {
        let d = DiscountSpec::Hyperbolic { k, gamma };
        d.validate()?;
        Ok(d)
    }

    /// Builds a mixture from `(weight, rate)` pairs.
    pub fn mixture(pairs: &[(f64, f64)]) -> Result<Self> {
        let terms = pairs
            .iter()
            .map(|&(weight, rate)| MixtureTerm { weight, rate })
            .collect();
        let d = DiscountSpec::ExponentialMixture(terms);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DiscountSpec::Exponential { rho } => {
                if !(rho.is_finite() && *rho >= 0.0) {
                    return Err(invalid(
                        "rho",
                        format!("must be finite and >= 0, got {rho}"),
                    ));
                }
            }
            DiscountSpec::Hyperbolic { k, gamma } => {
                if !(k.is_finite() && *k > 0.0) {
                    return Err(invalid("k", format!("must be positive, got {k}")));
                }
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(invalid("gamma", format!("must be positive, got {gamma}")));
                }
            }
            DiscountSpec::ExponentialMixture(terms) => {
                if terms.is_empty() {
                    return Err(invalid("mixture", "needs at least one term"));
                }
                for t in terms {
                    if !(t.weight.is_finite() && t.weight > 0.0) {
                        return Err(invalid(
                            "mixture weight",
                            format!("must be positive, got {}", t.weight),
                        ));
                    }
                    if !(t.rate.is_finite() && t.rate >= 0.0) {
                        return Err(invalid(
                            "mixture rate",
                            format!("must be finite and >= 0, got {}", t.rate),
                        ));
                    }
                }
                let total: f64 = terms.iter().map(|t| t.weight).sum();
                if (total - 1.0).abs() > MIXTURE_WEIGHT_TOL {
                    return Err(invalid(
                        "mixture",
                        format!("weights must sum to 1 so that h(0) = 1, got {total}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks the horizon-dependent requirement `inf_{[0,T]} h > 0`.
    pub fn validate_on(&self, horizon: f64) -> Result<()> {
        self.validate()?;
        // every shipped variant is nonincreasing, so the infimum sits at T
        let (h_end, _) = self.eval(horizon);
        if !(h_end > f64::MIN_POSITIVE) {
            return Err(invalid(
                "discount",
                format!("h({horizon}) = {h_end} is not bounded away from zero"),
            ));
        }
        Ok(())
    }

    /// Returns `(h(t), h'(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match self {
            DiscountSpec::Exponential { rho } => {
                let h = (-rho * t).exp();
                (h, -rho * h)
            }
            DiscountSpec::ExponentialMixture(terms) => {
                terms.iter().fold((0.0, 0.0), |(h, dh), term| {
                    let e = term.weight * (-term.rate * t).exp();
                    (h + e, dh - term.rate * e)
                })
            }
            DiscountSpec::Hyperbolic { k, gamma } => {
                let base = 1.0 + k * t;
                let h = base.powf(-gamma);
                (h, -gamma * k * h / base)
            }
        }
    }

    pub fn h(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    /// `h'(t) / h(t)`, the negative of the instantaneous discount rate.
    pub fn log_slope(&self, t: f64) -> f64 {
        match self {
            DiscountSpec::Exponential { rho } => -rho,
            DiscountSpec::Hyperbolic { k, gamma } => -gamma * k / (1.0 + k * t),
            DiscountSpec::ExponentialMixture(_) => {
                let (h, dh) = self.eval(t);
                dh / h
            }
        }
    }

    /// Whether `h'/h` is constant, i.e. the problem is time consistent.
    pub fn is_exponential(&self) -> bool {
        match self {
            DiscountSpec::Exponential { .. } => true,
            DiscountSpec::ExponentialMixture(terms) => {
                terms.iter().all(|t| t.rate == terms[0].rate)
            }
            DiscountSpec::Hyperbolic { .. } => false,
        }
    }

    /// Short human-readable tag used in reports.
    pub fn label(&self) -> String {
        match self {
            DiscountSpec::Exponential { rho } => format!("exponential(rho={rho})"),
            DiscountSpec::ExponentialMixture(terms) => format!("mixture(n={})", terms.len()),
            DiscountSpec::Hyperbolic { k, gamma } => format!("hyperbolic(k={k} gamma={gamma})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

/// Uniform grid `start = t_0 < t_1 < ... < t_n = end`.
///
/// Solvers treat `end` as the horizon `T`; `start` is zero except for the
/// windows used by precommitment solves anchored at a later date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid on `[0, horizon]`.
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::window(0.0, horizon, n_steps)
    }

    pub fn window(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if !(start.is_finite() && start >= 0.0) {
            return Err(invalid("grid start", format!("must be >= 0, got {start}")));
        }
        if !(end.is_finite() && end > start) {
            return Err(invalid(
                "horizon",
                format!("must exceed the grid start {start}, got {end}"),
            ));
        }
        if n_steps < 2 {
            return Err(invalid(
                "n_steps",
                format!("need at least 2 intervals, got {n_steps}"),
            ));
        }
        Ok(Self {
            start,
            end,
            n_steps,
        })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    /// The horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i == self.n_steps {
            self.end
        } else {
            self.start + (self.end - self.start) * i as f64 / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Index of the node equal to `t` (up to rounding), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.start) / self.step();
        let i = x.round();
        if i < 0.0 || i > self.n_steps as f64 {
            return None;
        }
        let tol = 1e-9 * (self.end - self.start).max(1.0);
        let i = i as usize;
        ((self.node(i) - t).abs() <= tol).then_some(i)
    }

    /// The sub-grid `t_i, ..., t_n`. Needs at least two remaining intervals.
    pub fn tail(&self, i: usize) -> Result<Self> {
        if i + 2 > self.n_steps {
            return Err(invalid(
                "grid tail",
                format!("node {i} leaves fewer than 2 intervals"),
            ));
        }
        Ok(Self {
            start: self.node(i),
            end: self.end,
            n_steps: self.n_steps - i,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn utility_values() {
        let half = CrraUtility::new(0.5).unwrap();
        assert_eq!(half.eval(1.0).unwrap(), 2.0);
        assert_eq!(half.eval(4.0).unwrap(), 4.0);
        let neg = CrraUtility::new(-1.0).unwrap();
        assert_eq!(neg.eval(2.0).unwrap(), -0.5);
        assert!(half.eval(0.0).is_err());
        assert!(half.eval(-1.0).is_err());
    }

    #[test]
    fn inverse_marginal_values() {
        let half = CrraUtility::new(0.5).unwrap();
        assert_eq!(half.inverse_marginal(1.0).unwrap(), 1.0);
        assert_relative_eq!(
            half.inverse_marginal(4.0).unwrap(),
            1.0 / 16.0,
            max_relative = 1e-15
        );
        // U'(1/16) = (1/16)^(-1/2) = 4
        assert_relative_eq!(
            half.marginal(1.0 / 16.0).unwrap(),
            4.0,
            max_relative = 1e-15
        );
        let neg = CrraUtility::new(-1.0).unwrap();
        assert_relative_eq!(
            neg.inverse_marginal(0.25).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(neg.marginal(2.0).unwrap(), 0.25, max_relative = 1e-15);
        assert!(half.inverse_marginal(0.0).is_err());
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(CrraUtility::new(0.0).is_err());
        assert!(CrraUtility::new(1.0).is_err());
        assert!(CrraUtility::new(1.5).is_err());
        assert!(CrraUtility::new(f64::NAN).is_err());
    }

    #[test]
    fn market_validation() {
        let m = MarketParams::new(0.05, 0.12, 0.2).unwrap();
        assert_eq!(m.mu(), 0.12 - 0.05);
        assert!(MarketParams::new(0.05, 0.05, 0.2).is_err());
        assert!(MarketParams::new(0.0, 0.1, 0.2).is_err());
        assert!(MarketParams::new(0.05, 0.1, 0.0).is_err());
        let m = MarketParams::from_excess_return(0.05, 0.07, 0.2).unwrap();
        assert_eq!(m.mu(), 0.07);
    }

    #[test]
    fn discount_values() {
        let e = DiscountSpec::exponential(0.1).unwrap();
        assert_eq!(e.eval(0.0), (1.0, -0.1));

        let hyp = DiscountSpec::hyperbolic(1.0, 2.0).unwrap();
        let (h, dh) = hyp.eval(1.0);
        assert_relative_eq!(h, 0.25, max_relative = 1e-15);
        assert_relative_eq!(dh, -0.25, max_relative = 1e-15);
        let step = 1e-5;
        let fd = (hyp.h(1.0 + step) - hyp.h(1.0 - step)) / (2.0 * step);
        assert_relative_eq!(fd, dh, max_relative = 1e-8);

        let mix = DiscountSpec::mixture(&[(0.5, 0.0), (0.5, 1.0)]).unwrap();
        assert_eq!(mix.eval(0.0), (1.0, -0.5));
    }

    #[test]
    fn discount_validation() {
        assert!(DiscountSpec::exponential(-0.1).is_err());
        assert!(DiscountSpec::hyperbolic(0.0, 1.0).is_err());
        assert!(DiscountSpec::hyperbolic(1.0, -1.0).is_err());
        assert!(DiscountSpec::mixture(&[(0.5, 0.1), (0.4, 1.0)]).is_err());
        assert!(DiscountSpec::mixture(&[(1.5, 0.1), (-0.5, 1.0)]).is_err());
        assert!(DiscountSpec::mixture(&[]).is_err());
        let steep = DiscountSpec::exponential(1e4).unwrap();
        assert!(steep.validate_on(1.0).is_err());
        assert!(steep.validate_on(0.01).is_ok());
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.6), None);
        let tail = g.tail(1).unwrap();
        assert_eq!(tail.nodes(), vec![0.25, 0.5, 0.75, 1.0]);
        assert!(g.tail(3).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        let fine = TimeGrid::new(3.0, 7).unwrap();
        assert_eq!(fine.node(7), 3.0);
    }
}
