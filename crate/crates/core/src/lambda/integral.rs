//! The integral equation for `lambda`, its differential form and the residual
//! diagnostics built on them.
//!
//! With `q = p/(p-1)`, `c = lambda^{1/(p-1)}` and `C(t) = int_0^t c`, the
//! equation reads
//!
//! ```text
//! lambda(t) = int_t^T h(s-t) e^{K(s-t)} lambda(s)^q e^{-p (C(s)-C(t))} ds
//!           + h(T-t) e^{K(T-t)} e^{-p (C(T)-C(t))}
//! ```
//!
//! and differentiating in `t` gives
//!
//! ```text
//! lambda'(t) = -(h'(T-t)/h(T-t) + K) lambda(t) + (p-1) lambda(t)^q
//!            + int_t^T [h(s-t) h'(T-t)/h(T-t) - h'(s-t)] e^{K(s-t)}
//!                      lambda(s)^q e^{-p (C(s)-C(t))} ds.
//! ```
//!
//! The bracketed kernel equals `h(T-t) d/dt[h(s-t)/h(T-t)]` and vanishes for
//! exponential discounting. All integrals use the composite trapezoid rule on
//! the solution grid.

use super::quadrature::{central_difference, cumulative_trapezoid};
use super::{GrowthConstant, LambdaSolution};
use crate::error::{invalid, Result};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

/// Above this the factorization `e^{-p(C_j - C_i)} = e^{-pC_j} e^{pC_i}`
/// risks overflow and the exponentials are evaluated pairwise.
const FACTORIZATION_LIMIT: f64 = 600.0;

/// Discretized right-hand sides on a fixed grid. Lag-dependent factors are
/// tabulated once since the grid is uniform.
pub(crate) struct IntegralOperator {
    n: usize,
    dt: f64,
    k: f64,
    p: f64,
    running_exp: f64,
    rate_exp: f64,
    /// `h(m dt)` for lags `m = 0..=n`.
    h: Vec<f64>,
    /// `h'(m dt)`.
    dh: Vec<f64>,
    /// `h'/h` at each lag.
    slope: Vec<f64>,
    /// `e^{K m dt}`.
    growth: Vec<f64>,
}

impl IntegralOperator {
    pub(crate) fn new(m: &MarketParams, u: &CrraUtility, d: &DiscountSpec, g: &TimeGrid) -> Self {
        let n = g.n_steps();
        let dt = g.step();
        let k = GrowthConstant::new(m, u).value();
        let mut h = Vec::with_capacity(n + 1);
        let mut dh = Vec::with_capacity(n + 1);
        let mut slope = Vec::with_capacity(n + 1);
        let mut growth = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let lag = i as f64 * dt;
            let (hv, dhv) = d.eval(lag);
            h.push(hv);
            dh.push(dhv);
            slope.push(d.log_slope(lag));
            growth.push((k * lag).exp());
        }
        Self {
            n,
            dt,
            k,
            p: u.p(),
            running_exp: u.conjugate_exponent(),
            rate_exp: u.consumption_exponent(),
            h,
            dh,
            slope,
            growth,
        }
    }

    /// `sum_j w_j kernel(i, j-i) lambda_j^q e^{-p(C_j - C_i)}` for every node,
    /// trapezoid weights included.
    fn weighted_tail_integrals<F>(&self, lambda: &[f64], kernel: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(usize, usize) -> f64,
    {
        let n = self.n;
        let rates: Vec<f64> = lambda.iter().map(|l| l.powf(self.rate_exp)).collect();
        let running: Vec<f64> = lambda.iter().map(|l| l.powf(self.running_exp)).collect();
        let pc: Vec<f64> = cumulative_trapezoid(&rates, self.dt)
            .into_iter()
            .map(|c| self.p * c)
            .collect();
        let span = pc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let factored = span < FACTORIZATION_LIMIT;
        let decay: Vec<f64> = if factored {
            pc.iter().map(|x| (-x).exp()).collect()
        } else {
            Vec::new()
        };

        let mut integrals = vec![0.0; n + 1];
        for (i, out) in integrals.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for j in i..=n {
                let w = if j == i || j == n { 0.5 } else { 1.0 };
                let e = if factored {
                    decay[j]
                } else {
                    (-(pc[j] - pc[i])).exp()
                };
                acc += w * kernel(i, j - i) * running[j] * e;
            }
            if factored {
                acc *= pc[i].exp();
            }
            *out = acc * self.dt;
        }
        // survival factor to the horizon, e^{-p (C_n - C_i)}
        let survival = pc.iter().map(|c| (-(pc[n] - c)).exp()).collect();
        (integrals, survival)
    }

    /// Right-hand side of the integral equation at every node.
    pub(crate) fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (integrals, survival) =
            self.weighted_tail_integrals(lambda, |_, lag| self.h[lag] * self.growth[lag]);
        (0..=n)
            .map(|i| integrals[i] + self.h[n - i] * self.growth[n - i] * survival[i])
            .collect()
    }

    /// Right-hand side of the differential form at every node.
    pub(crate) fn differential_rhs(&self, lambda: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (integrals, _) = self.weighted_tail_integrals(lambda, |i, lag| {
            self.growth[lag] * (self.h[lag] * self.slope[n - i] - self.dh[lag])
        });
        (0..=n)
            .map(|i| {
                -(self.slope[n - i] + self.k) * lambda[i]
                    + (self.p - 1.0) * lambda[i].powf(self.running_exp)
                    + integrals[i]
            })
            .collect()
    }
}

/// Sup-norm gap between `lambda` and the integral-equation right-hand side
/// evaluated on the solution's own grid.
pub fn residual_integral_equation(
    sol: &LambdaSolution,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> f64 {
    let op = IntegralOperator::new(m, u, d, sol.grid());
    op.apply(sol.values())
        .iter()
        .zip(sol.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Differential-form right-hand side for a candidate `lambda` on `g`.
pub fn differential_form_rhs(
    values: &[f64],
    g: &TimeGrid,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Vec<f64> {
    IntegralOperator::new(m, u, d, g).differential_rhs(values)
}

/// Sup-norm over interior nodes of `lambda' - rhs`, with `lambda'` from
/// central differences of the node values.
pub fn residual_differential_form(
    sol: &LambdaSolution,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<f64> {
    let g = sol.grid();
    if g.len() < 4 {
        return Err(invalid(
            "lambda",
            "differential residual needs at least 4 nodes",
        ));
    }
    let rhs = differential_form_rhs(sol.values(), g, m, u, d);
    let slope = central_difference(sol.values(), g.step());
    Ok((1..g.n_steps())
        .map(|i| (slope[i] - rhs[i]).abs())
        .fold(0.0, f64::max))
}
