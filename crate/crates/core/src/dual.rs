//! Convex duality for the terminal-utility problem.
//!
//! For `v(t, x) = lambda(t) x^p / p` the conjugate
//! `w(t, y) = sup_x [v(t, x) - x y]` stays in the power family
//!
//! ```text
//! w(t, y) = ((1-p)/p) lambda(t)^{1/(1-p)} y^{p/(p-1)},
//! ```
//!
//! and `v` solves the primal equation
//!
//! ```text
//! v_t + g v + r x v_x - (mu^2 / 2 sigma^2) v_x^2 / v_xx = 0,    g = h'(T-t)/h(T-t),
//! ```
//!
//! exactly when `w` solves its Legendre image
//!
//! ```text
//! w_t + g (w - y w_y) - r y w_y + (mu^2 / 2 sigma^2) y^2 w_yy = 0.
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::lambda::quadrature::central_difference;
use crate::lambda::LambdaSolution;
use crate::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use crate::policy::golden_max;

/// Relative agreement required between the closed-form conjugate and the
/// numerical supremum at construction.
const CONJUGATE_CHECK_TOL: f64 = 1e-6;
const CONJUGATE_CHECK_POINTS: usize = 20;
const SEARCH_LO: f64 = 1e-6;
const SEARCH_HI: f64 = 1e6;
const SEARCH_GRID: usize = 2401;

/// The conjugate value function in closed form.
#[derive(Debug, Clone)]
pub struct DualValue {
    lambda: LambdaSolution,
    p: f64,
}

impl DualValue {
    pub fn grid(&self) -> &TimeGrid {
        self.lambda.grid()
    }

    pub fn lambda(&self) -> &LambdaSolution {
        &self.lambda
    }

    fn exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    fn coefficient(&self, lambda: f64) -> f64 {
        (1.0 - self.p) / self.p * lambda.powf(1.0 / (1.0 - self.p))
    }

    fn at(&self, lambda: f64, y: f64) -> f64 {
        self.coefficient(lambda) * y.powf(self.exponent())
    }

    fn check_y(y: f64) -> Result<()> {
        if y.is_finite() && y > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain {
                function: "dual value",
                value: y,
            })
        }
    }

    /// `w(t, y)`.
    pub fn value(&self, t: f64, y: f64) -> Result<f64> {
        Self::check_y(y)?;
        Ok(self.at(self.lambda.value_at(t), y))
    }

    /// `w_y(t, y)`.
    pub fn slope(&self, t: f64, y: f64) -> Result<f64> {
        Self::check_y(y)?;
        let e = self.exponent();
        Ok(self.coefficient(self.lambda.value_at(t)) * e * y.powf(e - 1.0))
    }

    /// `w_yy(t, y)`.
    pub fn curvature(&self, t: f64, y: f64) -> Result<f64> {
        Self::check_y(y)?;
        let e = self.exponent();
        Ok(self.coefficient(self.lambda.value_at(t)) * e * (e - 1.0) * y.powf(e - 2.0))
    }
}

/// Maximises `f` over `log x` in `[ln 1e-6, ln 1e6]`: a grid scan followed by
/// golden-section refinement around the best node. Returns the argmax.
fn search_log(f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = (SEARCH_LO.ln(), SEARCH_HI.ln());
    let step = (hi - lo) / (SEARCH_GRID - 1) as f64;
    let best = (0..SEARCH_GRID)
        .map(|i| lo + step * i as f64)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("non-empty grid");
    golden_max(&f, (best - step).max(lo), (best + step).min(hi))
}

/// Builds the closed-form conjugate of `lambda U_p` and confirms it against a
/// numerical supremum over `x` at 20 pseudo-random `(t, y)`.
pub fn dual_from_primal(sol: &LambdaSolution, u: &CrraUtility) -> Result<DualValue> {
    let dv = DualValue {
        lambda: sol.clone(),
        p: u.p(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
    let g = sol.grid();
    for _ in 0..CONJUGATE_CHECK_POINTS {
        let i = rng.random_range(0..g.len());
        let lambda = sol.values()[i];
        // pick the maximiser first so it lands well inside the search range
        let x_star = 10f64.powf(rng.random_range(-3.0..3.0));
        let y = lambda * u.marginal(x_star)?;
        let objective = |log_x: f64| {
            let x = log_x.exp();
            lambda * u.eval_unchecked(x) - x * y
        };
        let numeric = objective(search_log(objective));
        let closed = dv.at(lambda, y);
        if (numeric - closed).abs() > CONJUGATE_CHECK_TOL * closed.abs() {
            return Err(invalid(
                "dual",
                format!(
                    "conjugate mismatch at t = {}, y = {y}: {numeric} vs {closed}",
                    g.node(i)
                ),
            ));
        }
    }
    Ok(dv)
}

/// Sup over interior nodes and 10 log-spaced `y` in `[1e-2, 1e2]` of the
/// relative residual of the dual equation, with `lambda_t` from central
/// differences on the grid. Each residual is divided by the sum of the
/// magnitudes of its terms.
pub fn dual_pde_residual(dv: &DualValue, m: &MarketParams, d: &DiscountSpec) -> Result<f64> {
    let g = *dv.grid();
    if g.len() < 3 {
        return Err(invalid("grid", "need an interior node"));
    }
    d.validate_on(g.horizon())?;
    let values = dv.lambda.values();
    let slope = central_difference(values, g.step());
    let diffusion = m.mu() * m.mu() / (2.0 * m.sigma() * m.sigma());
    let (p, e) = (dv.p, dv.exponent());
    let ys: Vec<f64> = (0..10)
        .map(|j| 10f64.powf(-2.0 + 4.0 * j as f64 / 9.0))
        .collect();

    let mut worst: f64 = 0.0;
    for i in 1..g.n_steps() {
        let t = g.node(i);
        let lambda = values[i];
        let gain = d.log_slope(g.horizon() - t);
        for &y in &ys {
            let w = dv.at(lambda, y);
            // d/dt of lambda^{1/(1-p)} through the chain rule
            let w_t = w * slope[i] / ((1.0 - p) * lambda);
            let y_wy = e * w;
            let yy_wyy = e * (e - 1.0) * w;
            let terms = [w_t, gain * (w - y_wy), -m.r() * y_wy, diffusion * yy_wyy];
            let total: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|x| x.abs()).sum();
            if scale > 0.0 {
                worst = worst.max(total.abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Largest errors found by [`primal_dual_roundtrip`], all relative except
/// `curvature_product`, which is `|w_yy v_xx + 1|`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundtripReport {
    /// `inf_y [x y + w(t, y)]` against `lambda(t) x^p / p`.
    pub value: f64,
    /// `w_y(t, y*) = -x` and `v_x(t, x) = y*` at the minimiser.
    pub slope: f64,
    pub curvature_product: f64,
    /// `w_t(t, y*)` by central differences in `t` against `v_t(t, x)`.
    pub envelope: f64,
}

impl RoundtripReport {
    /// Worst of the value, slope and curvature errors.
    pub fn max_error(&self) -> f64 {
        self.value.max(self.slope).max(self.curvature_product)
    }
}

/// Recovers `v(t, x) = inf_y [x y + w(t, y)]` by golden-section search on
/// `log y` and checks the dual relations at the minimiser for every `(t, x)`.
pub fn primal_dual_roundtrip(
    dv: &DualValue,
    u: &CrraUtility,
    points: &[(f64, f64)],
) -> Result<RoundtripReport> {
    let g = *dv.grid();
    let mut report = RoundtripReport::default();
    for &(t, x) in points {
        if !(t >= g.start() && t <= g.horizon()) {
            return Err(invalid("points", format!("t = {t} is outside the grid")));
        }
        u.eval(x)?;
        let lambda = dv.lambda.value_at(t);
        let objective = |log_y: f64| {
            let y = log_y.exp();
            -(x * y + dv.at(lambda, y))
        };
        let y = search_log(objective).exp();
        let recovered = x * y + dv.at(lambda, y);
        let primal = lambda * u.eval(x)?;
        let v_x = lambda * u.marginal(x)?;
        let v_xx = lambda * u.curvature(x)?;

        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        report.value = report.value.max(rel(recovered, primal));
        report.slope = report.slope.max(rel(-dv.slope(t, y)?, x)).max(rel(y, v_x));
        report.curvature_product = report
            .curvature_product
            .max((dv.curvature(t, y)? * v_xx + 1.0).abs());

        let h = 1e-5 * (g.horizon() - g.start());
        let (a, b) = ((t - h).max(g.start()), (t + h).min(g.horizon()));
        let w_t = (dv.value(b, y)? - dv.value(a, y)?) / (b - a);
        let v_t = derivative_at(&dv.lambda, t) * u.eval(x)?;
        report.envelope = report.envelope.max(rel(w_t, v_t));
    }
    Ok(report)
}

/// `lambda'(t)` from the stored derivative, interpolated linearly.
fn derivative_at(sol: &LambdaSolution, t: f64) -> f64 {
    let g = sol.grid();
    let x = ((t - g.start()) / g.step()).clamp(0.0, g.n_steps() as f64);
    let i = (x.floor() as usize).min(g.n_steps() - 1);
    let frac = x - i as f64;
    let d = sol.derivative();
    d[i] + frac * (d[i + 1] - d[i])
}

/// Sup over nodes of the relative residual of the primal equation for
/// `v = lambda U_p`, using the solution's own `lambda'` and evaluated at
/// `x` in `{0.01, 1, 100}`. Each residual is divided by the sum of the
/// magnitudes of its terms.
pub fn primal_pde_residual(
    sol: &LambdaSolution,
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
) -> Result<f64> {
    let g = *sol.grid();
    d.validate_on(g.horizon())?;
    let diffusion = m.mu() * m.mu() / (2.0 * m.sigma() * m.sigma());
    let mut worst: f64 = 0.0;
    for (i, t) in g.nodes().into_iter().enumerate() {
        let lambda = sol.values()[i];
        let gain = d.log_slope(g.horizon() - t);
        for x in [0.01, 1.0, 100.0] {
            let v = lambda * u.eval(x)?;
            let v_t = sol.derivative()[i] * u.eval(x)?;
            let v_x = lambda * u.marginal(x)?;
            let v_xx = lambda * u.curvature(x)?;
            let terms = [
                v_t,
                gain * v,
                m.r() * x * v_x,
                -diffusion * v_x * v_x / v_xx,
            ];
            let total: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|x| x.abs()).sum();
            if scale > 0.0 {
                worst = worst.max(total.abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lambda::Objective;

    fn constant(value: f64) -> LambdaSolution {
        LambdaSolution::constant(
            TimeGrid::new(1.0, 10).unwrap(),
            value,
            Objective::TerminalOnly,
        )
        .unwrap()
    }

    #[test]
    fn unit_lambda_matches_utility_conjugate() {
        let u = CrraUtility::new(0.5).unwrap();
        let dv = dual_from_primal(&constant(1.0), &u).unwrap();
        assert!((dv.value(0.3, 1.0).unwrap() - 1.0).abs() < 1e-15);
        for y in [0.1, 1.0, 7.0] {
            let want = u.legendre_dual(y).unwrap();
            assert!((dv.value(1.0, y).unwrap() - want).abs() < 1e-14 * want.abs());
        }
    }

    #[test]
    fn doubled_lambda() {
        let u = CrraUtility::new(0.5).unwrap();
        let dv = dual_from_primal(&constant(2.0), &u).unwrap();
        assert!((dv.value(0.5, 1.0).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn unit_lambda_roundtrip_recovers_utility() {
        let u = CrraUtility::new(0.5).unwrap();
        let dv = dual_from_primal(&constant(1.0), &u).unwrap();
        let rep = primal_dual_roundtrip(&dv, &u, &[(0.0, 1.0)]).unwrap();
        assert!(rep.value < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_y() {
        let u = CrraUtility::new(0.5).unwrap();
        let dv = dual_from_primal(&constant(1.0), &u).unwrap();
        assert!(dv.value(0.0, 0.0).is_err());
        assert!(dv.slope(0.0, -1.0).is_err());
        assert!(primal_dual_roundtrip(&dv, &u, &[(2.0, 1.0)]).is_err());
        assert!(primal_dual_roundtrip(&dv, &u, &[(0.5, -1.0)]).is_err());
    }
}
