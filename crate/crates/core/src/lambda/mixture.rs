//! Exponential-mixture discounting: the ODE-system route for `lambda` and the
//! fit that approximates an arbitrary discount function by a mixture.

use nalgebra::{DMatrix, DVector};

use super::quadrature::rk4_backward;
use super::{GrowthConstant, LambdaSolution, Objective, Provenance};
use crate::error::{invalid, Error, Result};
use crate::model::{CrraUtility, DiscountSpec, MarketParams, MixtureTerm, TimeGrid};

/// Weight of the `sum(beta) = 1` row in the nonnegative least-squares fit.
const SIMPLEX_ROW_WEIGHT: f64 = 1e3;

/// Solves for `lambda` when `h(t) = sum_n beta_n e^{-rho_n t}`.
///
/// Each term's share `lambda_n` of the integral equation obeys
///
/// ```text
/// lambda_n' = (rho_n - K + p c) lambda_n - lambda^{p/(p-1)},   lambda_n(T) = 1,
/// ```
///
/// with `lambda = sum_n beta_n lambda_n` and `c = lambda^{1/(p-1)}`. Summing
/// over `n` recovers
/// `lambda' = sum_n beta_n (rho_n - K) lambda_n + (p-1) lambda^{p/(p-1)}`.
/// The system is integrated backward with RK4 on the grid. A single exponential is accepted as a one-term mixture.
pub fn mixture_ode_solve(
    m: &MarketParams,
    u: &CrraUtility,
    d: &DiscountSpec,
    g: &TimeGrid,
) -> Result<LambdaSolution> {
    d.validate_on(g.horizon())?;
    let terms: Vec<MixtureTerm> = match d {
        DiscountSpec::Exponential { rho } => vec![MixtureTerm {
            weight: 1.0,
            rate: *rho,
        }],
        DiscountSpec::ExponentialMixture(terms) => terms.clone(),
        DiscountSpec::Hyperbolic { .. } => {
            return Err(invalid(
                "discount",
                "the ODE system needs an exponential mixture; fit one first",
            ))
        }
    };
    let k = GrowthConstant::new(m, u).value();
    let p = u.p();
    let running_exp = u.conjugate_exponent();
    let rate_exp = u.consumption_exponent();

    let aggregate = |y: &[f64]| -> f64 { terms.iter().zip(y).map(|(t, l)| t.weight * l).sum() };
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let lambda = aggregate(y);
        let running = lambda.powf(running_exp);
        let rate = lambda.powf(rate_exp);
        for ((term, l), out) in terms.iter().zip(y).zip(dy.iter_mut()) {
            *out = (term.rate - k + p * rate) * l - running;
        }
    };

    let states = rk4_backward(
        g,
        &vec![1.0; terms.len()],
        |_, y, dy| rhs(y, dy),
        |y| y.iter().all(|l| *l > 0.0) && aggregate(y) > 0.0,
    )?;

    let mut values = Vec::with_capacity(g.len());
    let mut derivative = Vec::with_capacity(g.len());
    let mut scratch = vec![0.0; terms.len()];
    for y in &states {
        values.push(aggregate(y));
        rhs(y, &mut scratch);
        derivative.push(aggregate(&scratch));
    }
    *values.last_mut().expect("grid has nodes") = 1.0;

    let components = (0..terms.len())
        .map(|n| states.iter().map(|y| y[n]).collect())
        .collect();
    Ok(LambdaSolution::from_parts(
        *g,
        values,
        derivative,
        Provenance::MixtureOde,
        Objective::ConsumptionAndBequest,
    )?
    .with_components(components))
}

/// `n` rates spaced evenly in log scale between `lo` and `hi` inclusive.
pub fn log_spaced_rates(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Result of [`fit_exponential_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    /// Candidate rates, as supplied.
    pub rates: Vec<f64>,
    /// Fitted weights aligned with `rates`; nonnegative, summing to one.
    pub weights: Vec<f64>,
    /// Sup over grid nodes of `|h - h_fit|`.
    pub sup_error_h: f64,
    /// Sup over grid nodes of `|h' - h_fit'|`.
    pub sup_error_dh: f64,
    /// Sup over grid nodes of `|h - h_fit| + |h' - h_fit'|`.
    pub sup_error: f64,
    /// The fitted mixture with zero-weight terms dropped.
    pub discount: DiscountSpec,
}

/// Approximates `h` and `h'` simultaneously on the grid nodes by a mixture
/// over the candidate `rates`.
///
/// The weights solve a nonnegative least-squares problem with a heavily
/// weighted `sum(beta) = 1` row, and are then projected onto the probability
/// simplex. Fails with [`Error::FitTooCoarse`] when the combined sup-error
/// exceeds `ceiling`.
pub fn fit_exponential_mixture(
    d: &DiscountSpec,
    rates: &[f64],
    g: &TimeGrid,
    ceiling: Option<f64>,
) -> Result<MixtureFit> {
    d.validate()?;
    if rates.is_empty() {
        return Err(invalid("rho_grid", "need at least one candidate rate"));
    }
    if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(invalid(
            "rho_grid",
            format!("rates must be finite and >= 0, got {bad}"),
        ));
    }
    let nodes = g.nodes();
    let rows = 2 * nodes.len() + 1;
    let cols = rates.len();
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, &t) in nodes.iter().enumerate() {
        let (h, dh) = d.eval(t);
        b[i] = h;
        b[nodes.len() + i] = dh;
        for (j, &rho) in rates.iter().enumerate() {
            let e = (-rho * t).exp();
            a[(i, j)] = e;
            a[(nodes.len() + i, j)] = -rho * e;
        }
    }
    for j in 0..cols {
        a[(rows - 1, j)] = SIMPLEX_ROW_WEIGHT;
    }
    b[rows - 1] = SIMPLEX_ROW_WEIGHT;

    let raw = nnls(&a, &b);
    let weights = project_to_simplex(raw.as_slice());

    let (mut sup_h, mut sup_dh, mut sup) = (0.0f64, 0.0f64, 0.0f64);
    for &t in &nodes {
        let (h, dh) = d.eval(t);
        let (fh, fdh) = rates
            .iter()
            .zip(&weights)
            .fold((0.0, 0.0), |(s, ds), (rho, w)| {
                let e = w * (-rho * t).exp();
                (s + e, ds - rho * e)
            });
        let (eh, edh) = ((h - fh).abs(), (dh - fdh).abs());
        sup_h = sup_h.max(eh);
        sup_dh = sup_dh.max(edh);
        sup = sup.max(eh + edh);
    }
    if let Some(ceiling) = ceiling {
        if sup > ceiling {
            return Err(Error::FitTooCoarse {
                sup_error: sup,
                ceiling,
            });
        }
    }

    let terms: Vec<MixtureTerm> = rates
        .iter()
        .zip(&weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(&rate, &weight)| MixtureTerm { weight, rate })
        .collect();
    let discount = DiscountSpec::ExponentialMixture(terms);
    discount.validate()?;

    Ok(MixtureFit {
        rates: rates.to_vec(),
        weights,
        sup_error_h: sup_h,
        sup_error_dh: sup_dh,
        sup_error: sup,
        discount,
    })
}

/// Lawson-Hanson active-set solver for `min |Ax - b|_2` subject to `x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.norm() * (a.nrows().max(n) as f64);

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(idx.iter());
        let z = sub
            .svd(true, true)
            .solve(b, f64::EPSILON)
            .expect("SVD computed with both factors");
        let mut full = DVector::<f64>::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = z[k];
        }
        full
    };

    for _ in 0..3 * n + 10 {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate.filter(|&j| grad[j] > tol) else {
            break;
        };
        passive[j] = true;

        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            // step back towards x until the first passive entry hits zero
            let alpha = (0..n)
                .filter(|&j| passive[j] && z[j] <= 0.0)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (&z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if passive.iter().all(|p| !p) {
                break;
            }
        }
    }
    x
}

/// Euclidean projection onto `{w : w >= 0, sum(w) = 1}`.
pub(crate) fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        assert_eq!(project_to_simplex(&[0.3, 0.7]), vec![0.3, 0.7]);
        let w = project_to_simplex(&[2.0, 0.0]);
        assert_eq!(w, vec![1.0, 0.0]);
        let w = project_to_simplex(&[0.5, 0.5, 0.5]);
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nnls_clamps_negative_coefficients() {
        // unconstrained solution is (1, -1); constrained optimum has x2 = 0
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let x = nnls(&a, &b);
        assert!(x[1] == 0.0);
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_spacing() {
        let r = log_spaced_rates(3, 0.01, 1.0);
        assert!((r[1] - 0.1).abs() < 1e-15);
        assert_eq!(log_spaced_rates(1, 0.2, 5.0), vec![0.2]);
    }
}
