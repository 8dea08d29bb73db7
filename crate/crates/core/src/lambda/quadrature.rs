//! Grid quadrature, finite differences and a backward RK4 stepper.

use crate::error::{Error, Result};
use crate::model::TimeGrid;

/// Running trapezoid integral, starting from zero at the first node.
pub(crate) fn cumulative_trapezoid(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Second-order central differences; one-sided second-order at the ends.
pub(crate) fn central_difference(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "need at least three nodes");
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);
    out
}

/// Fourth-order five-point derivative at an interior node (`2 <= i <= n-3`).
pub(crate) fn five_point_derivative(values: &[f64], i: usize, dx: f64) -> f64 {
    (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) / (12.0 * dx)
}

/// Integrates `y' = f(t, y)` backward from `y(T) = terminal` with classical
/// RK4 on the grid. Returns the state at every node, index-aligned with the
/// grid. `admissible` is checked on every stage; a rejected state aborts with
/// [`Error::StepFailure`].
pub(crate) fn rk4_backward<F, A>(
    grid: &TimeGrid,
    terminal: &[f64],
    mut f: F,
    admissible: A,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    A: Fn(&[f64]) -> bool,
{
    let n = grid.n_steps();
    let dim = terminal.len();
    let h = -grid.step();
    let mut states = vec![Vec::new(); n + 1];
    states[n] = terminal.to_vec();

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let reject = |t: f64, y: &[f64]| -> Result<()> {
        if y.iter().all(|v| v.is_finite()) && admissible(y) {
            Ok(())
        } else {
            Err(Error::StepFailure {
                t,
                reason: "state left the admissible region; refine the grid".into(),
            })
        }
    };

    for i in (1..=n).rev() {
        let t = grid.node(i);
        let y = &states[i];
        f(t, y, &mut k1);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        reject(t + 0.5 * h, &tmp)?;
        f(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        reject(t + 0.5 * h, &tmp)?;
        f(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        reject(t + h, &tmp)?;
        f(t + h, &tmp, &mut k4);
        let next: Vec<f64> = (0..dim)
            .map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        reject(grid.node(i - 1), &next)?;
        states[i - 1] = next;
    }
    Ok(states)
}
