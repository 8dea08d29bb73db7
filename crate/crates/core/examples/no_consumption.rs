//! Terminal-wealth problem: lambda in closed form against the backward ODE,
//! for each kind of discount function.

use merton_equilibrium::dual::primal_pde_residual;
use merton_equilibrium::lambda::{no_consumption_ode, solve_no_consumption};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let u = CrraUtility::new(0.5)?;
    let g = TimeGrid::new(1.0, 1000)?;
    let discounts = [
        DiscountSpec::exponential(0.1)?,
        DiscountSpec::hyperbolic(1.0, 1.0)?,
        DiscountSpec::mixture(&[(0.3, 0.02), (0.7, 0.4)])?,
    ];
    println!(
        "{:<28} {:>12} {:>12} {:>12}",
        "discount", "lambda(0)", "ode gap", "pde resid"
    );
    for d in &discounts {
        let sol = solve_no_consumption(&m, &u, d, &g)?;
        let ode = no_consumption_ode(&m, &u, d, &g)?;
        let gap = ode
            .iter()
            .zip(sol.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let pde = primal_pde_residual(&sol, &m, &u, d)?;
        println!(
            "{:<28} {:>12.8} {:>12.3e} {:>12.3e}",
            d.label(),
            sol.initial(),
            gap,
            pde
        );
    }
    Ok(())
}
