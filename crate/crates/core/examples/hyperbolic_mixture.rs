//! Approximate a hyperbolic discount by exponential mixtures of growing size
//! and watch lambda converge to the fixed-point solution.

use merton_equilibrium::lambda::{
    fit_exponential_mixture, log_spaced_rates, mixture_ode_solve, picard_iterate, PicardOptions,
};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let u = CrraUtility::new(0.5)?;
    let g = TimeGrid::new(1.0, 1000)?;
    let d = DiscountSpec::hyperbolic(1.0, 1.0)?;
    let reference = picard_iterate(&m, &u, &d, &g, &PicardOptions::default())?.solution;

    println!("{:>3} {:>12} {:>12}", "N", "fit error", "lambda gap");
    for n in [1, 2, 4, 8] {
        let fit = fit_exponential_mixture(&d, &log_spaced_rates(n, 0.01, 20.0), &g, None)?;
        let sol = mixture_ode_solve(&m, &u, &fit.discount, &g)?;
        let gap = sol
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{n:>3} {:>12.3e} {:>12.3e}", fit.sup_error, gap);
    }
    Ok(())
}
