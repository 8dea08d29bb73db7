//! With exponential discounting the fixed point, the one-term mixture ODE and
//! Merton's formula must give the same lambda.

use merton_equilibrium::lambda::{
    merton_exponential, mixture_ode_solve, picard_iterate, PicardOptions,
};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let g = TimeGrid::new(1.0, 1000)?;
    for p in [-1.0, 0.3, 0.5] {
        let u = CrraUtility::new(p)?;
        let d = DiscountSpec::exponential(0.1)?;
        let report = picard_iterate(&m, &u, &d, &g, &PicardOptions::default())?;
        let ode = mixture_ode_solve(&m, &u, &d, &g)?;
        let exact = merton_exponential(&m, &u, 0.1, &g)?;
        println!(
            "p={p:>4}: {} iterations, |picard-merton|={:.2e} |ode-merton|={:.2e}",
            report.iterations,
            sup_gap(report.solution.values(), exact.values()),
            sup_gap(ode.values(), exact.values()),
        );
    }
    Ok(())
}
