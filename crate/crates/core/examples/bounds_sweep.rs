//! Check the equilibrium lambda stays inside its a priori bounds across
//! risk aversions and discount functions.

use merton_equilibrium::lambda::{a_priori_bounds, picard_iterate, PicardOptions};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let g = TimeGrid::new(1.0, 400)?;
    let discounts = [
        DiscountSpec::exponential(0.1)?,
        DiscountSpec::hyperbolic(1.0, 1.0)?,
        DiscountSpec::hyperbolic(4.0, 0.5)?,
        DiscountSpec::mixture(&[(0.5, 0.05), (0.5, 1.0)])?,
    ];
    println!(
        "{:<26} {:>5} {:>10} {:>10} {:>10} {:>10}",
        "discount", "p", "lower", "min", "max", "upper"
    );
    for d in &discounts {
        for p in [-2.0, -1.0, 0.3, 0.5, 0.8] {
            let u = CrraUtility::new(p)?;
            let sol = picard_iterate(&m, &u, d, &g, &PicardOptions::default())?.solution;
            let b = a_priori_bounds(&m, &u, d, &g);
            let lo = sol.values().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sol.values().iter().copied().fold(0.0, f64::max);
            let tag = if b.violations(&sol) == 0 {
                ""
            } else {
                "  VIOLATED"
            };
            println!(
                "{:<26} {p:>5} {:>10.5} {lo:>10.5} {hi:>10.5} {:>10.5}{tag}",
                d.label(),
                b.lower,
                b.upper
            );
        }
    }
    Ok(())
}
