//! How far a naive agent's plans drift under hyperbolic discounting, and
//! how the equilibrium differs from both.

use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use merton_equilibrium::policy::inconsistency_report;

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let u = CrraUtility::new(0.5)?;
    let g = TimeGrid::new(1.0, 1000)?;
    let probes = [0.0, 0.2, 0.4, 0.6, 0.8];
    for d in [
        DiscountSpec::exponential(0.1)?,
        DiscountSpec::hyperbolic(1.0, 1.0)?,
    ] {
        let report = inconsistency_report(&m, &u, &d, &g, &probes)?;
        println!("{}", d.label());
        print!("{}", report.to_csv());
        println!("max revision gap {:.3e}\n", report.max_gap_naive());
    }
    Ok(())
}
