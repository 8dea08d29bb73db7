//! Simulate the equilibrium policy and compare the Monte Carlo utility with
//! lambda(0) U(x0); then check a stock-fraction spike never helps.

use merton_equilibrium::lambda::{picard_iterate, PicardOptions};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use merton_equilibrium::policy::equilibrium_policy;
use merton_equilibrium::sim::{perturbation_test, verify_value_identity, SimConfig, Spike};

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let u = CrraUtility::new(0.5)?;
    let d = DiscountSpec::hyperbolic(1.0, 1.0)?;
    let g = TimeGrid::new(1.0, 500)?;
    let sol = picard_iterate(&m, &u, &d, &g, &PicardOptions::default())?.solution;
    let cfg = SimConfig::new(50_000, 2024, g, 1.0)?;

    let v = verify_value_identity(&sol, &cfg, &m, &u, &d, 0.0, 1.0)?;
    println!(
        "claimed {:.6}, simulated {:.6} +- {:.6} (z = {:.2})",
        v.claimed, v.estimate, v.std_error, v.z_score
    );

    let pol = equilibrium_policy(&sol, &m, &u)?;
    let spike = Spike {
        stock_fraction: pol.stock_fraction() + 1.0,
        consumption: None,
    };
    let report = perturbation_test(&pol, &cfg, &m, &u, &d, 0.2, &[0.2, 0.1, 0.05], spike)?;
    print!("{}", report.to_csv());
    Ok(())
}
