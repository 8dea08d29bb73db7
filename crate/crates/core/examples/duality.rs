//! Build the dual value function of the terminal-wealth problem and check it
//! against the primal one.

use merton_equilibrium::dual::{dual_from_primal, dual_pde_residual, primal_dual_roundtrip};
use merton_equilibrium::lambda::solve_no_consumption;
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};

fn main() -> merton_equilibrium::Result<()> {
    let m = MarketParams::new(0.05, 0.12, 0.2)?;
    let d = DiscountSpec::hyperbolic(1.0, 1.0)?;
    let g = TimeGrid::new(1.0, 1000)?;
    for p in [-1.0, 0.5] {
        let u = CrraUtility::new(p)?;
        let sol = solve_no_consumption(&m, &u, &d, &g)?;
        let dv = dual_from_primal(&sol, &u)?;
        let points: Vec<(f64, f64)> = [0.0, 0.5, 0.9]
            .iter()
            .flat_map(|&t| [0.1, 1.0, 10.0].map(|x| (t, x)))
            .collect();
        let rt = primal_dual_roundtrip(&dv, &u, &points)?;
        println!(
            "p={p}: w(0,1)={:.6} dual pde {:.2e} roundtrip {:.2e} envelope {:.2e}",
            dv.value(0.0, 1.0)?,
            dual_pde_residual(&dv, &m, &d)?,
            rt.max_error(),
            rt.envelope,
        );
    }
    Ok(())
}
