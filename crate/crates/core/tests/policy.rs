use merton_equilibrium::lambda::{
    merton_exponential, picard_solve_ie, solve_equilibrium, LambdaSolution, PicardOptions,
};
use merton_equilibrium::model::{CrraUtility, DiscountSpec, MarketParams, TimeGrid};
use merton_equilibrium::policy::{
    equilibrium_policy, inconsistency_report, inconsistency_report_with, merton_fraction,
    naive_consumption, precommitment_hjb_residual, solve_precommitment, InconsistencyReport,
    PrecommitmentPolicy,
};
use merton_equilibrium::sim::{welfare_comparison, SimConfig};

fn market() -> MarketParams {
    MarketParams::from_excess_return(0.05, 0.07, 0.2).unwrap()
}

fn half() -> CrraUtility {
    CrraUtility::new(0.5).unwrap()
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn stock_fraction_and_terminal_consumption() {
    let m = market();
    let u = half();
    assert!((merton_fraction(&m, &u) - 3.5).abs() < 1e-15);
    let g = TimeGrid::new(1.0, 100).unwrap();
    let sol = merton_exponential(&m, &u, 0.1, &g).unwrap();
    let pol = equilibrium_policy(&sol, &m, &u).unwrap();
    assert_eq!(pol.stock_fraction(), merton_fraction(&m, &u));
    assert!((pol.stock_fraction() - 3.5).abs() < 1e-15);
    assert_eq!(*pol.consumption_rate().last().unwrap(), 1.0);
    assert!(pol.consumption_rate().iter().all(|c| *c > 0.0));
}

#[test]
fn exponential_consumption_matches_merton_formula() {
    let m = market();
    for (p, rho) in [(0.5, 0.1), (-1.0, 0.03), (0.3, 0.0)] {
        let u = CrraUtility::new(p).unwrap();
        let g = TimeGrid::new(2.0, 400).unwrap();
        let sol = solve_equilibrium(
            &m,
            &u,
            &DiscountSpec::exponential(rho).unwrap(),
            &g,
            &PicardOptions::default(),
        )
        .unwrap();
        let pol = equilibrium_policy(&sol, &m, &u).unwrap();
        let k = p * (0.05 + 0.07f64.powi(2) / (2.0 * (1.0 - p) * 0.04));
        let a = (rho - k) / (1.0 - p);
        for (t, c) in g.nodes().iter().zip(pol.consumption_rate()) {
            let want = a / (1.0 - (1.0 - a) * (-a * (2.0 - t)).exp());
            assert!((c - want).abs() < 1e-8 * want, "p={p} t={t}: {c} vs {want}");
        }
    }
}

#[test]
fn exponential_discounting_is_time_consistent() {
    let m = market();
    let u = half();
    let rho = 0.1;
    let d = DiscountSpec::exponential(rho).unwrap();
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let eq = picard_solve_ie(&m, &u, &d, &g, &PicardOptions::default()).unwrap();
    let c_eq = equilibrium_policy(&eq, &m, &u)
        .unwrap()
        .consumption_rate()
        .to_vec();

    for t0 in [0.0, 0.25, 0.7] {
        let pre = solve_precommitment(t0, &m, &u, &d, &g).unwrap();
        assert_eq!(pre.stock_fraction, merton_fraction(&m, &u));
        let on_window: Vec<f64> = pre
            .lambda
            .grid()
            .nodes()
            .iter()
            .map(|s| eq.value_at(*s).powf(-2.0))
            .collect();
        assert!(sup_gap(&pre.consumption_rate, &on_window) < 1e-5);
    }
    let naive = naive_consumption(&m, &u, &d, &g).unwrap();
    assert!(sup_gap(&naive, &c_eq) < 1e-5);

    let report = inconsistency_report_with(&eq, &m, &u, &d, &[0.0, 0.3, 0.6, 0.9]).unwrap();
    assert!(report.max_gap_naive() <= 1e-5);
    assert!(report.max_gap_equilibrium() <= 1e-5);
}

#[test]
fn precommitment_solves_the_full_hjb() {
    let m = market();
    let u = half();
    let g = TimeGrid::new(1.0, 1000).unwrap();
    for d in [
        DiscountSpec::hyperbolic(1.0, 1.0).unwrap(),
        DiscountSpec::exponential(0.1).unwrap(),
        DiscountSpec::mixture(&[(0.6, 0.05), (0.4, 1.5)]).unwrap(),
    ] {
        for t0 in [0.0, 0.4] {
            let pre = solve_precommitment(t0, &m, &u, &d, &g).unwrap();
            assert_eq!(*pre.lambda.values().last().unwrap(), 1.0);
            let res = precommitment_hjb_residual(&pre, &m, &u, &d, 50, 1).unwrap();
            assert!(res <= 1e-8, "{} t0={t0}: {res:e}", d.label());
        }
    }
}

#[test]
fn hjb_residual_detects_a_wrong_lambda() {
    let m = market();
    let u = half();
    let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
    let g = TimeGrid::new(1.0, 500).unwrap();
    let pre = solve_precommitment(0.0, &m, &u, &d, &g).unwrap();
    let bad = PrecommitmentPolicy {
        lambda: pre.lambda.scaled(1.01).unwrap(),
        ..pre
    };
    assert!(precommitment_hjb_residual(&bad, &m, &u, &d, 50, 1).unwrap() > 1e-4);
}

#[test]
fn vanishing_horizon_precommitment() {
    let m = market();
    let u = half();
    let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
    let g = TimeGrid::new(1.0, 100).unwrap();
    let pre = solve_precommitment(1.0 - 1e-6, &m, &u, &d, &g).unwrap();
    assert!(pre.lambda.values().iter().all(|l| (l - 1.0).abs() < 1e-5));
    assert!(solve_precommitment(1.0, &m, &u, &d, &g).is_err());
    assert!(solve_precommitment(-0.1, &m, &u, &d, &g).is_err());
}

#[test]
fn hyperbolic_plans_are_revised() {
    let m = market();
    let u = half();
    let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let early = solve_precommitment(0.0, &m, &u, &d, &g).unwrap();
    let late = solve_precommitment(0.5, &m, &u, &d, &g).unwrap();
    let gap = (early.consumption_at(0.5, &u) - late.consumption_rate[0]).abs();
    assert!(gap > 1e-3, "gap {gap:e}");

    let report = inconsistency_report(&m, &u, &d, &g, &[0.1, 0.5, 0.9]).unwrap();
    assert!(report.max_gap_naive() > 10.0 * PicardOptions::default().tol);
    assert_eq!(report.rows.len(), 3);
    assert!((report.rows[1].gap_naive - gap).abs() < 1e-12);
}

#[test]
fn empty_and_invalid_probe_lists() {
    let m = market();
    let u = half();
    let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let report = inconsistency_report(&m, &u, &d, &g, &[]).unwrap();
    assert!(report.rows.is_empty());
    assert_eq!(
        report.to_csv(),
        format!("{}\n", InconsistencyReport::HEADER.join(","))
    );
    assert!(inconsistency_report(&m, &u, &d, &g, &[1.0]).is_err());
}

#[test]
fn consumption_path_has_no_jumps() {
    let m = market();
    let u = half();
    let d = DiscountSpec::hyperbolic(2.0, 0.5).unwrap();
    let g = TimeGrid::new(1.0, 400).unwrap();
    let sol: LambdaSolution = solve_equilibrium(&m, &u, &d, &g, &PicardOptions::default()).unwrap();
    let pol = equilibrium_policy(&sol, &m, &u).unwrap();
    let p = u.p();
    let max_dl = sol.derivative().iter().map(|x| x.abs()).fold(0.0, f64::max);
    let max_pow = sol
        .values()
        .iter()
        .map(|l| l.powf((2.0 - p) / (p - 1.0)))
        .fold(0.0, f64::max);
    let bound = 10.0 * g.step() * max_dl * (1.0 / (p - 1.0)).abs() * max_pow;
    let c = pol.consumption_rate();
    for w in c.windows(2) {
        assert!((w[1] - w[0]).abs() <= bound);
    }
}

#[test]
fn welfare_estimates_share_randomness() {
    let m = market();
    let u = half();
    let g = TimeGrid::new(1.0, 200).unwrap();

    // exponential: all three schedules coincide up to solver error
    let d = DiscountSpec::exponential(0.1).unwrap();
    let eq = solve_equilibrium(&m, &u, &d, &g, &PicardOptions::default()).unwrap();
    let cfg = SimConfig::new(4000, 3, g, 1.0).unwrap();
    let w = welfare_comparison(&eq, &cfg, &m, &u, &d).unwrap();
    assert!((w.equilibrium.j_estimate - w.precommitment.j_estimate).abs() < 1e-5);
    assert!((w.equilibrium.j_estimate - w.naive.j_estimate).abs() < 1e-5);

    let d = DiscountSpec::hyperbolic(1.0, 1.0).unwrap();
    let eq = solve_equilibrium(&m, &u, &d, &g, &PicardOptions::default()).unwrap();
    let w = welfare_comparison(&eq, &cfg, &m, &u, &d).unwrap();
    assert!(w.equilibrium.j_std_error > 0.0);
    assert_ne!(w.equilibrium.j_estimate, w.precommitment.j_estimate);
}
