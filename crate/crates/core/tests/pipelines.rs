use approx::assert_abs_diff_eq;
use nalgebra::DVector;

use scendec::config::{load_mv, load_qp, load_utility};
use scendec::online_qp::{assemble_compact, scenario_optimum, QpAdapter};
use scendec::portfolio::{
    lambda_search, mv_analytical_policy, wealth_statistics, MvsSpec, UtilityAdapter,
};
use scendec::{
    fixtures, pha_solve, pha_solve_with, Initialization, MinimizerSettings, PhaConfig, PhaOptions,
};

#[test]
fn single_scenario_qp_returns_its_optimum() {
    let run = load_qp(fixtures::EXAMPLE_QP_DETERMINISTIC).unwrap();
    let tree = run.problem.tree().unwrap();
    let compact = assemble_compact(&run.problem).unwrap();
    let expected = scenario_optimum(&compact, &tree.scenario(0).realization).unwrap();
    let res = pha_solve(&tree, &QpAdapter::new(compact, &tree), &run.pha).unwrap();
    assert!(res.converged);
    assert_abs_diff_eq!(res.u_hat.scenario(0).clone(), expected, epsilon = 1e-10);
}

#[test]
fn thread_count_does_not_change_the_result() {
    let run = load_qp(fixtures::EXAMPLE_QP).unwrap();
    let tree = run.problem.tree().unwrap();
    let adapter = QpAdapter::new(assemble_compact(&run.problem).unwrap(), &tree);
    let serial = PhaOptions {
        threads: Some(1),
        ..Default::default()
    };
    let parallel = PhaOptions {
        threads: Some(4),
        ..Default::default()
    };
    let a = pha_solve_with(&tree, &adapter, &run.pha, serial).unwrap();
    let b = pha_solve_with(&tree, &adapter, &run.pha, parallel).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.u_hat.vectors(), b.u_hat.vectors());
    assert_eq!(a.w.vectors(), b.w.vectors());
}

#[test]
fn flat_market_holds_nothing() {
    let run = load_utility(fixtures::EXAMPLE_UTILITY_FLAT).unwrap();
    let tree = run.market.tree().unwrap();
    let adapter = UtilityAdapter::new(
        &run.market,
        &tree,
        run.utility,
        &run.smoothing,
        MinimizerSettings::default(),
    )
    .unwrap();
    let options = PhaOptions {
        init: Initialization::Zero,
        ..Default::default()
    };
    let res = pha_solve_with(&tree, &adapter, &run.pha, options).unwrap();
    assert!(res.converged);
    for u in res.u_hat.vectors() {
        assert_abs_diff_eq!(u.clone(), DVector::zeros(u.len()), epsilon = 1e-8);
    }
}

#[test]
fn unsmoothed_search_recovers_the_mean_variance_policy() {
    let run = load_mv(fixtures::EXAMPLE_MV).unwrap();
    let tree = run.market.tree().unwrap();
    let spec = MvsSpec { w: 1.0, gamma: 0.0 };
    let config = PhaConfig {
        epsilon: 1e-12,
        ..run.pha
    };
    let search = lambda_search(&tree, &run.market, &spec, &config, None, None).unwrap();
    assert!(search.converged);
    let (_, analytic) = mv_analytical_policy(&run.market, spec.w)
        .unwrap()
        .evaluate(&run.market, &tree)
        .unwrap();
    let got = wealth_statistics(&tree, &search.trajectories).unwrap();
    let want = wealth_statistics(&tree, &analytic).unwrap();
    for t in 1..=3 {
        assert_abs_diff_eq!(got[t].mean, want[t].mean, epsilon = 1e-4);
        assert_abs_diff_eq!(got[t].variance, want[t].variance, epsilon = 1e-4);
    }
    assert_abs_diff_eq!(
        search.lambda_star,
        1.0 + 2.0 * spec.w * got[3].mean,
        epsilon = 1e-4
    );
}
