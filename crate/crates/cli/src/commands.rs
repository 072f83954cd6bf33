use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use serde::Serialize;

use scendec::config::{load_mv, load_qp, load_utility, OutputSection};
use scendec::online_qp::{assemble_compact, lq_dp_solve, qp_gradient, OnlineQpProblem, QpAdapter};
use scendec::portfolio::{
    bankruptcy_rate, default_benchmarks, lambda_search, mv_analytical_policy, wealth_statistics,
    wealth_trajectories, BankruptcyReport, StageStatistics, UtilityAdapter,
};
use scendec::{
    pha_solve_with, ControlEnsemble, Initialization, MinimizerSettings, MultiplierEnsemble,
    PhaConfig, PhaOptions, PhaResult, ScenarioTree,
};

use crate::output::{controls_table, fixed, iterations_table, sci, Artifacts, Table};
use crate::{read_input, Cli, CliError, Command, RunArgs};

/// Largest |PHA − recursion| control gap that check-lq accepts.
const LQ_TOLERANCE: f64 = 1e-6;
/// check-lq stopping threshold unless --epsilon is given; the squared-step
/// metric must sit far below the squared gap tolerance.
const LQ_EPSILON: f64 = 1e-16;

#[derive(Serialize)]
struct PhaRecord {
    alpha: f64,
    epsilon: f64,
    max_iterations: usize,
    init: &'static str,
}

#[derive(Serialize)]
struct LambdaRecord {
    min: f64,
    max: f64,
    theta: f64,
    grid_points: usize,
    fitted_vertex: Option<f64>,
    star: f64,
    objective_at_star: f64,
}

/// The run record written as manifest.json. No clock or host data, so
/// repeated runs give identical files.
#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    input: String,
    version: &'static str,
    pha: PhaRecord,
    jobs: Option<u64>,
    /// Scenario solves are gathered in scenario order, so the thread count
    /// never changes the output.
    results_depend_on_jobs: bool,
    scenarios: usize,
    horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
    converged: bool,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<LambdaRecord>,
    summary: BTreeMap<&'static str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<BTreeMap<&'static str, f64>>,
    artifacts: Vec<String>,
}

impl Manifest {
    fn new(
        command: &'static str,
        args: &RunArgs,
        pha: &PhaConfig,
        init: Initialization,
        tree: &ScenarioTree,
    ) -> Self {
        Manifest {
            command,
            input: args.input.clone(),
            version: env!("CARGO_PKG_VERSION"),
            pha: PhaRecord {
                alpha: pha.alpha,
                epsilon: pha.epsilon,
                max_iterations: pha.max_iterations,
                init: match init {
                    Initialization::ScenarioOptimum => "scenario-optimum",
                    Initialization::Zero => "zero",
                },
            },
            jobs: args.jobs,
            results_depend_on_jobs: false,
            scenarios: tree.num_scenarios(),
            horizon: tree.horizon(),
            gamma: None,
            w: None,
            converged: false,
            iterations: 0,
            lambda: None,
            summary: BTreeMap::new(),
            diagnostics: None,
            artifacts: Vec::new(),
        }
    }

    fn finish(mut self, mut artifacts: Artifacts) -> Result<(), CliError> {
        artifacts.written.push("manifest.json".into());
        self.artifacts = artifacts.written.clone();
        artifacts.written.pop();
        artifacts.json("manifest.json", &self)
    }
}

/// What a finished run reports on stdout.
#[derive(Debug)]
pub struct Report {
    pub outdir: PathBuf,
    pub lines: Vec<String>,
}

/// Runs one command. Artifacts are written even when the solver stops
/// without converging; that case is returned as `CliError::NotConverged`.
pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    let args = cli.command.args();
    let text = read_input(&args.input)?;
    let reject = |flag: &str, given: bool| -> Result<(), CliError> {
        if given {
            return Err(CliError::Config(format!(
                "--{flag} does not apply to {}",
                cli.command.name()
            )));
        }
        Ok(())
    };
    match &cli.command {
        Command::RunQp(_) | Command::CheckLq(_) => {
            reject("theta", args.theta.is_some())?;
            reject("gamma", args.gamma.is_some())?;
            reject("w", args.w.is_some())?;
            let run = load_qp(&text)?;
            let outdir = outdir(args, &run.output)?;
            let pha = overrides(args, run.pha)?;
            if matches!(cli.command, Command::CheckLq(_)) {
                let mut pha = pha;
                if args.epsilon.is_none() {
                    pha.epsilon = pha.epsilon.min(LQ_EPSILON);
                }
                check_lq(args, run.problem, pha, outdir)
            } else {
                run_qp(args, run.problem, pha, outdir)
            }
        }
        Command::RunUtility(_) => {
            reject("theta", args.theta.is_some())?;
            reject("w", args.w.is_some())?;
            run_utility(args, &text)
        }
        Command::RunMv(_) => run_mv(args, &text),
    }
}

fn outdir(args: &RunArgs, output: &OutputSection) -> Result<PathBuf, CliError> {
    args.outdir
        .clone()
        .or_else(|| output.directory.clone())
        .ok_or_else(|| {
            CliError::Config(
                "no result directory: pass --outdir or set output.directory in the problem file"
                    .into(),
            )
        })
}

fn overrides(args: &RunArgs, mut pha: PhaConfig) -> Result<PhaConfig, CliError> {
    if let Some(a) = args.alpha {
        pha.alpha = a;
    }
    if let Some(e) = args.epsilon {
        pha.epsilon = e;
    }
    if let Some(k) = args.max_iter {
        pha.max_iterations = usize::try_from(k)
            .map_err(|_| CliError::Config(format!("--max-iter {k} is too large")))?;
    }
    pha.validate()?;
    Ok(pha)
}

fn options(args: &RunArgs, init: Initialization) -> PhaOptions {
    PhaOptions {
        init,
        threads: args.jobs.map(|j| j as usize),
        ..Default::default()
    }
}

fn max_abs(e: &ControlEnsemble) -> f64 {
    e.vectors().iter().map(|v| v.amax()).fold(0.0, f64::max)
}

fn pha_diagnostics(
    tree: &ScenarioTree,
    res: &PhaResult,
) -> Result<BTreeMap<&'static str, f64>, CliError> {
    let mut d = BTreeMap::new();
    d.insert(
        "nonanticipativity_gap",
        res.u_hat.nonanticipativity_gap(tree)?,
    );
    // the weighted bundle mean of the multipliers stays at zero
    d.insert("multiplier_bundle_mean", max_abs(&res.w.aggregate(tree)?));
    if let Some(last) = res.history.last() {
        d.insert("final_metric", last.metric);
    }
    Ok(d)
}

fn not_converged(what: &str, iterations: usize) -> CliError {
    CliError::NotConverged(format!(
        "{what} did not converge within {iterations} iterations"
    ))
}

fn run_qp(
    args: &RunArgs,
    problem: OnlineQpProblem,
    pha: PhaConfig,
    outdir: PathBuf,
) -> Result<Report, CliError> {
    let tree = problem.tree()?;
    let adapter = QpAdapter::new(assemble_compact(&problem)?, &tree);
    let init = Initialization::ScenarioOptimum;
    let mut opts = options(args, init);
    if args.diagnostics && problem.is_stage_separable() {
        opts.reference = Some(lq_reference(&problem, &tree)?);
    }
    let res = pha_solve_with(&tree, &adapter, &pha, opts)?;

    let mut out = Artifacts::create(&outdir)?;
    out.csv("controls.csv", &controls_table(&tree, &res.u_hat, 6))?;
    out.csv("controls_view.csv", &controls_table(&tree, &res.u_hat, 2))?;
    out.csv("iterations.csv", &iterations_table(&res.history))?;

    let mut manifest = Manifest::new("run-qp", args, &pha, init, &tree);
    manifest.converged = res.converged;
    manifest.iterations = res.iterations;
    if args.diagnostics {
        manifest.diagnostics = Some(pha_diagnostics(&tree, &res)?);
    }
    manifest.finish(out)?;

    let first: Vec<String> = res.u_hat.stage(0, 0).iter().map(|v| fixed(*v, 4)).collect();
    let lines = vec![
        format!(
            "{} scenarios, {} iterations, converged: {}",
            tree.num_scenarios(),
            res.iterations,
            res.converged
        ),
        format!("first-stage control: ({})", first.join(", ")),
    ];
    if !res.converged {
        return Err(not_converged("progressive hedging", res.iterations));
    }
    Ok(Report { outdir, lines })
}

/// Recursion controls along every path and the matching multipliers −∇J_i.
fn lq_reference(
    problem: &OnlineQpProblem,
    tree: &ScenarioTree,
) -> Result<(ControlEnsemble, MultiplierEnsemble), CliError> {
    let compact = assemble_compact(problem)?;
    let u_star = lq_dp_solve(problem)?.evaluate(problem, tree)?;
    let w_star = tree
        .scenarios()
        .iter()
        .zip(u_star.vectors())
        .map(|(s, u)| qp_gradient(&compact, &s.realization, u).map(|g| -g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        u_star,
        ControlEnsemble::new(problem.n, problem.horizon, w_star)?,
    ))
}

fn check_lq(
    args: &RunArgs,
    problem: OnlineQpProblem,
    pha: PhaConfig,
    outdir: PathBuf,
) -> Result<Report, CliError> {
    let separable = problem.is_stage_separable();
    let problem = if separable {
        problem
    } else {
        warn!("dropping the cross-stage blocks of Q and R for the comparison");
        problem.stage_separable_part().validated()?
    };
    let tree = problem.tree()?;
    let (u_star, w_star) = lq_reference(&problem, &tree)?;
    let adapter = QpAdapter::new(assemble_compact(&problem)?, &tree);
    let init = Initialization::ScenarioOptimum;
    let opts = PhaOptions {
        reference: Some((u_star.clone(), w_star)),
        ..options(args, init)
    };
    let res = pha_solve_with(&tree, &adapter, &pha, opts)?;
    let gap = res
        .u_hat
        .vectors()
        .iter()
        .zip(u_star.vectors())
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let rises = res
        .history
        .iter()
        .scan(res.initial_distance.unwrap_or(f64::INFINITY), |prev, h| {
            let d = h.distance.unwrap_or(0.0);
            let rose = d > *prev * (1.0 + 1e-9) + 1e-15;
            *prev = d;
            Some(rose)
        })
        .filter(|r| *r)
        .count();

    let mut out = Artifacts::create(&outdir)?;
    out.csv("controls.csv", &controls_table(&tree, &res.u_hat, 6))?;
    out.csv("reference_controls.csv", &controls_table(&tree, &u_star, 6))?;
    out.csv("iterations.csv", &iterations_table(&res.history))?;

    let mut manifest = Manifest::new("check-lq", args, &pha, init, &tree);
    manifest.converged = res.converged;
    manifest.iterations = res.iterations;
    manifest.summary.insert("max_control_gap", gap);
    manifest.summary.insert("tolerance", LQ_TOLERANCE);
    manifest.summary.insert("distance_increases", rises as f64);
    manifest.summary.insert(
        "cross_stage_blocks_dropped",
        if separable { 0.0 } else { 1.0 },
    );
    if args.diagnostics {
        manifest.diagnostics = Some(pha_diagnostics(&tree, &res)?);
    }
    manifest.finish(out)?;

    let lines = vec![
        format!(
            "{} scenarios, {} iterations, converged: {}",
            tree.num_scenarios(),
            res.iterations,
            res.converged
        ),
        format!("max |hedging - recursion| = {gap:.3e} (tolerance {LQ_TOLERANCE:e})"),
        format!("distance to the optimum increased {rises} times"),
    ];
    if !res.converged {
        return Err(not_converged("progressive hedging", res.iterations));
    }
    if gap > LQ_TOLERANCE {
        return Err(CliError::NotConverged(format!(
            "hedging and recursion differ by {gap:.3e}, above {LQ_TOLERANCE:e}"
        )));
    }
    Ok(Report { outdir, lines })
}

fn stats_columns(
    stats: &[StageStatistics],
    br: &BankruptcyReport,
    t: usize,
    decimals: [usize; 3],
) -> Vec<String> {
    let rate = if t == 0 { 0.0 } else { br.rates[t - 1] };
    vec![
        fixed(stats[t].mean, decimals[0]),
        fixed(stats[t].variance, decimals[0]),
        fixed(rate, decimals[1]),
        fixed(stats[t].worst, decimals[2]),
    ]
}

fn run_utility(args: &RunArgs, text: &str) -> Result<Report, CliError> {
    let mut run = load_utility(text)?;
    let outdir = outdir(args, &run.output)?;
    let pha = overrides(args, run.pha)?;
    if let Some(g) = args.gamma {
        run.smoothing.gamma = g;
        run.smoothing
            .validate(run.market.horizon(), run.market.assets())?;
    }
    let tree = run.market.tree()?;
    let adapter = UtilityAdapter::new(
        &run.market,
        &tree,
        run.utility,
        &run.smoothing,
        MinimizerSettings::default(),
    )?;
    // scenario problems without smoothing are unbounded whenever returns vary
    let init = Initialization::Zero;
    let res = pha_solve_with(&tree, &adapter, &pha, options(args, init))?;
    let trajectories = wealth_trajectories(&run.market, &tree, &res.u_hat)?;
    let benchmarks = run
        .benchmarks
        .clone()
        .unwrap_or_else(|| default_benchmarks(&run.market));
    let stats = wealth_statistics(&tree, &trajectories)?;
    let br = bankruptcy_rate(&tree, &trajectories, &benchmarks)?;

    let mut out = Artifacts::create(&outdir)?;
    out.csv("controls.csv", &controls_table(&tree, &res.u_hat, 6))?;
    out.csv("controls_view.csv", &controls_table(&tree, &res.u_hat, 2))?;
    let header = [
        "stage",
        "benchmark",
        "mean",
        "variance",
        "bankruptcy_rate",
        "worst",
    ];
    let mut full = Table::new(header);
    let mut view = Table::new(header);
    for t in 0..=run.market.horizon() {
        let mut row = vec![t.to_string(), fixed(benchmarks[t], 6)];
        row.extend(stats_columns(&stats, &br, t, [6, 6, 6]));
        full.push(row);
        let mut row = vec![t.to_string(), fixed(benchmarks[t], 2)];
        row.extend(stats_columns(&stats, &br, t, [2, 2, 4]));
        view.push(row);
    }
    out.csv("stats.csv", &full)?;
    out.csv("stats_view.csv", &view)?;
    out.csv("iterations.csv", &iterations_table(&res.history))?;

    let t_ = run.market.horizon();
    let mut manifest = Manifest::new("run-utility", args, &pha, init, &tree);
    manifest.gamma = Some(run.smoothing.gamma);
    manifest.converged = res.converged;
    manifest.iterations = res.iterations;
    manifest
        .summary
        .insert("expected_final_wealth", stats[t_].mean);
    manifest
        .summary
        .insert("worst_final_wealth", stats[t_].worst);
    let exhausted = br.exhausted.iter().filter(|e| **e).count();
    manifest
        .summary
        .insert("stages_with_no_survivors", exhausted as f64);
    if args.diagnostics {
        manifest.diagnostics = Some(pha_diagnostics(&tree, &res)?);
    }
    manifest.finish(out)?;

    let first: Vec<String> = res.u_hat.stage(0, 0).iter().map(|v| fixed(*v, 2)).collect();
    let lines = vec![
        format!(
            "{} scenarios, {} iterations, converged: {}",
            tree.num_scenarios(),
            res.iterations,
            res.converged
        ),
        format!("first-stage allocation: ({})", first.join(", ")),
        format!("worst final wealth: {}", fixed(stats[t_].worst, 4)),
    ];
    if !res.converged {
        return Err(not_converged("progressive hedging", res.iterations));
    }
    Ok(Report { outdir, lines })
}

fn run_mv(args: &RunArgs, text: &str) -> Result<Report, CliError> {
    let mut run = load_mv(text)?;
    let outdir = outdir(args, &run.output)?;
    let pha = overrides(args, run.pha)?;
    if let Some(g) = args.gamma {
        run.spec.gamma = g;
    }
    if let Some(w) = args.w {
        run.spec.w = w;
    }
    run.spec.validate()?;
    let theta = args.theta.or(run.theta);
    let tree = run.market.tree()?;
    let t_ = run.market.horizon();
    let benchmarks = run.benchmarks.clone().unwrap_or_else(|| vec![0.0; t_ + 1]);

    let (_, mv_traj) =
        mv_analytical_policy(&run.market, run.spec.w)?.evaluate(&run.market, &tree)?;
    let mv_stats = wealth_statistics(&tree, &mv_traj)?;
    let mv_br = bankruptcy_rate(&tree, &mv_traj, &benchmarks)?;
    let jobs = args.jobs.map(|j| j as usize);
    let search = lambda_search(&tree, &run.market, &run.spec, &pha, theta, jobs)?;
    info!(
        "λ* = {} with Ũ = {}",
        search.lambda_star, search.tilde_u_star
    );
    let stats = wealth_statistics(&tree, &search.trajectories)?;
    let br = bankruptcy_rate(&tree, &search.trajectories, &benchmarks)?;

    let mut out = Artifacts::create(&outdir)?;
    out.csv("controls.csv", &controls_table(&tree, &search.u_hat, 6))?;
    out.csv(
        "controls_view.csv",
        &controls_table(&tree, &search.u_hat, 4),
    )?;
    let header = [
        "stage",
        "benchmark",
        "mvs_mean",
        "mvs_variance",
        "mvs_bankruptcy_rate",
        "mvs_worst",
        "mv_mean",
        "mv_variance",
        "mv_bankruptcy_rate",
        "mv_worst",
    ];
    let mut full = Table::new(header);
    let mut view = Table::new(header);
    for t in 0..=t_ {
        for (table, d) in [(&mut full, 6), (&mut view, 4)] {
            let mut row = vec![t.to_string(), fixed(benchmarks[t], d)];
            row.extend(stats_columns(&stats, &br, t, [d; 3]));
            row.extend(stats_columns(&mv_stats, &mv_br, t, [d; 3]));
            table.push(row);
        }
    }
    out.csv("stats.csv", &full)?;
    out.csv("stats_view.csv", &view)?;
    let mut grid = Table::new(["lambda", "objective", "iterations", "converged", "source"]);
    let fitted = search.fitted.iter().map(|p| (p, "vertex"));
    for (p, source) in search.grid.iter().map(|p| (p, "grid")).chain(fitted) {
        grid.push(vec![
            sci(p.lambda),
            sci(p.tilde_u),
            p.iterations.to_string(),
            p.converged.to_string(),
            source.to_string(),
        ]);
    }
    out.csv("lambda_grid.csv", &grid)?;
    out.csv("iterations.csv", &iterations_table(&search.history))?;

    let total: usize = search
        .grid
        .iter()
        .chain(search.fitted.iter())
        .map(|p| p.iterations)
        .sum();
    let mut manifest = Manifest::new("run-mv", args, &pha, Initialization::ScenarioOptimum, &tree);
    manifest.gamma = Some(run.spec.gamma);
    manifest.w = Some(run.spec.w);
    manifest.converged = search.converged;
    manifest.iterations = total;
    manifest.lambda = Some(LambdaRecord {
        min: search.lambda_min,
        max: search.lambda_max,
        theta: search.theta,
        grid_points: search.grid.len(),
        fitted_vertex: search.fitted.map(|p| p.lambda),
        star: search.lambda_star,
        objective_at_star: search.tilde_u_star,
    });
    manifest
        .summary
        .insert("mvs_expected_final_wealth", stats[t_].mean);
    manifest
        .summary
        .insert("mvs_final_variance", stats[t_].variance);
    manifest
        .summary
        .insert("mv_expected_final_wealth", mv_stats[t_].mean);
    manifest
        .summary
        .insert("mv_final_variance", mv_stats[t_].variance);
    // necessary condition at the optimum: λ* = 1 + 2w E[x_T]
    manifest.summary.insert(
        "lambda_residual",
        (search.lambda_star - 1.0 - 2.0 * run.spec.w * stats[t_].mean).abs(),
    );
    if args.diagnostics {
        let mut d = BTreeMap::new();
        d.insert(
            "nonanticipativity_gap",
            search.u_hat.nonanticipativity_gap(&tree)?,
        );
        d.insert(
            "multiplier_bundle_mean",
            max_abs(&search.w.aggregate(&tree)?),
        );
        manifest.diagnostics = Some(d);
    }
    manifest.finish(out)?;

    let lines = vec![
        format!(
            "{} scenarios, {} λ runs, {total} iterations in all, converged: {}",
            tree.num_scenarios(),
            search.grid.len() + usize::from(search.fitted.is_some()),
            search.converged
        ),
        format!(
            "λ* = {:.6} in [{:.6}, {:.6}]",
            search.lambda_star, search.lambda_min, search.lambda_max
        ),
        format!(
            "E[x_T]: {} smoothed, {} unsmoothed; Var(x_T): {} smoothed, {} unsmoothed",
            fixed(stats[t_].mean, 4),
            fixed(mv_stats[t_].mean, 4),
            fixed(stats[t_].variance, 4),
            fixed(mv_stats[t_].variance, 4)
        ),
    ];
    if !search.converged {
        return Err(CliError::NotConverged(
            "progressive hedging did not converge at every λ".into(),
        ));
    }
    Ok(Report { outdir, lines })
}
