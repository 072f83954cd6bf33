//! Progressive hedging over a scenario tree.
//!
//! Each iteration solves every scenario's augmented Lagrangian subproblem,
//! projects the results onto nonanticipative policies by bundle-wise
//! conditional expectation, and moves the multipliers by α times the
//! nonanticipativity gap.

use log::debug;
use nalgebra::{DVector, DVectorView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for PhaConfig {
    fn default() -> Self {
        PhaConfig {
            alpha: 1.0,
            epsilon: 1e-8,
            max_iterations: 10_000,
        }
    }
}

impl PhaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One stacked vector (v_0', …, v_{T-1}')' per scenario, in scenario order.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlEnsemble {
    n: usize,
    horizon: usize,
    vectors: Vec<DVector<f64>>,
}

/// Multipliers share the layout of controls.
pub type MultiplierEnsemble = ControlEnsemble;

impl ControlEnsemble {
    pub fn new(n: usize, horizon: usize, vectors: Vec<DVector<f64>>) -> Result<Self> {
        if n == 0 || horizon == 0 {
            return Err(Error::InvalidInput(
                "control dimension and horizon must be positive".into(),
            ));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != n * horizon) {
            return Err(Error::DimensionMismatch(format!(
                "stacked vector of length {} where {} = {n}×{horizon} was expected",
                v.len(),
                n * horizon
            )));
        }
        Ok(ControlEnsemble {
            n,
            horizon,
            vectors,
        })
    }

    pub fn zeros(n: usize, horizon: usize, scenarios: usize) -> Self {
        ControlEnsemble {
            n,
            horizon,
            vectors: vec![DVector::zeros(n * horizon); scenarios],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<DVector<f64>> {
        self.vectors
    }

    pub fn scenario(&self, i: usize) -> &DVector<f64> {
        &self.vectors[i]
    }

    pub fn stage(&self, i: usize, t: usize) -> DVectorView<'_, f64> {
        self.vectors[i].rows(t * self.n, self.n)
    }

    /// Per-stage controls of scenario `i`.
    pub fn stages_of(&self, i: usize) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .map(|t| self.stage(i, t).into_owned())
            .collect()
    }

    fn check_layout(&self, other: &ControlEnsemble) -> Result<()> {
        if self.n != other.n || self.horizon != other.horizon || self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "ensembles of shape ({}, {}, {}) and ({}, {}, {})",
                self.len(),
                self.n,
                self.horizon,
                other.len(),
                other.n,
                other.horizon
            )));
        }
        Ok(())
    }

    fn check_tree(&self, tree: &ScenarioTree) -> Result<()> {
        if self.len() != tree.num_scenarios() || self.horizon != tree.horizon() {
            return Err(Error::DimensionMismatch(format!(
                "ensemble has {} scenarios over {} stages, tree has {} over {}",
                self.len(),
                self.horizon,
                tree.num_scenarios(),
                tree.horizon()
            )));
        }
        Ok(())
    }

    /// Project onto nonanticipative policies, stage by stage.
    pub fn aggregate(&self, tree: &ScenarioTree) -> Result<ControlEnsemble> {
        self.check_tree(tree)?;
        let n = self.n;
        let mut out = ControlEnsemble::zeros(n, self.horizon, self.len());
        for t in 0..self.horizon {
            for members in tree.bundles(t) {
                let (mean, _) = tree.weighted_mean(members, |j| self.vectors[j].rows(t * n, n));
                for &i in members {
                    out.vectors[i].rows_mut(t * n, n).copy_from(&mean);
                }
            }
        }
        Ok(out)
    }

    /// Largest within-bundle spread of any stage control.
    pub fn nonanticipativity_gap(&self, tree: &ScenarioTree) -> Result<f64> {
        self.check_tree(tree)?;
        let mut gap = 0.0f64;
        for t in 0..self.horizon {
            for members in tree.bundles(t) {
                let first = self.stage(members[0], t);
                for &i in &members[1..] {
                    gap = gap.max((self.stage(i, t) - first).amax());
                }
            }
        }
        Ok(gap)
    }
}

/// Per-scenario solves for one problem family.
pub trait SubproblemAdapter: Sync {
    /// Control dimension n per stage.
    fn control_dim(&self) -> usize;

    /// Optimum of the scenario's deterministic problem.
    fn solve_scenario(&self, i: usize) -> Result<DVector<f64>>;

    /// argmin J_i(u) + u'w + (α/2)|u − û|². Must be exact for the
    /// convergence guarantee.
    fn solve_augmented(
        &self,
        i: usize,
        w: &DVector<f64>,
        u_hat: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Initialization {
    /// u^{i,0} is the scenario optimum.
    #[default]
    ScenarioOptimum,
    /// u^{i,0} = 0, for families whose scenario problems are unbounded.
    Zero,
}

#[derive(Clone, Debug, Default)]
pub struct PhaOptions {
    pub init: Initialization,
    /// Start from a previous implementable policy and its multipliers.
    pub warm_start: Option<(ControlEnsemble, MultiplierEnsemble)>,
    /// Known optimum and multipliers; the distance to it is logged.
    pub reference: Option<(ControlEnsemble, MultiplierEnsemble)>,
    /// Worker threads for the scenario solves; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaIteration {
    pub iteration: usize,
    pub metric: f64,
    pub distance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PhaResult {
    pub u_hat: ControlEnsemble,
    pub w: MultiplierEnsemble,
    pub iterations: usize,
    pub converged: bool,
    /// Distance to the reference before the first iteration.
    pub initial_distance: Option<f64>,
    pub history: Vec<PhaIteration>,
}

pub fn multiplier_update(
    w: &MultiplierEnsemble,
    u_new: &ControlEnsemble,
    u_hat_new: &ControlEnsemble,
    alpha: f64,
) -> Result<MultiplierEnsemble> {
    w.check_layout(u_new)?;
    w.check_layout(u_hat_new)?;
    let vectors = w
        .vectors
        .iter()
        .zip(&u_new.vectors)
        .zip(&u_hat_new.vectors)
        .map(|((w, u), uh)| w + (u - uh) * alpha)
        .collect();
    Ok(ControlEnsemble {
        n: w.n,
        horizon: w.horizon,
        vectors,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// Σ ρ_i (|Δû_i|² + |Δw_i|²/α²), summed in scenario order.
fn weighted_change(
    tree: &ScenarioTree,
    a: &ControlEnsemble,
    a_ref: &ControlEnsemble,
    b: &ControlEnsemble,
    b_ref: &ControlEnsemble,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    a.check_tree(tree)?;
    a.check_layout(a_ref)?;
    a.check_layout(b)?;
    a.check_layout(b_ref)?;
    let inv = 1.0 / (alpha * alpha);
    let mut total = 0.0;
    for (i, &rho) in tree.probabilities().iter().enumerate() {
        let du = (&a.vectors[i] - &a_ref.vectors[i]).norm_squared();
        let dw = (&b.vectors[i] - &b_ref.vectors[i]).norm_squared();
        total += rho * (du + inv * dw);
    }
    Ok(total)
}

pub fn stopping_metric(
    tree: &ScenarioTree,
    u_hat_new: &ControlEnsemble,
    u_hat_old: &ControlEnsemble,
    w_new: &MultiplierEnsemble,
    w_old: &MultiplierEnsemble,
    alpha: f64,
) -> Result<f64> {
    weighted_change(tree, u_hat_new, u_hat_old, w_new, w_old, alpha)
}

/// The quantity that progressive hedging never increases when a reference
/// optimum with its multipliers is known.
pub fn distance_to_reference(
    tree: &ScenarioTree,
    u_hat: &ControlEnsemble,
    w: &MultiplierEnsemble,
    u_ref: &ControlEnsemble,
    w_ref: &MultiplierEnsemble,
    alpha: f64,
) -> Result<f64> {
    weighted_change(tree, u_hat, u_ref, w, w_ref, alpha)
}

pub fn pha_solve<A: SubproblemAdapter + ?Sized>(
    tree: &ScenarioTree,
    adapter: &A,
    config: &PhaConfig,
) -> Result<PhaResult> {
    pha_solve_with(tree, adapter, config, PhaOptions::default())
}

/// Runs `f(i)` for every scenario, possibly in parallel, and returns the
/// results in scenario order. The first failing scenario is reported.
fn solve_all<F>(count: usize, f: F) -> Result<Vec<DVector<f64>>>
where
    F: Fn(usize) -> Result<DVector<f64>> + Sync,
{
    let results: Vec<Result<DVector<f64>>> = (0..count).into_par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(count);
    for (i, r) in results.into_iter().enumerate() {
        let v = r.map_err(|e| e.in_scenario(i))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("subproblem solution".into()).in_scenario(i));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn pha_solve_with<A: SubproblemAdapter + ?Sized>(
    tree: &ScenarioTree,
    adapter: &A,
    config: &PhaConfig,
    options: PhaOptions,
) -> Result<PhaResult> {
    config.validate()?;
    match options.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
            pool.install(|| run(tree, adapter, config, options))
        }
        None => run(tree, adapter, config, options),
    }
}

fn run<A: SubproblemAdapter + ?Sized>(
    tree: &ScenarioTree,
    adapter: &A,
    config: &PhaConfig,
    options: PhaOptions,
) -> Result<PhaResult> {
    let n = adapter.control_dim();
    let horizon = tree.horizon();
    let count = tree.num_scenarios();
    let alpha = config.alpha;

    // set when the scenario optima already agree within every bundle
    let mut implementable_start = false;
    let (mut u_hat, mut w) = match options.warm_start {
        Some((u_hat, w)) => {
            u_hat.check_tree(tree)?;
            u_hat.check_layout(&w)?;
            if u_hat.n() != n {
                return Err(Error::DimensionMismatch(
                    "warm start has the wrong control dimension".into(),
                ));
            }
            (u_hat, w)
        }
        None => {
            let u0 = match options.init {
                Initialization::ScenarioOptimum => ControlEnsemble::new(
                    n,
                    horizon,
                    solve_all(count, |i| adapter.solve_scenario(i))?,
                )?,
                Initialization::Zero => ControlEnsemble::zeros(n, horizon, count),
            };
            let u_hat = u0.aggregate(tree)?;
            let w = ControlEnsemble::zeros(n, horizon, count);
            if options.init == Initialization::ScenarioOptimum {
                let gap = distance_to_reference(tree, &u0, &w, &u_hat, &w, alpha)?;
                implementable_start = gap <= config.epsilon;
            }
            (u_hat, w)
        }
    };

    let reference = options.reference;
    if let Some((u_ref, w_ref)) = &reference {
        u_ref.check_layout(&u_hat)?;
        w_ref.check_layout(&w)?;
    }
    let distance = |u_hat: &ControlEnsemble, w: &ControlEnsemble| -> Result<Option<f64>> {
        reference
            .as_ref()
            .map(|(u_ref, w_ref)| distance_to_reference(tree, u_hat, w, u_ref, w_ref, alpha))
            .transpose()
    };
    let initial_distance = distance(&u_hat, &w)?;

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    if implementable_start {
        debug!("scenario optima are already nonanticipative");
        return Ok(PhaResult {
            u_hat,
            w,
            iterations: 0,
            converged: true,
            initial_distance,
            history: Vec::new(),
        });
    }
    for iteration in 1..=config.max_iterations {
        let solved = solve_all(count, |i| {
            adapter.solve_augmented(i, &w.vectors[i], &u_hat.vectors[i], alpha)
        })?;
        let u_new = ControlEnsemble::new(n, horizon, solved)?;
        let u_hat_new = u_new.aggregate(tree)?;
        let w_new = multiplier_update(&w, &u_new, &u_hat_new, alpha)?;
        let metric = stopping_metric(tree, &u_hat_new, &u_hat, &w_new, &w, alpha)?;
        if !metric.is_finite() {
            return Err(Error::NonFinite(format!(
                "stopping metric at iteration {iteration}"
            )));
        }
        if metric > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { iteration, metric });
        }
        u_hat = u_hat_new;
        w = w_new;
        let dist = distance(&u_hat, &w)?;
        history.push(PhaIteration {
            iteration,
            metric,
            distance: dist,
        });
        iterations = iteration;
        if metric <= config.epsilon {
            converged = true;
            break;
        }
    }
    debug!("progressive hedging stopped after {iterations} iterations (converged: {converged})");
    Ok(PhaResult {
        u_hat,
        w,
        iterations,
        converged,
        initial_distance,
        history,
    })
}
