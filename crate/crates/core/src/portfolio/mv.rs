//! Mean-variance selection with wealth smoothing, solved through a family of
//! auxiliary quadratic problems indexed by λ.

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::market::{wealth_response, wealth_trajectories, MarketModel};
use crate::convex_min::{minimize, MinimizerSettings, Quadratic};
use crate::error::{Error, Result};
use crate::online_qp::ShiftedFactors;
use crate::pha::{
    pha_solve_with, ControlEnsemble, MultiplierEnsemble, PhaConfig, PhaIteration, PhaOptions,
    SubproblemAdapter,
};
use crate::tree::{ScenarioTree, StageDistribution};

/// Objective E[x_T] − w Var(x_T) − γ E[Σ_{t=1}^T (x_t − x̄)²].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvsSpec {
    pub w: f64,
    pub gamma: f64,
}

impl MvsSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::InvalidInput(format!(
                "trade-off weight w = {} must be nonnegative",
                self.w
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothing weight {} must be nonnegative",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// K = E[PP']⁻¹ E[P] for one stage's excess returns.
pub fn mv_k(dist: &StageDistribution) -> Result<DVector<f64>> {
    let second = dist.second_moment();
    let mean = dist.mean();
    let lu = second.clone().lu();
    let k = lu
        .solve(&mean)
        .ok_or_else(|| Error::Singular("second moment of the excess returns".into()))?;
    let residual = (&second * &k - &mean).amax();
    if !k.iter().all(|v| v.is_finite()) || residual > 1e-10 * (1.0 + mean.amax()) {
        return Err(Error::Singular(format!(
            "second moment of the excess returns (residual {residual:e})"
        )));
    }
    Ok(k)
}

/// Optimal feedback of the unsmoothed problem,
/// u_t = −K_t r_t x_t + gain · Π_{τ=t+1}^{T−1} r_τ⁻¹ · K_t.
#[derive(Clone, Debug)]
pub struct MvPolicy {
    pub gains: Vec<DVector<f64>>,
    /// x_0 Π r + 1 / (2w Π(1 − E[P]'K)).
    pub offset: f64,
    riskless: Vec<f64>,
}

impl MvPolicy {
    pub fn control(&self, t: usize, x_t: f64) -> DVector<f64> {
        let discount: f64 = self.riskless[t + 1..].iter().map(|r| 1.0 / r).product();
        &self.gains[t] * (-self.riskless[t] * x_t + self.offset * discount)
    }

    /// Controls and wealth along every scenario.
    pub fn evaluate(
        &self,
        m: &MarketModel,
        tree: &ScenarioTree,
    ) -> Result<(ControlEnsemble, Vec<Vec<f64>>)> {
        let (t_, n) = (m.horizon(), m.assets());
        let mut controls = Vec::with_capacity(tree.num_scenarios());
        let mut trajectories = Vec::with_capacity(tree.num_scenarios());
        for s in tree.scenarios() {
            let mut u = DVector::zeros(n * t_);
            let mut x = vec![m.x0()];
            for t in 0..t_ {
                let ut = self.control(t, x[t]);
                x.push(self.riskless[t] * x[t] + m.excess_outcome(t, s).dot(&ut));
                u.rows_mut(t * n, n).copy_from(&ut);
            }
            controls.push(u);
            trajectories.push(x);
        }
        Ok((ControlEnsemble::new(n, t_, controls)?, trajectories))
    }
}

pub fn mv_analytical_policy(m: &MarketModel, w: f64) -> Result<MvPolicy> {
    if !(w > 0.0) {
        return Err(Error::InvalidInput(format!(
            "the mean-variance policy needs w > 0, got {w}"
        )));
    }
    let gains = m.excess().iter().map(mv_k).collect::<Result<Vec<_>>>()?;
    let denom: f64 = m
        .excess()
        .iter()
        .zip(&gains)
        .map(|(d, k)| 1.0 - d.mean().dot(k))
        .product();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Singular("Π(1 − E[P]'K) vanishes".into()));
    }
    let offset = m.x0() * m.growth(0, m.horizon()) + 1.0 / (2.0 * w * denom);
    Ok(MvPolicy {
        gains,
        offset,
        riskless: m.riskless().to_vec(),
    })
}

/// min x'Wx − λ x_T subject to x = P u + x_0 r, per scenario.
#[derive(Clone, Debug)]
pub struct AuxiliaryQp {
    pub weights: DMatrix<f64>,
    pub lambda: f64,
    /// Π_{τ<t} r_τ for t = 1..T.
    pub compounding: DVector<f64>,
    pub x0: f64,
}

impl AuxiliaryQp {
    pub fn horizon(&self) -> usize {
        self.compounding.len()
    }

    /// P^i: rows are stages 1..T, block (s, t) is (Π_{τ=t+1}^{s−1} r_τ) P_t'.
    pub fn return_matrix(&self, m: &MarketModel, tree: &ScenarioTree, i: usize) -> DMatrix<f64> {
        let (_, g) = wealth_response(m, tree.scenario(i));
        g.rows(1, self.horizon()).into_owned()
    }

    /// ½u'Hu + g'u form of one scenario's objective, dropping constants.
    fn quadratic(&self, p: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let pw = p.transpose() * &self.weights;
        let h = &pw * p * 2.0;
        let h = (&h + h.transpose()) * 0.5;
        let linear = &pw * &self.compounding * (2.0 * self.x0);
        let terminal = p.row(self.horizon() - 1).transpose();
        (h, linear, terminal)
    }

    pub fn objective(&self, p: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
        let x = p * u + &self.compounding * self.x0;
        x.dot(&(&self.weights * &x)) - self.lambda * x[self.horizon() - 1]
    }
}

pub fn build_auxiliary(m: &MarketModel, spec: &MvsSpec, lambda: f64) -> Result<AuxiliaryQp> {
    spec.validate()?;
    let t_ = m.horizon();
    let tf = t_ as f64;
    let mut weights = DMatrix::from_element(t_, t_, -spec.gamma / tf);
    for t in 0..t_ {
        weights[(t, t)] = spec.gamma - spec.gamma / tf;
    }
    weights[(t_ - 1, t_ - 1)] += spec.w;
    let min_eig = weights.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-10 {
        return Err(Error::InvalidInput(format!(
            "smoothing weight matrix has eigenvalue {min_eig:e}"
        )));
    }
    let compounding = DVector::from_fn(t_, |s, _| m.growth(0, s + 1));
    Ok(AuxiliaryQp {
        weights,
        lambda,
        compounding,
        x0: m.x0(),
    })
}

/// Closed-form −[2P'WP + αI]⁻¹[2x_0 P'Wr − λP'δ + w − αû].
pub fn aux_augmented_optimum(
    aux: &AuxiliaryQp,
    p: &DMatrix<f64>,
    w_mult: &DVector<f64>,
    u_hat: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if p.nrows() != aux.horizon() || w_mult.len() != p.ncols() || u_hat.len() != p.ncols() {
        return Err(Error::DimensionMismatch(
            "return matrix and control vectors disagree".into(),
        ));
    }
    let (mut h, linear, terminal) = aux.quadratic(p);
    for i in 0..h.nrows() {
        h[(i, i)] += alpha;
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("2P'WP + αI".into()))?;
    Ok(-chol.solve(&(linear - terminal * aux.lambda + w_mult - u_hat * alpha)))
}

struct AuxScenario {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    terminal: DVector<f64>,
    factors: ShiftedFactors,
}

/// Adapter for the auxiliary family. Factorizations depend on α only, so
/// they are reused as λ changes.
pub struct AuxAdapter {
    lambda: f64,
    n: usize,
    settings: MinimizerSettings,
    scenarios: Vec<AuxScenario>,
}

impl AuxAdapter {
    pub fn new(m: &MarketModel, tree: &ScenarioTree, aux: &AuxiliaryQp) -> Self {
        let scenarios = (0..tree.num_scenarios())
            .map(|i| {
                let (hessian, linear, terminal) = aux.quadratic(&aux.return_matrix(m, tree, i));
                AuxScenario {
                    hessian,
                    linear,
                    terminal,
                    factors: ShiftedFactors::default(),
                }
            })
            .collect();
        AuxAdapter {
            lambda: aux.lambda,
            n: m.assets(),
            settings: MinimizerSettings::default(),
            scenarios,
        }
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl SubproblemAdapter for AuxAdapter {
    fn control_dim(&self) -> usize {
        self.n
    }

    /// 2P'WP has rank at most T, so this always goes through the iterative
    /// minimizer, started at zero.
    fn solve_scenario(&self, i: usize) -> Result<DVector<f64>> {
        let s = &self.scenarios[i];
        let obj = Quadratic {
            h: s.hessian.clone(),
            g: &s.linear - &s.terminal * self.lambda,
        };
        Ok(minimize(&obj, &DVector::zeros(obj.g.len()), &self.settings)?.point)
    }

    fn solve_augmented(
        &self,
        i: usize,
        w: &DVector<f64>,
        u_hat: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        let s = &self.scenarios[i];
        let chol = s.factors.get(&s.hessian, alpha)?;
        Ok(-chol.solve(&(&s.linear - &s.terminal * self.lambda + w - u_hat * alpha)))
    }
}

/// E[x_T] − w Var(x_T) − γ E[Σ_{t=1}^T (x_t − x̄)²] by direct weighted sums.
pub fn tilde_u_value(
    tree: &ScenarioTree,
    trajectories: &[Vec<f64>],
    spec: &MvsSpec,
) -> Result<f64> {
    if trajectories.len() != tree.num_scenarios() {
        return Err(Error::DimensionMismatch(
            "one trajectory per scenario is required".into(),
        ));
    }
    let t_ = tree.horizon();
    if trajectories.iter().any(|x| x.len() != t_ + 1) {
        return Err(Error::DimensionMismatch(format!(
            "trajectories must have {} entries",
            t_ + 1
        )));
    }
    let rho = tree.probabilities();
    let mean: f64 = trajectories.iter().zip(rho).map(|(x, p)| p * x[t_]).sum();
    let var: f64 = trajectories
        .iter()
        .zip(rho)
        .map(|(x, p)| p * (x[t_] - mean).powi(2))
        .sum();
    let smooth: f64 = trajectories
        .iter()
        .zip(rho)
        .map(|(x, p)| {
            let bar = x[1..].iter().sum::<f64>() / t_ as f64;
            p * x[1..].iter().map(|v| (v - bar).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(mean - spec.w * var - spec.gamma * smooth)
}

/// λ_min = 1 + 2w x_0 and λ_max = 1 + 2w E[x_T] under the unsmoothed
/// optimal policy. Both are 1 when w = 0.
pub fn lambda_bounds(m: &MarketModel, spec: &MvsSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    if spec.w == 0.0 {
        return Ok((1.0, 1.0));
    }
    let tree = m.tree()?;
    let (_, traj) = mv_analytical_policy(m, spec.w)?.evaluate(m, &tree)?;
    let t_ = m.horizon();
    let mean: f64 = traj
        .iter()
        .zip(tree.probabilities())
        .map(|(x, p)| p * x[t_])
        .sum();
    let lo = 1.0 + 2.0 * spec.w * m.x0();
    let hi = 1.0 + 2.0 * spec.w * mean;
    if hi < lo {
        warn!("unsmoothed expected terminal wealth {mean} is below x0; swapping the λ bounds");
        return Ok((hi, lo));
    }
    Ok((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub tilde_u: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// y = c0 + c1 z + c2 z² with z = (λ − center) / scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Parabola {
    pub center: f64,
    pub scale: f64,
    pub coefficients: [f64; 3],
}

impl Parabola {
    /// Least squares on centered, scaled abscissae. `None` for fewer than
    /// three points.
    pub fn fit(points: &[(f64, f64)]) -> Option<Parabola> {
        if points.len() < 3 {
            return None;
        }
        let k = points.len() as f64;
        let center = points.iter().map(|p| p.0).sum::<f64>() / k;
        let scale = points
            .iter()
            .map(|p| (p.0 - center).abs())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return None;
        }
        let design = DMatrix::from_fn(points.len(), 3, |r, c| {
            ((points[r].0 - center) / scale).powi(c as i32)
        });
        let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
        let sol = design.svd(true, true).solve(&y, 1e-14).ok()?;
        Some(Parabola {
            center,
            scale,
            coefficients: [sol[0], sol[1], sol[2]],
        })
    }

    pub fn value(&self, lambda: f64) -> f64 {
        let z = (lambda - self.center) / self.scale;
        let [c0, c1, c2] = self.coefficients;
        c0 + c1 * z + c2 * z * z
    }

    pub fn is_concave(&self) -> bool {
        self.coefficients[2] < 0.0
    }

    pub fn vertex(&self) -> Option<f64> {
        let [_, c1, c2] = self.coefficients;
        (c2 != 0.0).then(|| self.center - self.scale * c1 / (2.0 * c2))
    }
}

#[derive(Clone, Debug)]
pub struct LambdaSearch {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub theta: f64,
    pub grid: Vec<GridPoint>,
    pub fit: Option<Parabola>,
    /// The parabola vertex, clamped, and its evaluation.
    pub fitted: Option<GridPoint>,
    pub lambda_star: f64,
    pub tilde_u_star: f64,
    pub u_hat: ControlEnsemble,
    pub w: MultiplierEnsemble,
    pub trajectories: Vec<Vec<f64>>,
    /// Iteration log of the run at λ*.
    pub history: Vec<PhaIteration>,
    /// Every PHA run stopped on the tolerance.
    pub converged: bool,
}

const MAX_GRID_POINTS: usize = 100_000;

fn grid(lo: f64, hi: f64, theta: f64) -> Result<Vec<f64>> {
    if hi == lo {
        return Ok(vec![lo]);
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "λ step must be positive, got {theta}"
        )));
    }
    let slack = 1e-12 * hi.abs().max(1.0);
    let mut points = Vec::new();
    for k in 0.. {
        let lambda = lo + k as f64 * theta;
        if lambda >= hi - slack {
            points.push(hi);
            break;
        }
        points.push(lambda);
        if points.len() > MAX_GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "λ step {theta} gives more than {MAX_GRID_POINTS} grid points"
            )));
        }
    }
    Ok(points)
}

struct Solved {
    point: GridPoint,
    history: Vec<PhaIteration>,
    u_hat: ControlEnsemble,
    w: MultiplierEnsemble,
    trajectories: Vec<Vec<f64>>,
}

/// Grid search over λ with a quadratic refinement: each grid point is solved
/// by progressive hedging, warm-started from the previous point, and the
/// best of the grid and the fitted vertex is returned.
pub fn lambda_search(
    tree: &ScenarioTree,
    m: &MarketModel,
    spec: &MvsSpec,
    config: &PhaConfig,
    theta: Option<f64>,
    threads: Option<usize>,
) -> Result<LambdaSearch> {
    let (lo, hi) = lambda_bounds(m, spec)?;
    let theta = theta.unwrap_or((hi - lo) / 20.0);
    let lambdas = grid(lo, hi, theta)?;
    let aux = build_auxiliary(m, spec, lo)?;
    let mut adapter = AuxAdapter::new(m, tree, &aux);

    let mut solve =
        |lambda: f64, warm: Option<(ControlEnsemble, MultiplierEnsemble)>| -> Result<Solved> {
            adapter.set_lambda(lambda);
            let res = pha_solve_with(
                tree,
                &adapter,
                config,
                PhaOptions {
                    warm_start: warm,
                    threads,
                    ..Default::default()
                },
            )?;
            let trajectories = wealth_trajectories(m, tree, &res.u_hat)?;
            let tilde_u = tilde_u_value(tree, &trajectories, spec)?;
            if !res.converged {
                warn!(
                "λ = {lambda}: progressive hedging stopped after {} iterations without converging",
                res.iterations
            );
            }
            Ok(Solved {
                point: GridPoint {
                    lambda,
                    tilde_u,
                    iterations: res.iterations,
                    converged: res.converged,
                },
                history: res.history,
                u_hat: res.u_hat,
                w: res.w,
                trajectories,
            })
        };

    let mut solved: Vec<Solved> = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let warm = solved.last().map(|s| (s.u_hat.clone(), s.w.clone()));
        let s = solve(lambda, warm)?;
        info!(
            "λ = {lambda:.6}: Ũ = {:.8} after {} iterations",
            s.point.tilde_u, s.point.iterations
        );
        solved.push(s);
    }
    let grid_points: Vec<GridPoint> = solved.iter().map(|s| s.point).collect();

    let data: Vec<(f64, f64)> = grid_points.iter().map(|p| (p.lambda, p.tilde_u)).collect();
    let fit = if data.len() < 3 {
        if lo != hi {
            warn!(
                "only {} λ grid points; skipping the quadratic fit",
                data.len()
            );
        }
        None
    } else {
        Parabola::fit(&data)
    };
    let mut fitted = None;
    if let Some(parabola) = fit {
        match parabola.vertex() {
            Some(v) if parabola.is_concave() => {
                let v = v.clamp(lo, hi);
                let best = best_index(&solved);
                let near_grid = grid_points
                    .iter()
                    .any(|p| (p.lambda - v).abs() <= 1e-12 * v.abs().max(1.0));
                if !near_grid {
                    let warm = Some((solved[best].u_hat.clone(), solved[best].w.clone()));
                    let s = solve(v, warm)?;
                    fitted = Some(s.point);
                    solved.push(s);
                }
            }
            _ => warn!("fitted Ũ(λ) is not concave; ignoring its vertex"),
        }
    }

    let best = best_index(&solved);
    let converged = solved.iter().all(|s| s.point.converged);
    let chosen = solved.swap_remove(best);
    Ok(LambdaSearch {
        lambda_min: lo,
        lambda_max: hi,
        theta,
        grid: grid_points,
        fit,
        fitted,
        lambda_star: chosen.point.lambda,
        tilde_u_star: chosen.point.tilde_u,
        u_hat: chosen.u_hat,
        w: chosen.w,
        trajectories: chosen.trajectories,
        history: chosen.history,
        converged,
    })
}

/// First index with the largest Ũ.
fn best_index(solved: &[Solved]) -> usize {
    let mut best = 0;
    for (i, s) in solved.iter().enumerate() {
        if s.point.tilde_u > solved[best].point.tilde_u {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::ReturnKind;
    use approx::assert_abs_diff_eq;

    fn binary_market(p: [f64; 2], r: f64, x0: f64, horizon: usize) -> MarketModel {
        let d = StageDistribution::uniform(vec![vec![p[0]], vec![p[1]]]).unwrap();
        MarketModel::new(vec![r; horizon], vec![d; horizon], ReturnKind::Excess, x0).unwrap()
    }

    #[test]
    fn k_examples() {
        let sym = StageDistribution::uniform(vec![vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(mv_k(&sym).unwrap()[0], 0.0);
        let skew = StageDistribution::uniform(vec![vec![0.2], vec![-0.1]]).unwrap();
        assert_abs_diff_eq!(mv_k(&skew).unwrap()[0], 2.0, epsilon = 1e-12);
        let degenerate = StageDistribution::uniform(vec![vec![0.0, 0.0]]).unwrap();
        assert!(mv_k(&degenerate).is_err());
    }

    #[test]
    fn zero_excess_market_holds_cash() {
        let m = binary_market([0.1, -0.1], 1.04, 10.0, 3);
        let tree = m.tree().unwrap();
        let (u, traj) = mv_analytical_policy(&m, 1.0)
            .unwrap()
            .evaluate(&m, &tree)
            .unwrap();
        assert!(u.vectors().iter().all(|v| v.amax() == 0.0));
        for x in &traj {
            assert_abs_diff_eq!(x[3], 10.0 * 1.04f64.powi(3), epsilon = 1e-12);
        }
        assert!(mv_analytical_policy(&m, 0.0).is_err());
    }

    #[test]
    fn weight_matrix_cases() {
        let m = binary_market([0.2, -0.1], 1.0, 1.0, 2);
        let aux = build_auxiliary(&m, &MvsSpec { w: 0.0, gamma: 1.0 }, 0.0).unwrap();
        assert_eq!(
            aux.weights,
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])
        );
        let eig = aux.weights.clone().symmetric_eigen().eigenvalues;
        assert_abs_diff_eq!(eig.min(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eig.max(), 1.0, epsilon = 1e-15);
        let m3 = binary_market([0.2, -0.1], 1.0, 1.0, 3);
        let aux = build_auxiliary(&m3, &MvsSpec { w: 0.7, gamma: 0.0 }, 0.0).unwrap();
        assert_eq!(
            aux.weights,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 0.7]))
        );
    }

    #[test]
    fn aux_pure_penalty_returns_u_hat() {
        let m = binary_market([0.2, -0.1], 1.04, 1.0, 2);
        let tree = m.tree().unwrap();
        let mut aux = build_auxiliary(&m, &MvsSpec { w: 0.0, gamma: 0.0 }, 0.0).unwrap();
        aux.x0 = 0.0;
        let p = aux.return_matrix(&m, &tree, 1);
        let u_hat = DVector::from_vec(vec![0.3, -0.4]);
        let u = aux_augmented_optimum(&aux, &p, &DVector::zeros(2), &u_hat, 1.0).unwrap();
        assert_abs_diff_eq!(u, u_hat, epsilon = 1e-15);
        let aux = build_auxiliary(&m, &MvsSpec { w: 1.0, gamma: 1.0 }, 3.0).unwrap();
        let u = aux_augmented_optimum(&aux, &p, &DVector::zeros(2), &u_hat, 1e8).unwrap();
        assert!((u - &u_hat).norm() <= 1e-6);
    }

    #[test]
    fn lambda_bound_cases() {
        let m = binary_market([0.2, -0.1], 1.04, 10.0, 3);
        let (lo, hi) = lambda_bounds(&m, &MvsSpec { w: 0.5, gamma: 1.0 }).unwrap();
        assert_abs_diff_eq!(lo, 11.0);
        assert!(hi >= lo);
        assert_eq!(
            lambda_bounds(&m, &MvsSpec { w: 0.0, gamma: 1.0 }).unwrap(),
            (1.0, 1.0)
        );
    }

    #[test]
    fn tilde_u_deterministic_constant() {
        let d = StageDistribution::uniform(vec![vec![0.0]]).unwrap();
        let m = MarketModel::new(vec![1.0; 3], vec![d; 3], ReturnKind::Excess, 4.0).unwrap();
        let tree = m.tree().unwrap();
        let v = tilde_u_value(&tree, &[vec![4.0; 4]], &MvsSpec { w: 2.0, gamma: 3.0 }).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn grid_ends_on_upper_bound() {
        assert_eq!(grid(1.0, 2.0, 0.4).unwrap(), vec![1.0, 1.4, 1.8, 2.0]);
        assert_eq!(grid(1.0, 1.0, 0.0).unwrap(), vec![1.0]);
        assert!(grid(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn parabola_recovers_vertex() {
        let pts: Vec<_> = (0..6)
            .map(|k| {
                let x = 10.0 + k as f64 * 0.5;
                (x, 3.0 - 0.7 * (x - 11.3).powi(2))
            })
            .collect();
        let p = Parabola::fit(&pts).unwrap();
        assert!(p.is_concave());
        assert_abs_diff_eq!(p.vertex().unwrap(), 11.3, epsilon = 1e-10);
        assert!(Parabola::fit(&pts[..2]).is_none());
        let up: Vec<_> = pts.iter().map(|&(x, y)| (x, -y)).collect();
        assert!(!Parabola::fit(&up).unwrap().is_concave());
    }
}
