//! Linear dynamics with a quadratic cost that may couple stages.
//!
//! Dynamics are x_{t+1} = A_t x_t + B_t u_t + ξ_t. Stacking states, controls
//! and noise gives x = A + B u + C ξ, and a scenario's cost becomes the
//! quadratic ½x'Qx + x'c + ½u'Ru + u'd in u alone.

use std::sync::{Arc, Mutex, OnceLock};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::convex_min::{minimize, MinimizerSettings, Quadratic};
use crate::error::{Error, Result};
use crate::pha::{ControlEnsemble, SubproblemAdapter};
use crate::tree::{ScenarioTree, StageDistribution};

const PSD_FLOOR: f64 = -1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
const SYMMETRIZE_LIMIT: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct OnlineQpProblem {
    pub horizon: usize,
    pub m: usize,
    pub n: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub x0: DVector<f64>,
    pub noise: Vec<StageDistribution>,
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Symmetrize small asymmetries, reject large ones.
fn symmetrized(name: &str, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asym = asymmetry(&m);
    if asym > SYMMETRIZE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if asym > SYMMETRY_TOL {
        warn!("{name} asymmetric by {asym:e}; using (M + M')/2");
    }
    Ok((&m + m.transpose()) * 0.5)
}

impl OnlineQpProblem {
    /// Checks dimensions, symmetrizes Q and R and checks that both are
    /// positive semidefinite.
    ///
    /// A Q that fails the check is still accepted when its block over
    /// x_1..x_T passes: x_0 is fixed, so the remaining rows only add linear
    /// and constant terms to the cost.
    pub fn validated(mut self) -> Result<Self> {
        let (t_, m, n) = (self.horizon, self.m, self.n);
        if t_ == 0 || m == 0 || n == 0 {
            return Err(Error::InvalidInput(
                "horizon, state and control dimensions must be positive".into(),
            ));
        }
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{what} is {got:?}, expected {want:?}"
                )));
            }
            Ok(())
        };
        if self.a.len() != t_ || self.b.len() != t_ || self.noise.len() != t_ {
            return Err(Error::DimensionMismatch(format!(
                "need {t_} stage matrices and noise distributions, got A: {}, B: {}, noise: {}",
                self.a.len(),
                self.b.len(),
                self.noise.len()
            )));
        }
        for t in 0..t_ {
            dim(&format!("A_{t}"), self.a[t].shape(), (m, m))?;
            dim(&format!("B_{t}"), self.b[t].shape(), (m, n))?;
            self.noise[t].validate()?;
            if self.noise[t].dim() != m {
                return Err(Error::DimensionMismatch(format!(
                    "noise at stage {t} has dimension {}",
                    self.noise[t].dim()
                )));
            }
        }
        dim("Q", self.q.shape(), (m * (t_ + 1), m * (t_ + 1)))?;
        dim("R", self.r.shape(), (n * t_, n * t_))?;
        dim("c", (self.c.len(), 1), (m * (t_ + 1), 1))?;
        dim("d", (self.d.len(), 1), (n * t_, 1))?;
        dim("x0", (self.x0.len(), 1), (m, 1))?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(self.q.as_slice())
            && finite(self.r.as_slice())
            && finite(self.c.as_slice())
            && finite(self.d.as_slice())
            && finite(self.x0.as_slice())
            && self.a.iter().chain(&self.b).all(|x| finite(x.as_slice())))
        {
            return Err(Error::NonFinite("problem data".into()));
        }

        self.q = symmetrized("Q", self.q)?;
        self.r = symmetrized("R", self.r)?;
        let r_min = min_eigenvalue(&self.r);
        if r_min < PSD_FLOOR {
            return Err(Error::InvalidInput(format!(
                "R is not positive semidefinite (min eigenvalue {r_min:e})"
            )));
        }
        let q_min = min_eigenvalue(&self.q);
        if q_min < PSD_FLOOR {
            let tail = self.q.view((m, m), (m * t_, m * t_)).into_owned();
            let tail_min = min_eigenvalue(&tail);
            if tail_min < PSD_FLOOR {
                return Err(Error::InvalidInput(format!(
                    "Q is not positive semidefinite (min eigenvalue {q_min:e})"
                )));
            }
            warn!(
                "Q has min eigenvalue {q_min:e}; accepted because its block over x_1..x_T is positive semidefinite (min {tail_min:e})"
            );
        }
        Ok(self)
    }

    pub fn tree(&self) -> Result<ScenarioTree> {
        ScenarioTree::build(self.noise.clone())
    }

    /// Stepwise forward simulation of the stacked state.
    pub fn simulate(&self, u: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let (m, n) = (self.m, self.n);
        let mut x = DVector::zeros(m * (self.horizon + 1));
        x.rows_mut(0, m).copy_from(&self.x0);
        for t in 0..self.horizon {
            let next =
                &self.a[t] * x.rows(t * m, m) + &self.b[t] * u.rows(t * n, n) + xi.rows(t * m, m);
            x.rows_mut((t + 1) * m, m).copy_from(&next);
        }
        x
    }

    /// Whether Q and R have no cross-stage blocks.
    pub fn is_stage_separable(&self) -> bool {
        let blocks_zero = |mat: &DMatrix<f64>, k: usize| {
            let stages = mat.nrows() / k;
            (0..stages).all(|s| {
                (0..stages)
                    .all(|t| s == t || mat.view((s * k, t * k), (k, k)).iter().all(|v| *v == 0.0))
            })
        };
        blocks_zero(&self.q, self.m) && blocks_zero(&self.r, self.n)
    }

    /// The same problem with every cross-stage cost block removed.
    pub fn stage_separable_part(&self) -> OnlineQpProblem {
        let keep = |mat: &DMatrix<f64>, k: usize| {
            DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| {
                if i / k == j / k {
                    mat[(i, j)]
                } else {
                    0.0
                }
            })
        };
        OnlineQpProblem {
            q: keep(&self.q, self.m),
            r: keep(&self.r, self.n),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompactQp {
    pub horizon: usize,
    pub m: usize,
    pub n: usize,
    /// Free response (x_0, A_0 x_0, A_1 A_0 x_0, …).
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub c_noise: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    /// B'QB + R.
    pub hessian: DMatrix<f64>,
}

pub fn assemble_compact(p: &OnlineQpProblem) -> Result<CompactQp> {
    let (t_, m, n) = (p.horizon, p.m, p.n);
    if p.a.len() != t_ || p.b.len() != t_ || p.x0.len() != m {
        return Err(Error::DimensionMismatch(
            "stage matrices do not match the horizon".into(),
        ));
    }
    let rows = m * (t_ + 1);
    let mut a = DVector::zeros(rows);
    a.rows_mut(0, m).copy_from(&p.x0);
    for t in 0..t_ {
        let next = &p.a[t] * a.rows(t * m, m);
        a.rows_mut((t + 1) * m, m).copy_from(&next);
    }
    let mut b = DMatrix::zeros(rows, n * t_);
    let mut c_noise = DMatrix::zeros(rows, m * t_);
    for t in 0..t_ {
        // transition from stage t+1 to s, built up as s grows
        let mut phi = DMatrix::<f64>::identity(m, m);
        for s in (t + 1)..=t_ {
            if s > t + 1 {
                phi = &p.a[s - 1] * phi;
            }
            b.view_mut((s * m, t * n), (m, n))
                .copy_from(&(&phi * &p.b[t]));
            c_noise.view_mut((s * m, t * m), (m, m)).copy_from(&phi);
        }
    }
    let hessian = b.transpose() * &p.q * &b + &p.r;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    Ok(CompactQp {
        horizon: t_,
        m,
        n,
        a,
        b,
        c_noise,
        q: p.q.clone(),
        r: p.r.clone(),
        c: p.c.clone(),
        d: p.d.clone(),
        hessian,
    })
}

impl CompactQp {
    pub fn state(&self, xi: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a + &self.b * u + &self.c_noise * xi
    }

    /// Linear term B'Q(A + Cξ) + B'c + d of the scenario objective.
    pub fn linear_term(&self, xi: &DVector<f64>) -> DVector<f64> {
        let free = &self.a + &self.c_noise * xi;
        self.b.transpose() * (&self.q * free + &self.c) + &self.d
    }

    fn check(&self, xi: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<()> {
        if xi.len() != self.m * self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "noise path has length {}",
                xi.len()
            )));
        }
        if let Some(u) = u {
            if u.len() != self.n * self.horizon {
                return Err(Error::DimensionMismatch(format!(
                    "control has length {}",
                    u.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn qp_objective(q: &CompactQp, xi: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    q.check(xi, Some(u))?;
    let x = q.state(xi, u);
    Ok(0.5 * x.dot(&(&q.q * &x)) + x.dot(&q.c) + 0.5 * u.dot(&(&q.r * u)) + u.dot(&q.d))
}

pub fn qp_gradient(q: &CompactQp, xi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    q.check(xi, Some(u))?;
    Ok(&q.hessian * u + q.linear_term(xi))
}

fn factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    // reject numerically singular factors that Cholesky still accepts
    let l_min = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if l_min * l_min <= scale * 1e-13 {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(chol)
}

/// Closed-form optimum −(B'QB + R)⁻¹ g. Fails with [`Error::Singular`]
/// when B'QB + R is singular.
pub fn scenario_optimum(q: &CompactQp, xi: &DVector<f64>) -> Result<DVector<f64>> {
    q.check(xi, None)?;
    let chol = factor(q.hessian.clone(), "B'QB + R")?;
    Ok(-chol.solve(&q.linear_term(xi)))
}

fn shifted(h: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let mut m = h.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += alpha;
    }
    m
}

pub fn augmented_optimum(
    q: &CompactQp,
    xi: &DVector<f64>,
    w: &DVector<f64>,
    u_hat: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    q.check(xi, Some(w))?;
    q.check(xi, Some(u_hat))?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let chol = factor(shifted(&q.hessian, alpha), "B'QB + R + αI")?;
    Ok(-chol.solve(&(q.linear_term(xi) + w - u_hat * alpha)))
}

type Factor = Arc<Cholesky<f64, Dyn>>;

/// Caches one factorization per distinct α.
#[derive(Default)]
pub(crate) struct ShiftedFactors {
    cache: Mutex<Vec<(f64, Factor)>>,
}

impl ShiftedFactors {
    pub(crate) fn get(&self, h: &DMatrix<f64>, alpha: f64) -> Result<Factor> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, f)) = cache.iter().find(|(a, _)| *a == alpha) {
            return Ok(f.clone());
        }
        let f = Arc::new(factor(shifted(h, alpha), "shifted Hessian")?);
        if cache.len() >= 4 {
            cache.remove(0);
        }
        cache.push((alpha, f.clone()));
        Ok(f)
    }
}

/// Progressive-hedging adapter with closed-form solves. When B'QB + R is
/// singular the scenario optimum falls back to the iterative minimizer
/// started at zero, which selects the minimum-norm solution.
pub struct QpAdapter {
    compact: CompactQp,
    realizations: Vec<DVector<f64>>,
    settings: MinimizerSettings,
    plain: OnceLock<Option<Cholesky<f64, Dyn>>>,
    shifted: ShiftedFactors,
}

impl QpAdapter {
    pub fn new(compact: CompactQp, tree: &ScenarioTree) -> Self {
        Self::with_settings(compact, tree, MinimizerSettings::default())
    }

    pub fn with_settings(
        compact: CompactQp,
        tree: &ScenarioTree,
        settings: MinimizerSettings,
    ) -> Self {
        let realizations = tree
            .scenarios()
            .iter()
            .map(|s| s.realization.clone())
            .collect();
        QpAdapter {
            compact,
            realizations,
            settings,
            plain: OnceLock::new(),
            shifted: ShiftedFactors::default(),
        }
    }

    pub fn compact(&self) -> &CompactQp {
        &self.compact
    }
}

impl SubproblemAdapter for QpAdapter {
    fn control_dim(&self) -> usize {
        self.compact.n
    }

    fn solve_scenario(&self, i: usize) -> Result<DVector<f64>> {
        let g = self.compact.linear_term(&self.realizations[i]);
        let plain = self
            .plain
            .get_or_init(|| factor(self.compact.hessian.clone(), "B'QB + R").ok());
        match plain {
            Some(chol) => Ok(-chol.solve(&g)),
            None => {
                let obj = Quadratic {
                    h: self.compact.hessian.clone(),
                    g,
                };
                Ok(minimize(&obj, &DVector::zeros(obj.g.len()), &self.settings)?.point)
            }
        }
    }

    fn solve_augmented(
        &self,
        i: usize,
        w: &DVector<f64>,
        u_hat: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        let chol = self.shifted.get(&self.compact.hessian, alpha)?;
        Ok(-chol.solve(&(self.compact.linear_term(&self.realizations[i]) + w - u_hat * alpha)))
    }
}

/// Affine feedback u_t = −K_t x_t + k_t from the stagewise recursion.
#[derive(Clone, Debug)]
pub struct DpPolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    /// Expected optimal cost from x_0, constant terms included.
    pub value: f64,
}

impl DpPolicy {
    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        -&self.gains[t] * x + &self.offsets[t]
    }

    /// Controls of the feedback policy along every scenario path.
    pub fn evaluate(&self, p: &OnlineQpProblem, tree: &ScenarioTree) -> Result<ControlEnsemble> {
        let (m, n) = (p.m, p.n);
        let mut out = Vec::with_capacity(tree.num_scenarios());
        for s in tree.scenarios() {
            let mut u = DVector::zeros(n * p.horizon);
            let mut x = p.x0.clone();
            for t in 0..p.horizon {
                let ut = self.control(t, &x);
                x = &p.a[t] * &x + &p.b[t] * &ut + s.realization.rows(t * m, m);
                u.rows_mut(t * n, n).copy_from(&ut);
            }
            out.push(u);
        }
        ControlEnsemble::new(n, p.horizon, out)
    }
}

/// Backward recursion with exact quadratic value functions
/// V_t(x) = ½x'P_t x + p_t'x + s_t. Only for stage-separable costs.
pub fn lq_dp_solve(p: &OnlineQpProblem) -> Result<DpPolicy> {
    if !p.is_stage_separable() {
        return Err(Error::InvalidInput(
            "dynamic programming needs stage-separable Q and R (no cross-stage blocks)".into(),
        ));
    }
    let (t_, m, n) = (p.horizon, p.m, p.n);
    let mut pm = p.q.view((t_ * m, t_ * m), (m, m)).into_owned();
    let mut pv = p.c.rows(t_ * m, m).into_owned();
    let mut s = 0.0;
    let mut gains = vec![DMatrix::zeros(n, m); t_];
    let mut offsets = vec![DVector::zeros(n); t_];
    for t in (0..t_).rev() {
        let (a, b) = (&p.a[t], &p.b[t]);
        let mu = p.noise[t].mean();
        let second = p.noise[t].second_moment();
        let r_tt = p.r.view((t * n, t * n), (n, n));
        let mmat = r_tt + b.transpose() * &pm * b;
        let chol = factor(
            (&mmat + mmat.transpose()) * 0.5,
            &format!("stage {t} control Hessian"),
        )?;
        let q_tilde = &pm * &mu + &pv;
        let h = b.transpose() * &q_tilde + p.d.rows(t * n, n);
        let bpa = b.transpose() * &pm * a;
        let k_gain = chol.solve(&bpa);
        let k_off = -chol.solve(&h);
        s += 0.5 * (&pm * &second).trace() + pv.dot(&mu) - 0.5 * h.dot(&chol.solve(&h));
        let q_tt = p.q.view((t * m, t * m), (m, m));
        let next_p = q_tt + a.transpose() * &pm * a - bpa.transpose() * &k_gain;
        pv = p.c.rows(t * m, m) + a.transpose() * &q_tilde - k_gain.transpose() * &h;
        pm = (&next_p + next_p.transpose()) * 0.5;
        gains[t] = k_gain;
        offsets[t] = k_off;
    }
    let value = 0.5 * p.x0.dot(&(&pm * &p.x0)) + pv.dot(&p.x0) + s;
    Ok(DpPolicy {
        gains,
        offsets,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pha::{pha_solve, PhaConfig};
    use approx::assert_abs_diff_eq;

    fn scalar_problem(q: &[f64], r: f64, noise: StageDistribution) -> OnlineQpProblem {
        OnlineQpProblem {
            horizon: 1,
            m: 1,
            n: 1,
            a: vec![DMatrix::identity(1, 1)],
            b: vec![DMatrix::identity(1, 1)],
            q: DMatrix::from_row_slice(2, 2, q),
            r: DMatrix::from_element(1, 1, r),
            c: DVector::zeros(2),
            d: DVector::zeros(1),
            x0: DVector::zeros(1),
            noise: vec![noise],
        }
        .validated()
        .unwrap()
    }

    fn example() -> OnlineQpProblem {
        crate::config::load_qp(crate::fixtures::EXAMPLE_QP)
            .unwrap()
            .problem
    }

    #[test]
    fn one_step_stack() {
        let mut p = scalar_problem(
            &[0.0, 0.0, 0.0, 1.0],
            1.0,
            StageDistribution::uniform(vec![vec![0.0]]).unwrap(),
        );
        p.x0 = DVector::from_element(1, 2.0);
        let c = assemble_compact(&p).unwrap();
        assert_eq!(c.a.as_slice(), &[2.0, 2.0]);
        assert_eq!(c.b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(c.c_noise, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn example_control_response() {
        let c = assemble_compact(&example()).unwrap();
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(4, 6, &[
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
            1.0, 1.0, 1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
        ]);
        assert_eq!(c.b, expect);
    }

    #[test]
    fn origin_is_optimal_without_forcing() {
        let p = scalar_problem(
            &[0.0, 0.0, 0.0, 1.0],
            1.0,
            StageDistribution::uniform(vec![vec![0.0]]).unwrap(),
        );
        let c = assemble_compact(&p).unwrap();
        let u = scenario_optimum(&c, &DVector::zeros(1)).unwrap();
        assert_abs_diff_eq!(u[0], 0.0);
    }

    #[test]
    fn hand_calculus_one_step() {
        // ½·2(u+ξ)² + ½·2u² with ξ = 1 gives u = −½
        let p = scalar_problem(
            &[0.0, 0.0, 0.0, 2.0],
            2.0,
            StageDistribution::uniform(vec![vec![1.0]]).unwrap(),
        );
        let c = assemble_compact(&p).unwrap();
        let u = scenario_optimum(&c, &DVector::from_element(1, 1.0)).unwrap();
        assert_abs_diff_eq!(u[0], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn singular_system_is_reported() {
        let p = scalar_problem(
            &[0.0, 0.0, 0.0, 0.0],
            0.0,
            StageDistribution::uniform(vec![vec![0.0]]).unwrap(),
        );
        let c = assemble_compact(&p).unwrap();
        assert!(matches!(
            scenario_optimum(&c, &DVector::zeros(1)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn example_scenario_optimum_is_stationary_and_minimal() {
        let p = example();
        let c = assemble_compact(&p).unwrap();
        let xi = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let u = scenario_optimum(&c, &xi).unwrap();
        assert!(qp_gradient(&c, &xi, &u).unwrap().norm() <= 1e-8);
        let obj = Quadratic {
            h: c.hessian.clone(),
            g: c.linear_term(&xi),
        };
        let oracle = minimize(&obj, &DVector::zeros(6), &MinimizerSettings::default()).unwrap();
        assert_abs_diff_eq!(u, oracle.point, epsilon = 1e-8);
        let f = qp_objective(&c, &xi, &u).unwrap();
        for k in 0..6 {
            let mut v = u.clone();
            v[k] += 1e-3;
            assert!(qp_objective(&c, &xi, &v).unwrap() > f);
        }
    }

    #[test]
    fn augmented_limits() {
        let p = example();
        let c = assemble_compact(&p).unwrap();
        let xi = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let u_hat = DVector::from_vec(vec![0.3, -0.2, 1.0, 0.5, -1.0, 2.0]);
        let zero = DVector::zeros(6);
        let far = augmented_optimum(&c, &xi, &zero, &u_hat, 1e8).unwrap();
        assert!((far - &u_hat).norm() <= 1e-6);
        let star = scenario_optimum(&c, &xi).unwrap();
        let fixed = augmented_optimum(&c, &xi, &zero, &star, 1.0).unwrap();
        assert_abs_diff_eq!(fixed, star, epsilon = 1e-10);
        // the gap is about α|û − u*|/λ_min(H) with λ_min(H) ≈ 0.0157 here
        let close = &star + DVector::from_element(6, 0.1);
        let near = augmented_optimum(&c, &xi, &zero, &close, 1e-6).unwrap();
        assert!((near - &star).norm() <= 1e-4);
        assert!(augmented_optimum(&c, &xi, &zero, &u_hat, 0.0).is_err());
    }

    #[test]
    fn objective_special_cases() {
        let mut p = example();
        let c = assemble_compact(&p).unwrap();
        let xi = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let free = &c.a + &c.c_noise * &xi;
        let zero = DVector::zeros(6);
        assert_abs_diff_eq!(
            qp_objective(&c, &xi, &zero).unwrap(),
            0.5 * free.dot(&(&c.q * &free)),
            epsilon = 1e-12
        );

        p.q = DMatrix::zeros(4, 4);
        p.r = DMatrix::zeros(6, 6);
        p.c = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        p.d = DVector::from_vec(vec![1.0, 0.0, 0.0, 2.0, -1.0, 0.0]);
        let c = assemble_compact(&p).unwrap();
        let u = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let x = c.state(&xi, &u);
        assert_abs_diff_eq!(
            qp_objective(&c, &xi, &u).unwrap(),
            p.c.dot(&x) + p.d.dot(&u),
            epsilon = 1e-12
        );
    }

    #[test]
    fn example_q_needs_tail_fallback() {
        let p = example();
        assert!(min_eigenvalue(&p.q) < PSD_FLOOR);
        let mut bad = p.clone();
        bad.q[(3, 3)] = -1.0;
        assert!(bad.validated().is_err());
        let mut asym = p;
        asym.q[(0, 1)] += 1e-3;
        assert!(asym.validated().is_err());
    }

    #[test]
    fn dp_one_step_symmetric_noise() {
        // E[(u+ξ)²] + u² with ξ = ±1: u* = 0, value 1
        let p = scalar_problem(
            &[0.0, 0.0, 0.0, 2.0],
            2.0,
            StageDistribution::uniform(vec![vec![1.0], vec![-1.0]]).unwrap(),
        );
        let policy = lq_dp_solve(&p).unwrap();
        assert_abs_diff_eq!(policy.control(0, &DVector::zeros(1))[0], 0.0);
        assert_abs_diff_eq!(policy.value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dp_deterministic_matches_scenario_optimum() {
        let mut p = example().stage_separable_part();
        p.noise = vec![StageDistribution::uniform(vec![vec![0.5]]).unwrap(); 3];
        p.c = DVector::from_vec(vec![0.0, 1.0, -1.0, 0.5]);
        let tree = p.tree().unwrap();
        let dp = lq_dp_solve(&p).unwrap().evaluate(&p, &tree).unwrap();
        let c = assemble_compact(&p).unwrap();
        let direct = scenario_optimum(&c, &tree.scenario(0).realization).unwrap();
        assert_abs_diff_eq!(dp.scenario(0).clone(), direct, epsilon = 1e-10);
        let value = qp_objective(&c, &tree.scenario(0).realization, &direct).unwrap();
        assert_abs_diff_eq!(lq_dp_solve(&p).unwrap().value, value, epsilon = 1e-10);
    }

    #[test]
    fn dp_rejects_coupled_costs() {
        assert!(lq_dp_solve(&example()).is_err());
    }

    #[test]
    fn separable_example_pha_matches_dp() {
        let p = example().stage_separable_part();
        let tree = p.tree().unwrap();
        let adapter = QpAdapter::new(assemble_compact(&p).unwrap(), &tree);
        let res = pha_solve(
            &tree,
            &adapter,
            &PhaConfig {
                epsilon: 1e-16,
                ..Default::default()
            },
        )
        .unwrap();
        let dp = lq_dp_solve(&p).unwrap().evaluate(&p, &tree).unwrap();
        for i in 0..tree.num_scenarios() {
            assert!((res.u_hat.scenario(i) - dp.scenario(i)).amax() <= 1e-6);
        }
    }
}
