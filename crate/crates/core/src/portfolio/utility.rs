use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::market::{wealth_response, MarketModel};
use super::smoothing::{SmoothingQuadratic, SmoothingSpec};
use crate::convex_min::{minimize, MinimizerSettings, SmoothObjective};
use crate::error::{Error, Result};
use crate::pha::SubproblemAdapter;
use crate::tree::{ScenarioPath, ScenarioTree};

/// HARA utility with −U'/U'' = a + b x.
///
/// b = 0 is the exponential −e^{−x/a}; b = 1 is ln(a + x); any other b is
/// the power form (a + b x)^{1−1/b} / (b − 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub a: f64,
    pub b: f64,
}

impl UtilitySpec {
    pub fn exponential(a: f64) -> Self {
        UtilitySpec { a, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::NonFinite("utility parameters".into()));
        }
        if self.b == 0.0 && !(self.a > 0.0) {
            return Err(Error::InvalidInput(format!(
                "exponential utility needs a > 0, got {}",
                self.a
            )));
        }
        Ok(())
    }

    fn base(&self, x: f64) -> Result<f64> {
        let s = self.a + self.b * x;
        if s > 0.0 {
            Ok(s)
        } else {
            Err(Error::UtilityDomain { wealth: x })
        }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        if self.b == 0.0 {
            return Ok(-(-x / self.a).exp());
        }
        let s = self.base(x)?;
        if self.b == 1.0 {
            Ok(s.ln())
        } else {
            Ok(s.powf(1.0 - 1.0 / self.b) / (self.b - 1.0))
        }
    }

    /// U'(x).
    pub fn marginal(&self, x: f64) -> Result<f64> {
        if self.b == 0.0 {
            return Ok((-x / self.a).exp() / self.a);
        }
        Ok(self.base(x)?.powf(-1.0 / self.b))
    }

    /// U''(x).
    pub fn curvature(&self, x: f64) -> Result<f64> {
        if self.b == 0.0 {
            return Ok(-(-x / self.a).exp() / (self.a * self.a));
        }
        Ok(-self.base(x)?.powf(-1.0 / self.b - 1.0))
    }
}

/// One scenario's objective −U(x_T) + γS(u) with x_T = xt_free + g_T'u,
/// optionally augmented by u'w + (α/2)|u − û|².
struct ScenarioUtility<'a> {
    spec: UtilitySpec,
    xt_free: f64,
    g_t: &'a DVector<f64>,
    smoothing: &'a SmoothingQuadratic,
    gamma: f64,
    augment: Option<(&'a DVector<f64>, &'a DVector<f64>, f64)>,
}

impl SmoothObjective for ScenarioUtility<'_> {
    fn dim(&self) -> usize {
        self.g_t.len()
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let x = self.xt_free + self.g_t.dot(u);
        let Ok(util) = self.spec.value(x) else {
            return f64::INFINITY;
        };
        let s = &self.smoothing;
        let mut v = -util;
        if self.gamma > 0.0 {
            v += self.gamma * (0.5 * u.dot(&(&s.hessian * u)) + s.linear.dot(u) + s.constant);
        }
        if let Some((w, u_hat, alpha)) = self.augment {
            v += u.dot(w) + 0.5 * alpha * (u - u_hat).norm_squared();
        }
        v
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let x = self.xt_free + self.g_t.dot(u);
        let marginal = self.spec.marginal(x).unwrap_or(f64::NAN);
        let mut g = self.g_t * -marginal;
        if self.gamma > 0.0 {
            g += (&self.smoothing.hessian * u + &self.smoothing.linear) * self.gamma;
        }
        if let Some((w, u_hat, alpha)) = self.augment {
            g += w + (u - u_hat) * alpha;
        }
        g
    }

    fn hessian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let x = self.xt_free + self.g_t.dot(u);
        let curvature = self.spec.curvature(x).ok()?;
        let mut h = self.g_t * self.g_t.transpose() * -curvature;
        if self.gamma > 0.0 {
            h += &self.smoothing.hessian * self.gamma;
        }
        if let Some((_, _, alpha)) = self.augment {
            for i in 0..h.nrows() {
                h[(i, i)] += alpha;
            }
        }
        Some(h)
    }
}

struct ScenarioData {
    xt_free: f64,
    g_t: DVector<f64>,
    smoothing: SmoothingQuadratic,
}

impl ScenarioData {
    fn new(m: &MarketModel, scenario: &ScenarioPath, spec_s: &SmoothingSpec) -> Self {
        let (free, g) = wealth_response(m, scenario);
        let t_ = m.horizon();
        ScenarioData {
            xt_free: free[t_],
            g_t: g.row(t_).transpose(),
            smoothing: spec_s.quadratic(m, &free, &g),
        }
    }

    fn objective<'a>(
        &'a self,
        spec: UtilitySpec,
        gamma: f64,
        augment: Option<(&'a DVector<f64>, &'a DVector<f64>, f64)>,
    ) -> ScenarioUtility<'a> {
        ScenarioUtility {
            spec,
            xt_free: self.xt_free,
            g_t: &self.g_t,
            smoothing: &self.smoothing,
            gamma,
            augment,
        }
    }
}

/// Value and gradient of −U(x_T) + γS for one scenario and stacked control.
pub fn utility_scenario_objective(
    m: &MarketModel,
    scenario: &ScenarioPath,
    spec_u: &UtilitySpec,
    spec_s: &SmoothingSpec,
    u: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    spec_u.validate()?;
    spec_s.validate(m.horizon(), m.assets())?;
    if u.len() != m.assets() * m.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "control has length {}",
            u.len()
        )));
    }
    let data = ScenarioData::new(m, scenario, spec_s);
    let x_t = data.xt_free + data.g_t.dot(u);
    spec_u.value(x_t)?;
    let obj = data.objective(*spec_u, spec_s.gamma, None);
    Ok((obj.value(u), obj.gradient(u)))
}

pub struct UtilityAdapter {
    spec: UtilitySpec,
    gamma: f64,
    settings: MinimizerSettings,
    scenarios: Vec<ScenarioData>,
    n: usize,
}

impl UtilityAdapter {
    pub fn new(
        m: &MarketModel,
        tree: &ScenarioTree,
        spec_u: UtilitySpec,
        spec_s: &SmoothingSpec,
        settings: MinimizerSettings,
    ) -> Result<Self> {
        spec_u.validate()?;
        spec_s.validate(m.horizon(), m.assets())?;
        settings.validate()?;
        let scenarios = tree
            .scenarios()
            .iter()
            .map(|s| ScenarioData::new(m, s, spec_s))
            .collect();
        Ok(UtilityAdapter {
            spec: spec_u,
            gamma: spec_s.gamma,
            settings,
            scenarios,
            n: m.assets(),
        })
    }

    fn solve(&self, obj: &ScenarioUtility<'_>, starts: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let start = starts
            .iter()
            .find(|s| obj.value(s).is_finite())
            .ok_or_else(|| Error::UtilityDomain {
                wealth: obj.xt_free + obj.g_t.dot(starts[0]),
            })?;
        Ok(minimize(obj, start, &self.settings)?.point)
    }
}

impl SubproblemAdapter for UtilityAdapter {
    fn control_dim(&self) -> usize {
        self.n
    }

    fn solve_scenario(&self, i: usize) -> Result<DVector<f64>> {
        let data = &self.scenarios[i];
        let zero = DVector::zeros(data.g_t.len());
        self.solve(&data.objective(self.spec, self.gamma, None), &[&zero])
    }

    fn solve_augmented(
        &self,
        i: usize,
        w: &DVector<f64>,
        u_hat: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        let data = &self.scenarios[i];
        let zero = DVector::zeros(data.g_t.len());
        self.solve(
            &data.objective(self.spec, self.gamma, Some((w, u_hat, alpha))),
            &[u_hat, &zero],
        )
    }
}

/// β_t from u_t by inverting u_t = β_t (a / Π_{τ>t} r_τ + b r_t x_t). `None`
/// when the scale factor vanishes.
pub fn reverse_beta(
    m: &MarketModel,
    spec_u: &UtilitySpec,
    t: usize,
    x_t: f64,
    u_t: &DVector<f64>,
) -> Option<DVector<f64>> {
    let scale = spec_u.a / m.growth(t + 1, m.horizon()) + spec_u.b * m.riskless()[t] * x_t;
    (scale != 0.0).then(|| u_t / scale)
}

/// E[U'(r_t x_t + (a/Π r + b r_t x_t) β_t'P_t) P_t] with β_t recovered from
/// u_t. Zero at the optimum of the unsmoothed problem.
pub fn beta_residual(
    m: &MarketModel,
    spec_u: &UtilitySpec,
    t: usize,
    x_t: f64,
    u_t: &DVector<f64>,
) -> Result<DVector<f64>> {
    spec_u.validate()?;
    if t >= m.horizon() || u_t.len() != m.assets() {
        return Err(Error::DimensionMismatch(format!(
            "stage {t} or control length {} out of range",
            u_t.len()
        )));
    }
    let r = m.riskless()[t];
    let scale = spec_u.a / m.growth(t + 1, m.horizon()) + spec_u.b * r * x_t;
    // with a vanishing scale the policy form pins u_t = 0
    let invested = match reverse_beta(m, spec_u, t, x_t, u_t) {
        Some(beta) => beta * scale,
        None => DVector::zeros(u_t.len()),
    };
    let dist = &m.excess()[t];
    let mut residual = DVector::zeros(u_t.len());
    for (k, &pi) in dist.probabilities.iter().enumerate() {
        let p = dist.outcome(k);
        let marginal = spec_u.marginal(r * x_t + invested.dot(&p))?;
        residual.axpy(pi * marginal, &p, 1.0);
    }
    Ok(residual)
}
