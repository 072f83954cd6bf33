use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pha::ControlEnsemble;
use crate::tree::{ScenarioPath, ScenarioTree, StageDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    /// Total returns e_t of the risky assets.
    Total,
    /// Excess returns P_t = e_t − r_t 1.
    Excess,
}

#[derive(Clone, Debug)]
pub struct MarketModel {
    riskless: Vec<f64>,
    returns: Vec<StageDistribution>,
    kind: ReturnKind,
    excess: Vec<StageDistribution>,
    x0: f64,
}

impl MarketModel {
    pub fn new(
        riskless: Vec<f64>,
        returns: Vec<StageDistribution>,
        kind: ReturnKind,
        x0: f64,
    ) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::InvalidInput(
                "market needs at least one period".into(),
            ));
        }
        if riskless.len() != returns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} riskless rates for {} return distributions",
                riskless.len(),
                returns.len()
            )));
        }
        if let Some(r) = riskless.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "riskless total return {r} must be positive"
            )));
        }
        if !x0.is_finite() {
            return Err(Error::NonFinite("initial wealth".into()));
        }
        for (t, d) in returns.iter().enumerate() {
            d.validate()
                .map_err(|e| Error::InvalidInput(format!("returns at stage {t}: {e}")))?;
        }
        let n = returns[0].dim();
        if returns.iter().any(|d| d.dim() != n) {
            return Err(Error::DimensionMismatch(
                "return distributions differ in asset count".into(),
            ));
        }
        let excess = match kind {
            ReturnKind::Excess => returns.clone(),
            ReturnKind::Total => returns
                .iter()
                .zip(&riskless)
                .map(|(d, &r)| StageDistribution {
                    outcomes: d
                        .outcomes
                        .iter()
                        .map(|o| o.iter().map(|e| e - r).collect())
                        .collect(),
                    probabilities: d.probabilities.clone(),
                })
                .collect(),
        };
        Ok(MarketModel {
            riskless,
            returns,
            kind,
            excess,
            x0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.riskless.len()
    }

    pub fn assets(&self) -> usize {
        self.returns[0].dim()
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn riskless(&self) -> &[f64] {
        &self.riskless
    }

    pub fn kind(&self) -> ReturnKind {
        self.kind
    }

    pub fn returns(&self) -> &[StageDistribution] {
        &self.returns
    }

    pub fn excess(&self) -> &[StageDistribution] {
        &self.excess
    }

    /// Π_{τ=from}^{to−1} r_τ, empty products being 1.
    pub fn growth(&self, from: usize, to: usize) -> f64 {
        self.riskless[from.min(to)..to].iter().product()
    }

    /// Scenario tree over excess returns.
    pub fn tree(&self) -> Result<ScenarioTree> {
        ScenarioTree::build(self.excess.clone())
    }

    pub(crate) fn excess_outcome(&self, t: usize, scenario: &ScenarioPath) -> DVector<f64> {
        self.excess[t].outcome(scenario.outcome_indices[t])
    }
}

pub fn excess_returns(m: &MarketModel) -> Vec<StageDistribution> {
    m.excess.clone()
}

/// Wealth x_0..x_T along one scenario under per-stage controls.
pub fn wealth_trajectory(
    m: &MarketModel,
    scenario: &ScenarioPath,
    controls: &[DVector<f64>],
) -> Result<Vec<f64>> {
    let (t_, n) = (m.horizon(), m.assets());
    if controls.len() != t_ || controls.iter().any(|u| u.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "need {t_} controls of dimension {n}"
        )));
    }
    if scenario.outcome_indices.len() != t_ {
        return Err(Error::DimensionMismatch(
            "scenario path does not match the horizon".into(),
        ));
    }
    let mut x = Vec::with_capacity(t_ + 1);
    x.push(m.x0);
    for (t, u) in controls.iter().enumerate() {
        let p = m.excess_outcome(t, scenario);
        x.push(m.riskless[t] * x[t] + p.dot(u));
    }
    Ok(x)
}

/// Trajectories of every scenario under an ensemble of stacked controls.
pub fn wealth_trajectories(
    m: &MarketModel,
    tree: &ScenarioTree,
    controls: &ControlEnsemble,
) -> Result<Vec<Vec<f64>>> {
    if controls.len() != tree.num_scenarios() {
        return Err(Error::DimensionMismatch(
            "one control vector per scenario is required".into(),
        ));
    }
    tree.scenarios()
        .iter()
        .enumerate()
        .map(|(i, s)| wealth_trajectory(m, s, &controls.stages_of(i)))
        .collect()
}

/// Affine map u ↦ x = free + G u over stages 0..T for one scenario. Row s,
/// block t < s of G is (Π_{τ=t+1}^{s−1} r_τ) P_t'.
pub fn wealth_response(m: &MarketModel, scenario: &ScenarioPath) -> (DVector<f64>, DMatrix<f64>) {
    let (t_, n) = (m.horizon(), m.assets());
    let free = DVector::from_fn(t_ + 1, |s, _| m.x0 * m.growth(0, s));
    let mut g = DMatrix::zeros(t_ + 1, n * t_);
    for t in 0..t_ {
        let p = m.excess_outcome(t, scenario);
        for s in (t + 1)..=t_ {
            let scale = m.growth(t + 1, s);
            for k in 0..n {
                g[(s, t * n + k)] = scale * p[k];
            }
        }
    }
    (free, g)
}
