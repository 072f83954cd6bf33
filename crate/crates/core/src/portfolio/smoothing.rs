use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::market::MarketModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    /// f_t = x_t
    Wealth,
    /// f_t = Σ_{i∈N} u_t^i
    Investment,
}

/// γ Σ_{t∈𝒯} (f_t − mean_𝒯 f)². Stage and asset indices are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub kind: SmoothingKind,
    pub stages: Vec<usize>,
    #[serde(default)]
    pub assets: Vec<usize>,
    #[serde(default)]
    pub gamma: f64,
}

impl SmoothingSpec {
    pub fn none() -> Self {
        SmoothingSpec {
            kind: SmoothingKind::Wealth,
            stages: Vec::new(),
            assets: Vec::new(),
            gamma: 0.0,
        }
    }

    pub fn wealth(stages: Vec<usize>, gamma: f64) -> Self {
        SmoothingSpec {
            kind: SmoothingKind::Wealth,
            stages,
            assets: Vec::new(),
            gamma,
        }
    }

    pub fn validate(&self, horizon: usize, assets: usize) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothing weight {} must be nonnegative",
                self.gamma
            )));
        }
        if self.gamma > 0.0 && self.stages.is_empty() {
            return Err(Error::InvalidInput(
                "smoothing needs at least one stage".into(),
            ));
        }
        let last = match self.kind {
            SmoothingKind::Wealth => horizon,
            SmoothingKind::Investment => horizon - 1,
        };
        if let Some(t) = self.stages.iter().find(|&&t| t > last) {
            return Err(Error::InvalidInput(format!(
                "smoothing stage {t} is beyond {last}"
            )));
        }
        if self.kind == SmoothingKind::Investment {
            if self.gamma > 0.0 && self.assets.is_empty() {
                return Err(Error::InvalidInput(
                    "investment smoothing needs at least one asset".into(),
                ));
            }
            if let Some(i) = self.assets.iter().find(|&&i| i >= assets) {
                return Err(Error::InvalidInput(format!(
                    "smoothing asset {i} out of range"
                )));
            }
        }
        Ok(())
    }

    /// The smoothed quantity f_t for every t in 𝒯.
    fn values(&self, traj: &[f64], controls: &[DVector<f64>]) -> Result<Vec<f64>> {
        self.stages
            .iter()
            .map(|&t| match self.kind {
                SmoothingKind::Wealth => traj
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::DimensionMismatch(format!("no wealth at stage {t}"))),
                SmoothingKind::Investment => {
                    let u = controls.get(t).ok_or_else(|| {
                        Error::DimensionMismatch(format!("no control at stage {t}"))
                    })?;
                    self.assets
                        .iter()
                        .map(|&i| {
                            u.get(i)
                                .copied()
                                .ok_or_else(|| Error::DimensionMismatch(format!("no asset {i}")))
                        })
                        .sum()
                }
            })
            .collect()
    }

    /// Quadratic form of S (without γ) for one scenario: f_𝒯 = J u + f0,
    /// so S = (Ju + f0)'C(Ju + f0) with C the centering matrix.
    pub(crate) fn quadratic(
        &self,
        m: &MarketModel,
        free: &DVector<f64>,
        g: &DMatrix<f64>,
    ) -> SmoothingQuadratic {
        let k = self.stages.len();
        let nt = m.assets() * m.horizon();
        let mut j = DMatrix::zeros(k, nt);
        let mut f0 = DVector::zeros(k);
        for (row, &t) in self.stages.iter().enumerate() {
            match self.kind {
                SmoothingKind::Wealth => {
                    j.row_mut(row).copy_from(&g.row(t));
                    f0[row] = free[t];
                }
                SmoothingKind::Investment => {
                    for &i in &self.assets {
                        j[(row, t * m.assets() + i)] = 1.0;
                    }
                }
            }
        }
        if k == 0 {
            return SmoothingQuadratic {
                hessian: DMatrix::zeros(nt, nt),
                linear: DVector::zeros(nt),
                constant: 0.0,
            };
        }
        let centering = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64);
        let jc = j.transpose() * &centering;
        SmoothingQuadratic {
            hessian: &jc * &j * 2.0,
            linear: &jc * &f0 * 2.0,
            constant: f0.dot(&(&centering * &f0)),
        }
    }
}

/// S(u) = ½u'Hu + l'u + c.
#[derive(Clone, Debug)]
pub(crate) struct SmoothingQuadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

/// Σ_{t∈𝒯} (f_t − mean f)², without the weight γ.
pub fn smoothing_value(
    traj: &[f64],
    controls: &[DVector<f64>],
    spec: &SmoothingSpec,
) -> Result<f64> {
    if spec.stages.is_empty() {
        return Err(Error::InvalidInput(
            "smoothing needs at least one stage".into(),
        ));
    }
    let f = spec.values(traj, controls)?;
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    Ok(f.iter().map(|v| (v - mean).powi(2)).sum())
}
