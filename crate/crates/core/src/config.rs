//! JSON problem files.
//!
//! Every file has a `problem` block, an optional `pha` block with
//! `alpha`, `epsilon` and `max_iterations`, and an optional `output` block
//! naming the result directory. Matrices are arrays of rows.
//! Stage distributions are `{"outcomes": [[..], ..], "probabilities": [..]}`
//! with equal probabilities when `probabilities` is omitted.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::online_qp::OnlineQpProblem;
use crate::pha::PhaConfig;
use crate::portfolio::{MarketModel, MvsSpec, ReturnKind, SmoothingSpec, UtilitySpec};
use crate::tree::StageDistribution;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub outcomes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl StageSpec {
    pub fn into_distribution(self) -> Result<StageDistribution> {
        match self.probabilities {
            Some(p) => StageDistribution::new(self.outcomes, p),
            None => StageDistribution::uniform(self.outcomes),
        }
    }
}

fn distributions(stages: Vec<StageSpec>) -> Result<Vec<StageDistribution>> {
    stages
        .into_iter()
        .enumerate()
        .map(|(t, s)| {
            s.into_distribution()
                .map_err(|e| Error::InvalidInput(format!("stage {t}: {e}")))
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaSection {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl PhaSection {
    pub fn config(&self) -> PhaConfig {
        let d = PhaConfig::default();
        PhaConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
}

/// A single matrix shared by all stages, or one per stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageMatrices {
    PerStage(Vec<Vec<Vec<f64>>>),
    Shared(Vec<Vec<f64>>),
}

/// A scalar shared by all stages, or one per stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageScalars {
    PerStage(Vec<f64>),
    Shared(f64),
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} has rows of different lengths"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl StageMatrices {
    fn expand(&self, name: &str, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        match self {
            StageMatrices::Shared(rows) => Ok(vec![matrix(name, rows)?; horizon]),
            StageMatrices::PerStage(list) => list
                .iter()
                .enumerate()
                .map(|(t, rows)| matrix(&format!("{name}_{t}"), rows))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpSpec {
    pub horizon: usize,
    pub m: usize,
    pub n: usize,
    pub a: StageMatrices,
    pub b: StageMatrices,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub d: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub noise: Vec<StageSpec>,
}

impl QpSpec {
    pub fn into_problem(self) -> Result<OnlineQpProblem> {
        let (t_, m, n) = (self.horizon, self.m, self.n);
        OnlineQpProblem {
            horizon: t_,
            m,
            n,
            a: self.a.expand("A", t_)?,
            b: self.b.expand("B", t_)?,
            q: matrix("Q", &self.q)?,
            r: matrix("R", &self.r)?,
            c: self
                .c
                .map_or_else(|| DVector::zeros(m * (t_ + 1)), DVector::from_vec),
            d: self
                .d
                .map_or_else(|| DVector::zeros(n * t_), DVector::from_vec),
            x0: DVector::from_vec(self.x0),
            noise: distributions(self.noise)?,
        }
        .validated()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub riskless: StageScalars,
    pub x0: f64,
    pub returns: ReturnKind,
    pub stages: Vec<StageSpec>,
}

impl MarketSpec {
    pub fn into_market(self) -> Result<MarketModel> {
        let t_ = self.stages.len();
        let riskless = match self.riskless {
            StageScalars::Shared(r) => vec![r; t_],
            StageScalars::PerStage(v) => v,
        };
        MarketModel::new(riskless, distributions(self.stages)?, self.returns, self.x0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityProblemSpec {
    pub market: MarketSpec,
    pub utility: UtilitySpec,
    pub smoothing: SmoothingSpec,
    /// x_t^b for t = 0..T; defaults to riskless growth of x_0.
    #[serde(default)]
    pub benchmarks: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvProblemSpec {
    pub market: MarketSpec,
    pub w: f64,
    pub gamma: f64,
    /// λ grid step; defaults to a twentieth of the bracket.
    #[serde(default)]
    pub theta: Option<f64>,
    /// x_t^b for t = 0..T; defaults to zero.
    #[serde(default)]
    pub benchmarks: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile<P> {
    pub problem: P,
    #[serde(default)]
    pub pha: PhaSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn parse<P: for<'de> Deserialize<'de>>(text: &str) -> Result<RunFile<P>> {
    serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("cannot parse problem file: {e}")))
}

#[derive(Clone, Debug)]
pub struct QpRun {
    pub problem: OnlineQpProblem,
    pub pha: PhaConfig,
    pub output: OutputSection,
}

#[derive(Clone, Debug)]
pub struct UtilityRun {
    pub market: MarketModel,
    pub utility: UtilitySpec,
    pub smoothing: SmoothingSpec,
    pub benchmarks: Option<Vec<f64>>,
    pub pha: PhaConfig,
    pub output: OutputSection,
}

#[derive(Clone, Debug)]
pub struct MvRun {
    pub market: MarketModel,
    pub spec: MvsSpec,
    pub theta: Option<f64>,
    pub benchmarks: Option<Vec<f64>>,
    pub pha: PhaConfig,
    pub output: OutputSection,
}

fn check_benchmarks(b: &Option<Vec<f64>>, horizon: usize) -> Result<()> {
    match b {
        Some(v) if v.len() != horizon + 1 => Err(Error::DimensionMismatch(format!(
            "need {} benchmarks, got {}",
            horizon + 1,
            v.len()
        ))),
        _ => Ok(()),
    }
}

pub fn load_qp(text: &str) -> Result<QpRun> {
    let file: RunFile<QpSpec> = parse(text)?;
    Ok(QpRun {
        problem: file.problem.into_problem()?,
        pha: file.pha.config(),
        output: file.output,
    })
}

pub fn load_utility(text: &str) -> Result<UtilityRun> {
    let file: RunFile<UtilityProblemSpec> = parse(text)?;
    let p = file.problem;
    let market = p.market.into_market()?;
    p.utility.validate()?;
    p.smoothing.validate(market.horizon(), market.assets())?;
    check_benchmarks(&p.benchmarks, market.horizon())?;
    Ok(UtilityRun {
        market,
        utility: p.utility,
        smoothing: p.smoothing,
        benchmarks: p.benchmarks,
        pha: file.pha.config(),
        output: file.output,
    })
}

pub fn load_mv(text: &str) -> Result<MvRun> {
    let file: RunFile<MvProblemSpec> = parse(text)?;
    let p = file.problem;
    let market = p.market.into_market()?;
    let spec = MvsSpec {
        w: p.w,
        gamma: p.gamma,
    };
    spec.validate()?;
    check_benchmarks(&p.benchmarks, market.horizon())?;
    Ok(MvRun {
        market,
        spec,
        theta: p.theta,
        benchmarks: p.benchmarks,
        pha: file.pha.config(),
        output: file.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bundled_fixtures_load() {
        let qp = load_qp(fixtures::EXAMPLE_QP).unwrap();
        assert_eq!((qp.problem.horizon, qp.problem.m, qp.problem.n), (3, 1, 2));
        assert!(load_qp(fixtures::EXAMPLE_QP_SEPARABLE)
            .unwrap()
            .problem
            .is_stage_separable());
        assert_eq!(
            load_qp(fixtures::EXAMPLE_QP_DETERMINISTIC)
                .unwrap()
                .problem
                .tree()
                .unwrap()
                .num_scenarios(),
            1
        );
        let u = load_utility(fixtures::EXAMPLE_UTILITY).unwrap();
        assert_eq!(u.market.tree().unwrap().num_scenarios(), 125);
        load_utility(fixtures::EXAMPLE_UTILITY_FLAT).unwrap();
        let mv = load_mv(fixtures::EXAMPLE_MV).unwrap();
        assert_eq!(mv.market.tree().unwrap().num_scenarios(), 350);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text =
            fixtures::EXAMPLE_QP.replacen("\"horizon\"", "\"horizon_typo\": 1, \"horizon\"", 1);
        assert!(matches!(load_qp(&text), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn output_directory_is_read() {
        let text = fixtures::EXAMPLE_QP_DETERMINISTIC
            .trim_end()
            .trim_end_matches('}')
            .to_string()
            + r#", "output": {"directory": "out/qp"}}"#;
        let run = load_qp(&text).unwrap();
        assert_eq!(run.output.directory, Some(PathBuf::from("out/qp")));
        assert_eq!(
            load_qp(fixtures::EXAMPLE_QP_DETERMINISTIC).unwrap().output,
            OutputSection::default()
        );
    }

    #[test]
    fn pha_defaults() {
        let c = PhaSection::default().config();
        assert_eq!(c, PhaConfig::default());
    }
}
