use super::market::MarketModel;
use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageStatistics {
    pub mean: f64,
    pub variance: f64,
    /// Smallest wealth over all scenarios.
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankruptcyReport {
    /// BR_1..BR_T.
    pub rates: Vec<f64>,
    /// Set where every scenario had already gone bankrupt, so the rate is
    /// reported as 0.
    pub exhausted: Vec<bool>,
}

fn check(tree: &ScenarioTree, trajectories: &[Vec<f64>]) -> Result<usize> {
    let t_ = tree.horizon();
    if trajectories.len() != tree.num_scenarios() {
        return Err(Error::DimensionMismatch(
            "one trajectory per scenario is required".into(),
        ));
    }
    if trajectories.iter().any(|x| x.len() != t_ + 1) {
        return Err(Error::DimensionMismatch(format!(
            "trajectories must have {} entries",
            t_ + 1
        )));
    }
    Ok(t_)
}

/// x_0 Π_{τ<t} r_τ, the riskless growth path.
pub fn default_benchmarks(m: &MarketModel) -> Vec<f64> {
    (0..=m.horizon()).map(|t| m.x0() * m.growth(0, t)).collect()
}

/// First-passage rates BN_t / (number of scenarios still solvent before t).
pub fn bankruptcy_rate(
    tree: &ScenarioTree,
    trajectories: &[Vec<f64>],
    benchmarks: &[f64],
) -> Result<BankruptcyReport> {
    let t_ = check(tree, trajectories)?;
    if benchmarks.len() != t_ + 1 {
        return Err(Error::DimensionMismatch(format!(
            "need {} benchmarks, got {}",
            t_ + 1,
            benchmarks.len()
        )));
    }
    let mut alive = vec![true; trajectories.len()];
    let mut rates = Vec::with_capacity(t_);
    let mut exhausted = Vec::with_capacity(t_);
    for t in 1..=t_ {
        let survivors = alive.iter().filter(|a| **a).count();
        let mut failed = 0;
        for (x, a) in trajectories.iter().zip(alive.iter_mut()) {
            if *a && x[t] < benchmarks[t] {
                *a = false;
                failed += 1;
            }
        }
        if survivors == 0 {
            rates.push(0.0);
            exhausted.push(true);
        } else {
            rates.push(failed as f64 / survivors as f64);
            exhausted.push(false);
        }
    }
    Ok(BankruptcyReport { rates, exhausted })
}

/// Probability-weighted mean and variance and the worst case for t = 0..T.
pub fn wealth_statistics(
    tree: &ScenarioTree,
    trajectories: &[Vec<f64>],
) -> Result<Vec<StageStatistics>> {
    let t_ = check(tree, trajectories)?;
    let rho = tree.probabilities();
    Ok((0..=t_)
        .map(|t| {
            let mean: f64 = trajectories.iter().zip(rho).map(|(x, p)| p * x[t]).sum();
            let variance = trajectories
                .iter()
                .zip(rho)
                .map(|(x, p)| p * (x[t] - mean).powi(2))
                .sum();
            let worst = trajectories
                .iter()
                .map(|x| x[t])
                .fold(f64::INFINITY, f64::min);
            StageStatistics {
                mean,
                variance,
                worst,
            }
        })
        .collect())
}
