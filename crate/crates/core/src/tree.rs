//! Finite scenario trees built as products of independent stagewise
//! distributions.
//!
//! Scenarios are enumerated in lexicographic order of their stagewise outcome
//! indices (the last stage varies fastest). Every vector, file and reduction in
//! the crate follows that order. At stage `t` two scenarios share a bundle when
//! they agree on the outcomes of stages `0..t`, so stage 0 always has a single
//! bundle holding every scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// A discrete distribution over vectors for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    pub outcomes: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

impl StageDistribution {
    pub fn new(outcomes: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        let dist = StageDistribution {
            outcomes,
            probabilities,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Equiprobable outcomes.
    pub fn uniform(outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let k = outcomes.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "stage distribution has no outcomes".into(),
            ));
        }
        Self::new(outcomes, vec![1.0 / k as f64; k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::InvalidInput(
                "stage distribution has no outcomes".into(),
            ));
        }
        if self.outcomes.len() != self.probabilities.len() {
            return Err(Error::InvalidInput(format!(
                "{} outcomes but {} probabilities",
                self.outcomes.len(),
                self.probabilities.len()
            )));
        }
        let dim = self.outcomes[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "outcome vectors must be nonempty".into(),
            ));
        }
        if self.outcomes.iter().any(|o| o.len() != dim) {
            return Err(Error::DimensionMismatch(
                "outcomes of one stage differ in dimension".into(),
            ));
        }
        if self.outcomes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stage outcome".into()));
        }
        for &p in &self.probabilities {
            // zero-probability outcomes would create empty-weight bundles
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "outcome probability {p} must be positive"
                )));
            }
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "stage probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.outcomes[0].len()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcome(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.outcomes[k])
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (o, &p) in self.outcomes.iter().zip(&self.probabilities) {
            for (mi, oi) in m.iter_mut().zip(o) {
                *mi += p * oi;
            }
        }
        m
    }

    /// E[ξ ξ'].
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut s = DMatrix::zeros(d, d);
        for (o, &p) in self.outcomes.iter().zip(&self.probabilities) {
            let v = DVector::from_column_slice(o);
            s += (&v * v.transpose()) * p;
        }
        s
    }
}

/// One root-to-leaf path of the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioPath {
    pub outcome_indices: Vec<usize>,
    /// Stacked noise realization (ξ_0', …, ξ_{T-1}')'.
    pub realization: DVector<f64>,
}

/// Serialized form: just the stage list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeSpec {
    pub stages: Vec<StageDistribution>,
}

#[derive(Clone, Debug)]
pub struct ScenarioTree {
    stages: Vec<StageDistribution>,
    scenarios: Vec<ScenarioPath>,
    probabilities: Vec<f64>,
    /// bundle_index[t][i]
    bundle_index: Vec<Vec<usize>>,
    /// bundles[t][l] = member scenarios, ascending
    bundles: Vec<Vec<Vec<usize>>>,
}

impl ScenarioTree {
    pub fn build(stages: Vec<StageDistribution>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidInput(
                "scenario tree needs at least one stage".into(),
            ));
        }
        for (t, s) in stages.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::InvalidInput(format!("stage {t}: {e}")))?;
        }
        let horizon = stages.len();
        let count: usize = stages.iter().map(|s| s.len()).product();

        let mut scenarios = Vec::with_capacity(count);
        let mut probabilities = Vec::with_capacity(count);
        let mut idx = vec![0usize; horizon];
        for _ in 0..count {
            let mut real = Vec::new();
            let mut rho = 1.0;
            for (t, &k) in idx.iter().enumerate() {
                real.extend_from_slice(&stages[t].outcomes[k]);
                rho *= stages[t].probabilities[k];
            }
            scenarios.push(ScenarioPath {
                outcome_indices: idx.clone(),
                realization: DVector::from_vec(real),
            });
            probabilities.push(rho);
            // odometer increment, last stage fastest
            for t in (0..horizon).rev() {
                idx[t] += 1;
                if idx[t] < stages[t].len() {
                    break;
                }
                idx[t] = 0;
            }
        }

        let mut bundle_index = Vec::with_capacity(horizon);
        let mut bundles = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut ids: Vec<usize> = Vec::with_capacity(count);
            let mut members: Vec<Vec<usize>> = Vec::new();
            let mut seen: std::collections::HashMap<&[usize], usize> = Default::default();
            for (i, s) in scenarios.iter().enumerate() {
                let prefix = &s.outcome_indices[..t];
                let next = members.len();
                let id = *seen.entry(prefix).or_insert(next);
                if id == next {
                    members.push(Vec::new());
                }
                members[id].push(i);
                ids.push(id);
            }
            bundle_index.push(ids);
            bundles.push(members);
        }

        Ok(ScenarioTree {
            stages,
            scenarios,
            probabilities,
            bundle_index,
            bundles,
        })
    }

    pub fn from_spec(spec: TreeSpec) -> Result<Self> {
        Self::build(spec.stages)
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            stages: self.stages.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageDistribution] {
        &self.stages
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn scenarios(&self) -> &[ScenarioPath] {
        &self.scenarios
    }

    pub fn scenario(&self, i: usize) -> &ScenarioPath {
        &self.scenarios[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.probabilities[i]
    }

    pub fn bundle_of(&self, t: usize, i: usize) -> usize {
        self.bundle_index[t][i]
    }

    /// The partition at stage `t`, bundles in first-occurrence order.
    pub fn bundles(&self, t: usize) -> &[Vec<usize>] {
        &self.bundles[t]
    }

    pub fn num_bundles(&self, t: usize) -> usize {
        self.bundles[t].len()
    }

    /// Outcome indices of stages `0..t` shared by bundle `l` at stage `t`.
    pub fn bundle_prefix(&self, t: usize, l: usize) -> &[usize] {
        &self.scenarios[self.bundles[t][l][0]].outcome_indices[..t]
    }

    fn check_stage(&self, t: usize) -> Result<()> {
        if t >= self.horizon() {
            return Err(Error::InvalidInput(format!(
                "stage {t} out of range (horizon {})",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Bundle-wise conditional expectation of per-scenario stage controls.
    pub fn aggregate(&self, t: usize, controls: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.check_stage(t)?;
        if controls.len() != self.num_scenarios() {
            return Err(Error::DimensionMismatch(format!(
                "{} controls for {} scenarios",
                controls.len(),
                self.num_scenarios()
            )));
        }
        let n = controls[0].len();
        if controls.iter().any(|u| u.len() != n) {
            return Err(Error::DimensionMismatch(
                "controls differ in dimension".into(),
            ));
        }
        let mut out = vec![DVector::zeros(n); controls.len()];
        for members in &self.bundles[t] {
            let (mean, _) = self.weighted_mean(members, |j| controls[j].rows(0, n));
            for &i in members {
                out[i].copy_from(&mean);
            }
        }
        Ok(out)
    }

    /// Weighted mean over `members` of a per-scenario block, summed in
    /// scenario order. Returns the mean and the bundle probability.
    pub(crate) fn weighted_mean<'a, F>(&self, members: &[usize], block: F) -> (DVector<f64>, f64)
    where
        F: Fn(usize) -> nalgebra::DVectorView<'a, f64>,
    {
        let n = block(members[0]).len();
        let mut acc = DVector::zeros(n);
        let mut mass = 0.0;
        for &j in members {
            let rho = self.probabilities[j];
            acc.axpy(rho, &block(j), 1.0);
            mass += rho;
        }
        (acc / mass, mass)
    }

    /// Matrix form of [`aggregate`](Self::aggregate) acting on the stacked
    /// vector (u_t^1', …, u_t^|I|')'.
    pub fn projection_matrix(&self, t: usize, n: usize) -> Result<DMatrix<f64>> {
        self.check_stage(t)?;
        if n == 0 {
            return Err(Error::InvalidInput(
                "control dimension must be at least 1".into(),
            ));
        }
        let s = self.num_scenarios();
        let mut m = DMatrix::zeros(n * s, n * s);
        for members in &self.bundles[t] {
            let mass: f64 = members.iter().map(|&j| self.probabilities[j]).sum();
            for &i in members {
                for &j in members {
                    let weight = self.probabilities[j] / mass;
                    for c in 0..n {
                        m[(i * n + c, j * n + c)] = weight;
                    }
                }
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coin() -> StageDistribution {
        StageDistribution::uniform(vec![vec![1.0], vec![-1.0]]).unwrap()
    }

    #[test]
    fn single_stage_two_outcomes() {
        let tree = ScenarioTree::build(vec![coin()]).unwrap();
        assert_eq!(tree.num_scenarios(), 2);
        assert_eq!(tree.probabilities(), &[0.5, 0.5]);
        assert_eq!(tree.bundles(0), &[vec![0, 1]]);
    }

    #[test]
    fn binomial_three_stages() {
        let tree = ScenarioTree::build(vec![coin(), coin(), coin()]).unwrap();
        assert_eq!(tree.num_scenarios(), 8);
        assert_eq!(tree.num_bundles(0), 1);
        assert_eq!(tree.num_bundles(1), 2);
        assert_eq!(tree.num_bundles(2), 4);
        assert_eq!(tree.bundles(1)[0], vec![0, 1, 2, 3]);
        assert_eq!(tree.bundles(2)[3], vec![6, 7]);
        // lexicographic: scenario 1 is (0,0,1)
        assert_eq!(tree.scenario(1).outcome_indices, vec![0, 0, 1]);
        assert_eq!(tree.scenario(1).realization.as_slice(), &[1.0, 1.0, -1.0]);
        assert_eq!(tree.bundle_prefix(2, 2), &[1, 0]);
    }

    #[test]
    fn product_count() {
        let stage = |k: usize| {
            StageDistribution::uniform((0..k).map(|j| vec![j as f64]).collect()).unwrap()
        };
        let tree = ScenarioTree::build(vec![stage(10), stage(7), stage(5)]).unwrap();
        assert_eq!(tree.num_scenarios(), 350);
        let total: f64 = tree.probabilities().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_stages() {
        assert!(ScenarioTree::build(vec![]).is_err());
        let mismatch = StageDistribution {
            outcomes: vec![vec![1.0]],
            probabilities: vec![0.5, 0.5],
        };
        assert!(ScenarioTree::build(vec![mismatch]).is_err());
        let zero = StageDistribution {
            outcomes: vec![vec![1.0], vec![2.0]],
            probabilities: vec![1.0, 0.0],
        };
        assert!(ScenarioTree::build(vec![zero]).is_err());
        let unnormalized = StageDistribution {
            outcomes: vec![vec![1.0], vec![2.0]],
            probabilities: vec![0.5, 0.6],
        };
        assert!(ScenarioTree::build(vec![unnormalized]).is_err());
        let ragged = StageDistribution {
            outcomes: vec![vec![1.0], vec![2.0, 3.0]],
            probabilities: vec![0.5, 0.5],
        };
        assert!(ScenarioTree::build(vec![ragged]).is_err());
    }

    #[test]
    fn aggregate_equal_weights() {
        let tree = ScenarioTree::build(vec![coin()]).unwrap();
        let a = DVector::from_vec(vec![1.0, 4.0]);
        let b = DVector::from_vec(vec![3.0, 0.0]);
        let out = tree.aggregate(0, &[a, b]).unwrap();
        assert_eq!(out[0].as_slice(), &[2.0, 2.0]);
        assert_eq!(out[1], out[0]);
    }

    #[test]
    fn aggregate_weighted() {
        let stage = StageDistribution::new(vec![vec![0.0], vec![1.0]], vec![0.3, 0.7]).unwrap();
        let second = StageDistribution::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let tree = ScenarioTree::build(vec![stage, second]).unwrap();
        // bundle {0,1} at t=1 has probabilities 0.075, 0.225
        let us: Vec<_> = (0..4)
            .map(|i| DVector::from_vec(vec![i as f64 * 4.0]))
            .collect();
        let out = tree.aggregate(1, &us).unwrap();
        assert_abs_diff_eq!(out[0][0], 0.25 * 0.0 + 0.75 * 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[2][0], 0.25 * 8.0 + 0.75 * 12.0, epsilon = 1e-14);
    }

    #[test]
    fn aggregate_bundle_weights_three_to_one() {
        // bundle with rho = (0.3, 0.1) -> 0.75 a + 0.25 b
        let stage = StageDistribution::new(vec![vec![0.0], vec![1.0]], vec![0.4, 0.6]).unwrap();
        let second = StageDistribution::new(vec![vec![0.0], vec![1.0]], vec![0.75, 0.25]).unwrap();
        let tree = ScenarioTree::build(vec![stage, second]).unwrap();
        assert_abs_diff_eq!(tree.probability(0), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(tree.probability(1), 0.1, epsilon = 1e-15);
        let a = DVector::from_vec(vec![2.0, -1.0]);
        let b = DVector::from_vec(vec![6.0, 3.0]);
        let z = DVector::zeros(2);
        let out = tree
            .aggregate(1, &[a.clone(), b.clone(), z.clone(), z])
            .unwrap();
        let expect = a * 0.75 + b * 0.25;
        assert_abs_diff_eq!(out[0], expect, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], expect, epsilon = 1e-14);
    }

    #[test]
    fn aggregate_errors() {
        let tree = ScenarioTree::build(vec![coin()]).unwrap();
        let u = DVector::zeros(1);
        assert!(tree.aggregate(1, &[u.clone(), u.clone()]).is_err());
        assert!(tree.aggregate(0, std::slice::from_ref(&u)).is_err());
        assert!(tree.aggregate(0, &[u, DVector::zeros(2)]).is_err());
    }

    #[test]
    fn projection_small_cases() {
        let tree = ScenarioTree::build(vec![coin()]).unwrap();
        let p = tree.projection_matrix(0, 1).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));

        let tree = ScenarioTree::build(vec![coin(), coin()]).unwrap();
        // stage 1 with a single outcome at stage 1 level: bundles are {0,1},{2,3}
        let p = tree.projection_matrix(1, 1).unwrap();
        assert_abs_diff_eq!(p[(0, 1)], 0.5);
        assert_abs_diff_eq!(p[(0, 2)], 0.0);

        let single = StageDistribution::uniform(vec![vec![0.0]]).unwrap();
        let tree = ScenarioTree::build(vec![coin(), single]).unwrap();
        assert_eq!(
            tree.projection_matrix(1, 1).unwrap(),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn projection_matches_aggregate_on_binomial_tree() {
        let tree = ScenarioTree::build(vec![coin(), coin(), coin()]).unwrap();
        let n = 2;
        let p = tree.projection_matrix(1, n).unwrap();
        // independent construction from the bundle weights
        let mut expect = DMatrix::zeros(16, 16);
        for block in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    for c in 0..n {
                        expect[((block * 4 + i) * n + c, (block * 4 + j) * n + c)] = 0.25;
                    }
                }
            }
        }
        assert_eq!(p, expect);
        let us: Vec<_> = (0..8)
            .map(|i| DVector::from_vec(vec![i as f64, (i * i) as f64 - 3.0]))
            .collect();
        let stacked = DVector::from_iterator(16, us.iter().flat_map(|u| u.iter().copied()));
        let projected = &p * stacked;
        let agg = tree.aggregate(1, &us).unwrap();
        for i in 0..8 {
            for c in 0..n {
                assert_abs_diff_eq!(projected[i * n + c], agg[i][c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn serde_roundtrip() {
        let tree = ScenarioTree::build(vec![coin(), coin()]).unwrap();
        let text = serde_json::to_string(&tree.to_spec()).unwrap();
        let back = ScenarioTree::from_spec(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.scenarios(), tree.scenarios());
    }
}
