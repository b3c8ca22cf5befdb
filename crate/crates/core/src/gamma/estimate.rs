//! Thermodynamic limit `g(lambda) = inf_k Gamma(lambda, Q_k) / k^d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gamma_anneal, gamma_bruteforce_1d, AnnealSchedule, GammaEstimate};
use crate::cost::{CostFunction, CostKind};
use crate::error::{Error, Result};
use crate::rng::stream_seed;

/// Solver used for each `Gamma(lambda, Q_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GSolver {
    Anneal(AnnealSchedule),
    /// Exact grid optimum in one dimension; replicas are redundant.
    #[serde(rename = "bruteforce_1d")]
    BruteForce1d { grid_step: f64 },
}

impl Default for GSolver {
    fn default() -> Self {
        GSolver::Anneal(AnnealSchedule::default())
    }
}

/// Estimate of `g(lambda)` from a sequence of boxes.
#[derive(Debug, Clone)]
pub struct GEstimate {
    pub lambda: f64,
    /// `(k, best replica value / k^d)` in the order of the input sequence.
    pub values_by_k: Vec<(f64, f64)>,
    /// `value / k^d` of every replica, one row per `k`.
    pub replica_values: Vec<Vec<f64>>,
    pub g_value: f64,
    pub uncertainty: f64,
    /// Best estimate per `k`.
    pub best: Vec<GammaEstimate>,
}

impl GEstimate {
    /// Sample standard deviation of the replicas at the `k` achieving the minimum.
    pub fn replica_spread(&self) -> f64 {
        let i = self.argmin();
        sample_std(&self.replica_values[i])
    }

    fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &(_, v)) in self.values_by_k.iter().enumerate() {
            if v < self.values_by_k[best].1 {
                best = i;
            }
        }
        best
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// [`estimate_g_indexed`] with the default annealing schedule and `lambda`
/// index 0.
pub fn estimate_g(
    cost: &CostFunction,
    lambda: f64,
    ks: &[f64],
    dim: usize,
    replicas: usize,
    seed: u64,
) -> Result<GEstimate> {
    estimate_g_indexed(cost, lambda, 0, ks, dim, replicas, &GSolver::default(), seed)
}

/// Runs the solver on every `Q_k` (best of `replicas` runs each) and takes
/// the minimum of `value / k^d`.
///
/// Replica `r` at `ks[j]` uses the stream `(seed, [lambda_index, j, r])`, so
/// results do not depend on thread scheduling. The uncertainty is the change
/// between the last two boxes plus the replica spread where the minimum sits.
#[allow(clippy::too_many_arguments)]
pub fn estimate_g_indexed(
    cost: &CostFunction,
    lambda: f64,
    lambda_index: u64,
    ks: &[f64],
    dim: usize,
    replicas: usize,
    solver: &GSolver,
    seed: u64,
) -> Result<GEstimate> {
    if ks.len() < 3 {
        return Err(Error::invalid("the box sequence needs at least three entries"));
    }
    if ks.windows(2).any(|w| !(w[1] > w[0])) || !(ks[0] > 0.0) {
        return Err(Error::invalid("box edges must be positive and strictly increasing"));
    }
    if replicas == 0 {
        return Err(Error::invalid("need at least one replica"));
    }
    let reps = match solver {
        GSolver::Anneal(_) => replicas,
        GSolver::BruteForce1d { .. } => 1,
    };
    let jobs: Vec<(usize, usize)> = (0..ks.len()).flat_map(|j| (0..reps).map(move |r| (j, r))).collect();
    let runs: Vec<GammaEstimate> = jobs
        .par_iter()
        .map(|&(j, r)| match solver {
            GSolver::Anneal(schedule) => {
                let s = stream_seed(seed, &[lambda_index, j as u64, r as u64]);
                gamma_anneal(cost, lambda, ks[j], dim, schedule, s)
            }
            GSolver::BruteForce1d { grid_step } => {
                if dim != 1 {
                    return Err(Error::invalid("the grid solver is one-dimensional"));
                }
                gamma_bruteforce_1d(cost, lambda, ks[j], *grid_step)
            }
        })
        .collect::<Result<_>>()?;

    let mut values_by_k = Vec::with_capacity(ks.len());
    let mut replica_values = Vec::with_capacity(ks.len());
    let mut best = Vec::with_capacity(ks.len());
    for (j, chunk) in runs.chunks(reps).enumerate() {
        let per: Vec<f64> = chunk.iter().map(|e| e.value_per_volume()).collect();
        let top = chunk
            .iter()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .expect("nonempty chunk")
            .clone();
        values_by_k.push((ks[j], top.value_per_volume()));
        replica_values.push(per);
        best.push(top);
    }
    let mut est = GEstimate { lambda, values_by_k, replica_values, g_value: 0.0, uncertainty: 0.0, best };
    let i = est.argmin();
    est.g_value = est.values_by_k[i].1;
    let n = est.values_by_k.len();
    est.uncertainty = (est.values_by_k[n - 1].1 - est.values_by_k[n - 2].1).abs() + est.replica_spread();
    Ok(est)
}

/// `g(lambda)` where it is known in closed form: `0` for `lambda <= 0`,
/// `sup_n (lambda n - l(0) n (n - 1))` for a single-level step cost and
/// `lambda_+` for hard spheres, both in one dimension.
pub fn closed_form_g(cost: &CostFunction, lambda: f64, dim: usize) -> Option<f64> {
    if lambda <= 0.0 {
        return Some(0.0);
    }
    if dim != 1 {
        return None;
    }
    match cost.kind() {
        CostKind::HardSphere => Some(lambda),
        CostKind::Step { levels } if levels.len() == 1 && levels[0].cutoff == 1.0 => {
            let c = levels[0].value;
            if c <= 0.0 {
                return None;
            }
            // the objective is concave in n with maximiser near lambda / (2c) + 1/2
            let n_star = (lambda / (2.0 * c) + 0.5).floor();
            let f = |n: f64| lambda * n - c * n * (n - 1.0);
            Some(f(n_star).max(f(n_star + 1.0)).max(0.0))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let step = CostFunction::step(2.0);
        assert_eq!(closed_form_g(&step, 1.0, 1), Some(1.0));
        assert_eq!(closed_form_g(&step, 3.0, 1), Some(4.0));
        assert_eq!(closed_form_g(&step, -2.0, 1), Some(0.0));
        assert_eq!(closed_form_g(&CostFunction::hard_sphere(), 3.0, 1), Some(3.0));
        assert_eq!(closed_form_g(&CostFunction::riesz(2.0), 1.0, 1), None);
        // enumerate n <= 10 directly
        for i in 0..=40 {
            let lambda = 0.25 * i as f64;
            let direct = (0..=10).map(|n| lambda * n as f64 - (n * (n.max(1) - 1)) as f64).fold(0.0, f64::max);
            assert_eq!(closed_form_g(&step, lambda, 1), Some(direct));
        }
    }

    #[test]
    fn nonpositive_lambda() {
        let e = estimate_g(&CostFunction::step(2.0), -0.5, &[4.0, 8.0, 16.0], 1, 2, 9).unwrap();
        assert_eq!(e.g_value, 0.0);
        assert_eq!(e.uncertainty, 0.0);
    }

    #[test]
    fn step_cost_one_dimension() {
        let e = estimate_g(&CostFunction::step(2.0), 1.0, &[4.0, 8.0, 16.0], 1, 2, 1).unwrap();
        assert!((e.g_value - 1.0).abs() <= 0.05, "{}", e.g_value);
        let min = e.values_by_k.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(e.g_value <= min + e.uncertainty);
    }

    #[test]
    fn hard_spheres_one_dimension() {
        let solver = GSolver::BruteForce1d { grid_step: 0.25 };
        let e = estimate_g_indexed(&CostFunction::hard_sphere(), 3.0, 0, &[4.0, 6.0, 8.0], 1, 1, &solver, 0).unwrap();
        assert_eq!(e.g_value, 3.0);
        let a = estimate_g(&CostFunction::hard_sphere(), 3.0, &[4.0, 6.0, 8.0], 1, 2, 4).unwrap();
        assert!((a.g_value - 3.0).abs() <= 0.15, "{}", a.g_value);
    }

    #[test]
    fn rejects_short_or_unsorted_sequences() {
        let c = CostFunction::step(2.0);
        assert!(estimate_g(&c, 1.0, &[4.0, 8.0], 1, 1, 0).is_err());
        assert!(estimate_g(&c, 1.0, &[4.0, 8.0, 6.0], 1, 1, 0).is_err());
    }

    #[test]
    fn solver_spec_round_trip() {
        let s: GSolver = serde_json::from_str(r#"{"kind":"bruteforce_1d","grid_step":0.5}"#).unwrap();
        assert_eq!(s, GSolver::BruteForce1d { grid_step: 0.5 });
        let a: GSolver = serde_json::from_str(r#"{"kind":"anneal","stages":10}"#).unwrap();
        assert!(matches!(a, GSolver::Anneal(ref s) if s.stages == 10));
    }
}
