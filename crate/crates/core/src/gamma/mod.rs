//! The grand-canonical value
//! `Gamma(lambda, B) = sup { lambda #S - xi(S) : S finite in B }`
//! on half-open boxes, its thermodynamic limit `g(lambda)`, and the
//! elementary bounds that bracket both.

mod anneal;
mod dp;
mod estimate;

pub use anneal::{anneal_field, gamma_anneal, AnnealOutcome, AnnealSchedule};
pub use dp::{gamma_bruteforce_1d, DP_STATE_CAP};
pub use estimate::{closed_form_g, estimate_g, estimate_g_indexed, GEstimate, GSolver};

use std::fmt;

use serde::Serialize;

use crate::config::{AxisBox, PointConfiguration};
use crate::convex::phi;
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::extended::{mul, pos};

/// How a [`GammaEstimate`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteforceDp,
    Anneal,
    /// Annealing never beat its lattice starting point.
    LatticeSeed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::BruteforceDp => "bruteforce_dp",
            Method::Anneal => "anneal",
            Method::LatticeSeed => "lattice_seed",
        })
    }
}

/// Best configuration found for `Gamma(lambda, Q_k)`.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub lambda: f64,
    pub k: f64,
    pub dim: usize,
    /// `lambda #config - xi(config)`, recomputed from `config`.
    pub value: f64,
    pub config: PointConfiguration,
    pub method: Method,
    pub seed: Option<u64>,
    /// Proposals (annealing) or grid sites (dynamic program) processed.
    pub sweeps: u64,
    /// True when `value` is only known to be a lower bound on `Gamma`.
    pub lower_bound_flag: bool,
    pub wallclock_ms: u128,
}

impl GammaEstimate {
    pub fn value_per_volume(&self) -> f64 {
        self.value / self.k.powi(self.dim as i32)
    }

    pub(crate) fn empty(lambda: f64, k: f64, dim: usize, method: Method, seed: Option<u64>) -> Self {
        GammaEstimate {
            lambda,
            k,
            dim,
            value: 0.0,
            config: PointConfiguration::empty(AxisBox::cube(dim, k)),
            method,
            seed,
            sweeps: 0,
            lower_bound_flag: method != Method::BruteforceDp,
            wallclock_ms: 0,
        }
    }
}

/// `lambda #S - xi(S)` for a configuration, `-inf` when the energy is infinite.
pub fn gamma_objective(config: &PointConfiguration, cost: &CostFunction, lambda: f64) -> Result<f64> {
    let e = crate::config::interaction_energy(config, cost, 1.0)?;
    Ok(lambda * config.count() as f64 - e)
}

/// Minimal number of disjoint `delta`-cubes covering the box.
pub fn covering_number(bbox: &AxisBox, delta: f64) -> Result<u64> {
    bbox.covering_number(delta)
}

/// `N l-(delta) (zeta - 1)_+` with `zeta = N / m_delta(box)`: every `N`-point
/// set in the half-open box has at least this much energy.
///
/// Pairs inside one half-open `delta`-cube are closer than `delta sqrt(d)`,
/// so the envelope is taken over that open range.
pub fn gamma_lower_bound_energy(n: u64, bbox: &AxisBox, cost: &CostFunction, delta: f64) -> Result<f64> {
    let m = bbox.covering_number(delta)? as f64;
    let l = cost.lower_envelope_strict(delta, bbox.dim())?;
    let zeta = n as f64 / m;
    Ok(mul(mul(n as f64, l), pos(zeta - 1.0)))
}

/// `m_delta(B) l-(delta) phi(lambda / l-(delta))`, or `lambda_+ m_delta(B)` when
/// `l-(delta) = +inf`.
pub fn gamma_upper_bound(lambda: f64, bbox: &AxisBox, delta: f64, cost: &CostFunction) -> Result<f64> {
    let m = bbox.covering_number(delta)? as f64;
    let l = cost.lower_envelope_strict(delta, bbox.dim())?;
    if l == 0.0 {
        return Err(Error::precondition(format!(
            "l-({delta}) = 0; choose a smaller delta"
        )));
    }
    if l == f64::INFINITY {
        return Ok(pos(lambda) * m);
    }
    Ok(m * l * phi(lambda / l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_examples() {
        assert_eq!(covering_number(&AxisBox::cube(1, 1.0), 0.25).unwrap(), 4);
        assert_eq!(covering_number(&AxisBox::cube(2, 1.0), 0.3).unwrap(), 16);
    }

    #[test]
    fn covering_number_dilation_limit() {
        // eps^d m_delta(B / eps) -> delta^-d |B|
        let b = AxisBox::new(vec![0.0, 0.0], vec![1.0, 0.7]).unwrap();
        let delta = 0.3;
        let limit = b.volume() / (delta * delta);
        let mut prev = f64::INFINITY;
        for eps in [0.1, 0.03, 0.01, 0.003, 0.001] {
            let v = eps * eps * b.scaled(1.0 / eps).covering_number(delta).unwrap() as f64;
            let err = (v - limit).abs();
            assert!(err <= prev + 1e-12);
            prev = err;
        }
        assert!(prev / limit < 1e-2);
    }

    #[test]
    fn lower_bound_examples() {
        let b4 = AxisBox::cube(1, 4.0);
        let step = CostFunction::step(2.0);
        assert_eq!(gamma_lower_bound_energy(3, &b4, &step, 1.0).unwrap(), 0.0);
        assert_eq!(gamma_lower_bound_energy(8, &b4, &step, 1.0).unwrap(), 8.0);
        assert_eq!(
            gamma_lower_bound_energy(5, &AxisBox::cube(1, 4.0), &CostFunction::hard_sphere(), 1.0).unwrap(),
            f64::INFINITY
        );
        assert_eq!(gamma_lower_bound_energy(0, &b4, &CostFunction::hard_sphere(), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn lower_bound_below_grid_minimum() {
        // exhaustive minimum of xi over 8 points on the grid 0.5 Z cap [0, 4),
        // multiplicities allowed
        let step = CostFunction::step(2.0);
        let sites: Vec<f64> = (0..8).map(|i| 0.5 * i as f64).collect();
        let mut best = f64::INFINITY;
        let mut counts = vec![0u32; 8];
        fn rec(i: usize, left: u32, counts: &mut Vec<u32>, sites: &[f64], cost: &CostFunction, best: &mut f64) {
            if i == sites.len() {
                if left == 0 {
                    let mut c = PointConfiguration::empty(AxisBox::cube(1, 4.0));
                    for (j, &m) in counts.iter().enumerate() {
                        if m > 0 {
                            c.push(&[sites[j]], m).unwrap();
                        }
                    }
                    let e = crate::config::interaction_energy(&c, cost, 1.0).unwrap();
                    *best = best.min(e);
                }
                return;
            }
            for m in 0..=left {
                counts[i] = m;
                rec(i + 1, left - m, counts, sites, cost, best);
            }
            counts[i] = 0;
        }
        rec(0, 8, &mut counts, &sites, &step, &mut best);
        let bound = gamma_lower_bound_energy(8, &AxisBox::cube(1, 4.0), &step, 1.0).unwrap();
        assert!(bound <= best, "{bound} > {best}");
        assert_eq!(best, 8.0);
    }

    #[test]
    fn upper_bound_examples() {
        let step = CostFunction::step(2.0);
        assert_eq!(gamma_upper_bound(0.0, &AxisBox::cube(1, 8.0), 0.5, &step).unwrap(), 0.0);
        assert_eq!(gamma_upper_bound(3.0, &AxisBox::cube(1, 8.0), 0.5, &step).unwrap(), 64.0);
        assert_eq!(
            gamma_upper_bound(2.0, &AxisBox::cube(1, 5.0), 0.9, &CostFunction::hard_sphere()).unwrap(),
            2.0 * 6.0
        );
        assert!(matches!(
            gamma_upper_bound(1.0, &AxisBox::cube(1, 4.0), 2.0, &step),
            Err(Error::Precondition(_))
        ));
    }
}
