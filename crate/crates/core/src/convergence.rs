//! Discrete minima `I_eps(U) = inf_S xi_eps(S) + sum_{x in S} U(x)` for
//! shrinking `eps`, compared with the continuum solution.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{bin_density, AxisBox, PointConfiguration, ScaledMeasure};
use crate::convex::SampledConvexFunction;
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::gamma::{anneal_field, AnnealSchedule};
use crate::meanfield::{solve_meanfield, MeanFieldSolution, PotentialField};
use crate::rng::stream_seed;

/// Box sizes used for the a-priori mass bound.
const MASS_BOUND_DELTAS: [f64; 6] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0];

/// Best configuration found for one `eps`.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub eps: f64,
    /// `xi_eps(S) + sum U`, an upper bound on `I_eps(U)`.
    pub value: f64,
    pub config: PointConfiguration,
    pub seed: u64,
    pub proposals: u64,
}

/// Grand-canonical annealing on the domain of `u` with chemical potential
/// `-U(x)`. Never worse than the empty set, so `value <= 0`.
pub fn solve_discrete(
    u: &PotentialField,
    cost: &CostFunction,
    eps: f64,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<DiscreteSolution> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain("eps must be positive"));
    }
    let mu = |x: &[f64]| -u.at(x);
    let out = anneal_field(cost, u.domain(), eps, &mu, schedule, seed)?;
    Ok(DiscreteSolution { eps, value: -out.objective, config: out.config, seed, proposals: out.proposals })
}

/// `eps^d N <= min_delta eps^d m_delta(Omega / eps) (1 + sup(-U)_+ / l-(delta))`
/// for every configuration with non-positive value: its energy is at most
/// `N sup(-U)_+` and at least `N l-(delta) (N / m - 1)_+`.
pub fn mass_bound(domain: &AxisBox, cost: &CostFunction, eps: f64, neg_sup: f64) -> Result<f64> {
    let d = domain.dim();
    let scaled = domain.scaled(1.0 / eps);
    let mut best = f64::INFINITY;
    for delta in MASS_BOUND_DELTAS {
        let l = cost.lower_envelope_strict(delta, d)?;
        if l > 0.0 {
            let m = scaled.covering_number(delta)? as f64;
            best = best.min(eps.powi(d as i32) * m * (1.0 + neg_sup.max(0.0) / l));
        }
    }
    Ok(best)
}

/// `sup (-U)_+` over the cell centres, the box corners and the given points.
fn negative_part_sup(u: &PotentialField, extra: &PointConfiguration) -> f64 {
    let dom = u.domain();
    let d = dom.dim();
    let mut best: f64 = u.values().iter().fold(0.0, |m, v| m.max(-v));
    for corner in 0..(1usize << d) {
        let x: Vec<f64> = (0..d)
            .map(|a| if corner >> a & 1 == 1 { dom.upper(a) } else { dom.lower[a] })
            .collect();
        best = best.max(-u.at(&x));
    }
    for x in extra.points() {
        best = best.max(-u.at(x));
    }
    best.max(0.0)
}

/// One row of a [`ConvergenceRun`].
#[derive(Debug, Clone, Serialize)]
pub struct EpsRecord {
    pub eps: f64,
    pub seed: u64,
    pub n_found: u64,
    pub sites: usize,
    pub value: f64,
    /// `eps^d value`.
    pub scaled_value: f64,
    /// `eps^d N`.
    pub mass: f64,
    pub mass_bound: f64,
    /// `int |binned density - continuum density|`.
    pub l1_distance: f64,
    #[serde(skip)]
    pub binned_density: Vec<f64>,
    #[serde(skip)]
    pub config: PointConfiguration,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub eps_sequence: Vec<f64>,
    pub records: Vec<EpsRecord>,
    pub continuum_value: f64,
    pub continuum: MeanFieldSolution,
}

impl ConvergenceRun {
    /// `eps^d N <= bound` for every `eps`.
    pub fn mass_bounded(&self) -> bool {
        self.records.iter().all(|r| r.mass <= r.mass_bound)
    }

    /// `|scaled value - target|` never grows by more than `tol` as `eps`
    /// decreases.
    pub fn trend_non_worsening(&self, target: f64, tol: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| (w[1].scaled_value - target).abs() <= (w[0].scaled_value - target).abs() + tol)
    }

    /// `L1` distances never grow by more than `tol` as `eps` decreases.
    pub fn l1_non_increasing(&self, tol: f64) -> bool {
        self.records.windows(2).all(|w| w[1].l1_distance <= w[0].l1_distance + tol)
    }

    /// Scaled value at the smallest `eps` minus the continuum value.
    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.scaled_value) - self.continuum_value
    }

    /// `eps, n_found, scaled_value, continuum_value, mass, mass_bound, l1_distance, seed`.
    pub fn write_trend_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "eps",
            "n_found",
            "scaled_value",
            "continuum_value",
            "mass",
            "mass_bound",
            "l1_distance",
            "seed",
        ])?;
        for r in &self.records {
            w.write_record([
                format!("{:?}", r.eps),
                r.n_found.to_string(),
                format!("{:?}", r.scaled_value),
                format!("{:?}", self.continuum_value),
                format!("{:?}", r.mass),
                format!("{:?}", r.mass_bound),
                format!("{:?}", r.l1_distance),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Cell centres, continuum density and the binned density of every `eps`.
    pub fn write_density_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let grid = &self.continuum.grid;
        let mut header: Vec<String> = (0..grid.dim()).map(|a| format!("x{a}")).collect();
        header.push("continuum".into());
        header.extend(self.records.iter().map(|r| format!("eps={:?}", r.eps)));
        w.write_record(&header)?;
        for c in 0..grid.len() {
            let mut row: Vec<String> = grid.center(c).iter().map(|x| format!("{x:?}")).collect();
            row.push(format!("{:?}", self.continuum.density[c]));
            row.extend(self.records.iter().map(|r| format!("{:?}", r.binned_density[c])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves the discrete problem for every `eps` (in parallel, stream
/// `(seed, [i])` for the `i`-th entry) and compares with the continuum
/// solution from `fstar`.
pub fn run_convergence(
    u: &PotentialField,
    cost: &CostFunction,
    eps_sequence: &[f64],
    fstar: &SampledConvexFunction,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<ConvergenceRun> {
    if eps_sequence.len() < 3 {
        return Err(Error::invalid("need at least three values of eps"));
    }
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) || eps_sequence.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("eps values must be positive and strictly decreasing"));
    }
    let continuum = solve_meanfield(u, fstar)?;
    let d = u.grid().dim() as i32;
    let records = eps_sequence
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| -> Result<EpsRecord> {
            let s = stream_seed(seed, &[i as u64]);
            let sol = solve_discrete(u, cost, eps, schedule, s)?;
            let scale = eps.powi(d);
            let measure = ScaledMeasure::new(sol.config.clone(), eps)?;
            let binned = bin_density(&measure, u.grid())?;
            let l1 = binned.l1_distance(&continuum.density);
            let bound = mass_bound(u.domain(), cost, eps, negative_part_sup(u, &sol.config))?;
            Ok(EpsRecord {
                eps,
                seed: s,
                n_found: sol.config.count(),
                sites: sol.config.sites(),
                value: sol.value,
                scaled_value: scale * sol.value,
                mass: scale * sol.config.count() as f64,
                mass_bound: bound,
                l1_distance: l1,
                binned_density: binned.values,
                config: sol.config,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceRun { eps_sequence: eps_sequence.to_vec(), records, continuum_value: continuum.value, continuum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RegularGrid;
    use crate::convex::{linspace, Extension};
    use crate::gamma::{closed_form_g, gamma_anneal};

    fn unit(n: usize) -> RegularGrid {
        RegularGrid::uniform(AxisBox::cube(1, 1.0), n).unwrap()
    }

    fn quick() -> AnnealSchedule {
        AnnealSchedule { stages: 60, ..AnnealSchedule::default() }
    }

    #[test]
    fn positive_potential_gives_empty_set() {
        let u = PotentialField::constant(unit(10), 1.0).unwrap();
        let s = solve_discrete(&u, &CostFunction::step(2.0), 0.1, &quick(), 1).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.config.is_empty());
    }

    #[test]
    fn hard_spheres_fill_the_interval() {
        let u = PotentialField::constant(unit(10), -1.0).unwrap();
        let s = solve_discrete(&u, &CostFunction::hard_sphere(), 0.1, &AnnealSchedule::default(), 2).unwrap();
        assert_eq!(s.config.count(), 10);
        assert!((s.value + 10.0).abs() < 1e-12, "{}", s.value);
        let mut xs: Vec<f64> = s.config.points().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!(xs.windows(2).all(|w| w[1] - w[0] >= 0.1 - 1e-12));
    }

    #[test]
    fn matches_gamma_anneal_on_scaled_box() {
        // eps a power of two keeps the rescaled runs bit-identical
        let eps = 0.5;
        let k = 6.0;
        let lambda = 1.7;
        let cost = CostFunction::step(2.0);
        let u = PotentialField::constant(RegularGrid::uniform(AxisBox::cube(1, k * eps), 4).unwrap(), -lambda).unwrap();
        let d = solve_discrete(&u, &cost, eps, &quick(), 77).unwrap();
        let g = gamma_anneal(&cost, lambda, k, 1, &quick(), 77).unwrap();
        assert_eq!(d.value, -g.value);
    }

    #[test]
    fn nonnegative_potential_run() {
        let step = CostFunction::step(2.0);
        let g = SampledConvexFunction::from_fn(
            linspace(0.0, 8.0, 33),
            |l| closed_form_g(&step, l, 1).unwrap(),
            Extension::Affine { slope: 0.0 },
            Extension::Chord,
        )
        .unwrap();
        let u = PotentialField::from_fn(unit(10), |x| x[0]).unwrap();
        let run = run_convergence(&u, &step, &[0.2, 0.1, 0.05], &g, &quick(), 5).unwrap();
        assert_eq!(run.continuum_value, 0.0);
        assert!(run.records.iter().all(|r| r.scaled_value == 0.0 && r.n_found == 0));
        assert!(run.mass_bounded());
    }

    #[test]
    fn mass_bound_holds_for_hard_spheres() {
        let dom = AxisBox::cube(1, 1.0);
        let b = mass_bound(&dom, &CostFunction::hard_sphere(), 0.1, 1.0).unwrap();
        // delta = 1 gives 10 cubes with an infinite core
        assert_eq!(b, 1.0);
    }

    #[test]
    fn rejects_bad_sequences() {
        let step = CostFunction::step(2.0);
        let g = SampledConvexFunction::from_fn(
            linspace(0.0, 8.0, 33),
            |l| closed_form_g(&step, l, 1).unwrap(),
            Extension::Affine { slope: 0.0 },
            Extension::Chord,
        )
        .unwrap();
        let u = PotentialField::constant(unit(4), -1.0).unwrap();
        assert!(run_convergence(&u, &step, &[0.1, 0.05], &g, &quick(), 0).is_err());
        assert!(run_convergence(&u, &step, &[0.1, 0.2, 0.05], &g, &quick(), 0).is_err());
    }
}
