//! Task execution.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use meanfield_core::config::{interaction_energy, scaled_energy};
use meanfield_core::convergence::run_convergence;
use meanfield_core::convex::{f_profile_from_g, Extension, SampledConvexFunction};
use meanfield_core::extended::{fmt, parse as parse_ext};
use meanfield_core::gamma::{closed_form_g, estimate_g_indexed, GEstimate, GSolver};
use meanfield_core::lattice::{epstein_zeta, zeta_tail_bound, BravaisLattice};
use meanfield_core::meanfield::{solve_meanfield, solve_meanfield_constrained, PotentialField, PotentialSpec};
use meanfield_core::rng::stream_seed;
use meanfield_core::{AxisBox, CostFunction, PointConfiguration, RegularGrid, ScaledMeasure};

use crate::error::{CliError, CliResult};
use crate::output::{sha256_bytes, sha256_file, write_manifest, FileEntry, Manifest, Staging};
use crate::spec::{ConjugateSource, ExperimentSpec, TaskSpec, VerifyParams};
use crate::verify;

/// Stream key under which an inline conjugate estimate draws its seeds, kept
/// apart from the per-`eps` streams of the convergence task.
const CONJUGATE_STREAM: u64 = 0xC0;

pub struct RunOptions {
    pub out: PathBuf,
    /// Directory relative input paths resolve against.
    pub base: PathBuf,
    pub spec_bytes: Vec<u8>,
}

/// Outcome of a completed run.
pub struct RunReport {
    pub manifest: Manifest,
    /// Invariant violations found by the verification suite.
    pub failures: Vec<String>,
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<RunReport> {
    let cost = spec.build_cost(&opts.base)?;
    let mut inputs = Vec::new();
    for p in spec.referenced_files(&opts.base) {
        if !p.exists() {
            return Err(CliError::task(format!("input file {} does not exist", p.display())));
        }
        inputs.push(FileEntry { path: p.display().to_string(), sha256: sha256_file(&p)? });
    }

    let mut st = Staging::new(&opts.out)?;
    st.write_json("spec.json", spec)?;
    let mut failures = Vec::new();
    let ctx = Ctx { spec, cost: &cost, base: &opts.base };
    match &spec.task {
        TaskSpec::Energy { bbox, points, config_csv, eps } => ctx.energy(&mut st, bbox, points, config_csv, *eps)?,
        TaskSpec::Zeta { lattice, r_grid, tol } => {
            let lat = match lattice {
                Some(l) => l.build(spec.dim).map_err(|e| CliError::from_build("task.lattice", e))?,
                None => BravaisLattice::cartesian(spec.dim),
            };
            ctx.zeta(&mut st, &lat, &r_grid.values(), *tol)?
        }
        TaskSpec::Gamma { lambda_grid, ks, replicas, solver } => {
            let est = ctx.estimates(&lambda_grid.values(), ks, *replicas, solver, spec.seed)?;
            write_gamma(&mut st, &est)?;
        }
        TaskSpec::GProfile { lambda_grid, ks, replicas, solver } => {
            let est = ctx.estimates(&lambda_grid.values(), ks, *replicas, solver, spec.seed)?;
            write_g(&mut st, &est)?;
        }
        TaskSpec::FProfile { lambda_grid, ks, replicas, solver, t_grid } => {
            let est = ctx.estimates(&lambda_grid.values(), ks, *replicas, solver, spec.seed)?;
            write_g(&mut st, &est)?;
            let f = f_profile_from_g(&sampled_g(&est)?, &t_grid.values())?;
            write_profile(&mut st, "f.csv", "t", "f", &f)?;
        }
        TaskSpec::Meanfield { domain, cells, potential, conjugate, mass } => {
            let u = ctx.potential(domain, cells, potential)?;
            let g = ctx.conjugate(conjugate, &mut st)?;
            let sol = match mass {
                Some(k) => solve_meanfield_constrained(&u, &g, *k)?,
                None => solve_meanfield(&u, &g)?,
            };
            sol.write_csv(&st.path("meanfield.csv"))?;
            st.write_json(
                "summary.json",
                &MeanfieldSummary {
                    value: sol.value,
                    mass: sol.mass(),
                    multiplier: sol.multiplier,
                    multivalued_cells: sol.multivalued_cells.len(),
                },
            )?;
        }
        TaskSpec::Converge { domain, cells, potential, eps, conjugate, schedule } => {
            let u = ctx.potential(domain, cells, potential)?;
            let g = ctx.conjugate(conjugate, &mut st)?;
            let run = run_convergence(&u, &cost, eps, &g, schedule, spec.seed)?;
            run.write_trend_csv(&st.path("trend.csv"))?;
            run.write_density_csv(&st.path("density.csv"))?;
            for (i, r) in run.records.iter().enumerate() {
                r.config.write_csv(&st.path(&format!("config_{i}.csv")))?;
            }
            st.write_json(
                "summary.json",
                &ConvergeSummary {
                    continuum_value: run.continuum_value,
                    final_gap: run.final_gap(),
                    mass_bounded: run.mass_bounded(),
                    trend_non_worsening: run.trend_non_worsening(run.continuum_value, 0.0),
                    l1_non_increasing: run.l1_non_increasing(0.0),
                    records: &run.records,
                },
            )?;
        }
        TaskSpec::Verify(p) => failures = ctx.verify(&mut st, p)?,
    }

    let outputs = st.commit()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        task: spec.task.name().to_string(),
        seed: spec.seed,
        spec_sha256: sha256_bytes(&opts.spec_bytes),
        inputs,
        outputs,
    };
    write_manifest(&opts.out, &manifest)?;
    Ok(RunReport { manifest, failures })
}

/// Runs the verification suite for the cost and dimension of any spec; the
/// spec's own parameters are used when its task is `verify`.
pub fn verify_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<RunReport> {
    let mut spec = spec.clone();
    if !matches!(spec.task, TaskSpec::Verify(_)) {
        spec.task = TaskSpec::Verify(VerifyParams::default());
    }
    run_experiment(&spec, opts)
}

#[derive(Serialize)]
struct EnergySummary {
    sites: usize,
    count: u64,
    eps: f64,
    /// `xi_eps(S)`; `null` when infinite.
    interaction_energy: Option<f64>,
    scaled_energy: Option<f64>,
    mass: f64,
}

#[derive(Serialize)]
struct MeanfieldSummary {
    value: f64,
    mass: f64,
    multiplier: Option<f64>,
    multivalued_cells: usize,
}

#[derive(Serialize)]
struct ConvergeSummary<'a> {
    continuum_value: f64,
    final_gap: f64,
    mass_bounded: bool,
    trend_non_worsening: bool,
    l1_non_increasing: bool,
    records: &'a [meanfield_core::convergence::EpsRecord],
}

pub(crate) struct Ctx<'a> {
    pub spec: &'a ExperimentSpec,
    pub cost: &'a CostFunction,
    pub base: &'a Path,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Ctx<'_> {
    fn energy(
        &self,
        st: &mut Staging,
        bbox: &AxisBox,
        points: &Option<Vec<Vec<f64>>>,
        config_csv: &Option<PathBuf>,
        eps: f64,
    ) -> CliResult<()> {
        let cfg = match (points, config_csv) {
            (Some(p), _) => PointConfiguration::new(bbox.clone(), p).map_err(|e| CliError::from_build("task.points", e))?,
            (None, Some(path)) => PointConfiguration::read_csv(&self.base.join(path), bbox.clone())?,
            (None, None) => unreachable!("validated"),
        };
        let xi = interaction_energy(&cfg, self.cost, eps)?;
        let rho = ScaledMeasure::new(cfg.clone(), eps)?;
        let f = scaled_energy(&rho, self.cost)?;
        st.write_json(
            "energy.json",
            &EnergySummary {
                sites: cfg.sites(),
                count: cfg.count(),
                eps,
                interaction_energy: finite(xi),
                scaled_energy: finite(f),
                mass: rho.mass(),
            },
        )
    }

    fn zeta(&self, st: &mut Staging, lat: &BravaisLattice, rs: &[f64], tol: f64) -> CliResult<()> {
        let rows = rs
            .par_iter()
            .map(|&r| -> CliResult<Vec<String>> {
                let z = epstein_zeta(self.cost, lat, r, tol)?;
                // the tail bound only applies from r0 max(1, 1/a_min) on
                let bound = match zeta_tail_bound(self.cost, lat, r) {
                    Ok(b) => fmt(b),
                    Err(meanfield_core::Error::Precondition(_)) => String::new(),
                    Err(e) => return Err(e.into()),
                };
                Ok(vec![
                    format!("{r:?}"),
                    fmt(z.value),
                    fmt(z.error),
                    z.certified.to_string(),
                    z.terms.to_string(),
                    bound,
                ])
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut w = csv::Writer::from_path(st.path("zeta.csv"))?;
        w.write_record(["r", "value", "error", "certified", "terms", "tail_bound"])?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn estimates(
        &self,
        lambdas: &[f64],
        ks: &[f64],
        replicas: usize,
        solver: &GSolver,
        seed: u64,
    ) -> CliResult<Vec<GEstimate>> {
        let dim = self.spec.dim;
        let est = lambdas
            .par_iter()
            .enumerate()
            .map(|(i, &l)| estimate_g_indexed(self.cost, l, i as u64, ks, dim, replicas, solver, seed))
            .collect::<meanfield_core::Result<Vec<_>>>()?;
        Ok(est)
    }

    fn potential(&self, domain: &AxisBox, cells: &[usize], spec: &PotentialSpec) -> CliResult<PotentialField> {
        let grid = RegularGrid::new(domain.clone(), cells.to_vec()).map_err(|e| CliError::from_build("task.cells", e))?;
        Ok(PotentialField::from_spec(spec, grid, Some(self.base))?)
    }

    /// The conjugate profile `g`; an inline estimate is also written out.
    fn conjugate(&self, src: &ConjugateSource, st: &mut Staging) -> CliResult<SampledConvexFunction> {
        let left = Extension::Affine { slope: 0.0 };
        match src {
            ConjugateSource::ClosedForm { lambda_grid } => {
                let grid = lambda_grid.values();
                let values = grid
                    .iter()
                    .map(|&l| closed_form_g(self.cost, l, self.spec.dim))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| {
                        CliError::task(format!(
                            "no closed form for g with cost '{}' in dimension {}",
                            self.cost.kind().tag(),
                            self.spec.dim
                        ))
                    })?;
                Ok(SampledConvexFunction::new(grid, values, left, Extension::Chord)?)
            }
            ConjugateSource::Csv { path } => read_g_csv(&self.base.join(path)),
            ConjugateSource::Estimate { lambda_grid, ks, replicas, solver } => {
                let seed = stream_seed(self.spec.seed, &[CONJUGATE_STREAM]);
                let est = self.estimates(&lambda_grid.values(), ks, *replicas, solver, seed)?;
                write_g(st, &est)?;
                sampled_g(&est)
            }
        }
    }

    fn verify(&self, st: &mut Staging, p: &VerifyParams) -> CliResult<Vec<String>> {
        verify::run_suite(self, st, p)
    }
}

/// `g` with slope `0` on the left (it vanishes for `lambda <= 0`) and chord
/// continuation on the right.
pub(crate) fn sampled_g(est: &[GEstimate]) -> CliResult<SampledConvexFunction> {
    Ok(SampledConvexFunction::new(
        est.iter().map(|e| e.lambda).collect(),
        est.iter().map(|e| e.g_value).collect(),
        Extension::Affine { slope: 0.0 },
        Extension::Chord,
    )?)
}

fn read_g_csv(path: &Path) -> CliResult<SampledConvexFunction> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::task(format!("cannot read {}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::task(format!("{}: no '{name}' column", path.display())))
    };
    let (li, gi) = (col("lambda")?, col("g")?);
    let (mut grid, mut values) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || CliError::task(format!("{}: row {} is malformed", path.display(), i + 2));
        grid.push(rec.get(li).and_then(parse_ext).ok_or_else(bad)?);
        values.push(rec.get(gi).and_then(parse_ext).ok_or_else(bad)?);
    }
    Ok(SampledConvexFunction::new(grid, values, Extension::Affine { slope: 0.0 }, Extension::Chord)?)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub(crate) fn write_g(st: &mut Staging, est: &[GEstimate]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(st.path("g.csv"))?;
    w.write_record(["lambda", "g", "uncertainty", "replica_spread"])?;
    for e in est {
        w.write_record([
            format!("{:?}", e.lambda),
            fmt(e.g_value),
            fmt(e.uncertainty),
            fmt(e.replica_spread()),
        ])?;
    }
    w.flush()?;
    write_gamma_as(st, "g_by_k.csv", est)
}

fn write_gamma(st: &mut Staging, est: &[GEstimate]) -> CliResult<()> {
    write_gamma_as(st, "gamma.csv", est)
}

fn write_gamma_as(st: &mut Staging, name: &str, est: &[GEstimate]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(st.path(name))?;
    w.write_record(["lambda", "k", "value_per_volume", "replica_std", "count", "method", "seed"])?;
    for e in est {
        for (j, ((k, v), best)) in e.values_by_k.iter().zip(&e.best).enumerate() {
            w.write_record([
                format!("{:?}", e.lambda),
                format!("{k:?}"),
                fmt(*v),
                fmt(std_dev(&e.replica_values[j])),
                best.config.count().to_string(),
                best.method.to_string(),
                best.seed.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_profile(
    st: &mut Staging,
    name: &str,
    x: &str,
    y: &str,
    f: &SampledConvexFunction,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(st.path(name))?;
    w.write_record([x, y])?;
    for (a, b) in f.grid().iter().zip(f.values()) {
        w.write_record([format!("{a:?}"), fmt(*b)])?;
    }
    w.flush()?;
    Ok(())
}
