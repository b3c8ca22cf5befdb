//! Experiment files: one strictly validated JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use meanfield_core::convex::linspace;
use meanfield_core::gamma::{AnnealSchedule, GSolver};
use meanfield_core::lattice::LatticeSpec;
use meanfield_core::meanfield::PotentialSpec;
use meanfield_core::{AxisBox, CostFunction, CostSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub cost: CostSpec,
    pub dim: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSpec,
}

/// Explicit values or `{start, stop, n}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Linspace(Linspace),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::Values(v) => v.clone(),
            GridSpec::Linspace(l) => linspace(l.start, l.stop, l.n),
        }
    }
}

/// Where the conjugate profile `g` comes from in the mean-field tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConjugateSource {
    /// Closed form (single-level step cost or hard spheres, one dimension).
    ClosedForm { lambda_grid: GridSpec },
    /// A `g.csv` written by the `g_profile` task.
    Csv { path: PathBuf },
    Estimate {
        lambda_grid: GridSpec,
        ks: Vec<f64>,
        #[serde(default = "default_replicas")]
        replicas: usize,
        #[serde(default)]
        solver: GSolver,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Interaction energy of one configuration.
    Energy {
        #[serde(rename = "box")]
        bbox: AxisBox,
        #[serde(default)]
        points: Option<Vec<Vec<f64>>>,
        /// Rows `x_1, ..., x_d, multiplicity`.
        #[serde(default)]
        config_csv: Option<PathBuf>,
        #[serde(default = "one")]
        eps: f64,
    },
    Zeta {
        #[serde(default)]
        lattice: Option<LatticeSpec>,
        r_grid: GridSpec,
        #[serde(default = "default_zeta_tol")]
        tol: f64,
    },
    /// Best `Gamma(lambda, Q_k) / k^d` per box and `lambda`.
    Gamma {
        lambda_grid: GridSpec,
        ks: Vec<f64>,
        #[serde(default = "default_replicas")]
        replicas: usize,
        #[serde(default)]
        solver: GSolver,
    },
    GProfile {
        lambda_grid: GridSpec,
        ks: Vec<f64>,
        #[serde(default = "default_replicas")]
        replicas: usize,
        #[serde(default)]
        solver: GSolver,
    },
    FProfile {
        lambda_grid: GridSpec,
        ks: Vec<f64>,
        #[serde(default = "default_replicas")]
        replicas: usize,
        #[serde(default)]
        solver: GSolver,
        t_grid: GridSpec,
    },
    Meanfield {
        domain: AxisBox,
        cells: Vec<usize>,
        potential: PotentialSpec,
        conjugate: ConjugateSource,
        /// Prescribed total mass; unconstrained when absent.
        #[serde(default)]
        mass: Option<f64>,
    },
    Converge {
        domain: AxisBox,
        cells: Vec<usize>,
        potential: PotentialSpec,
        eps: Vec<f64>,
        conjugate: ConjugateSource,
        #[serde(default)]
        schedule: AnnealSchedule,
    },
    Verify(VerifyParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub lambda_grid: GridSpec,
    pub ks: Vec<f64>,
    pub replicas: usize,
    pub solver: GSolver,
    pub t_grid: GridSpec,
    pub deltas: Vec<f64>,
    /// Random configurations per energy inequality.
    pub configs: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            lambda_grid: GridSpec::Linspace(Linspace { start: 0.0, stop: 8.0, n: 33 }),
            ks: vec![8.0, 16.0, 32.0],
            replicas: 3,
            solver: GSolver::default(),
            t_grid: GridSpec::Linspace(Linspace { start: 0.0, stop: 6.0, n: 241 }),
            deltas: vec![0.125, 0.25, 0.5, 1.0, 2.0, 4.0],
            configs: 200,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_replicas() -> usize {
    3
}

fn default_zeta_tol() -> f64 {
    1e-9
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Energy { .. } => "energy",
            TaskSpec::Zeta { .. } => "zeta",
            TaskSpec::Gamma { .. } => "gamma",
            TaskSpec::GProfile { .. } => "g_profile",
            TaskSpec::FProfile { .. } => "f_profile",
            TaskSpec::Meanfield { .. } => "meanfield",
            TaskSpec::Converge { .. } => "converge",
            TaskSpec::Verify(_) => "verify",
        }
    }
}

/// Parses an experiment file. Errors name the offending field and the
/// line and column where parsing stopped.
pub fn parse(text: &str) -> CliResult<ExperimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        CliError::Schema(format!("{path} (line {}, column {}): {inner}", inner.line(), inner.column()))
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn load(path: &Path) -> CliResult<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::task(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

fn increasing(field: &str, v: &[f64]) -> CliResult<()> {
    if v.is_empty() {
        return Err(CliError::schema(field, "must not be empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::schema(field, "entries must be finite"));
    }
    if let Some(i) = v.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(CliError::schema(
            field,
            format!("must be strictly increasing (entries {i} and {} are {} and {})", i + 1, v[i], v[i + 1]),
        ));
    }
    Ok(())
}

fn grid(field: &str, g: &GridSpec) -> CliResult<()> {
    if let GridSpec::Linspace(l) = g {
        if l.n < 2 {
            return Err(CliError::schema(&format!("{field}.n"), "needs at least two points"));
        }
    }
    increasing(field, &g.values())
}

fn box_edges(field: &str, ks: &[f64]) -> CliResult<()> {
    increasing(field, ks)?;
    if ks.len() < 3 || ks[0] <= 0.0 {
        return Err(CliError::schema(field, "needs at least three positive box edges"));
    }
    Ok(())
}

fn solver(field: &str, s: &GSolver, dim: usize) -> CliResult<()> {
    match s {
        GSolver::Anneal(schedule) => schedule.validate().map_err(|e| CliError::from_build(field, e)),
        GSolver::BruteForce1d { grid_step } => {
            if dim != 1 {
                return Err(CliError::schema(field, "bruteforce_1d needs dim = 1"));
            }
            if !(*grid_step > 0.0) {
                return Err(CliError::schema(&format!("{field}.grid_step"), "must be positive"));
            }
            Ok(())
        }
    }
}

fn domain(field: &str, b: &AxisBox, cells: &[usize], dim: usize) -> CliResult<()> {
    if b.lower.len() != dim || b.edges.len() != dim {
        return Err(CliError::schema(field, format!("box must have {dim} coordinates")));
    }
    if b.edges.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(CliError::schema(&format!("{field}.edges"), "must be positive"));
    }
    if cells.len() != dim || cells.contains(&0) {
        return Err(CliError::schema("task.cells", format!("needs {dim} positive counts")));
    }
    Ok(())
}

fn conjugate(c: &ConjugateSource, dim: usize) -> CliResult<()> {
    match c {
        ConjugateSource::ClosedForm { lambda_grid } => grid("task.conjugate.lambda_grid", lambda_grid),
        ConjugateSource::Csv { .. } => Ok(()),
        ConjugateSource::Estimate { lambda_grid, ks, replicas, solver: s } => {
            grid("task.conjugate.lambda_grid", lambda_grid)?;
            box_edges("task.conjugate.ks", ks)?;
            if *replicas == 0 {
                return Err(CliError::schema("task.conjugate.replicas", "must be positive"));
            }
            solver("task.conjugate.solver", s, dim)
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.dim == 0 {
            return Err(CliError::schema("dim", "must be positive"));
        }
        let d = self.dim;
        match &self.task {
            TaskSpec::Energy { bbox, points, config_csv, eps } => {
                if bbox.lower.len() != d || bbox.edges.len() != d {
                    return Err(CliError::schema("task.box", format!("box must have {d} coordinates")));
                }
                if points.is_some() == config_csv.is_some() {
                    return Err(CliError::schema("task", "give exactly one of points and config_csv"));
                }
                if !(*eps > 0.0) {
                    return Err(CliError::schema("task.eps", "must be positive"));
                }
            }
            TaskSpec::Zeta { r_grid, tol, .. } => {
                grid("task.r_grid", r_grid)?;
                if r_grid.values()[0] <= 0.0 {
                    return Err(CliError::schema("task.r_grid", "entries must be positive"));
                }
                if !(*tol > 0.0) {
                    return Err(CliError::schema("task.tol", "must be positive"));
                }
            }
            TaskSpec::Gamma { lambda_grid, ks, replicas, solver: s }
            | TaskSpec::GProfile { lambda_grid, ks, replicas, solver: s } => {
                grid("task.lambda_grid", lambda_grid)?;
                box_edges("task.ks", ks)?;
                if *replicas == 0 {
                    return Err(CliError::schema("task.replicas", "must be positive"));
                }
                solver("task.solver", s, d)?;
            }
            TaskSpec::FProfile { lambda_grid, ks, replicas, solver: s, t_grid } => {
                grid("task.lambda_grid", lambda_grid)?;
                grid("task.t_grid", t_grid)?;
                box_edges("task.ks", ks)?;
                if *replicas == 0 {
                    return Err(CliError::schema("task.replicas", "must be positive"));
                }
                solver("task.solver", s, d)?;
            }
            TaskSpec::Meanfield { domain: b, cells, conjugate: c, mass, .. } => {
                domain("task.domain", b, cells, d)?;
                conjugate(c, d)?;
                if let Some(m) = mass {
                    if !(*m > 0.0) || !m.is_finite() {
                        return Err(CliError::schema("task.mass", "must be positive and finite"));
                    }
                }
            }
            TaskSpec::Converge { domain: b, cells, eps, conjugate: c, schedule, .. } => {
                domain("task.domain", b, cells, d)?;
                conjugate(c, d)?;
                if eps.len() < 3 || eps.iter().any(|e| !(*e > 0.0)) {
                    return Err(CliError::schema("task.eps", "needs at least three positive values"));
                }
                let rev: Vec<f64> = eps.iter().rev().cloned().collect();
                increasing("task.eps (reversed)", &rev)?;
                schedule.validate().map_err(|e| CliError::from_build("task.schedule", e))?;
            }
            TaskSpec::Verify(p) => {
                grid("task.lambda_grid", &p.lambda_grid)?;
                grid("task.t_grid", &p.t_grid)?;
                box_edges("task.ks", &p.ks)?;
                increasing("task.deltas", &p.deltas)?;
                if p.replicas == 0 {
                    return Err(CliError::schema("task.replicas", "must be positive"));
                }
                solver("task.solver", &p.solver, d)?;
            }
        }
        Ok(())
    }

    /// Builds the cost; relative table paths resolve against `base`.
    pub fn build_cost(&self, base: &Path) -> CliResult<CostFunction> {
        self.cost.build(Some(base)).map_err(|e| CliError::from_build("cost", e))
    }

    /// Input files the spec refers to, resolved against `base`.
    pub fn referenced_files(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let Some(p) = self.cost.params.get("path").and_then(|v| v.as_str()) {
            out.push(base.join(p));
        }
        let potential = |p: &PotentialSpec, out: &mut Vec<PathBuf>| match p {
            PotentialSpec::Csv { path } | PotentialSpec::Json { path } => out.push(base.join(path)),
            _ => {}
        };
        let conj = |c: &ConjugateSource, out: &mut Vec<PathBuf>| {
            if let ConjugateSource::Csv { path } = c {
                out.push(base.join(path));
            }
        };
        match &self.task {
            TaskSpec::Energy { config_csv: Some(p), .. } => out.push(base.join(p)),
            TaskSpec::Meanfield { potential: p, conjugate: c, .. }
            | TaskSpec::Converge { potential: p, conjugate: c, .. } => {
                potential(p, &mut out);
                conj(c, &mut out);
            }
            _ => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"cost": {"kind": "step", "params": {"m": 2}}, "dim": 1, "seed": 7, "task": "#;

    fn with_task(task: &str) -> String {
        format!("{BASE}{task}}}")
    }

    #[test]
    fn parses_profile_task() {
        let s = parse(&with_task(
            r#"{"kind": "f_profile", "lambda_grid": {"start": 0, "stop": 8, "n": 17}, "ks": [4, 8, 16], "t_grid": [0, 1, 2]}"#,
        ))
        .unwrap();
        assert_eq!(s.task.name(), "f_profile");
        assert!(matches!(s.task, TaskSpec::FProfile { replicas: 3, .. }));
    }

    #[test]
    fn decreasing_grid_is_rejected_with_field() {
        let e = parse(&with_task(r#"{"kind": "g_profile", "lambda_grid": [0, 2, 1], "ks": [4, 8, 16]}"#)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("task.lambda_grid"), "{e}");
    }

    #[test]
    fn unknown_field_reports_path_and_line() {
        let text = with_task("{\"kind\": \"zeta\",\n \"r_grid\": [1, 2],\n \"bogus\": 1}");
        let e = parse(&text).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("task") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn seed_is_required() {
        let text = r#"{"cost": {"kind": "step", "params": {"m": 2}}, "dim": 1, "task": {"kind": "verify"}}"#;
        let e = parse(text).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn verify_defaults() {
        let s = parse(&with_task(r#"{"kind": "verify"}"#)).unwrap();
        match s.task {
            TaskSpec::Verify(p) => assert_eq!(p.lambda_grid.values().len(), 33),
            _ => panic!("wrong task"),
        }
    }

    #[test]
    fn eps_must_decrease() {
        let e = parse(&with_task(
            r#"{"kind": "converge", "domain": {"lower": [0], "edges": [1]}, "cells": [10],
                "potential": {"kind": "constant", "value": -1}, "eps": [0.05, 0.1, 0.025],
                "conjugate": {"kind": "closed_form", "lambda_grid": [0, 1, 2]}}"#,
        ))
        .unwrap_err();
        assert!(e.to_string().contains("task.eps"), "{e}");
    }
}
