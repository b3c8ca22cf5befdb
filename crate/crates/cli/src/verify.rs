//! Invariant suite for one cost and dimension.

use rand::Rng;

use meanfield_core::config::{interaction_energy, interaction_energy_naive, scaled_energy};
use meanfield_core::convex::{
    convexify, f_profile_from_g, legendre_transform, sandwich_check, SampledConvexFunction, SandwichOptions,
};
use meanfield_core::extended::fmt;
use meanfield_core::gamma::closed_form_g;
use meanfield_core::lattice::{epstein_zeta, zeta_tail_bound, BravaisLattice};
use meanfield_core::meanfield::{primal_value, solve_meanfield, PotentialField};
use meanfield_core::rng::stream_rng;
use meanfield_core::{AxisBox, PointConfiguration, RegularGrid, ScaledMeasure};

use crate::error::CliResult;
use crate::output::Staging;
use crate::run::{sampled_g, write_g, write_profile, Ctx};
use crate::spec::VerifyParams;

const ENERGY_STREAM: u64 = 0xE1;
const POTENTIAL_STREAM: u64 = 0xE2;

struct Check {
    name: &'static str,
    cases: usize,
    violations: usize,
    detail: String,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check { name, cases: 0, violations: 0, detail: String::new() }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            if self.violations == 0 {
                self.detail = what();
            }
            self.violations += 1;
        }
    }
}

fn random_config<R: Rng>(rng: &mut R, dim: usize, n: usize, edge: f64) -> PointConfiguration {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..edge)).collect()).collect();
    PointConfiguration::new(AxisBox::cube(dim, edge), &pts).expect("points inside the box")
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Runs every check, writes `verify.csv`, `sandwich.csv`, `g.csv`, `g_by_k.csv`
/// and `f.csv`, and returns one message per failed check.
pub(crate) fn run_suite(ctx: &Ctx, st: &mut Staging, p: &VerifyParams) -> CliResult<Vec<String>> {
    let cost = ctx.cost;
    let dim = ctx.spec.dim;
    let seed = ctx.spec.seed;
    let mut checks = Vec::new();

    let hyp = cost.validate_hypotheses(dim);
    let mut c = Check::new("hypotheses");
    c.record(hyp.all_pass(), || hyp.diagnostics.join("; "));
    checks.push(c);

    let mut rng = stream_rng(seed, &[ENERGY_STREAM]);
    let mut oracle = Check::new("energy_oracle");
    let mut sup = Check::new("super_additivity");
    let mut sub = Check::new("far_field_additivity");
    let mut coer = Check::new("coercivity");
    for case in 0..p.configs {
        let n = rng.random_range(2..=200usize);
        let edge = (n as f64 * rng.random_range(0.3..4.0)).powf(1.0 / dim as f64);
        let cfg = random_config(&mut rng, dim, n, edge);
        let fast = interaction_energy(&cfg, cost, 1.0)?;
        if n <= 80 {
            let naive = interaction_energy_naive(&cfg, cost, 1.0);
            oracle.record(rel_close(fast, naive, 1e-9), || format!("case {case}: {fast} vs {naive}"));
        }

        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        mask[0] = true;
        mask[1] = false;
        let (a, b) = cfg.split(&mask);
        let sum = interaction_energy(&a, cost, 1.0)? + interaction_energy(&b, cost, 1.0)?;
        let ok = if sum.is_infinite() { fast.is_infinite() } else { fast >= sum - 1e-12 * fast.abs().max(sum.abs()) };
        sup.record(ok, || format!("case {case}: {fast} < {sum}"));
        let mut eta = f64::INFINITY;
        for x in a.points() {
            for y in b.points() {
                let d2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
                eta = eta.min(d2.sqrt());
            }
        }
        let rhs = sum + 2.0 * cost.upper_envelope(eta)? * (a.count() * b.count()) as f64;
        sub.record(rhs.is_infinite() || fast <= rhs + 1e-12 * rhs.abs(), || {
            format!("case {case}: {fast} > {rhs}")
        });

        let eps: f64 = rng.random_range(0.05..0.5);
        let unit = random_config(&mut rng, dim, n, 1.0);
        let rho = ScaledMeasure::new(unit, eps)?;
        let energy = scaled_energy(&rho, cost)?;
        let mass = rho.mass();
        for delta in [0.5, 1.0] {
            let beta = eps.powi(dim as i32) * AxisBox::cube(dim, 1.0 / eps).covering_number(delta)? as f64;
            let excess = (mass / beta - 1.0).max(0.0);
            let bound = if excess == 0.0 { 0.0 } else { cost.lower_envelope_strict(delta, dim)? * mass * excess };
            coer.record(energy >= bound * (1.0 - 1e-12), || format!("case {case}: {energy} < {bound}"));
        }
    }
    checks.extend([oracle, sup, sub, coer]);

    let mut tail = Check::new("zeta_tail_bound");
    let lat = BravaisLattice::cartesian(dim);
    let r0 = if cost.r0() > 0.0 { cost.r0() } else { 0.05 };
    let start = r0 * (1.0f64).max(1.0 / lat.a_min());
    for i in 0..20 {
        let r = start * 10f64.powf(i as f64 / 19.0);
        let bound = match zeta_tail_bound(cost, &lat, r) {
            Ok(b) => b,
            Err(meanfield_core::Error::Precondition(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let z = epstein_zeta(cost, &lat, r, 1e-6)?;
        tail.record(bound >= z.value, || format!("r = {r}: bound {bound} < {}", z.value));
    }
    checks.push(tail);

    let lambdas = p.lambda_grid.values();
    let est = ctx.estimates(&lambdas, &p.ks, p.replicas, &p.solver, seed)?;
    write_g(st, &est)?;
    let g = sampled_g(&est)?;
    let u: Vec<f64> = est.iter().map(|e| e.uncertainty).collect();
    let u_max = u.iter().cloned().fold(0.0, f64::max);
    let t_grid = p.t_grid.values();
    let f = f_profile_from_g(&g, &t_grid)?;
    write_profile(st, "f.csv", "t", "f", &f)?;

    let rep = sandwich_check(
        &g,
        cost,
        dim,
        &SandwichOptions {
            deltas: p.deltas.clone(),
            t_grid: t_grid.clone(),
            g_tol: u.clone(),
            upper_tol: 1e-9,
            f_tol: u_max + 1e-9,
            zeta_tol: 1e-9,
        },
    )?;
    let mut sw = Check::new("sandwich");
    for r in &rep.rows {
        sw.record(r.lower_margin >= 0.0 && r.upper_margin >= 0.0, || {
            format!("lambda = {}: H* {}, g {}, upper {}", r.lambda, r.h_star, r.g, r.g_upper)
        });
    }
    let mut dual = Check::new("dual_sandwich");
    for r in &rep.dual_rows {
        dual.record(r.lower_margin >= 0.0 && r.upper_margin >= 0.0, || {
            format!("t = {}: lower {}, f {}, H** {}", r.t, r.f_lower, r.f, r.h_biconjugate)
        });
    }
    checks.extend([sw, dual]);
    {
        let mut w = csv::Writer::from_path(st.path("sandwich.csv"))?;
        w.write_record(["lambda", "h_star", "g", "uncertainty", "g_upper", "lower_margin", "upper_margin"])?;
        for (r, e) in rep.rows.iter().zip(&u) {
            w.write_record([
                format!("{:?}", r.lambda),
                fmt(r.h_star),
                fmt(r.g),
                fmt(*e),
                fmt(r.g_upper),
                fmt(r.lower_margin),
                fmt(r.upper_margin),
            ])?;
        }
        w.flush()?;
    }

    let mut mono = Check::new("g_monotone");
    for (i, w) in g.values().windows(2).enumerate() {
        mono.record(w[0] <= w[1] + u[i].max(u[i + 1]) + 1e-12, || {
            format!("g decreases between lambda {} and {}", lambdas[i], lambdas[i + 1])
        });
    }
    checks.push(mono);

    let mut conj = Check::new("conjugation");
    let hull = convexify(&g);
    let back = legendre_transform(&f, &lambdas)?;
    let dt = t_grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let span = lambdas[lambdas.len() - 1] - lambdas[0];
    let t_max = t_grid[t_grid.len() - 1];
    for (i, &l) in lambdas.iter().enumerate() {
        let (h, b) = (hull.values()[i], back.values()[i]);
        // the lower side needs the slopes of g at lambda to lie on the t grid
        let covered = i + 1 < lambdas.len() && (hull.values()[i + 1] - h) / (lambdas[i + 1] - l) <= t_max;
        let ok = b <= h + 1e-9 && (!covered || h - b <= dt * span + 1e-9);
        conj.record(ok, || format!("lambda = {l}: g** {b}, hull {h}"));
    }
    checks.push(conj);

    if let Some(exact) = lambdas.iter().map(|&l| closed_form_g(cost, l, dim)).collect::<Option<Vec<f64>>>() {
        let mut cf = Check::new("closed_form_g");
        for (i, e) in exact.iter().enumerate() {
            let v = g.values()[i];
            cf.record((v - e).abs() <= u[i] + 1e-9 * e.abs().max(1.0), || {
                format!("lambda = {}: estimate {v}, exact {e}", lambdas[i])
            });
        }
        checks.push(cf);
    }

    checks.push(meanfield_checks(&g, dim, seed)?);

    let mut w = csv::Writer::from_path(st.path("verify.csv"))?;
    w.write_record(["check", "cases", "violations", "status", "detail"])?;
    let mut failures = Vec::new();
    for c in &checks {
        let status = if c.violations == 0 { "pass" } else { "fail" };
        w.write_record([c.name, &c.cases.to_string(), &c.violations.to_string(), status, &c.detail])?;
        log::info!("{}: {status} ({} cases, {} violations)", c.name, c.cases, c.violations);
        if c.violations > 0 {
            failures.push(format!("{}: {} of {} cases violated; first: {}", c.name, c.violations, c.cases, c.detail));
        }
    }
    w.flush()?;
    Ok(failures)
}

/// Zero potential costs nothing, constant potentials give `-g |Omega|`, and
/// the selected densities close the duality gap.
fn meanfield_checks(g: &SampledConvexFunction, dim: usize, seed: u64) -> CliResult<Check> {
    let mut c = Check::new("meanfield_identities");
    let omega = AxisBox::cube(dim, 1.0);
    let per_axis = if dim == 1 { 200 } else { 12 };
    let grid = RegularGrid::uniform(omega.clone(), per_axis)?;
    let lam = g.grid();
    let (lo, hi) = (lam[0].max(0.0), lam[lam.len() - 1]);

    let mut rng = stream_rng(seed, &[POTENTIAL_STREAM]);
    for _ in 0..5 {
        let (a, w): (f64, f64) = (rng.random_range(0.1..3.0), rng.random_range(1.0..8.0));
        let u = PotentialField::from_fn(grid.clone(), move |x| a * (1.0 + (w * x[0]).sin()))?;
        let sol = solve_meanfield(&u, g)?;
        let zero = sol.density.iter().zip(&sol.potential).all(|(d, p)| *p == 0.0 || *d == 0.0);
        c.record(sol.value == 0.0 && zero, || format!("non-negative potential gives I = {}", sol.value));
    }
    for (i, &l) in lam.iter().enumerate() {
        if l < 0.0 {
            continue;
        }
        let u = PotentialField::constant(grid.clone(), -l)?;
        let sol = solve_meanfield(&u, g)?;
        let expected = -g.values()[i] * omega.volume();
        c.record((sol.value - expected).abs() <= 1e-6 * expected.abs().max(1.0), || {
            format!("U = -{l}: I = {}, expected {expected}", sol.value)
        });
    }
    for _ in 0..20 {
        let (a, b, w) = (rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(1.0..6.0));
        let u = PotentialField::from_fn(grid.clone(), move |x| {
            let s = 0.5 * (1.0 + (w * x[0]).sin());
            -(a + (b - a) * s)
        })?;
        let sol = solve_meanfield(&u, g)?;
        let gap = (primal_value(&u, &sol.density, g) - sol.value).abs();
        c.record(gap <= 1e-6 * sol.value.abs().max(1.0), || format!("primal-dual gap {gap}"));
    }
    Ok(c)
}
