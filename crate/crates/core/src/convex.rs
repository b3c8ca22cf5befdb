//! One-dimensional convex analysis on sampled functions: Legendre
//! transforms, lower convex hulls, subdifferentials and the profiles built
//! from them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::extended::{self, mul, pos};
use crate::lattice::h_profile;

/// How a sampled function continues past either end of its grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extension {
    /// `+inf` outside the grid.
    PlusInfinity,
    /// Affine continuation with the given slope.
    Affine { slope: f64 },
    /// Affine continuation with the slope of the outermost finite chord.
    Chord,
}

/// Closed interval `[lo, hi]`, possibly with infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn is_degenerate(&self, tol: f64) -> bool {
        self.width() <= tol
    }
}

/// Values in `[-inf, +inf]` on a strictly increasing grid. `-inf` is not
/// allowed; `+inf` marks points outside the effective domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledConvexFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
    left: Extension,
    right: Extension,
}

impl SampledConvexFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, left: Extension, right: Extension) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::invalid("grid and values must be nonempty and of equal length"));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid must be finite and strictly increasing"));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::invalid("values must be real or +inf"));
        }
        for ext in [left, right] {
            if let Extension::Affine { slope } = ext {
                if !slope.is_finite() {
                    return Err(Error::invalid("extension slope must be finite"));
                }
            }
        }
        Ok(SampledConvexFunction { grid, values, left, right })
    }

    /// Samples `f` on the grid.
    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64, left: Extension, right: Extension) -> Result<Self> {
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values, left, right)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left(&self) -> Extension {
        self.left
    }

    pub fn right(&self) -> Extension {
        self.right
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    fn finite_span(&self) -> Option<(usize, usize)> {
        let first = self.values.iter().position(|v| v.is_finite())?;
        let last = self.values.iter().rposition(|v| v.is_finite())?;
        Some((first, last))
    }

    /// Slope of the left continuation, `None` when it is `+inf`.
    pub fn left_slope(&self) -> Option<f64> {
        if !self.values[0].is_finite() {
            return None;
        }
        match self.left {
            Extension::PlusInfinity => None,
            Extension::Affine { slope } => Some(slope),
            Extension::Chord => {
                if self.len() > 1 && self.values[1].is_finite() {
                    Some((self.values[1] - self.values[0]) / (self.grid[1] - self.grid[0]))
                } else {
                    None
                }
            }
        }
    }

    /// Slope of the right continuation, `None` when it is `+inf`.
    pub fn right_slope(&self) -> Option<f64> {
        let n = self.len();
        if !self.values[n - 1].is_finite() {
            return None;
        }
        match self.right {
            Extension::PlusInfinity => None,
            Extension::Affine { slope } => Some(slope),
            Extension::Chord => {
                if n > 1 && self.values[n - 2].is_finite() {
                    Some((self.values[n - 1] - self.values[n - 2]) / (self.grid[n - 1] - self.grid[n - 2]))
                } else {
                    None
                }
            }
        }
    }

    /// Piecewise-linear interpolation, extended past the grid. Cells with an
    /// infinite end are `+inf` except at their finite node.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.len();
        if x < self.grid[0] {
            return match self.left_slope() {
                Some(s) => self.values[0] + s * (x - self.grid[0]),
                None => f64::INFINITY,
            };
        }
        if x > self.grid[n - 1] {
            return match self.right_slope() {
                Some(s) => self.values[n - 1] + s * (x - self.grid[n - 1]),
                None => f64::INFINITY,
            };
        }
        let j = self.grid.partition_point(|&g| g <= x);
        let i = j - 1;
        if self.grid[i] == x {
            return self.values[i];
        }
        let (a, b) = (self.values[i], self.values[j]);
        if !a.is_finite() || !b.is_finite() {
            return f64::INFINITY;
        }
        let w = (x - self.grid[i]) / (self.grid[j] - self.grid[i]);
        a + w * (b - a)
    }

    /// Second differences of the finite part are all `>= -tol * scale`.
    pub fn is_convex(&self, tol: f64) -> bool {
        let Some((first, last)) = self.finite_span() else { return true };
        if self.values[first..=last].iter().any(|v| !v.is_finite()) {
            return false;
        }
        let scale = self.values[first..=last].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut prev = self.left_slope().filter(|_| first == 0).unwrap_or(f64::NEG_INFINITY);
        for i in first..last {
            let s = (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i]);
            if s < prev - tol * scale {
                return false;
            }
            prev = s;
        }
        if last == self.len() - 1 {
            if let Some(s) = self.right_slope() {
                if s < prev - tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Two-column CSV `x,value` with `+inf` literals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["x", "value"])?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            w.write_record([format!("{x:?}"), extended::fmt(*v)])?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, left: Extension, right: Extension) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::invalid(format!("{}: row {} needs two columns", path.display(), line + 2)));
            }
            let x: f64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{}: row {}: bad abscissa", path.display(), line + 2)))?;
            grid.push(x);
            let v = extended::parse(&rec[1])
                .ok_or_else(|| Error::invalid(format!("{}: row {}: bad value", path.display(), line + 2)))?;
            values.push(v);
        }
        Self::new(grid, values, left, right)
    }
}

fn candidate(lambda: f64, t: f64, v: f64) -> f64 {
    if v.is_finite() {
        lambda * t - v
    } else {
        f64::NEG_INFINITY
    }
}

/// Continuation of `f*` implied by the continuation of `f`.
fn dual_extensions(f: &SampledConvexFunction, first: usize, last: usize) -> (Extension, Extension) {
    let left = match f.left_slope() {
        Some(_) => Extension::PlusInfinity,
        None => Extension::Affine { slope: f.grid[first] },
    };
    let right = match f.right_slope() {
        Some(_) => Extension::PlusInfinity,
        None => Extension::Affine { slope: f.grid[last] },
    };
    (left, right)
}

/// `+inf` when `lambda` falls outside the slopes of the continuations,
/// where the supremum escapes to infinity.
fn escapes(f: &SampledConvexFunction, lambda: f64) -> bool {
    f.right_slope().is_some_and(|s| lambda > s) || f.left_slope().is_some_and(|s| lambda < s)
}

fn check_dual(dual_grid: &[f64]) -> Result<()> {
    if dual_grid.is_empty() || dual_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("dual grid must be nonempty and strictly increasing"));
    }
    Ok(())
}

/// `f*(lambda) = sup_t (lambda t - f(t))` on `dual_grid`, by direct
/// maximisation over the grid and the continuations.
pub fn legendre_transform(f: &SampledConvexFunction, dual_grid: &[f64]) -> Result<SampledConvexFunction> {
    check_dual(dual_grid)?;
    let (first, last) = f.finite_span().ok_or_else(|| Error::invalid("cannot transform an all-infinite function"))?;
    let values: Vec<f64> = dual_grid
        .par_iter()
        .map(|&lambda| {
            if escapes(f, lambda) {
                return f64::INFINITY;
            }
            let mut best = f64::NEG_INFINITY;
            for i in first..=last {
                let c = candidate(lambda, f.grid[i], f.values[i]);
                if c > best {
                    best = c;
                }
            }
            best
        })
        .collect();
    let (left, right) = dual_extensions(f, first, last);
    SampledConvexFunction::new(dual_grid.to_vec(), values, left, right)
}

/// [`legendre_transform`] for convex `f`, using that the maximising grid
/// index is non-decreasing in `lambda`. Linear in the two grid sizes.
pub fn legendre_transform_fast(f: &SampledConvexFunction, dual_grid: &[f64]) -> Result<SampledConvexFunction> {
    check_dual(dual_grid)?;
    let (first, last) = f.finite_span().ok_or_else(|| Error::invalid("cannot transform an all-infinite function"))?;
    if f.values[first..=last].iter().any(|v| !v.is_finite()) {
        return legendre_transform(f, dual_grid);
    }
    let mut i = first;
    let mut values = Vec::with_capacity(dual_grid.len());
    for &lambda in dual_grid {
        if escapes(f, lambda) {
            values.push(f64::INFINITY);
            continue;
        }
        while i < last && candidate(lambda, f.grid[i + 1], f.values[i + 1]) >= candidate(lambda, f.grid[i], f.values[i]) {
            i += 1;
        }
        values.push(candidate(lambda, f.grid[i], f.values[i]));
    }
    let (left, right) = dual_extensions(f, first, last);
    SampledConvexFunction::new(dual_grid.to_vec(), values, left, right)
}

/// Greatest convex minorant on the grid: the lower convex hull of the finite
/// samples, interpolated at every node between the first and last finite one.
/// Nodes outside that range stay `+inf`; the continuations are kept.
pub fn convexify(f: &SampledConvexFunction) -> SampledConvexFunction {
    let Some((first, last)) = f.finite_span() else { return f.clone() };
    // Andrew's monotone chain, lower part
    let mut hull: Vec<usize> = Vec::new();
    for i in first..=last {
        if !f.values[i].is_finite() {
            continue;
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (f.grid[b] - f.grid[a]) * (f.values[i] - f.values[a])
                - (f.values[b] - f.values[a]) * (f.grid[i] - f.grid[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut values = f.values.clone();
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (f.values[b] - f.values[a]) / (f.grid[b] - f.grid[a]);
        for j in a + 1..b {
            values[j] = f.values[a] + slope * (f.grid[j] - f.grid[a]);
        }
    }
    SampledConvexFunction { grid: f.grid.clone(), values, left: f.left, right: f.right }
}

/// `phi(t) = 0` for `t < 0`, `t` on `[0, 1]`, `(1 + t)^2 / 4` for `t > 1`.
pub fn phi(t: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else if t <= 1.0 {
        t
    } else {
        0.25 * (1.0 + t) * (1.0 + t)
    }
}

/// `phi*(z) = z (z - 1)_+` for `z >= 0`, `+inf` for `z < 0`.
pub fn phi_star(z: f64) -> f64 {
    if z < 0.0 {
        f64::INFINITY
    } else {
        z * pos(z - 1.0)
    }
}

/// `f = g*` on `t_grid`, with `f(0) = 0` imposed.
///
/// `g` is the sampled `g(lambda)`; declare its left continuation as slope `0`
/// (`g` vanishes for `lambda <= 0`) and its right one as [`Extension::Chord`]
/// to read off `f = +inf` beyond the last observed slope.
pub fn f_profile_from_g(g: &SampledConvexFunction, t_grid: &[f64]) -> Result<SampledConvexFunction> {
    let mut f = legendre_transform(g, t_grid)?;
    for (t, v) in f.grid.iter().zip(f.values.iter_mut()) {
        if *t == 0.0 {
            *v = 0.0;
        }
    }
    Ok(f)
}

/// `[f'(x-), f'(x+)]` from the chords adjacent to `x` (the continuations at
/// the ends of the grid).
pub fn subdifferential(f: &SampledConvexFunction, x: f64) -> Result<Interval> {
    let n = f.len();
    if !(x >= f.grid[0] && x <= f.grid[n - 1]) {
        return Err(Error::domain(format!(
            "{x} lies outside the grid [{}, {}]",
            f.grid[0],
            f.grid[n - 1]
        )));
    }
    let chord = |i: usize| -> f64 {
        let (a, b) = (f.values[i], f.values[i + 1]);
        if a.is_finite() && b.is_finite() {
            (b - a) / (f.grid[i + 1] - f.grid[i])
        } else if b.is_finite() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    };
    let j = f.grid.partition_point(|&g| g <= x);
    let i = j - 1;
    if f.grid[i] != x {
        let s = chord(i);
        return Ok(Interval { lo: s, hi: s });
    }
    let lo = if i == 0 { f.left_slope().unwrap_or(f64::NEG_INFINITY) } else { chord(i - 1) };
    let hi = if i == n - 1 { f.right_slope().unwrap_or(f64::INFINITY) } else { chord(i) };
    Ok(Interval { lo, hi })
}

/// Samples `H(t) = t Lambda_{Z^d}(t^(-1/d))` on `t_grid`. The node `t = 0`
/// takes the closure value `H(0+) = 0`; negative nodes are `+inf`.
pub fn h_samples(cost: &CostFunction, t_grid: &[f64], dim: usize, tol: f64) -> Result<SampledConvexFunction> {
    let values = t_grid
        .par_iter()
        .map(|&t| if t == 0.0 { Ok(0.0) } else { h_profile(cost, t, dim, tol).map(|z| z.value) })
        .collect::<Result<Vec<f64>>>()?;
    SampledConvexFunction::new(t_grid.to_vec(), values, Extension::PlusInfinity, Extension::PlusInfinity)
}

/// Closed-form profile of the single-level step cost `(M/2) 1_[0,1)` in one
/// dimension: the piecewise-affine interpolation of `h(n) = (M/2) n (n - 1)`
/// at the integers. `+inf` for `t < 0`.
pub fn step_cost_profile(m: f64, t: f64) -> f64 {
    if t < 0.0 {
        return f64::INFINITY;
    }
    let h = |n: f64| 0.5 * m * n * (n - 1.0);
    let k = t.floor();
    h(k) + (t - k) * (h(k + 1.0) - h(k))
}

/// `min_delta delta^-d l-(delta) phi(lambda / l-(delta))`, the box-free upper
/// bound on `g(lambda)`; deltas with `l-(delta) = 0` are skipped.
pub fn g_upper_bound(cost: &CostFunction, lambda: f64, dim: usize, deltas: &[f64]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &delta in deltas {
        let l = cost.lower_envelope_strict(delta, dim)?;
        let scale = delta.powi(-(dim as i32));
        let v = if l == f64::INFINITY {
            scale * pos(lambda)
        } else if l > 0.0 {
            scale * l * phi(lambda / l)
        } else {
            continue;
        };
        best = best.min(v);
    }
    Ok(best)
}

/// `sup_delta l-(delta) t (t delta^d - 1)_+`, a lower bound on `f(t)`.
pub fn f_lower_bound(cost: &CostFunction, t: f64, dim: usize, deltas: &[f64]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &delta in deltas {
        let l = cost.lower_envelope_strict(delta, dim)?;
        best = best.max(mul(l, t * pos(t * delta.powi(dim as i32) - 1.0)));
    }
    Ok(best)
}

/// One `lambda` of a [`SandwichReport`].
#[derive(Debug, Clone, Serialize)]
pub struct SandwichRow {
    pub lambda: f64,
    pub h_star: f64,
    pub g: f64,
    pub g_upper: f64,
    /// `g + tol - h_star`; negative is a violation.
    pub lower_margin: f64,
    /// `g_upper + tol - g`; negative is a violation.
    pub upper_margin: f64,
}

/// One `t` of a [`SandwichReport`].
#[derive(Debug, Clone, Serialize)]
pub struct DualRow {
    pub t: f64,
    pub f_lower: f64,
    pub f: f64,
    pub h_biconjugate: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub dual_rows: Vec<DualRow>,
    /// `f(t) / t^2` at the largest finite grid `t`.
    pub growth_ratio: f64,
    /// `sup_delta l-(delta) delta^d`.
    pub growth_bound: f64,
}

impl SandwichReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.lower_margin < 0.0 || r.upper_margin < 0.0).count()
    }

    pub fn dual_violations(&self) -> usize {
        self.dual_rows.iter().filter(|r| r.lower_margin < 0.0 || r.upper_margin < 0.0).count()
    }
}

/// Tolerances and grids for [`sandwich_check`].
#[derive(Debug, Clone)]
pub struct SandwichOptions {
    pub deltas: Vec<f64>,
    /// Grid on which `H`, `H*` and `H**` are sampled; should reach past the
    /// slopes of `g`.
    pub t_grid: Vec<f64>,
    /// Slack per `lambda` node on the `g` side (for example the solver
    /// uncertainty); a single entry applies to all nodes.
    pub g_tol: Vec<f64>,
    /// Slack on the upper bound.
    pub upper_tol: f64,
    /// Slack on the `f` side.
    pub f_tol: f64,
    pub zeta_tol: f64,
}

/// Checks `H*(lambda) <= g(lambda) <= min_delta delta^-d l-(delta)
/// phi(lambda / l-(delta))` on the grid of `g`, and
/// `l-(delta) t (t delta^d - 1)_+ <= f(t) <= H**(t)` on `t_grid` with `f = g*`,
/// up to the last slope of `g`. Violations become rows with negative margins.
pub fn sandwich_check(
    g: &SampledConvexFunction,
    cost: &CostFunction,
    dim: usize,
    opts: &SandwichOptions,
) -> Result<SandwichReport> {
    if opts.g_tol.len() != 1 && opts.g_tol.len() != g.len() {
        return Err(Error::invalid("g tolerance must have one entry or one per grid node"));
    }
    let h = h_samples(cost, &opts.t_grid, dim, opts.zeta_tol)?;
    let h_star = legendre_transform(&h, g.grid())?;
    let h_bi = convexify(&h);
    let mut rows = Vec::with_capacity(g.len());
    for (i, (&lambda, &gv)) in g.grid().iter().zip(g.values()).enumerate() {
        let tol = if opts.g_tol.len() == 1 { opts.g_tol[0] } else { opts.g_tol[i] };
        let hs = if lambda <= 0.0 { 0.0 } else { h_star.values()[i] };
        let up = g_upper_bound(cost, lambda, dim, &opts.deltas)?;
        rows.push(SandwichRow {
            lambda,
            h_star: hs,
            g: gv,
            g_upper: up,
            lower_margin: gv + tol - hs,
            upper_margin: if up.is_infinite() { f64::INFINITY } else { up + opts.upper_tol - gv },
        });
    }
    let f = f_profile_from_g(g, &opts.t_grid)?;
    let mut dual_rows = Vec::with_capacity(f.len());
    // past the last slope of g the transform only sees the continuation
    let t_max = g.right_slope().unwrap_or(f64::INFINITY);
    for (i, &t) in opts.t_grid.iter().enumerate() {
        if t > t_max {
            break;
        }
        let fl = f_lower_bound(cost, t, dim, &opts.deltas)?;
        let fv = f.values()[i];
        let hb = h_bi.values()[i];
        let margin = |big: f64, small: f64| {
            if big == f64::INFINITY {
                f64::INFINITY
            } else if small == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                big + opts.f_tol - small
            }
        };
        dual_rows.push(DualRow {
            t,
            f_lower: fl,
            f: fv,
            h_biconjugate: hb,
            lower_margin: margin(fv, fl),
            upper_margin: margin(hb, fv),
        });
    }
    let (growth_ratio, growth_bound) = {
        let last = f.values().iter().rposition(|v| v.is_finite()).unwrap_or(0);
        let t = f.grid()[last];
        let ratio = if t > 0.0 { f.values()[last] / (t * t) } else { 0.0 };
        let mut bound: f64 = 0.0;
        for &delta in &opts.deltas {
            bound = bound.max(mul(cost.lower_envelope_strict(delta, dim)?, delta.powi(dim as i32)));
        }
        (ratio, bound)
    };
    Ok(SandwichReport { rows, dual_rows, growth_ratio, growth_bound })
}

/// Evenly spaced grid of `n` points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
