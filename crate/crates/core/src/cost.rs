//! Two-point costs `l(r)` and the quantities derived from them: the upper and
//! lower monotone envelopes, the pseudo-inverse of the upper envelope, tail
//! moments, and numeric checks of the standing hypotheses
//!
//! * H1: `l(0) > 0` (`+inf` allowed),
//! * H2: `l` finite and non-increasing on `[r0, inf)` with `l(r) -> 0`,
//! * H3: `int_{r0}^inf l(r) r^(d-1) dr < inf`.
//!
//! The radius `r0` is always declared by whoever builds the cost; it is never
//! inferred from samples.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Nodes per spacing (log and linear) in the envelope table of a custom cost.
pub const ENVELOPE_TABLE_POINTS: usize = 1024;

const H3_REL_TOL: f64 = 1e-10;
const H3_MAX_DOUBLINGS: u32 = 60;

/// One level of a piecewise-constant cost: value `value` on `[prev, cutoff)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLevel {
    pub cutoff: f64,
    pub value: f64,
}

/// Tabulated cost: linear interpolation between knots, constant below the
/// first knot, zero from the last knot on.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    r: Vec<f64>,
    values: Vec<f64>,
    /// `suffix_max[i] = max(values[i..])`
    suffix_max: Vec<f64>,
    /// `prefix_min[i] = min(values[..=i])`
    prefix_min: Vec<f64>,
}

impl Table {
    pub fn new(r: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if r.len() != values.len() || r.len() < 2 {
            return Err(Error::invalid("tabulated cost needs at least two (r, value) rows"));
        }
        if r[0] < 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("tabulated cost abscissae must be >= 0 and strictly increasing"));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::invalid("tabulated cost values must be nonnegative"));
        }
        let mut suffix_max = values.clone();
        for i in (0..suffix_max.len() - 1).rev() {
            suffix_max[i] = suffix_max[i].max(suffix_max[i + 1]);
        }
        let mut prefix_min = values.clone();
        for i in 1..prefix_min.len() {
            prefix_min[i] = prefix_min[i].min(prefix_min[i - 1]);
        }
        Ok(Table { r, values, suffix_max, prefix_min })
    }

    /// Reads a two-column CSV `(r, l(r))`; a non-numeric first row is taken
    /// as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut r = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::invalid(format!("{}: row {} has fewer than 2 columns", path.display(), i + 1)));
            }
            let a = crate::extended::parse(&rec[0]);
            let b = crate::extended::parse(&rec[1]);
            match (a, b) {
                (Some(a), Some(b)) => {
                    r.push(a);
                    values.push(b);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::invalid(format!("{}: row {} is not numeric", path.display(), i + 1))),
            }
        }
        Table::new(r, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn last(&self) -> f64 {
        *self.r.last().unwrap()
    }

    fn eval(&self, x: f64) -> f64 {
        if x >= self.last() {
            return 0.0;
        }
        if x <= self.r[0] {
            return self.values[0];
        }
        let i = self.r.partition_point(|&k| k <= x);
        let (x0, x1) = (self.r[i - 1], self.r[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn upper(&self, x: f64) -> f64 {
        if x >= self.last() {
            return 0.0;
        }
        // knots strictly to the right of x (the last knot contributes its
        // left limit, which is the supremum near the jump to zero)
        let i = self.r.partition_point(|&k| k <= x);
        let right = if i < self.r.len() { self.suffix_max[i] } else { 0.0 };
        self.eval(x).max(right)
    }

    fn lower(&self, reach: f64, strict: bool) -> f64 {
        let zero_reached = if strict { reach > self.last() } else { reach >= self.last() };
        if zero_reached {
            return 0.0;
        }
        let i = if strict {
            self.r.partition_point(|&k| k < reach)
        } else {
            self.r.partition_point(|&k| k <= reach)
        };
        let knots = if i > 0 { self.prefix_min[i - 1] } else { f64::INFINITY };
        // on [0, r_1] the value is constant, and inside a segment the infimum
        // over [.., reach] is attained at a knot or at reach itself
        knots.min(self.eval(reach)).min(self.values[0])
    }

    fn moment(&self, j: i32, a: f64) -> f64 {
        let jp1 = (j + 1) as f64;
        let jp2 = (j + 2) as f64;
        let mut total = 0.0;
        let first = self.r[0];
        if a < first {
            total += self.values[0] * (first.powi(j + 1) - a.powi(j + 1)) / jp1;
        }
        for w in 0..self.r.len() - 1 {
            let (x0, x1) = (self.r[w], self.r[w + 1]);
            let lo = x0.max(a);
            if lo >= x1 {
                continue;
            }
            let beta = (self.values[w + 1] - self.values[w]) / (x1 - x0);
            let alpha = self.values[w] - beta * x0;
            total += alpha * (x1.powi(j + 1) - lo.powi(j + 1)) / jp1
                + beta * (x1.powi(j + 2) - lo.powi(j + 2)) / jp2;
        }
        total
    }
}

/// User-supplied evaluator together with a precomputed envelope table on
/// `[0, r0]`.
///
/// The table splits `[0, r0]` into cells on a merged log and linear grid and
/// stores the extrema of `l` over each cell (dense sampling plus a
/// golden-section polish). Envelope queries take the whole cell containing the argument, so
/// they are monotone step functions and err on the conservative side.
#[derive(Clone)]
pub struct CustomCost {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    grid: Vec<f64>,
    /// `suffix_max[i]`: max of `l` over cells `i..`
    suffix_max: Vec<f64>,
    /// `prefix_min[i]`: min of `l` over cells `..=i`
    prefix_min: Vec<f64>,
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCost").field("name", &self.name).finish()
    }
}

const CELL_SAMPLES: usize = 16;

impl CustomCost {
    fn new(name: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync>, r0: f64) -> Self {
        let mut grid = vec![0.0];
        if r0 > 0.0 {
            let lo = (r0 * 1e-6).ln();
            let hi = r0.ln();
            let n = ENVELOPE_TABLE_POINTS - 1;
            for i in 0..n {
                grid.push((lo + (hi - lo) * i as f64 / (n - 1) as f64).exp());
            }
            // linear nodes keep the cells narrow away from the origin
            for i in 1..ENVELOPE_TABLE_POINTS {
                grid.push(r0 * i as f64 / ENVELOPE_TABLE_POINTS as f64);
            }
            grid.push(r0);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        } else {
            grid.push(0.0);
        }
        let cells = grid.len() - 1;
        let mut cell_max = Vec::with_capacity(cells);
        let mut cell_min = Vec::with_capacity(cells);
        for w in grid.windows(2) {
            cell_max.push(cell_extremum(&*f, w[0], w[1], 1.0));
            cell_min.push(-cell_extremum(&*f, w[0], w[1], -1.0));
        }
        let mut suffix_max = cell_max;
        for i in (0..cells.saturating_sub(1)).rev() {
            suffix_max[i] = suffix_max[i].max(suffix_max[i + 1]);
        }
        let mut prefix_min = cell_min;
        for i in 1..cells {
            prefix_min[i] = prefix_min[i].min(prefix_min[i - 1]);
        }
        CustomCost { name, f, grid, suffix_max, prefix_min }
    }

    fn cell(&self, r: f64) -> usize {
        self.grid.partition_point(|&g| g <= r).saturating_sub(1).min(self.suffix_max.len() - 1)
    }
}

/// `max` (sign = 1) or `-min` (sign = -1) of `f` over `[a, b]`.
fn cell_extremum(f: &dyn Fn(f64) -> f64, a: f64, b: f64, sign: f64) -> f64 {
    let g = |x: f64| sign * f(x);
    let xs: Vec<f64> = (0..=CELL_SAMPLES).map(|i| a + (b - a) * i as f64 / CELL_SAMPLES as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let (k, &best) = vals
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    if best.is_infinite() || b <= a {
        return best;
    }
    let (mut lo, mut hi) = (xs[k.saturating_sub(1)], xs[(k + 1).min(CELL_SAMPLES)]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (g(x1), g(x2));
    let mut top = best.max(f1).max(f2);
    for _ in 0..60 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = g(x2);
        }
        top = top.max(f1).max(f2);
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
    }
    top
}

/// Which family a cost belongs to; drives closed-form dispatch.
#[derive(Debug, Clone)]
pub enum CostKind {
    /// `l(r) = r^(-s)`, `l(0) = +inf`.
    Riesz { s: f64 },
    /// `+inf` below 1, `0` from 1 on.
    HardSphere,
    /// Piecewise constant: `levels[i].value` on `[levels[i-1].cutoff, levels[i].cutoff)`,
    /// zero beyond the last cutoff.
    Step { levels: Vec<StepLevel> },
    Tabulated(Table),
    Custom(CustomCost),
}

impl CostKind {
    pub fn tag(&self) -> &'static str {
        match self {
            CostKind::Riesz { .. } => "riesz",
            CostKind::HardSphere => "hard_sphere",
            CostKind::Step { .. } => "step",
            CostKind::Tabulated(_) => "tabulated",
            CostKind::Custom(_) => "custom",
        }
    }
}

/// A two-point cost `l: [0, inf) -> [0, +inf]`.
///
/// Values are immutable after construction; clones share custom evaluators.
#[derive(Debug, Clone)]
pub struct CostFunction {
    kind: CostKind,
    r0: f64,
    finite_range: Option<f64>,
}

impl CostFunction {
    /// Riesz cost `r^(-s)` with `r0 = 1`.
    pub fn riesz(s: f64) -> Self {
        Self::riesz_with_r0(s, 1.0)
    }

    pub fn riesz_with_r0(s: f64, r0: f64) -> Self {
        assert!(s > 0.0, "riesz exponent must be positive");
        assert!(r0 > 0.0, "riesz r0 must be positive");
        CostFunction { kind: CostKind::Riesz { s }, r0, finite_range: None }
    }

    pub fn hard_sphere() -> Self {
        CostFunction { kind: CostKind::HardSphere, r0: 1.0, finite_range: Some(1.0) }
    }

    /// The penalized hard-sphere cost: `m / 2` below distance 1, zero beyond.
    pub fn step(m: f64) -> Self {
        assert!(m > 0.0, "step height must be positive");
        Self::step_levels(vec![StepLevel { cutoff: 1.0, value: 0.5 * m }]).expect("valid single step")
    }

    /// General piecewise-constant cost. `r0` is the left end of the longest
    /// non-increasing suffix of the levels.
    pub fn step_levels(levels: Vec<StepLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("step cost needs at least one level"));
        }
        let mut prev = 0.0;
        for l in &levels {
            if !(l.cutoff > prev) || !l.cutoff.is_finite() {
                return Err(Error::invalid("step cutoffs must be positive, finite and strictly increasing"));
            }
            if l.value.is_nan() || l.value < 0.0 {
                return Err(Error::invalid("step values must be nonnegative"));
            }
            prev = l.cutoff;
        }
        let mut start = levels.len() - 1;
        while start > 0 && levels[start - 1].value >= levels[start].value {
            start -= 1;
        }
        // r0 must sit where l is already finite
        while start < levels.len() && levels[start].value.is_infinite() {
            start += 1;
        }
        let r0 = if start == 0 { 0.0 } else { levels[start - 1].cutoff };
        let range = levels.last().unwrap().cutoff;
        Ok(CostFunction { kind: CostKind::Step { levels }, r0, finite_range: Some(range) })
    }

    pub fn tabulated(table: Table, r0: f64) -> Result<Self> {
        if !(r0 >= 0.0) {
            return Err(Error::invalid("r0 must be nonnegative"));
        }
        let range = table.last();
        Ok(CostFunction { kind: CostKind::Tabulated(table), r0, finite_range: Some(range) })
    }

    /// Custom evaluator. `finite_range`, when given, promises `l(r) = 0`
    /// for `r >= finite_range`.
    pub fn custom<F>(name: impl Into<String>, f: F, r0: f64, finite_range: Option<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(r0 >= 0.0) || !r0.is_finite() {
            return Err(Error::invalid("r0 must be finite and nonnegative"));
        }
        if let Some(r) = finite_range {
            if !(r > 0.0) {
                return Err(Error::invalid("finite range must be positive"));
            }
        }
        let custom = CustomCost::new(name.into(), Arc::new(f), r0);
        Ok(CostFunction { kind: CostKind::Custom(custom), r0, finite_range })
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn finite_range(&self) -> Option<f64> {
        self.finite_range
    }

    /// `l(r)`, or a domain error for negative or NaN `r`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("cost evaluated at r = {r}")));
        }
        Ok(self.value(r))
    }

    /// `l(r)` without the domain check; `r` must be `>= 0`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if let Some(range) = self.finite_range {
            if r >= range {
                return 0.0;
            }
        }
        match &self.kind {
            CostKind::Riesz { s } => {
                if r == 0.0 {
                    f64::INFINITY
                } else if *s == 2.0 {
                    1.0 / (r * r)
                } else {
                    r.powf(-s)
                }
            }
            CostKind::HardSphere => {
                if r < 1.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            CostKind::Step { levels } => {
                for l in levels {
                    if r < l.cutoff {
                        return l.value;
                    }
                }
                0.0
            }
            CostKind::Tabulated(t) => t.eval(r),
            CostKind::Custom(c) => (c.f)(r),
        }
    }

    /// `l(0)`.
    pub fn at_zero(&self) -> f64 {
        self.value(0.0)
    }

    /// Upper envelope `l+(r) = sup { l(s) : s >= r }`.
    pub fn upper_envelope(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("upper envelope evaluated at r = {r}")));
        }
        Ok(self.upper(r))
    }

    pub(crate) fn upper(&self, r: f64) -> f64 {
        if r >= self.r0 {
            return self.value(r);
        }
        match &self.kind {
            CostKind::Riesz { .. } => self.value(r),
            CostKind::HardSphere => {
                if r < 1.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            CostKind::Step { levels } => levels
                .iter()
                .filter(|l| l.cutoff > r)
                .map(|l| l.value)
                .fold(0.0, f64::max),
            CostKind::Tabulated(t) => t.upper(r),
            CostKind::Custom(c) => c.suffix_max[c.cell(r)],
        }
    }

    /// Lower envelope `l-(r) = inf { l(s) : 0 <= s <= r sqrt(d) }`, the
    /// infimum of the cost over pairs of points in a closed cube of side `r`.
    pub fn lower_envelope(&self, r: f64, d: usize) -> Result<f64> {
        self.check_envelope_args(r, d)?;
        Ok(self.lower(r * (d as f64).sqrt(), false))
    }

    /// Variant of [`lower_envelope`](Self::lower_envelope) over the half-open
    /// range `0 <= s < r sqrt(d)`: pairs of points inside one half-open cube
    /// `x + [0, r)^d` are always closer than `r sqrt(d)`.
    pub fn lower_envelope_strict(&self, r: f64, d: usize) -> Result<f64> {
        self.check_envelope_args(r, d)?;
        Ok(self.lower(r * (d as f64).sqrt(), true))
    }

    fn check_envelope_args(&self, r: f64, d: usize) -> Result<()> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("lower envelope evaluated at r = {r}")));
        }
        if d == 0 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn lower(&self, reach: f64, strict: bool) -> f64 {
        if strict && reach == 0.0 {
            return self.at_zero();
        }
        if let Some(range) = self.finite_range {
            if reach > range || (!strict && reach >= range) {
                return 0.0;
            }
        }
        match &self.kind {
            CostKind::Riesz { .. } => self.value(reach),
            CostKind::HardSphere => {
                let covered = if strict { reach <= 1.0 } else { reach < 1.0 };
                if covered {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            CostKind::Step { levels } => {
                let mut lo = f64::INFINITY;
                let mut prev = 0.0;
                for l in levels {
                    let touches = if strict { prev < reach } else { prev <= reach };
                    if touches {
                        lo = lo.min(l.value);
                    }
                    prev = l.cutoff;
                }
                lo
            }
            CostKind::Tabulated(t) => t.lower(reach, strict),
            CostKind::Custom(c) => {
                if reach >= self.r0 {
                    c.prefix_min[c.prefix_min.len() - 1].min(self.value(reach))
                } else {
                    c.prefix_min[c.cell(reach)]
                }
            }
        }
    }

    /// Pseudo-inverse of the upper envelope: `sup { t >= 0 : l+(t) > level }`,
    /// `0` when the set is empty, `+inf` when it is unbounded. Plateaus
    /// resolve to their right edge.
    pub fn pseudo_inverse(&self, level: f64) -> Result<f64> {
        if level.is_nan() {
            return Err(Error::domain("pseudo-inverse at NaN level"));
        }
        if level < 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(match &self.kind {
            CostKind::Riesz { s } => {
                if level == 0.0 {
                    f64::INFINITY
                } else if level == f64::INFINITY {
                    0.0
                } else {
                    level.powf(-1.0 / s)
                }
            }
            CostKind::HardSphere => {
                if level < f64::INFINITY {
                    1.0
                } else {
                    0.0
                }
            }
            CostKind::Step { levels } => levels
                .iter()
                .filter(|l| l.value > level)
                .map(|l| l.cutoff)
                .fold(0.0, f64::max),
            _ => self.pseudo_inverse_bisect(level),
        })
    }

    fn pseudo_inverse_bisect(&self, level: f64) -> f64 {
        if self.upper(0.0) <= level {
            return 0.0;
        }
        let mut hi = match self.finite_range {
            Some(r) => r,
            None => self.r0.max(1.0),
        };
        let mut doublings = 0;
        while self.upper(hi) > level {
            hi *= 2.0;
            doublings += 1;
            if doublings > 1100 || !hi.is_finite() {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.upper(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `int_a^inf t^j l(t) dt` for `a >= r0`.
    ///
    /// Closed form for the built-in kinds, exact piecewise integration for
    /// tabulated costs, and doubling quadrature for custom ones. A divergent
    /// or non-convergent integral is a precondition error.
    pub fn tail_moment(&self, j: u32, a: f64) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(Error::domain("tail moment lower limit must be >= 0"));
        }
        if let Some(r) = self.finite_range {
            if a >= r {
                return Ok(0.0);
            }
        }
        let ji = j as i32;
        match &self.kind {
            CostKind::Riesz { s } => {
                let p = *s - (j as f64) - 1.0;
                if p <= 0.0 || a == 0.0 {
                    return Err(Error::precondition(format!(
                        "tail integral of r^(-{s}) * r^{j} diverges"
                    )));
                }
                Ok(a.powf(-p) / p)
            }
            CostKind::HardSphere => {
                if a < 1.0 {
                    Err(Error::precondition("hard-sphere tail moment below the core radius is infinite"))
                } else {
                    Ok(0.0)
                }
            }
            CostKind::Step { levels } => {
                let mut total = 0.0;
                let mut prev: f64 = 0.0;
                for l in levels {
                    let lo = prev.max(a);
                    if l.cutoff > lo {
                        total += crate::extended::mul(
                            l.value,
                            (l.cutoff.powi(ji + 1) - lo.powi(ji + 1)) / (ji + 1) as f64,
                        );
                    }
                    prev = l.cutoff;
                }
                Ok(total)
            }
            CostKind::Tabulated(t) => Ok(t.moment(ji, a)),
            CostKind::Custom(_) => {
                let f = |t: f64| self.value(t) * t.powi(ji);
                let res = match self.finite_range {
                    Some(r) => quadrature::TailIntegral {
                        value: quadrature::simpson(&f, a, r, 1e-13),
                        upper: r,
                        doublings: 0,
                        converged: true,
                    },
                    None => quadrature::tail_integral(&f, a, H3_REL_TOL, H3_MAX_DOUBLINGS),
                };
                if res.converged && res.value.is_finite() {
                    Ok(res.value)
                } else {
                    Err(Error::precondition(format!(
                        "tail integral did not converge (upper limit {}, {} doublings)",
                        res.upper, res.doublings
                    )))
                }
            }
        }
    }

    /// Checks H1-H3 in dimension `d`.
    pub fn validate_hypotheses(&self, d: usize) -> HypothesisReport {
        let mut diagnostics = Vec::new();
        let l0 = self.at_zero();
        let h1 = l0 > 0.0;
        if !h1 {
            diagnostics.push(format!("l(0) = {l0} is not positive"));
        }

        let h2 = match &self.kind {
            CostKind::Riesz { .. } | CostKind::HardSphere => true,
            CostKind::Step { .. } => true,
            _ => self.sample_monotone_tail(&mut diagnostics),
        };

        let d = d.max(1);
        let (h3, tail, method) = match &self.kind {
            CostKind::Custom(_) if self.finite_range.is_none() => {
                let f = |t: f64| self.value(t) * t.powi(d as i32 - 1);
                let res = quadrature::tail_integral(&f, self.r0, H3_REL_TOL, H3_MAX_DOUBLINGS);
                let ok = res.converged && res.value.is_finite();
                if !ok {
                    diagnostics.push(format!(
                        "tail quadrature did not converge after {} doublings (upper limit {:e})",
                        res.doublings, res.upper
                    ));
                }
                (
                    ok,
                    if ok { res.value } else { f64::INFINITY },
                    TailMethod::Quadrature { upper: res.upper, doublings: res.doublings },
                )
            }
            _ => match self.tail_moment(d as u32 - 1, self.r0) {
                Ok(v) => (true, v, TailMethod::ClosedForm),
                Err(e) => {
                    diagnostics.push(e.to_string());
                    (false, f64::INFINITY, TailMethod::ClosedForm)
                }
            },
        };

        HypothesisReport { h1, h2, h3, tail_integral: tail, tail_method: method, diagnostics }
    }

    fn sample_monotone_tail(&self, diagnostics: &mut Vec<String>) -> bool {
        let start = self.r0.max(1e-9);
        let end = match self.finite_range {
            Some(r) => r.max(start),
            None => 1e6 * start.max(1.0),
        };
        let n = 4096;
        let mut prev = self.value(self.r0);
        if !prev.is_finite() {
            diagnostics.push(format!("l(r0) = {prev} is not finite"));
            return false;
        }
        let (lo, hi) = (start.ln(), end.ln());
        for i in 0..=n {
            let r = (lo + (hi - lo) * i as f64 / n as f64).exp();
            let v = self.value(r);
            if !v.is_finite() {
                diagnostics.push(format!("l({r}) is not finite beyond r0"));
                return false;
            }
            if v > prev * (1.0 + 1e-12) + 1e-300 {
                diagnostics.push(format!("l increases near r = {r} beyond r0"));
                return false;
            }
            prev = v;
        }
        if self.finite_range.is_none() {
            let far = self.value(end);
            let near = self.value(self.r0).max(f64::MIN_POSITIVE);
            if far > 1e-3 * near {
                diagnostics.push(format!("l({end:e}) = {far} does not decay to zero"));
                return false;
            }
        }
        true
    }
}

/// How the H3 tail integral was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TailMethod {
    ClosedForm,
    Quadrature { upper: f64, doublings: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
    /// `int_{r0}^inf l(r) r^(d-1) dr`; `+inf` when H3 fails.
    pub tail_integral: f64,
    pub tail_method: TailMethod,
    pub diagnostics: Vec<String>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.h1 && self.h2 && self.h3
    }
}

/// `{kind, params}` record describing a cost in an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl CostSpec {
    /// Builds the cost. Relative table paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<CostFunction> {
        let p = &self.params;
        let num = |key: &str| -> Result<Option<f64>> {
            match p.get(key) {
                None => Ok(None),
                Some(v) => v
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| Error::invalid(format!("cost.params.{key} must be a number"))),
            }
        };
        let allow = |keys: &[&str]| -> Result<()> {
            for k in p.keys() {
                if !keys.contains(&k.as_str()) {
                    return Err(Error::invalid(format!("cost.params.{k} is not recognised for kind '{}'", self.kind)));
                }
            }
            Ok(())
        };
        match self.kind.as_str() {
            "riesz" => {
                allow(&["s", "r0"])?;
                let s = num("s")?.ok_or_else(|| Error::invalid("cost.params.s is required for riesz"))?;
                let r0 = num("r0")?.unwrap_or(1.0);
                if !(s > 0.0) || !(r0 > 0.0) {
                    return Err(Error::invalid("riesz needs s > 0 and r0 > 0"));
                }
                Ok(CostFunction::riesz_with_r0(s, r0))
            }
            "hard_sphere" => {
                allow(&[])?;
                Ok(CostFunction::hard_sphere())
            }
            "step" => {
                allow(&["m", "levels"])?;
                if let Some(levels) = p.get("levels") {
                    let levels: Vec<(f64, f64)> = serde_json::from_value(levels.clone())
                        .map_err(|e| Error::invalid(format!("cost.params.levels: {e}")))?;
                    CostFunction::step_levels(
                        levels.into_iter().map(|(cutoff, value)| StepLevel { cutoff, value }).collect(),
                    )
                } else {
                    let m = num("m")?.ok_or_else(|| Error::invalid("cost.params.m or levels is required for step"))?;
                    if !(m > 0.0) {
                        return Err(Error::invalid("step needs m > 0"));
                    }
                    Ok(CostFunction::step(m))
                }
            }
            "tabulated" => {
                allow(&["path", "r", "values", "r0"])?;
                let r0 = num("r0")?.ok_or_else(|| Error::invalid("cost.params.r0 is required for tabulated"))?;
                let table = if let Some(path) = p.get("path") {
                    let path = path
                        .as_str()
                        .ok_or_else(|| Error::invalid("cost.params.path must be a string"))?;
                    let path = match base_dir {
                        Some(b) if Path::new(path).is_relative() => b.join(path),
                        _ => Path::new(path).to_path_buf(),
                    };
                    Table::from_csv(&path)?
                } else {
                    let r: Vec<f64> = serde_json::from_value(p.get("r").cloned().unwrap_or_default())
                        .map_err(|e| Error::invalid(format!("cost.params.r: {e}")))?;
                    let v: Vec<f64> = serde_json::from_value(p.get("values").cloned().unwrap_or_default())
                        .map_err(|e| Error::invalid(format!("cost.params.values: {e}")))?;
                    Table::new(r, v)?
                };
                CostFunction::tabulated(table, r0)
            }
            other => Err(Error::invalid(format!("unknown cost kind '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bumpy() -> CostFunction {
        // decreasing tail with a bump centred at r = 3; monotone from r0 = 4.5
        CostFunction::custom(
            "bump",
            |r: f64| 1.0 / (1.0 + r * r) + 0.5 * (-(r - 3.0) * (r - 3.0) / 0.1).exp(),
            4.5,
            None,
        )
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(CostFunction::riesz(2.0).eval(0.5).unwrap(), 4.0);
        assert_eq!(CostFunction::hard_sphere().eval(0.5).unwrap(), f64::INFINITY);
        assert_eq!(CostFunction::hard_sphere().eval(1.5).unwrap(), 0.0);
        assert_eq!(CostFunction::step(2.0).eval(0.5).unwrap(), 1.0);
        assert!(matches!(CostFunction::riesz(2.0).eval(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn upper_envelope_examples() {
        assert_eq!(CostFunction::riesz(2.0).upper_envelope(2.0).unwrap(), 0.25);
        let step = CostFunction::step(2.0);
        for r in [0.0, 0.3, 0.99] {
            assert_eq!(step.upper_envelope(r).unwrap(), 1.0);
        }
        assert_eq!(step.upper_envelope(1.0).unwrap(), 0.0);
    }

    #[test]
    fn upper_envelope_flattens_bump() {
        let c = bumpy();
        // oracle: maximise over a fine grid of s >= r
        for &r in &[0.5, 1.5, 2.5, 2.9, 3.2, 4.0, 5.0] {
            let oracle = (0..200_000)
                .map(|i| r + i as f64 * 1e-4)
                .map(|s| c.value(s))
                .fold(0.0, f64::max);
            let got = c.upper_envelope(r).unwrap();
            assert!(got >= oracle - 1e-9, "r={r}: {got} < {oracle}");
            assert!(got <= oracle + 2e-2, "r={r}: {got} too far above {oracle}");
        }
        // before the bump the envelope sits on the bump peak, not on l
        assert!(c.upper_envelope(2.0).unwrap() > c.value(2.0) + 0.3);
    }

    #[test]
    fn lower_envelope_examples() {
        assert_eq!(CostFunction::riesz(2.0).lower_envelope(1.0, 1).unwrap(), 1.0);
        assert_eq!(CostFunction::hard_sphere().lower_envelope(0.9, 1).unwrap(), f64::INFINITY);
        let step = CostFunction::step(2.0);
        // r sqrt(d) = 1 reaches the zero region; grid oracle over [0, 1]
        let oracle = (0..=1000).map(|i| step.value(i as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
        assert_eq!(oracle, 0.0);
        assert_eq!(step.lower_envelope(0.5, 4).unwrap(), oracle);
        // half-open cubes never see distance exactly 1
        assert_eq!(step.lower_envelope_strict(0.5, 4).unwrap(), 1.0);
        assert_eq!(step.lower_envelope_strict(1.0, 1).unwrap(), 1.0);
        assert_eq!(CostFunction::hard_sphere().lower_envelope_strict(1.0, 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn pseudo_inverse_examples() {
        assert_relative_eq!(CostFunction::riesz(2.0).pseudo_inverse(4.0).unwrap(), 0.5);
        assert_eq!(CostFunction::step(2.0).pseudo_inverse(0.5).unwrap(), 1.0);
        assert_eq!(CostFunction::step(2.0).pseudo_inverse(1.0).unwrap(), 0.0);
        assert_eq!(CostFunction::riesz(2.0).pseudo_inverse(0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn pseudo_inverse_tabulated_matches_scan() {
        let r: Vec<f64> = (1..=40).map(|i| 0.1 * i as f64).collect();
        let v: Vec<f64> = r.iter().map(|x| 3.0 * (-x).exp() + if *x < 1.0 { 0.5 } else { 0.0 }).collect();
        let c = CostFunction::tabulated(Table::new(r, v).unwrap(), 0.0).unwrap();
        let step = 1e-4;
        for level in [0.05, 0.2, 0.7, 1.0, 1.5, 2.5] {
            // exhaustive scan: last grid point where l+ exceeds the level
            let mut last = 0.0;
            let mut t = 0.0;
            while t < 5.0 {
                if c.upper(t) > level {
                    last = t;
                }
                t += step;
            }
            let got = c.pseudo_inverse(level).unwrap();
            assert!((got - last).abs() <= 2.0 * step, "level {level}: {got} vs {last}");
        }
    }

    #[test]
    fn hypothesis_examples() {
        let rep = CostFunction::riesz(2.0).validate_hypotheses(1);
        assert!(rep.all_pass());
        assert_relative_eq!(rep.tail_integral, 1.0);
        let rep = CostFunction::riesz(0.5).validate_hypotheses(1);
        assert!(rep.h1 && rep.h2 && !rep.h3);
        for d in 1..=3 {
            let rep = CostFunction::hard_sphere().validate_hypotheses(d);
            assert!(rep.all_pass());
            assert_eq!(rep.tail_integral, 0.0);
        }
        let rep = CostFunction::step(2.0).validate_hypotheses(2);
        assert!(rep.all_pass());
        assert_relative_eq!(rep.tail_integral, 0.5);
        // riesz with s <= d fails in higher dimension too
        assert!(!CostFunction::riesz(2.0).validate_hypotheses(2).h3);
        assert!(CostFunction::riesz(3.0).validate_hypotheses(2).h3);
    }

    #[test]
    fn custom_quadrature_h3() {
        let c = CostFunction::custom("r^-3", |r: f64| if r == 0.0 { f64::INFINITY } else { r.powi(-3) }, 1.0, None)
            .unwrap();
        let rep = c.validate_hypotheses(2);
        assert!(rep.all_pass(), "{rep:?}");
        assert_relative_eq!(rep.tail_integral, 1.0, max_relative = 1e-7);
        assert!(matches!(rep.tail_method, TailMethod::Quadrature { .. }));

        let slow = CostFunction::custom("r^-1", |r: f64| 1.0 / r.max(1e-300), 1.0, None).unwrap();
        let rep = slow.validate_hypotheses(1);
        assert!(!rep.h3);
        assert!(!rep.diagnostics.is_empty());
    }

    #[test]
    fn non_monotone_step_gets_r0() {
        let c = CostFunction::step_levels(vec![
            StepLevel { cutoff: 1.0, value: 1.0 },
            StepLevel { cutoff: 2.0, value: 4.0 },
        ])
        .unwrap();
        assert_eq!(c.r0(), 1.0);
        assert_eq!(c.upper_envelope(0.5).unwrap(), 4.0);
        assert!(c.validate_hypotheses(1).all_pass());
    }

    #[test]
    fn tail_moments_match_quadrature() {
        let r: Vec<f64> = (0..=20).map(|i| 0.5 + 0.1 * i as f64).collect();
        let v: Vec<f64> = r.iter().map(|x| 2.5 - x).collect();
        let c = CostFunction::tabulated(Table::new(r, v).unwrap(), 0.0).unwrap();
        for j in 0..3 {
            for a in [0.0, 0.7, 1.3] {
                let q = quadrature::simpson(&|t: f64| c.value(t) * t.powi(j as i32), a, 2.5, 1e-12);
                assert_relative_eq!(c.tail_moment(j, a).unwrap(), q, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn spec_parsing() {
        let spec: CostSpec = serde_json::from_str(r#"{"kind":"step","params":{"m":2}}"#).unwrap();
        assert_eq!(spec.build(None).unwrap().value(0.5), 1.0);
        let spec: CostSpec = serde_json::from_str(r#"{"kind":"hard_sphere"}"#).unwrap();
        assert!(matches!(spec.build(None).unwrap().kind(), CostKind::HardSphere));
        let spec: CostSpec = serde_json::from_str(r#"{"kind":"riesz","params":{"q":2}}"#).unwrap();
        assert!(spec.build(None).is_err());
    }

    fn builtins() -> Vec<CostFunction> {
        vec![
            CostFunction::riesz(2.0),
            CostFunction::riesz(3.5),
            CostFunction::hard_sphere(),
            CostFunction::step(2.0),
            CostFunction::step_levels(vec![
                StepLevel { cutoff: 1.0, value: 1.0 },
                StepLevel { cutoff: 2.0, value: 4.0 },
            ])
            .unwrap(),
            bumpy(),
        ]
    }

    #[test]
    fn upper_equals_cost_beyond_r0() {
        for c in builtins() {
            for i in 0..200 {
                let r = c.r0() + 0.037 * i as f64;
                assert_eq!(c.upper(r), c.value(r), "{:?} at {r}", c.kind().tag());
            }
        }
    }

    proptest! {
        #[test]
        fn envelopes_are_monotone(a in 0.0f64..6.0, b in 0.0f64..6.0, d in 1usize..4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in builtins() {
                prop_assert!(c.upper(lo) >= c.upper(hi));
                prop_assert!(c.lower_envelope(lo, d).unwrap() >= c.lower_envelope(hi, d).unwrap());
                // l-(r) <= l(s) for s in [0, r sqrt d], and l(s) <= l+(s)
                let s = hi * (d as f64).sqrt() * 0.999;
                // custom envelopes are sampled; allow for the polish error
                prop_assert!(c.lower_envelope(hi, d).unwrap() <= c.value(s) * (1.0 + 1e-9));
                prop_assert!(c.value(s) <= c.upper(s) * (1.0 + 1e-9));
                prop_assert!(c.lower_envelope(hi, d).unwrap() <= c.upper(hi * (d as f64).sqrt()));
            }
        }

        #[test]
        fn pseudo_inverse_non_increasing(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in builtins() {
                prop_assert!(c.pseudo_inverse(lo).unwrap() >= c.pseudo_inverse(hi).unwrap());
            }
        }
    }
}
