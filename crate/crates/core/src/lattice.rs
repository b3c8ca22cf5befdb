//! Bravais lattices `G = F Z^d`, Epstein zeta sums
//! `Lambda(r) = sum_{x in G \ 0} l(r |x|)` with a certified tail bracket, and
//! the profile `H(t) = t Lambda_{Z^d}(t^(-1/d))`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::config::{AxisBox, PointConfiguration};
use crate::cost::CostFunction;
use crate::error::{Error, Result};

/// Default cap on the number of lattice points a single call may enumerate.
pub const DEFAULT_POINT_CAP: usize = 100_000_000;

/// Radii `a, 2a, ..., SWEEP_STEPS * a` used to measure the density constant.
pub const SWEEP_STEPS: usize = 64;

/// Safety factor applied to the measured density constant.
pub const SWEEP_SAFETY: f64 = 2.0;

const NORM_SLACK: f64 = 1e-12;

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let mut w = [1.0, 2.0];
    for k in 2..=d {
        let next = w[k % 2] * 2.0 * std::f64::consts::PI / k as f64;
        w[k % 2] = next;
    }
    w[d % 2]
}

/// `F Z^d` for an invertible `d x d` generator `F`; lattice vectors are
/// `F n`, so the basis vectors are the columns of `F`.
#[derive(Debug, Clone)]
pub struct BravaisLattice {
    dim: usize,
    f: Vec<f64>,
    f_inv: Vec<f64>,
    det_abs: f64,
    a_min: f64,
    diameter: f64,
    density_constant: OnceLock<f64>,
}

impl PartialEq for BravaisLattice {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.f == other.f
    }
}

impl BravaisLattice {
    /// From a row-major generator matrix.
    pub fn new(dim: usize, generator: Vec<f64>) -> Result<Self> {
        if dim == 0 || generator.len() != dim * dim {
            return Err(Error::invalid("generator must be a nonempty square matrix"));
        }
        if generator.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("generator entries must be finite"));
        }
        let (det, inv) = invert(dim, &generator);
        let scale = generator.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(det.abs() > 1e-12 * scale.powi(dim as i32)) {
            return Err(Error::invalid("generator matrix is singular"));
        }
        let mut lat = BravaisLattice {
            dim,
            f: generator,
            f_inv: inv,
            det_abs: det.abs(),
            a_min: 0.0,
            diameter: 0.0,
            density_constant: OnceLock::new(),
        };
        lat.diameter = lat.cell_diameter();
        // the shortest vector is no longer than the shortest basis column
        let col_min = (0..dim)
            .map(|j| (0..dim).map(|i| lat.f[i * dim + j].powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        lat.a_min = lat.norms_in_ball(col_min, DEFAULT_POINT_CAP)?[0];
        Ok(lat)
    }

    pub fn cartesian(dim: usize) -> Self {
        let mut f = vec![0.0; dim * dim];
        for i in 0..dim {
            f[i * dim + i] = 1.0;
        }
        Self::new(dim, f).expect("identity is invertible")
    }

    /// Triangular lattice with unit minimal distance.
    pub fn hexagonal() -> Self {
        Self::new(2, vec![1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]).expect("hexagonal generator is invertible")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major generator.
    pub fn generator(&self) -> &[f64] {
        &self.f
    }

    pub fn det_abs(&self) -> f64 {
        self.det_abs
    }

    /// Length of the shortest nonzero lattice vector.
    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    /// Diameter of the fundamental cell `F [0,1)^d`.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// `C_G = SWEEP_SAFETY * max_j #(B_{R_j} cap G) / R_j^d` over
    /// `R_j = j a_min`, `j = 1..=SWEEP_STEPS`; the origin is counted.
    pub fn density_constant(&self) -> Result<f64> {
        if let Some(c) = self.density_constant.get() {
            return Ok(*c);
        }
        let a = self.a_min;
        let norms = self.norms_in_ball(SWEEP_STEPS as f64 * a, DEFAULT_POINT_CAP)?;
        let mut best: f64 = 0.0;
        for j in 1..=SWEEP_STEPS {
            let radius = j as f64 * a;
            let lim = radius * (1.0 + NORM_SLACK);
            let count = norms.partition_point(|&n| n <= lim) + 1;
            best = best.max(count as f64 / radius.powi(self.dim as i32));
        }
        let c = SWEEP_SAFETY * best;
        Ok(*self.density_constant.get_or_init(|| c))
    }

    pub fn vector(&self, n: &[i64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|i| (0..d).map(|j| self.f[i * d + j] * n[j] as f64).sum()).collect()
    }

    fn cell_diameter(&self) -> f64 {
        let d = self.dim;
        let mut best: f64 = 0.0;
        let mut sigma = vec![-1i64; d];
        loop {
            best = best.max(norm(&self.vector(&sigma)));
            if !odometer(&mut sigma, &vec![-1; d], &vec![1; d]) {
                break;
            }
        }
        best
    }

    /// Nonzero lattice vectors with `|v| <= radius`, sorted by length.
    pub fn points_in_ball(&self, radius: f64) -> Result<Vec<Vec<f64>>> {
        self.points_in_ball_capped(radius, DEFAULT_POINT_CAP)
    }

    pub fn points_in_ball_capped(&self, radius: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        self.visit_ball(radius, cap, |r2, v| out.push((r2, v.to_vec())))?;
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| cmp_vec(&a.1, &b.1)));
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }

    /// Lengths of the nonzero vectors with `|v| <= radius`, ascending.
    pub fn norms_in_ball(&self, radius: f64, cap: usize) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.visit_ball(radius, cap, |r2, _| out.push(r2.sqrt()))?;
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    fn visit_ball<F: FnMut(f64, &[f64])>(&self, radius: f64, cap: usize, mut visit: F) -> Result<()> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::domain("ball radius must be positive and finite"));
        }
        let d = self.dim;
        let expected = unit_ball_volume(d) * (radius + self.diameter).powi(d as i32) / self.det_abs;
        if expected > cap as f64 {
            return Err(Error::resource(format!(
                "about {expected:.3e} lattice points within radius {radius}, cap is {cap}"
            )));
        }
        let bounds: Vec<i64> = (0..d)
            .map(|i| {
                let row = (0..d).map(|j| self.f_inv[i * d + j].powi(2)).sum::<f64>().sqrt();
                (radius * row * (1.0 + NORM_SLACK)).floor() as i64
            })
            .collect();
        let enumerated: f64 = bounds.iter().map(|b| (2 * b + 1) as f64).product();
        if enumerated > 4.0 * cap as f64 {
            return Err(Error::resource(format!("enumeration box of {enumerated:.3e} points exceeds the cap")));
        }
        let lim = radius * radius * (1.0 + 2.0 * NORM_SLACK);
        let lo: Vec<i64> = bounds.iter().map(|b| -b).collect();
        let mut n = lo.clone();
        let mut v = vec![0.0; d];
        loop {
            if n.iter().any(|&k| k != 0) {
                let mut r2 = 0.0;
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi = (0..d).map(|j| self.f[i * d + j] * n[j] as f64).sum();
                    r2 += *vi * *vi;
                }
                if r2 <= lim {
                    visit(r2, &v);
                }
            }
            if !odometer(&mut n, &lo, &bounds) {
                break;
            }
        }
        Ok(())
    }
}

fn cmp_vec(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Advances `n` through the integer box `[lo, hi]`; false once exhausted.
fn odometer(n: &mut [i64], lo: &[i64], hi: &[i64]) -> bool {
    for i in (0..n.len()).rev() {
        if n[i] < hi[i] {
            n[i] += 1;
            return true;
        }
        n[i] = lo[i];
    }
    false
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Determinant and inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(d: usize, m: &[f64]) -> (f64, Vec<f64>) {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs())).unwrap();
        if a[p * d + c] == 0.0 {
            return (0.0, inv);
        }
        if p != c {
            for k in 0..d {
                a.swap(p * d + k, c * d + k);
                inv.swap(p * d + k, c * d + k);
            }
            det = -det;
        }
        let piv = a[c * d + c];
        det *= piv;
        for k in 0..d {
            a[c * d + k] /= piv;
            inv[c * d + k] /= piv;
        }
        for r in 0..d {
            if r != c {
                let factor = a[r * d + c];
                if factor != 0.0 {
                    for k in 0..d {
                        a[r * d + k] -= factor * a[c * d + k];
                        inv[r * d + k] -= factor * inv[c * d + k];
                    }
                }
            }
        }
    }
    (det, inv)
}

/// Lattice declared in an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct LatticeSpec {
    pub kind: String,
    #[serde(default)]
    pub generator: Option<Vec<Vec<f64>>>,
}

impl LatticeSpec {
    pub fn build(&self, dim: usize) -> Result<BravaisLattice> {
        match self.kind.as_str() {
            "cartesian" => Ok(BravaisLattice::cartesian(dim)),
            "hexagonal" => {
                if dim != 2 {
                    return Err(Error::invalid("hexagonal lattice requires dim = 2"));
                }
                Ok(BravaisLattice::hexagonal())
            }
            "generator" => {
                let rows = self
                    .generator
                    .as_ref()
                    .ok_or_else(|| Error::invalid("lattice.generator is required for kind 'generator'"))?;
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::invalid(format!("lattice.generator must be {dim} x {dim}")));
                }
                BravaisLattice::new(dim, rows.concat())
            }
            other => Err(Error::invalid(format!("unknown lattice kind '{other}'"))),
        }
    }
}

/// A lattice sum with a two-sided error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaValue {
    pub value: f64,
    /// Half-width of the interval known to contain the true sum.
    pub error: f64,
    /// True when `error <= tol` was reached.
    pub certified: bool,
    /// Lattice vectors with `|x| <= cutoff` were summed directly.
    pub cutoff: f64,
    pub terms: usize,
}

/// Two-sided bound on `sum_{|x| > R} l(r |x|)` for `r R >= r0`.
///
/// Abel summation writes the tail as
/// `-l(rR) N(R) + int_R^inf N(rho) d(-l(r rho))` with `N` the count of nonzero
/// vectors in the closed ball; `N` is then squeezed between
/// `w_d (rho -+ D)^d / det` (minus one on the low side), `D` the cell
/// diameter, and the remaining integrals are moments of `l` over `[rR, inf)`.
fn tail_bracket(
    cost: &CostFunction,
    lat: &BravaisLattice,
    r: f64,
    radius: f64,
    count: usize,
) -> Result<(f64, f64)> {
    let d = lat.dim as i32;
    let a = r * radius;
    let la = cost.value(a);
    let c = unit_ball_volume(lat.dim) / lat.det_abs;
    let dia = lat.diameter;
    let mut moments = Vec::with_capacity(lat.dim);
    for j in 0..lat.dim as u32 {
        moments.push(cost.tail_moment(j, a)? * r.powi(-(j as i32) - 1));
    }
    let binom = |n: i32, k: i32| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    let integral = |shift: f64| -> f64 {
        (0..d)
            .map(|j| binom(d - 1, j) * shift.powi(d - 1 - j) * moments[j as usize])
            .sum::<f64>()
            * c
            * d as f64
    };
    let n = count as f64;
    let hi = (c * (radius + dia).powi(d) - n) * la + integral(dia);
    let lo = if radius >= dia {
        (c * (radius - dia).powi(d) - 1.0 - n) * la + integral(-dia)
    } else {
        0.0
    };
    Ok((lo.max(0.0), hi.max(0.0)))
}

/// `Lambda_{l,G}(r) = sum_{x in G \ 0} l(r |x|)`.
///
/// Finite-range costs are summed exactly. Otherwise the direct sum over
/// `|x| <= R` is combined with the tail bracket of [`tail_bracket`], doubling
/// `R` until the bracket half-width is at most `tol`. The bracket assumes
/// `l` is non-increasing and continuous on `[r0, inf)`. If the point cap
/// stops the doubling first, the best bracket so far is returned with
/// `certified = false`. Terms are added from the farthest vector inwards.
pub fn epstein_zeta(cost: &CostFunction, lat: &BravaisLattice, r: f64, tol: f64) -> Result<ZetaValue> {
    epstein_zeta_capped(cost, lat, r, tol, DEFAULT_POINT_CAP)
}

pub fn epstein_zeta_capped(
    cost: &CostFunction,
    lat: &BravaisLattice,
    r: f64,
    tol: f64,
    cap: usize,
) -> Result<ZetaValue> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("zeta argument r must be positive"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let direct = |radius: f64| -> Result<(f64, usize)> {
        let norms = lat.norms_in_ball(radius, cap)?;
        let mut s = 0.0;
        for &n in norms.iter().rev() {
            s += cost.value(r * n);
        }
        Ok((s, norms.len()))
    };

    if let Some(range) = cost.finite_range() {
        // every vector with r|x| < range lies in the ball of radius range / r
        let radius = range / r;
        let (s, n) = direct(radius)?;
        return Ok(ZetaValue { value: s, error: 0.0, certified: true, cutoff: radius, terms: n });
    }

    let mut radius = (cost.r0() / r).max(2.0 * lat.diameter).max(4.0 * lat.a_min);
    let mut best: Option<ZetaValue> = None;
    loop {
        let (s, n) = match direct(radius) {
            Ok(v) => v,
            Err(Error::Resource(msg)) => {
                return best.ok_or(Error::Resource(msg));
            }
            Err(e) => return Err(e),
        };
        let (lo, hi) = match tail_bracket(cost, lat, r, radius, n) {
            Ok(b) => b,
            Err(Error::Precondition(_)) => (0.0, f64::INFINITY),
            Err(e) => return Err(e),
        };
        let half = 0.5 * (hi - lo);
        let z = ZetaValue {
            value: if hi.is_finite() { s + 0.5 * (lo + hi) } else { s },
            error: half,
            certified: half <= tol,
            cutoff: radius,
            terms: n,
        };
        if z.certified || !hi.is_finite() {
            return Ok(z);
        }
        best = Some(z);
        radius *= 2.0;
    }
}

/// `(C_G / r^d) (l(r0) r0^d + d int_{r0}^inf t^(d-1) l(t) dt)`, an upper bound
/// on `Lambda(r)` for `r >= r0 max(1, 1 / a_min)`.
pub fn zeta_tail_bound(cost: &CostFunction, lat: &BravaisLattice, r: f64) -> Result<f64> {
    let r0 = cost.r0();
    if !(r > 0.0) {
        return Err(Error::domain("zeta argument r must be positive"));
    }
    if r < r0 * (1.0f64).max(1.0 / lat.a_min) * (1.0 - 1e-12) {
        return Err(Error::precondition(format!(
            "tail bound needs r >= r0 * max(1, 1/a_min) = {}",
            r0 * (1.0f64).max(1.0 / lat.a_min)
        )));
    }
    let d = lat.dim;
    let moment = cost.tail_moment(d as u32 - 1, r0)?;
    let head = crate::extended::mul(cost.value(r0), r0.powi(d as i32));
    Ok(lat.density_constant()? / r.powi(d as i32) * (head + d as f64 * moment))
}

/// `H(t) = t Lambda_{Z^d}(t^(-1/d))`, `+inf` for `t <= 0`. The returned error
/// is the zeta bracket scaled by `t`.
pub fn h_profile(cost: &CostFunction, t: f64, d: usize, tol: f64) -> Result<ZetaValue> {
    if t.is_nan() {
        return Err(Error::domain("H evaluated at NaN"));
    }
    if t <= 0.0 {
        return Ok(ZetaValue { value: f64::INFINITY, error: 0.0, certified: true, cutoff: 0.0, terms: 0 });
    }
    let lat = BravaisLattice::cartesian(d);
    let z = epstein_zeta(cost, &lat, t.powf(-1.0 / d as f64), tol / t)?;
    Ok(ZetaValue {
        value: crate::extended::mul(t, z.value),
        error: t * z.error,
        certified: z.certified,
        cutoff: z.cutoff,
        terms: z.terms,
    })
}

/// All points of `spacing * G` in the half-open box (faces matched with a
/// relative slack of `1e-12`).
pub fn lattice_configuration(lat: &BravaisLattice, spacing: f64, bbox: &AxisBox) -> Result<PointConfiguration> {
    lattice_configuration_capped(lat, spacing, bbox, DEFAULT_POINT_CAP)
}

pub fn lattice_configuration_capped(
    lat: &BravaisLattice,
    spacing: f64,
    bbox: &AxisBox,
    cap: usize,
) -> Result<PointConfiguration> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::domain("lattice spacing must be positive"));
    }
    let d = lat.dim;
    if bbox.dim() != d {
        return Err(Error::invalid("box and lattice dimensions differ"));
    }
    let expected = bbox.volume() / (spacing.powi(d as i32) * lat.det_abs);
    if expected > cap as f64 {
        return Err(Error::resource(format!("about {expected:.3e} lattice points in the box, cap is {cap}")));
    }
    let slack: Vec<f64> = (0..d).map(|i| NORM_SLACK * (bbox.edges[i] + bbox.lower[i].abs())).collect();
    // integer ranges from the images of the box corners under F^-1 / spacing
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    let mut corner = vec![0i64; d];
    loop {
        let x: Vec<f64> = (0..d)
            .map(|i| if corner[i] == 0 { bbox.lower[i] } else { bbox.upper(i) } / spacing)
            .collect();
        for i in 0..d {
            let n: f64 = (0..d).map(|j| lat.f_inv[i * d + j] * x[j]).sum();
            lo[i] = lo[i].min(n.floor() as i64 - 1);
            hi[i] = hi[i].max(n.ceil() as i64 + 1);
        }
        if !odometer(&mut corner, &vec![0; d], &vec![1; d]) {
            break;
        }
    }
    let enumerated: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as f64).product();
    if enumerated > 4.0 * cap as f64 {
        return Err(Error::resource("lattice enumeration box exceeds the point cap"));
    }
    let mut config = PointConfiguration::empty(bbox.clone());
    let mut n = lo.clone();
    loop {
        let v: Vec<f64> = lat.vector(&n).iter().map(|x| x * spacing).collect();
        let inside = (0..d).all(|i| v[i] >= bbox.lower[i] - slack[i] && v[i] < bbox.upper(i) - slack[i]);
        if inside {
            let clamped: Vec<f64> = (0..d).map(|i| v[i].max(bbox.lower[i])).collect();
            config.push(&clamped, 1)?;
        }
        if !odometer(&mut n, &lo, &hi) {
            break;
        }
    }
    Ok(config)
}
