//! Finite point configurations, scaled empirical measures and their
//! interaction energies.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::extended::mul;

/// Configurations with more sites than this use a cell list when the cost
/// has finite range.
pub const CELL_LIST_THRESHOLD: usize = 256;

const SNAP_REL: f64 = 1e-12;

/// Axis-aligned box `lower + [0, edges)`.
///
/// Whether the upper faces belong to the box depends on the caller:
/// configurations only require points in the closed box, while the
/// grand-canonical solvers work on the half-open one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub edges: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, edges: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != edges.len() {
            return Err(Error::invalid("box needs matching, nonempty lower corner and edges"));
        }
        if edges.iter().any(|e| !(*e > 0.0) || !e.is_finite()) || lower.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("box edges must be positive and finite"));
        }
        Ok(AxisBox { lower, edges })
    }

    /// The cube `[0, k)^d`.
    pub fn cube(dim: usize, k: f64) -> Self {
        AxisBox::new(vec![0.0; dim], vec![k; dim]).expect("positive cube edge")
    }

    /// The cube `x0 + [0, k)^d`.
    pub fn cube_at(x0: &[f64], k: f64) -> Self {
        AxisBox::new(x0.to_vec(), vec![k; x0.len()]).expect("positive cube edge")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.edges.iter().product()
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.lower[i] + self.edges[i]
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            let slack = SNAP_REL * (self.edges[i] + self.lower[i].abs());
            v >= self.lower[i] - slack && v <= self.upper(i) + slack
        })
    }

    pub fn contains_half_open(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v < self.upper(i))
    }

    /// The box dilated by `factor` about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        AxisBox {
            lower: self.lower.iter().map(|x| x * factor).collect(),
            edges: self.edges.iter().map(|e| e * factor).collect(),
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        AxisBox {
            lower: self.lower.iter().zip(shift).map(|(a, b)| a + b).collect(),
            edges: self.edges.clone(),
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &AxisBox) -> AxisBox {
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect();
        let edges = (0..self.dim())
            .map(|i| self.upper(i).max(other.upper(i)) - lower[i])
            .collect();
        AxisBox { lower, edges }
    }

    /// Minimal number of disjoint half-open `delta`-cubes covering the box:
    /// `prod_i ceil(edge_i / delta)`. Ratios within `1e-12` of an integer
    /// are snapped so that `1 / 0.25` counts as exactly 4.
    pub fn covering_number(&self, delta: f64) -> Result<u64> {
        if !(delta > 0.0) {
            return Err(Error::domain("covering cube side must be positive"));
        }
        let mut n: u64 = 1;
        for &e in &self.edges {
            let q = e / delta;
            let r = q.round();
            let c = if (q - r).abs() <= SNAP_REL * r.max(1.0) { r } else { q.ceil() };
            let c = c.max(1.0);
            if c > u64::MAX as f64 {
                return Err(Error::resource("covering number overflows"));
            }
            n = n
                .checked_mul(c as u64)
                .ok_or_else(|| Error::resource("covering number overflows"))?;
        }
        Ok(n)
    }
}

/// A finite multiset of points in a box: each site carries a multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration {
    dim: usize,
    coords: Vec<f64>,
    mult: Vec<u32>,
    bbox: AxisBox,
}

impl PointConfiguration {
    pub fn empty(bbox: AxisBox) -> Self {
        PointConfiguration { dim: bbox.dim(), coords: Vec::new(), mult: Vec::new(), bbox }
    }

    /// Builds a configuration of simple points.
    pub fn new(bbox: AxisBox, points: &[Vec<f64>]) -> Result<Self> {
        let mut c = Self::empty(bbox);
        for p in points {
            c.push(p, 1)?;
        }
        Ok(c)
    }

    /// Builds from flat coordinates (`dim` values per site) and multiplicities.
    pub fn from_flat(bbox: AxisBox, coords: Vec<f64>, mult: Vec<u32>) -> Result<Self> {
        let dim = bbox.dim();
        if coords.len() != dim * mult.len() {
            return Err(Error::invalid("coordinate count does not match dim * sites"));
        }
        if mult.iter().any(|&m| m == 0) {
            return Err(Error::invalid("multiplicities must be >= 1"));
        }
        for p in coords.chunks(dim) {
            if p.iter().any(|v| !v.is_finite()) || !bbox.contains_closed(p) {
                return Err(Error::invalid(format!("point {p:?} lies outside the box")));
            }
        }
        Ok(PointConfiguration { dim, coords, mult, bbox })
    }

    /// Appends a site with multiplicity `m`.
    pub fn push(&mut self, x: &[f64], m: u32) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!("point has {} coordinates, expected {}", x.len(), self.dim)));
        }
        if m == 0 {
            return Err(Error::invalid("multiplicities must be >= 1"));
        }
        if x.iter().any(|v| !v.is_finite()) || !self.bbox.contains_closed(x) {
            return Err(Error::invalid(format!("point {x:?} lies outside the box")));
        }
        self.coords.extend_from_slice(x);
        self.mult.push(m);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bbox(&self) -> &AxisBox {
        &self.bbox
    }

    /// Number of sites (distinct entries, ignoring multiplicity).
    pub fn sites(&self) -> usize {
        self.mult.len()
    }

    /// Number of points counted with multiplicity.
    pub fn count(&self) -> u64 {
        self.mult.iter().map(|&m| m as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.mult.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn multiplicity(&self, i: usize) -> u32 {
        self.mult[i]
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.mult
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim.max(1))
    }

    /// Translates points and box together.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let coords = self
            .coords
            .chunks(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        PointConfiguration { dim: self.dim, coords, mult: self.mult.clone(), bbox: self.bbox.translated(shift) }
    }

    /// Reorders sites by `perm` (site `i` of the result is site `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut mult = Vec::with_capacity(self.mult.len());
        for &i in perm {
            coords.extend_from_slice(self.point(i));
            mult.push(self.mult[i]);
        }
        PointConfiguration { dim: self.dim, coords, mult, bbox: self.bbox.clone() }
    }

    /// Splits sites by `mask`: `true` goes left.
    pub fn split(&self, mask: &[bool]) -> (Self, Self) {
        let mut a = Self::empty(self.bbox.clone());
        let mut b = Self::empty(self.bbox.clone());
        for i in 0..self.sites() {
            let dst = if mask[i] { &mut a } else { &mut b };
            dst.coords.extend_from_slice(self.point(i));
            dst.mult.push(self.mult[i]);
        }
        (a, b)
    }

    /// Union of two configurations; the box becomes the hull of both boxes.
    pub fn union(&self, other: &Self) -> Self {
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut mult = self.mult.clone();
        mult.extend_from_slice(&other.mult);
        PointConfiguration { dim: self.dim, coords, mult, bbox: self.bbox.hull(&other.bbox) }
    }

    /// Writes one site per row: `x1..xd, multiplicity`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("multiplicity".into());
        w.write_record(&header)?;
        for (i, p) in self.points().enumerate() {
            let mut row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            row.push(self.mult[i].to_string());
            w.write_record(&row)?;
        }
        Ok(())
    }

    /// Reads the CSV layout of [`write_csv`](Self::write_csv) into `bbox`.
    pub fn read_csv(path: &Path, bbox: AxisBox) -> Result<Self> {
        let dim = bbox.dim();
        let mut rdr = csv::Reader::from_path(path)?;
        let mut coords = Vec::new();
        let mut mult = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != dim + 1 {
                return Err(Error::invalid(format!("expected {} columns, found {}", dim + 1, rec.len())));
            }
            for j in 0..dim {
                coords.push(rec[j].trim().parse().map_err(|_| Error::invalid(format!("bad coordinate '{}'", &rec[j])))?);
            }
            mult.push(rec[dim].trim().parse().map_err(|_| Error::invalid(format!("bad multiplicity '{}'", &rec[dim])))?);
        }
        Self::from_flat(bbox, coords, mult)
    }

    pub fn to_envelope(&self, eps: Option<f64>) -> ConfigEnvelope {
        ConfigEnvelope {
            dim: self.dim,
            bbox: self.bbox.clone(),
            eps,
            points: self.points().map(|p| p.to_vec()).collect(),
            multiplicity: self.mult.clone(),
        }
    }

    pub fn from_envelope(env: &ConfigEnvelope) -> Result<Self> {
        if env.dim != env.bbox.dim() || env.points.len() != env.multiplicity.len() {
            return Err(Error::invalid("inconsistent configuration envelope"));
        }
        if env.points.iter().any(|p| p.len() != env.dim) {
            return Err(Error::invalid("point dimension mismatch in envelope"));
        }
        Self::from_flat(env.bbox.clone(), env.points.concat(), env.multiplicity.clone())
    }
}

/// JSON form of a configuration with its box and optional scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEnvelope {
    pub dim: usize,
    #[serde(rename = "box")]
    pub bbox: AxisBox,
    #[serde(default)]
    pub eps: Option<f64>,
    pub points: Vec<Vec<f64>>,
    pub multiplicity: Vec<u32>,
}

/// `rho = eps^d * sum_x delta_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMeasure {
    pub config: PointConfiguration,
    pub eps: f64,
}

impl ScaledMeasure {
    pub fn new(config: PointConfiguration, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::domain("eps must be positive"));
        }
        Ok(ScaledMeasure { config, eps })
    }

    /// Mass of one point, `eps^d`.
    pub fn atom(&self) -> f64 {
        self.eps.powi(self.config.dim() as i32)
    }

    /// Total mass `eps^d * #S`.
    pub fn mass(&self) -> f64 {
        self.atom() * self.config.count() as f64
    }
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s.sqrt()
}

/// All unordered site pairs `(i, j)`, `i < j`, at distance `< range`, sorted.
pub fn neighbor_pairs(config: &PointConfiguration, range: f64) -> Result<Vec<(usize, usize)>> {
    if !(range > 0.0) {
        return Err(Error::domain("neighbor range must be positive"));
    }
    let d = config.dim();
    let n = config.sites();
    let mut pairs = Vec::new();
    if n < 2 {
        return Ok(pairs);
    }
    let origin = &config.bbox().lower;
    let key = |p: &[f64]| -> Vec<i64> {
        p.iter().zip(origin).map(|(x, o)| ((x - o) / range).floor() as i64).collect()
    };
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for i in 0..n {
        cells.entry(key(config.point(i))).or_default().push(i);
    }
    let offsets = neighbor_offsets(d);
    let mut probe = vec![0i64; d];
    for i in 0..n {
        let p = config.point(i);
        let home = key(p);
        for off in &offsets {
            for (t, (h, o)) in probe.iter_mut().zip(home.iter().zip(off)) {
                *t = h + o;
            }
            if let Some(members) = cells.get(&probe) {
                for &j in members {
                    if j > i && dist(p, config.point(j)) < range {
                        pairs.push((i, j));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

pub(crate) fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |o| {
                    let mut w = v.clone();
                    w.push(o);
                    w
                })
            })
            .collect();
    }
    out
}

/// `xi_{l,eps}(S)`: sum of `l(|x - y| / eps)` over ordered pairs of distinct
/// points, with each site of multiplicity `m` adding `m (m - 1) l(0)`.
///
/// Unordered pairs are summed once, in lexicographic index order, and
/// doubled. The cell-list path visits the same pairs in the same order and
/// skips only pairs whose cost is exactly zero, so both paths agree bitwise.
pub fn interaction_energy(config: &PointConfiguration, cost: &CostFunction, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain("eps must be positive"));
    }
    let n = config.sites();
    let mut pair_sum = 0.0;
    match cost.finite_range() {
        Some(range) if n > CELL_LIST_THRESHOLD => {
            // slight widening so rounding in |x-y|/eps can never drop a pair
            // with nonzero cost
            for (i, j) in neighbor_pairs(config, range * eps * (1.0 + 1e-9))? {
                pair_sum += pair_term(config, cost, eps, i, j);
            }
        }
        _ => {
            for i in 0..n {
                for j in i + 1..n {
                    pair_sum += pair_term(config, cost, eps, i, j);
                }
            }
        }
    }
    let mut self_sum = 0.0;
    let l0 = cost.at_zero();
    for &m in config.multiplicities() {
        if m > 1 {
            self_sum += mul((m as f64) * (m as f64 - 1.0), l0);
        }
    }
    Ok(2.0 * pair_sum + self_sum)
}

#[inline]
fn pair_term(config: &PointConfiguration, cost: &CostFunction, eps: f64, i: usize, j: usize) -> f64 {
    let w = config.multiplicity(i) as f64 * config.multiplicity(j) as f64;
    mul(w, cost.value(dist(config.point(i), config.point(j)) / eps))
}

/// Reference all-pairs energy over every ordered pair of points counted with
/// multiplicity. Quadratic in the number of points; used as a test oracle.
pub fn interaction_energy_naive(config: &PointConfiguration, cost: &CostFunction, eps: f64) -> f64 {
    let mut expanded = Vec::new();
    for (i, p) in config.points().enumerate() {
        for _ in 0..config.multiplicity(i) {
            expanded.push(p);
        }
    }
    let mut total = 0.0;
    for a in 0..expanded.len() {
        for b in 0..expanded.len() {
            if a != b {
                total += cost.value(dist(expanded[a], expanded[b]) / eps);
            }
        }
    }
    total
}

/// `F_eps(rho) = eps^d * xi_{l,eps}(S)`.
pub fn scaled_energy(measure: &ScaledMeasure, cost: &CostFunction) -> Result<f64> {
    let xi = interaction_energy(&measure.config, cost, measure.eps)?;
    Ok(mul(measure.atom(), xi))
}

/// Regular grid of `cells[i]` cells per axis over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid {
    #[serde(rename = "box")]
    pub bbox: AxisBox,
    pub cells: Vec<usize>,
}

impl RegularGrid {
    pub fn new(bbox: AxisBox, cells: Vec<usize>) -> Result<Self> {
        if cells.len() != bbox.dim() || cells.iter().any(|&c| c == 0) {
            return Err(Error::invalid("grid needs a positive cell count per axis"));
        }
        Ok(RegularGrid { bbox, cells })
    }

    pub fn uniform(bbox: AxisBox, per_axis: usize) -> Result<Self> {
        let d = bbox.dim();
        Self::new(bbox, vec![per_axis; d])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.bbox.edges[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).product()
    }

    /// Row-major flat index of the cell holding `x`; points on an upper face
    /// go to the last cell, points outside the closed box give `None`.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dim() {
            let rel = (x[a] - self.bbox.lower[a]) / self.spacing(a);
            if !(rel >= 0.0) || rel > self.cells[a] as f64 {
                return None;
            }
            let c = (rel.floor() as usize).min(self.cells[a] - 1);
            idx = idx * self.cells[a] + c;
        }
        Some(idx)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        out
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &c)| self.bbox.lower[a] + (c as f64 + 0.5) * self.spacing(a))
            .collect()
    }
}

/// Piecewise-constant density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: RegularGrid,
    pub values: Vec<f64>,
    /// Mass that fell inside the grid.
    pub binned_mass: f64,
    /// Mass of points outside the grid, dropped from the field.
    pub clipped_mass: f64,
}

impl DensityField {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `int |a - b|` for two fields on the same grid.
    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.cell_volume()
    }
}

/// Bins a scaled measure: each cell gets (mass in cell) / (cell volume).
pub fn bin_density(measure: &ScaledMeasure, grid: &RegularGrid) -> Result<DensityField> {
    if grid.dim() != measure.config.dim() {
        return Err(Error::invalid("grid and measure dimensions differ"));
    }
    let atom = measure.atom();
    let vol = grid.cell_volume();
    let mut values = vec![0.0; grid.len()];
    let mut binned = 0.0;
    let mut clipped = 0.0;
    for (i, p) in measure.config.points().enumerate() {
        let m = atom * measure.config.multiplicity(i) as f64;
        match grid.cell_of(p) {
            Some(c) => {
                values[c] += m / vol;
                binned += m;
            }
            None => clipped += m,
        }
    }
    Ok(DensityField { grid: grid.clone(), values, binned_mass: binned, clipped_mass: clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64], len: f64) -> PointConfiguration {
        let pts: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        PointConfiguration::new(AxisBox::cube(1, len), &pts).unwrap()
    }

    fn random_config(rng: &mut ChaCha8Rng, d: usize, n: usize, side: f64) -> PointConfiguration {
        let mut c = PointConfiguration::empty(AxisBox::cube(d, side));
        for _ in 0..n {
            let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * side).collect();
            c.push(&p, 1).unwrap();
        }
        c
    }

    #[test]
    fn energy_examples() {
        let s = line(&[0.0, 0.5], 1.0);
        assert_eq!(interaction_energy(&s, &CostFunction::riesz(2.0), 1.0).unwrap(), 8.0);
        assert_eq!(interaction_energy(&s, &CostFunction::hard_sphere(), 0.4).unwrap(), 0.0);
        let m = ScaledMeasure::new(s, 0.5).unwrap();
        assert_relative_eq!(scaled_energy(&m, &CostFunction::riesz(2.0)).unwrap(), 1.0);
    }

    #[test]
    fn trivial_energies() {
        let empty = ScaledMeasure::new(PointConfiguration::empty(AxisBox::cube(2, 1.0)), 0.1).unwrap();
        assert_eq!(scaled_energy(&empty, &CostFunction::riesz(3.0)).unwrap(), 0.0);
        let single = ScaledMeasure::new(line(&[0.3], 1.0), 0.1).unwrap();
        assert_eq!(scaled_energy(&single, &CostFunction::hard_sphere()).unwrap(), 0.0);
        assert_eq!(scaled_energy(&single, &CostFunction::riesz(2.0)).unwrap(), 0.0);
    }

    #[test]
    fn multiplicity_contributes_self_pairs() {
        let mut c = PointConfiguration::empty(AxisBox::cube(1, 4.0));
        c.push(&[1.0], 3).unwrap();
        c.push(&[3.5], 2).unwrap();
        let step = CostFunction::step(2.0);
        // 3*2 + 2*1 self pairs at cost 1, cross pairs at distance 2.5 cost 0
        assert_eq!(interaction_energy(&c, &step, 1.0).unwrap(), 8.0);
        assert_eq!(interaction_energy(&c, &step, 1.0).unwrap(), interaction_energy_naive(&c, &step, 1.0));
        assert_eq!(interaction_energy(&c, &CostFunction::hard_sphere(), 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn small_random_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_config(&mut rng, 2, 3, 1.0);
        for cost in [CostFunction::riesz(2.0), CostFunction::step(2.0), CostFunction::hard_sphere()] {
            assert_eq!(interaction_energy(&c, &cost, 0.2).unwrap(), interaction_energy_naive(&c, &cost, 0.2));
        }
    }

    #[test]
    fn cell_list_matches_all_pairs_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = CostFunction::step(3.0);
        for d in 1..=3 {
            let c = random_config(&mut rng, d, 600, 1.0);
            let mut all = 0.0;
            for i in 0..c.sites() {
                for j in i + 1..c.sites() {
                    all += pair_term(&c, &step, 0.05, i, j);
                }
            }
            assert_eq!(interaction_energy(&c, &step, 0.05).unwrap(), 2.0 * all);
        }
    }

    #[test]
    fn neighbor_examples() {
        let grid: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(neighbor_pairs(&line(&grid, 10.0), 0.5).unwrap().is_empty());
        assert_eq!(neighbor_pairs(&line(&[0.4, 0.4], 1.0), 0.1).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn neighbor_pairs_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_config(&mut rng, 2, 1000, 1.0);
        let mut scan = Vec::new();
        for i in 0..c.sites() {
            for j in i + 1..c.sites() {
                if dist(c.point(i), c.point(j)) < 0.1 {
                    scan.push((i, j));
                }
            }
        }
        assert_eq!(neighbor_pairs(&c, 0.1).unwrap(), scan);
    }

    #[test]
    fn bin_density_examples() {
        let grid = RegularGrid::uniform(AxisBox::cube(1, 1.0), 10).unwrap();
        let empty = ScaledMeasure::new(PointConfiguration::empty(AxisBox::cube(1, 1.0)), 0.1).unwrap();
        assert!(bin_density(&empty, &grid).unwrap().values.iter().all(|&v| v == 0.0));

        let one = ScaledMeasure::new(line(&[0.33], 1.0), 0.01).unwrap();
        let f = bin_density(&one, &grid).unwrap();
        assert_relative_eq!(f.values[3], 0.01 / 0.1);
        assert_eq!(f.values.iter().filter(|&&v| v != 0.0).count(), 1);

        // N = 1000 evenly spread points with eps^d N = 2: every cell sees 2
        let n = 1000;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let m = ScaledMeasure::new(line(&pts, 1.0), 2.0 / n as f64).unwrap();
        let f = bin_density(&m, &grid).unwrap();
        for v in &f.values {
            assert_relative_eq!(*v, 2.0, max_relative = 1e-9);
        }
        assert_relative_eq!(f.integral(), m.mass(), max_relative = 1e-12);
        assert_eq!(f.clipped_mass, 0.0);
    }

    #[test]
    fn boundary_points_land_in_last_cell() {
        let grid = RegularGrid::uniform(AxisBox::cube(2, 1.0), 4).unwrap();
        assert_eq!(grid.cell_of(&[1.0, 1.0]), Some(15));
        assert_eq!(grid.cell_of(&[1.01, 0.5]), None);
        assert_eq!(grid.center(5), vec![0.375, 0.375]);
    }

    #[test]
    fn covering_number_examples() {
        assert_eq!(AxisBox::cube(1, 1.0).covering_number(0.25).unwrap(), 4);
        assert_eq!(AxisBox::cube(2, 1.0).covering_number(0.3).unwrap(), 16);
        assert_eq!(AxisBox::cube(1, 0.3).covering_number(0.1).unwrap(), 3);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = std::env::temp_dir().join(format!("mf-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut c = PointConfiguration::empty(AxisBox::cube(2, 2.0));
        c.push(&[0.1, 0.25], 1).unwrap();
        c.push(&[1.5, 2.0], 3).unwrap();
        let path = dir.join("c.csv");
        c.write_csv(&path).unwrap();
        assert_eq!(PointConfiguration::read_csv(&path, AxisBox::cube(2, 2.0)).unwrap(), c);
        let env = c.to_envelope(Some(0.5));
        let text = serde_json::to_string(&env).unwrap();
        let back: ConfigEnvelope = serde_json::from_str(&text).unwrap();
        assert_eq!(PointConfiguration::from_envelope(&back).unwrap(), c);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_points_outside_box() {
        assert!(PointConfiguration::new(AxisBox::cube(1, 1.0), &[vec![1.5]]).is_err());
        assert!(PointConfiguration::new(AxisBox::cube(1, 1.0), &[vec![1.0]]).is_ok());
    }
}
