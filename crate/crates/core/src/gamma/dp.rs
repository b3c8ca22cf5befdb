//! Exact `Gamma` on a one-dimensional grid by dynamic programming over the
//! occupancy of the trailing interaction window.

use std::time::Instant;

use super::{gamma_objective, GammaEstimate, Method};
use crate::config::{AxisBox, PointConfiguration};
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::extended::mul;

/// Maximum number of window states.
pub const DP_STATE_CAP: usize = 1 << 20;

/// Maximum number of stored backpointers (sites times states).
const BACKPOINTER_CAP: usize = 1 << 27;

/// Maximises `lambda #S - xi(S)` over multisets `S` of the grid
/// `{0, h, 2h, ...} cap [0, k)`.
///
/// Needs a finite-range cost. Sites may be stacked up to
/// `ceil(2 lambda / l(0)) + 4` times when `l(0)` is finite. The state is the
/// multiplicity pattern of the last `ceil(R / h) - 1` sites.
pub fn gamma_bruteforce_1d(cost: &CostFunction, lambda: f64, k: f64, h: f64) -> Result<GammaEstimate> {
    let start = Instant::now();
    if !(k > 0.0) || !(h > 0.0) || !lambda.is_finite() {
        return Err(Error::domain("need k > 0, grid step > 0 and finite lambda"));
    }
    let range = cost
        .finite_range()
        .ok_or_else(|| Error::precondition("the grid dynamic program needs a finite-range cost"))?;
    if lambda <= 0.0 {
        return Ok(GammaEstimate::empty(lambda, k, 1, Method::BruteforceDp, None));
    }

    let mut sites = (k / h).ceil() as usize;
    while sites > 0 && (sites - 1) as f64 * h >= k {
        sites -= 1;
    }
    // interaction window: offsets q >= 1 with q h < range
    let mut w = ((range / h).ceil() as usize).saturating_sub(1);
    while ((w + 1) as f64) * h < range {
        w += 1;
    }
    while w > 0 && (w as f64) * h >= range {
        w -= 1;
    }
    let w = w.min(sites.saturating_sub(1));

    let l0 = cost.at_zero();
    let cap: u32 = if l0.is_infinite() { 1 } else { ((2.0 * lambda / l0).ceil() as u32).saturating_add(4) };
    let base = cap as usize + 1;
    let states = (base as f64).powi(w as i32);
    if states > DP_STATE_CAP as f64 || states * sites as f64 > BACKPOINTER_CAP as f64 {
        return Err(Error::resource(format!(
            "dynamic program needs {states:.3e} window states over {sites} sites; use a coarser grid"
        )));
    }
    let states = states as usize;
    let pair: Vec<f64> = (1..=w).map(|q| cost.value(q as f64 * h)).collect();

    // interaction of a newly placed unit with the window, per state
    let mut field = vec![0.0; states];
    for (s, f) in field.iter_mut().enumerate() {
        let mut rest = s;
        let mut acc = 0.0;
        for &lq in &pair {
            let digit = rest % base;
            rest /= base;
            acc += mul(digit as f64, lq);
        }
        *f = acc;
    }
    let modulus = states;

    let mut score = vec![f64::NEG_INFINITY; states];
    score[0] = 0.0;
    let mut back: Vec<u32> = vec![0; sites * states];
    let mut next = vec![f64::NEG_INFINITY; states];
    for j in 0..sites {
        next.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let row = &mut back[j * states..(j + 1) * states];
        for s in 0..states {
            let cur = score[s];
            if cur == f64::NEG_INFINITY {
                continue;
            }
            for m in 0..=cap {
                let mf = m as f64;
                let cost_m = mul(mf * (mf - 1.0), l0) + 2.0 * mul(mf, field[s]);
                if cost_m.is_infinite() {
                    break;
                }
                let cand = cur + lambda * mf - cost_m;
                let ns = if w == 0 { 0 } else { (s * base + m as usize) % modulus };
                if cand > next[ns] {
                    next[ns] = cand;
                    // with an empty window the only state is 0, so keep m instead
                    row[ns] = if w == 0 { m } else { s as u32 };
                }
            }
        }
        std::mem::swap(&mut score, &mut next);
    }

    let (mut state, _) = score
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (s, &v)| if v > acc.1 { (s, v) } else { acc });
    let mut mult = vec![0u32; sites];
    for j in (0..sites).rev() {
        let entry = back[j * states + state];
        if w == 0 {
            mult[j] = entry;
        } else {
            mult[j] = (state % base) as u32;
            state = entry as usize;
        }
    }

    let mut config = PointConfiguration::empty(AxisBox::cube(1, k));
    for (j, &m) in mult.iter().enumerate() {
        if m > 0 {
            config.push(&[j as f64 * h], m)?;
        }
    }
    let value = gamma_objective(&config, cost, lambda)?;
    Ok(GammaEstimate {
        lambda,
        k,
        dim: 1,
        value,
        config,
        method: Method::BruteforceDp,
        seed: None,
        sweeps: sites as u64,
        lower_bound_flag: false,
        wallclock_ms: start.elapsed().as_millis(),
    })
}
