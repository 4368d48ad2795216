//! Piecewise-linear one-Lipschitz functions with values in `[0, 1]`.
//!
//! Two representations are used throughout the crate:
//!
//! * [`WindowFn`] lives on a finite window `[0, a]` (an element of `L[0,a]`).
//! * [`LineFn`] is a truncated element of `L(ℝ)`: a uniform grid over
//!   `[-T, T]` with constant continuation beyond the window.
//!
//! Every function is stored by its values on a uniform grid and is read back
//! through the piecewise-linear interpolant. For that class the maximum grid
//! slope is exactly the Lipschitz constant.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when comparing grid parameters.
const GRID_EPS: f64 = 1e-9;
/// Absolute slack on the `[0, 1]` range and on grid slopes.
const VALUE_EPS: f64 = 1e-12;

/// Default truncation of the compact-open metric.
pub const DEFAULT_N_MAX: usize = 30;

#[derive(Debug, Error)]
pub enum FuncError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid grid function: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Read access shared by the grid representations.
pub trait GridFn {
    fn step(&self) -> f64;
    fn values(&self) -> &[f64];
    /// Time of grid index `i`.
    fn time_at(&self, i: usize) -> f64;
}

fn interval_count(len: f64, step: f64) -> Result<usize, FuncError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(FuncError::Invalid(format!("step must be positive, got {step}")));
    }
    if !(len > 0.0) || !len.is_finite() {
        return Err(FuncError::Invalid(format!("window length must be positive, got {len}")));
    }
    let ratio = len / step;
    let n = ratio.round();
    if (ratio - n).abs() > GRID_EPS * ratio.max(1.0) || n < 1.0 {
        return Err(FuncError::Invalid(format!(
            "window length {len} is not an integer number of steps {step}"
        )));
    }
    Ok(n as usize)
}

fn check_values(values: &[f64], step: f64) -> Result<(), FuncError> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() || *v < -VALUE_EPS || *v > 1.0 + VALUE_EPS {
            return Err(FuncError::Invalid(format!("value {v} at index {i} outside [0,1]")));
        }
    }
    let bound = step * (1.0 + VALUE_EPS) + VALUE_EPS;
    for (i, w) in values.windows(2).enumerate() {
        if (w[1] - w[0]).abs() > bound {
            return Err(FuncError::Invalid(format!(
                "slope {} between indices {i} and {} exceeds 1",
                (w[1] - w[0]).abs() / step,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Linear interpolation on a uniform grid starting at `origin`, constant
/// outside. Written as `v0 + λ(v1 - v0)` so constants are reproduced exactly.
fn interp(values: &[f64], origin: f64, step: f64, t: f64) -> f64 {
    let last = values.len() - 1;
    let x = (t - origin) / step;
    if x <= 0.0 {
        return values[0];
    }
    if x >= last as f64 {
        return values[last];
    }
    let i = x.floor() as usize;
    let lambda = x - i as f64;
    if lambda == 0.0 {
        return values[i];
    }
    values[i] + lambda * (values[i + 1] - values[i])
}

/// An element of `L[0,a]`: grid values `values[i] = φ(i·step)` on `[0, a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFn {
    a: f64,
    step: f64,
    values: Vec<f64>,
}

impl WindowFn {
    /// Builds a window function, checking range, grid and slope invariants.
    pub fn new(a: f64, step: f64, values: Vec<f64>) -> Result<Self, FuncError> {
        let n = interval_count(a, step)?;
        if values.len() != n + 1 {
            return Err(FuncError::Invalid(format!(
                "expected {} grid values on [0,{a}], got {}",
                n + 1,
                values.len()
            )));
        }
        check_values(&values, step)?;
        Ok(Self { a, step, values })
    }

    /// Builds a window function without checking the Lipschitz invariant.
    /// Used by verification code that must be able to hold corrupt data.
    pub fn new_unchecked(a: f64, step: f64, values: Vec<f64>) -> Self {
        Self { a, step, values }
    }

    /// Samples `f` on `intervals + 1` equispaced points of `[0, a]`.
    pub fn sample(a: f64, intervals: usize, f: impl Fn(f64) -> f64) -> Result<Self, FuncError> {
        let step = a / intervals as f64;
        let values = (0..=intervals).map(|i| f(i as f64 * step)).collect();
        Self::new(a, step, values)
    }

    pub fn constant(a: f64, intervals: usize, level: f64) -> Result<Self, FuncError> {
        Self::sample(a, intervals, |_| level)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    /// Piecewise-linear evaluation, constant outside `[0, a]`.
    pub fn eval(&self, t: f64) -> f64 {
        interp(&self.values, 0.0, self.step, t)
    }

    pub fn same_grid(&self, other: &WindowFn) -> bool {
        self.values.len() == other.values.len()
            && (self.step - other.step).abs() <= GRID_EPS * self.step
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("window function serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FuncError> {
        let raw: WindowFn = serde_json::from_str(s)
            .map_err(|e| FuncError::Invalid(format!("bad window json: {e}")))?;
        Self::new(raw.a, raw.step, raw.values)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FuncError> {
        write_grid_csv(self, w)
    }
}

impl GridFn for WindowFn {
    fn step(&self) -> f64 {
        self.step
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn time_at(&self, i: usize) -> f64 {
        i as f64 * self.step
    }
}

/// Truncated element of `L(ℝ)` stored on `[-T, T]`, constant beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFn {
    half_width: f64,
    step: f64,
    values: Vec<f64>,
    /// Portion of the window that still carries faithful data after
    /// translations (shrinks by `|s|` per translation).
    valid_half_width: f64,
}

impl LineFn {
    pub fn new(half_width: f64, step: f64, values: Vec<f64>) -> Result<Self, FuncError> {
        let n = interval_count(2.0 * half_width, step)?;
        if values.len() != n + 1 {
            return Err(FuncError::Invalid(format!(
                "expected {} grid values on [-{half_width},{half_width}], got {}",
                n + 1,
                values.len()
            )));
        }
        check_values(&values, step)?;
        Ok(Self { half_width, step, values, valid_half_width: half_width })
    }

    pub fn new_unchecked(half_width: f64, step: f64, values: Vec<f64>) -> Self {
        Self { half_width, step, values, valid_half_width: half_width }
    }

    /// Samples `f` on the grid `-T + i·step`; `2T/step` must be an integer.
    pub fn sample(half_width: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self, FuncError> {
        let n = interval_count(2.0 * half_width, step)?;
        let values = (0..=n).map(|i| f(-half_width + i as f64 * step)).collect();
        Self::new(half_width, step, values)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn valid_half_width(&self) -> f64 {
        self.valid_half_width
    }

    pub fn eval(&self, t: f64) -> f64 {
        interp(&self.values, -self.half_width, self.step, t)
    }

    pub fn same_grid(&self, other: &LineFn) -> bool {
        self.values.len() == other.values.len()
            && (self.step - other.step).abs() <= GRID_EPS * self.step
            && (self.half_width - other.half_width).abs() <= GRID_EPS * self.half_width
    }

    /// Grid times of this function.
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.time_at(i)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("line function serializes")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FuncError> {
        write_grid_csv(self, w)
    }
}

impl GridFn for LineFn {
    fn step(&self) -> f64 {
        self.step
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn time_at(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step
    }
}

/// A constant function: a fixed point of the translation action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstFn {
    level: f64,
}

impl ConstFn {
    pub fn new(level: f64) -> Result<Self, FuncError> {
        if !(0.0..=1.0).contains(&level) {
            return Err(FuncError::Invalid(format!("constant level {level} outside [0,1]")));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn to_line(&self, half_width: f64, step: f64) -> Result<LineFn, FuncError> {
        LineFn::sample(half_width, step, |_| self.level)
    }

    pub fn to_window(&self, a: f64, intervals: usize) -> Result<WindowFn, FuncError> {
        WindowFn::constant(a, intervals, self.level)
    }
}

fn write_grid_csv<G: GridFn, W: Write>(g: &G, w: W) -> Result<(), FuncError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "value"])?;
    for (i, v) in g.values().iter().enumerate() {
        wr.write_record([format!("{:.12}", g.time_at(i)), format!("{v:.17e}")])?;
    }
    wr.flush()?;
    Ok(())
}

/// Truncated compact-open distance
/// `Σ_{n=1}^{n_max} 2^{-n} max_{|t|≤n} |φ(t) − ψ(t)|` on the shared grid.
///
/// Each omitted term is at most `2^{-n}`, so the result is within
/// `2^{-n_max}` of the full series.
pub fn cr_dist(phi: &LineFn, psi: &LineFn, n_max: usize) -> Result<f64, FuncError> {
    if !phi.same_grid(psi) {
        return Err(FuncError::GridMismatch("line functions use different grids".into()));
    }
    if n_max == 0 {
        return Err(FuncError::Domain("n_max must be positive".into()));
    }
    if n_max as f64 > phi.half_width * (1.0 + GRID_EPS) {
        return Err(FuncError::Domain(format!(
            "n_max = {n_max} exceeds representation half-width {}",
            phi.half_width
        )));
    }
    cr_dist_values(&phi.values, &psi.values, phi.half_width, phi.step, n_max)
}

/// Same as [`cr_dist`] on raw grid values (shared `[-T, T]` grid).
pub fn cr_dist_values(
    a: &[f64],
    b: &[f64],
    half_width: f64,
    step: f64,
    n_max: usize,
) -> Result<f64, FuncError> {
    if a.len() != b.len() {
        return Err(FuncError::GridMismatch("value arrays differ in length".into()));
    }
    let mut bucket = vec![0.0f64; n_max + 1];
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let t = (-half_width + i as f64 * step).abs();
        let n = ((t - GRID_EPS).ceil().max(1.0)) as usize;
        if n > n_max {
            continue;
        }
        let d = (x - y).abs();
        if d > bucket[n] {
            bucket[n] = d;
        }
    }
    let mut running = 0.0f64;
    let mut total = 0.0;
    let mut weight = 1.0;
    for m in bucket.iter().skip(1) {
        running = running.max(*m);
        weight *= 0.5;
        total += weight * running;
    }
    Ok(total)
}

/// Translation `t ↦ φ(t + s)` resampled onto the same grid.
///
/// Grid-multiple shifts move indices exactly; other shifts go through the
/// piecewise-linear interpolant. The usable half-width shrinks by `|s|`.
pub fn translate(phi: &LineFn, s: f64) -> LineFn {
    if s == 0.0 {
        return phi.clone();
    }
    let shift = s / phi.step;
    let k = shift.round();
    let n = phi.values.len() as i64;
    let values: Vec<f64> = if (shift - k).abs() < 1e-12 {
        let k = k as i64;
        (0..n)
            .map(|i| phi.values[(i + k).clamp(0, n - 1) as usize])
            .collect()
    } else {
        (0..phi.values.len()).map(|i| phi.eval(phi.time_at(i) + s)).collect()
    };
    LineFn {
        half_width: phi.half_width,
        step: phi.step,
        values,
        valid_half_width: (phi.valid_half_width - s.abs()).max(0.0),
    }
}

/// Maximum grid slope, which for piecewise-linear functions is the Lipschitz constant.
pub fn lip_constant<G: GridFn + ?Sized>(phi: &G) -> f64 {
    max_slope(phi).map_or(0.0, |(_, s)| s)
}

/// Largest grid slope with the left index of the offending interval.
pub fn max_slope<G: GridFn + ?Sized>(phi: &G) -> Option<(usize, f64)> {
    let step = phi.step();
    phi.values()
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, (w[1] - w[0]).abs() / step))
        .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
            Some(best) if best.1 >= cur.1 => Some(best),
            _ => Some(cur),
        })
}

pub fn dist_sup(phi: &WindowFn, psi: &WindowFn) -> Result<f64, FuncError> {
    if !phi.same_grid(psi) || (phi.a - psi.a).abs() > GRID_EPS * phi.a {
        return Err(FuncError::GridMismatch("window functions use different grids".into()));
    }
    Ok(phi
        .values
        .iter()
        .zip(&psi.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `max − min` of the grid values; zero exactly for grid-constant functions.
pub fn oscillation<G: GridFn + ?Sized>(phi: &G) -> f64 {
    values_oscillation(phi.values())
}

pub(crate) fn values_oscillation(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo.is_finite() { hi - lo } else { 0.0 }
}

/// Pointwise `(1 − λ)φ + λψ`.
pub fn convex_mix(phi: &LineFn, psi: &LineFn, lambda: f64) -> Result<LineFn, FuncError> {
    if !phi.same_grid(psi) {
        return Err(FuncError::GridMismatch("convex_mix on different grids".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FuncError::Domain(format!("mixing weight {lambda} outside [0,1]")));
    }
    let values = phi
        .values
        .iter()
        .zip(&psi.values)
        .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
        .collect();
    Ok(LineFn {
        half_width: phi.half_width,
        step: phi.step,
        values,
        valid_half_width: phi.valid_half_width.min(psi.valid_half_width),
    })
}

/// Snaps a window function to the quantized net of `L[0,a]`: values that are
/// multiples of `η/2` on the step-`η/2` grid, changing by at most one level per
/// step. The result is one-Lipschitz and within `η` of `φ` in sup norm.
pub fn quantize_window(phi: &WindowFn, eta: f64) -> Result<WindowFn, FuncError> {
    let h = eta / 2.0;
    let n = interval_count(phi.a, h)
        .map_err(|_| FuncError::Domain(format!("window {} is not a multiple of η/2 = {h}", phi.a)))?;
    let max_level = (1.0 / h).floor() as i64;
    let mut levels = Vec::with_capacity(n + 1);
    let mut prev: Option<i64> = None;
    for j in 0..=n {
        let target = ((phi.eval(j as f64 * h) / h).round() as i64).clamp(0, max_level);
        let q = match prev {
            None => target,
            Some(p) => target.clamp(p - 1, p + 1),
        };
        levels.push(q);
        prev = Some(q);
    }
    let values = levels.iter().map(|q| *q as f64 * h).collect();
    WindowFn::new(phi.a, h, values)
}

/// Number of elements of the quantized `η`-net of `L[0,a]` (lattice paths whose
/// level moves by at most one per step). Returned as `f64` since it grows
/// exponentially in `a/η`.
pub fn quantized_net_size(a: f64, eta: f64) -> Result<f64, FuncError> {
    let h = eta / 2.0;
    let n = interval_count(a, h)?;
    let levels = (1.0 / h).floor() as usize + 1;
    let mut count = vec![1.0f64; levels];
    for _ in 0..n {
        let next: Vec<f64> = (0..levels)
            .map(|q| {
                let lo = q.saturating_sub(1);
                let hi = (q + 1).min(levels - 1);
                count[lo..=hi].iter().sum()
            })
            .collect();
        count = next;
    }
    Ok(count.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(f: impl Fn(f64) -> f64) -> LineFn {
        LineFn::sample(32.0, 0.05, f).unwrap()
    }

    #[test]
    fn cr_dist_of_zero_and_one_is_geometric_sum() {
        let d = cr_dist(&line(|_| 0.0), &line(|_| 1.0), 30).unwrap();
        assert!((d - (1.0 - 0.5f64.powi(30))).abs() < 1e-15);
        // the full series is 1.0, the truncation is within 2^-30
        assert!((d - 1.0).abs() <= 0.5f64.powi(30));
    }

    #[test]
    fn cr_dist_identity_and_half() {
        let phi = line(|t| (t.sin() + 1.0) / 4.0);
        assert_eq!(cr_dist(&phi, &phi, 30).unwrap(), 0.0);
        let d = cr_dist(&line(|_| 0.0), &line(|_| 0.5), 30).unwrap();
        assert!((d - 0.5).abs() <= 0.5f64.powi(30));
    }

    #[test]
    fn cr_dist_errors() {
        let a = line(|_| 0.0);
        let b = LineFn::sample(32.0, 0.1, |_| 0.0).unwrap();
        assert!(matches!(cr_dist(&a, &b, 10), Err(FuncError::GridMismatch(_))));
        assert!(matches!(cr_dist(&a, &a, 40), Err(FuncError::Domain(_))));
    }

    #[test]
    fn translate_identity_and_constants() {
        let phi = line(|t| (t / 3.0).sin().abs() / 3.0);
        assert_eq!(translate(&phi, 0.0), phi);
        let c = ConstFn::new(0.3).unwrap().to_line(32.0, 0.05).unwrap();
        for s in [0.013, -1.7, 0.25, 3.0] {
            assert_eq!(translate(&c, s).values(), c.values());
        }
    }

    #[test]
    fn translate_sawtooth_matches_closed_form() {
        let saw = |t: f64| t.abs().min(1.0);
        let phi = LineFn::sample(4.0, 0.01, saw).unwrap();
        let shifted = translate(&phi, 0.25);
        for i in 0..shifted.values().len() {
            let t = shifted.time_at(i);
            if t.abs() <= 3.5 {
                assert!((shifted.values()[i] - saw(t + 0.25)).abs() < 1e-12, "t = {t}");
            }
        }
        assert!((shifted.valid_half_width() - 3.75).abs() < 1e-15);
        // non-grid shift: kinks of |t| fall between grid points, error ≤ step
        let off = translate(&phi, 0.123);
        for i in 0..off.values().len() {
            let t = off.time_at(i);
            if t.abs() <= 3.5 {
                assert!((off.values()[i] - saw(t + 0.123)).abs() <= 0.01);
            }
        }
    }

    #[test]
    fn lip_constant_examples() {
        let c = WindowFn::constant(2.0, 200, 0.7).unwrap();
        assert_eq!(lip_constant(&c), 0.0);
        let ramp = WindowFn::sample(2.0, 200, |t| t.min(1.0)).unwrap();
        assert!((lip_constant(&ramp) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn window_constructor_rejects_violations() {
        assert!(WindowFn::new(1.0, 0.5, vec![0.0, 0.6, 0.7]).is_err());
        assert!(WindowFn::new(1.0, 0.5, vec![0.0, 1.2, 0.7]).is_err());
        assert!(WindowFn::new(1.0, 0.3, vec![0.0, 0.1, 0.2, 0.3]).is_err());
        assert!(WindowFn::new(1.0, 0.5, vec![0.0, 0.1]).is_err());
    }

    #[test]
    fn dist_sup_and_oscillation() {
        let z = WindowFn::constant(1.0, 100, 0.0).unwrap();
        let o = WindowFn::constant(1.0, 100, 1.0).unwrap();
        assert_eq!(dist_sup(&z, &z).unwrap(), 0.0);
        assert_eq!(dist_sup(&z, &o).unwrap(), 1.0);
        assert_eq!(oscillation(&z), 0.0);
        let ramp = WindowFn::sample(0.6, 60, |t| t).unwrap();
        assert!((oscillation(&ramp) - 0.6).abs() < 1e-12);
        let other = WindowFn::constant(2.0, 100, 0.0).unwrap();
        assert!(dist_sup(&z, &other).is_err());
    }

    #[test]
    fn convex_mix_endpoints() {
        let phi = line(|t| (t.sin() + 1.0) / 2.0);
        let psi = line(|t| (0.5 * t.cos() + 1.0) / 2.0);
        assert_eq!(convex_mix(&phi, &psi, 0.0).unwrap().values(), phi.values());
        assert_eq!(convex_mix(&phi, &psi, 1.0).unwrap().values(), psi.values());
    }

    #[test]
    fn convex_mix_lipschitz_bound() {
        // slopes 1 and 1/2, weight δ on the flatter one
        let phi = LineFn::sample(8.0, 0.01, |t| t.rem_euclid(1.0).min(1.0 - t.rem_euclid(1.0))).unwrap();
        let psi = LineFn::sample(8.0, 0.01, |t| 0.5 * (t.rem_euclid(1.0)).min(1.0 - t.rem_euclid(1.0))).unwrap();
        let delta = 0.2;
        let mixed = convex_mix(&phi, &psi, delta).unwrap();
        assert!(lip_constant(&mixed) <= 1.0 - delta / 2.0 + 1e-9);
    }

    #[test]
    fn quantized_net_counts_small_cases() {
        // a = η/2: one step, levels 0..=L with |Δ| ≤ 1
        let eta = 0.5; // h = 0.25, levels 0..=4
        let n = quantized_net_size(0.25, eta).unwrap();
        // 5 levels: ends contribute 2 each, interior 3 each
        assert_eq!(n, 2.0 + 3.0 * 3.0 + 2.0);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let w = WindowFn::sample(1.0, 4, |t| t / 2.0).unwrap();
        let back = WindowFn::from_json(&w.to_json()).unwrap();
        assert_eq!(back, w);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("t,value"));
    }
}
