//! Serializable samples of a finished map and the checks computed from them.
//!
//! The samples are enough to re-derive every final check without the map
//! itself, so a run can be re-verified from its artifact alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{CertTarget, DensityCert, LineBook, WindowProbe};
use super::map::{EquivariantMap, Layer};
use super::EmbedError;
use crate::flow::{FixedSet, Metric, SampleNet, State};
use crate::funcspace::{cr_dist, max_slope, oscillation, GridFn, LineFn, WindowFn};

/// Hit states closer than this are the same window seen from two net points.
const WINDOW_DEDUP_TOL: f64 = 1e-9;

/// `f(x_point)` on `start + k·step`, `k = 0..values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub point: usize,
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl WindowSample {
    fn grid(&self) -> WindowFn {
        let a = self.step * (self.values.len().saturating_sub(1)) as f64;
        WindowFn::new_unchecked(a, self.step, self.values.clone())
    }
}

/// `direct[k] = f(x)(t_k + shift)` and `shifted[k] = f(T_shift x)(t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceSample {
    pub point: usize,
    pub shift: f64,
    pub t0: f64,
    pub step: f64,
    pub direct: Vec<f64>,
    pub shifted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertSample {
    AvoidFixed { stage: usize, windows: Vec<WindowSample> },
    /// Net indices of the two flow boxes; margins come from the lines.
    Separate { stage: usize, b: Vec<usize>, c: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSamples {
    pub points: Vec<State>,
    pub mesh: f64,
    /// Fixed net points and the value `h` prescribes there.
    pub fixed: Vec<(usize, f64)>,
    pub n_max: usize,
    pub line_step: f64,
    /// `f(x)` on `[−n_max, n_max]`, one line per net point.
    pub lines: Vec<Vec<f64>>,
    /// Every patched window at its own grid.
    pub windows: Vec<WindowSample>,
    pub equivariance: Vec<EquivarianceSample>,
    pub certificates: Vec<CertSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalChecks {
    pub lipschitz: f64,
    /// Net index and time of the steepest grid interval.
    pub lipschitz_witness: (usize, f64),
    pub equivariance_residual: f64,
    /// Net index, shift and time of the worst mismatch.
    pub equivariance_witness: (usize, f64, f64),
    pub fixed_residual: f64,
    pub fixed_witness: Option<usize>,
    pub far_pairs: usize,
    pub injectivity_margin: f64,
    pub injectivity_witness: Option<(usize, usize)>,
    /// Smallest `cr_dist` over close non-fixed pairs (reported, not certified).
    pub close_pairs_margin: f64,
    pub certificate_margins: Vec<f64>,
    pub certificates_survive: bool,
}

fn index_of(net: &SampleNet, x: &State) -> Result<usize, EmbedError> {
    net.points
        .iter()
        .position(|y| y == x)
        .ok_or_else(|| EmbedError::Integrity(format!("certificate state {x:?} is not a net point")))
}

/// Samples `map` on the net: lines from `book`, patched windows, shifted
/// probes and certificate windows.
#[allow(clippy::too_many_arguments)]
pub fn sample_map(
    map: &EquivariantMap,
    book: &LineBook,
    certs: &[DensityCert],
    net: &SampleNet,
    fixed: &FixedSet,
    shifts: &[f64],
    probe_half_width: f64,
    probe_step: f64,
) -> Result<MapSamples, EmbedError> {
    let sys = map.sys.clone();
    let n_max = book.n_max;
    let lines: Vec<Vec<f64>> = net
        .points
        .par_iter()
        .map(|x| book.get(x).map(|l| l.values().to_vec()))
        .collect::<Result<_, _>>()?;

    // Each patched window is sampled once, from its hit state: by
    // equivariance this is the window every net point through it sees.
    let mut todo: Vec<(State, f64, f64, usize, usize, f64)> = Vec::new();
    for (li, layer) in map.layers().iter().enumerate() {
        let Layer::Patch(patch) = layer.as_ref() else { continue };
        let a = patch.a();
        let mut seen: Vec<(usize, State)> = Vec::new();
        for (i, x) in net.points.iter().enumerate() {
            for h in map.layer_hits(li, x)? {
                let start = h.time + patch.offset;
                if start < -(n_max as f64) || start + a > n_max as f64 {
                    continue;
                }
                if seen.iter().any(|(k, z)| *k == h.section && sys.dist(z, &h.state) < WINDOW_DEDUP_TOL) {
                    continue;
                }
                seen.push((h.section, h.state));
                todo.push((h.state, patch.offset, a, patch.plan.intervals, i, start));
            }
        }
    }
    let windows: Vec<WindowSample> = todo
        .par_iter()
        .map(|&(z, off, a, intervals, point, start)| {
            let values = map.window_values(&z, off, a, intervals)?;
            Ok(WindowSample { point, start, step: a / intervals as f64, values })
        })
        .collect::<Result<_, EmbedError>>()?;

    let n = (2.0 * probe_half_width / probe_step).round() as usize;
    let probes: Vec<f64> = (0..=n).map(|i| -probe_half_width + i as f64 * probe_step).collect();
    let pairs: Vec<(usize, f64)> = (0..net.len()).flat_map(|i| shifts.iter().map(move |&s| (i, s))).collect();
    let equivariance: Vec<EquivarianceSample> = pairs
        .par_iter()
        .map(|&(i, s)| {
            let x = &net.points[i];
            let y = sys.evolve(x, s)?;
            let moved: Vec<f64> = probes.iter().map(|t| t + s).collect();
            Ok(EquivarianceSample {
                point: i,
                shift: s,
                t0: -probe_half_width,
                step: probe_step,
                direct: map.eval(x, &moved)?,
                shifted: map.eval(&y, &probes)?,
            })
        })
        .collect::<Result<_, EmbedError>>()?;

    let mut certificates = Vec::with_capacity(certs.len());
    for c in certs {
        certificates.push(match &c.target {
            CertTarget::AvoidFixed { a, intervals, windows, .. } => {
                let mut out = Vec::with_capacity(windows.len());
                for WindowProbe { state, s } in windows {
                    let values = book.window(state, *s, *a, *intervals)?.as_ref().clone();
                    out.push(WindowSample { point: index_of(net, state)?, start: *s, step: a / *intervals as f64, values });
                }
                CertSample::AvoidFixed { stage: c.stage, windows: out }
            }
            CertTarget::Separate { b, c: cc, .. } => CertSample::Separate {
                stage: c.stage,
                b: b.iter().map(|x| index_of(net, x)).collect::<Result<_, _>>()?,
                c: cc.iter().map(|x| index_of(net, x)).collect::<Result<_, _>>()?,
            },
        });
    }

    let fixed_levels = net
        .points
        .iter()
        .enumerate()
        .filter(|(_, x)| fixed.contains(sys.as_ref(), x))
        .map(|(i, x)| (i, map.base.extension.eval(&sys, x)))
        .collect();

    Ok(MapSamples {
        points: net.points.clone(),
        mesh: net.mesh,
        fixed: fixed_levels,
        n_max,
        line_step: book.step,
        lines,
        windows,
        equivariance,
        certificates,
    })
}

impl MapSamples {
    pub fn line(&self, i: usize) -> LineFn {
        LineFn::new_unchecked(self.n_max as f64, self.line_step, self.lines[i].clone())
    }

    /// Structural consistency of a (possibly deserialized) sample set.
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: String| Err(EmbedError::Integrity(m));
        if self.points.is_empty() {
            return bad("no net points".into());
        }
        if self.lines.len() != self.points.len() {
            return bad(format!("{} lines for {} points", self.lines.len(), self.points.len()));
        }
        let len = (2.0 * self.n_max as f64 / self.line_step).round() as usize + 1;
        if let Some(i) = self.lines.iter().position(|l| l.len() != len) {
            return bad(format!("line {i} has the wrong length"));
        }
        let n = self.points.len();
        let in_range = |i: usize| i < n;
        if !self.windows.iter().all(|w| in_range(w.point) && w.values.len() >= 2)
            || !self.equivariance.iter().all(|e| in_range(e.point) && e.direct.len() == e.shifted.len())
            || !self.fixed.iter().all(|(i, _)| in_range(*i))
        {
            return bad("sample refers to a missing net point".into());
        }
        for c in &self.certificates {
            let ok = match c {
                CertSample::AvoidFixed { windows, .. } => {
                    !windows.is_empty() && windows.iter().all(|w| in_range(w.point) && w.values.len() >= 2)
                }
                CertSample::Separate { b, c, .. } => {
                    !b.is_empty() && !c.is_empty() && b.iter().chain(c).all(|&i| in_range(i))
                }
            };
            if !ok {
                return bad("malformed certificate sample".into());
            }
        }
        Ok(())
    }

    /// Certificate margins recomputed from the samples.
    pub fn certificate_margins(&self) -> Result<Vec<f64>, EmbedError> {
        let mut out = Vec::with_capacity(self.certificates.len());
        for c in &self.certificates {
            out.push(match c {
                CertSample::AvoidFixed { windows, .. } => {
                    windows.iter().map(|w| oscillation(&w.grid())).fold(f64::INFINITY, f64::min)
                }
                CertSample::Separate { b, c, .. } => {
                    let mut m = f64::INFINITY;
                    for &i in b {
                        for &j in c {
                            m = m.min(cr_dist(&self.line(i), &self.line(j), self.n_max)?);
                        }
                    }
                    m
                }
            });
        }
        Ok(out)
    }

    pub fn checks<M: Metric + ?Sized>(&self, metric: &M) -> Result<FinalChecks, EmbedError> {
        self.validate()?;
        let mut lip = (0.0f64, (0usize, 0.0f64));
        for i in 0..self.points.len() {
            let l = self.line(i);
            if let Some((k, s)) = max_slope(&l) {
                if s > lip.0 {
                    lip = (s, (i, l.time_at(k)));
                }
            }
        }
        for w in &self.windows {
            let g = w.grid();
            if let Some((k, s)) = max_slope(&g) {
                if s > lip.0 {
                    lip = (s, (w.point, w.start + g.time_at(k)));
                }
            }
        }

        let mut equiv = (0.0f64, (0usize, 0.0, 0.0));
        for e in &self.equivariance {
            for (k, (a, b)) in e.direct.iter().zip(&e.shifted).enumerate() {
                let d = (a - b).abs();
                if d > equiv.0 {
                    equiv = (d, (e.point, e.shift, e.t0 + k as f64 * e.step));
                }
            }
        }

        let mut fixed_res = (0.0f64, None);
        for &(i, level) in &self.fixed {
            let d = self.lines[i].iter().map(|v| (v - level).abs()).fold(0.0, f64::max);
            if d > fixed_res.0 || fixed_res.1.is_none() {
                fixed_res = (d.max(fixed_res.0), Some(i));
            }
        }

        let is_fixed = |i: usize| self.fixed.iter().any(|f| f.0 == i);
        let far = 4.0 * self.mesh * (1.0 + 1e-9);
        let lines: Vec<LineFn> = (0..self.points.len()).map(|i| self.line(i)).collect();
        let mut inj = (f64::INFINITY, None);
        let mut close = f64::INFINITY;
        let mut far_pairs = 0;
        for i in 0..lines.len() {
            for j in 0..i {
                let d = metric.dist(&self.points[i], &self.points[j]);
                let c = cr_dist(&lines[i], &lines[j], self.n_max)?;
                if d > far {
                    far_pairs += 1;
                    if c < inj.0 {
                        inj = (c, Some((j, i)));
                    }
                } else if !is_fixed(i) && !is_fixed(j) {
                    close = close.min(c);
                }
            }
        }

        let cert_margins = self.certificate_margins()?;
        let survive = cert_margins.iter().all(|m| *m > 0.0);
        Ok(FinalChecks {
            lipschitz: lip.0,
            lipschitz_witness: lip.1,
            equivariance_residual: equiv.0,
            equivariance_witness: equiv.1,
            fixed_residual: fixed_res.0,
            fixed_witness: fixed_res.1,
            far_pairs,
            injectivity_margin: inj.0,
            injectivity_witness: inj.1,
            close_pairs_margin: close,
            certificate_margins: cert_margins,
            certificates_survive: survive,
        })
    }
}
