//! The density steps `G(A)` (images avoid the constants) and `G(B, C)`
//! (images of two flow boxes are disjoint), each with a certificate whose
//! margin measures the distance to failure.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::kernel::BaseSpec;
use super::map::{glue_offset, mix, EquivariantMap};
use super::EmbedError;
use crate::flow::{FixedSet, FlowSystem, Metric, SampleNet, State};
use crate::funcspace::{cr_dist, max_slope, oscillation, GridFn, LineFn, WindowFn};
use crate::perturb::{perturb_avoid_constants, perturb_separating, MapOnNet, PerturbOptions, Perturbed, SeparationScan};
use crate::section::{build_local_section, flowout_injectivity_margin, flowout_separation, LocalSection, SectionParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityOptions {
    pub seed: u64,
    pub section: SectionParams,
    pub perturb: PerturbOptions,
    pub min_intervals: usize,
    pub max_intervals: usize,
    /// Line representation used by separation certificates.
    pub n_max: usize,
    pub line_step: f64,
    /// Patched windows start `window_offset` after each hit.
    pub window_offset: f64,
    /// Fallback offsets, tried in order when the window at `window_offset`
    /// overlaps a stretch of orbit patched earlier.
    pub offset_candidates: Vec<f64>,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            section: SectionParams::default(),
            perturb: PerturbOptions::default(),
            min_intervals: 256,
            max_intervals: 20_000,
            n_max: 20,
            line_step: 0.01,
            window_offset: 0.0,
            offset_candidates: Vec::new(),
        }
    }
}

/// A state together with the start of one patched window on its orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowProbe {
    pub state: State,
    pub s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertTarget {
    /// Oscillation of `f(x)` on `[s, s + a]` for every probe.
    AvoidFixed { p: State, a: f64, intervals: usize, windows: Vec<WindowProbe> },
    /// `cr_dist(f(x), f(y))` over `x ∈ b`, `y ∈ c`.
    Separate { p: State, q: State, b: Vec<State>, c: Vec<State>, n_max: usize, line_step: f64, far_mismatch: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCert {
    pub stage: usize,
    pub target: CertTarget,
    pub margin: f64,
    pub delta: f64,
    pub seed: u64,
    /// Index of the probe (or pair) attaining the margin.
    pub witness: usize,
}

impl DensityCert {
    pub fn passed(&self) -> bool {
        self.margin > 0.0
    }

    /// Recomputes the margin on `map`; `book` supplies memoized lines.
    pub fn reverify(&self, map: &EquivariantMap, book: Option<&LineBook>) -> Result<(f64, usize), EmbedError> {
        match &self.target {
            CertTarget::AvoidFixed { a, intervals, windows, .. } => match book {
                Some(bk) => avoid_margin_in(bk, windows, *a, *intervals),
                None => avoid_margin(map, windows, *a, *intervals),
            },
            CertTarget::Separate { b, c, n_max, line_step, .. } => {
                let local;
                let book = match book {
                    Some(bk) if bk.matches(*n_max, *line_step) => bk,
                    _ => {
                        local = LineBook::new(map.clone(), *n_max, *line_step);
                        &local
                    }
                };
                separate_margin(book, b, c)
            }
        }
    }
}

type WindowKey = ([u64; 2], u64, u64, usize);

/// Memoized lines `f(x)` on `[−n_max, n_max]` and certificate windows for
/// one map.
pub struct LineBook {
    pub map: EquivariantMap,
    pub n_max: usize,
    pub step: f64,
    memo: Mutex<HashMap<[u64; 2], Arc<LineFn>>>,
    windows: Mutex<HashMap<WindowKey, Arc<Vec<f64>>>>,
    /// Values of a truncation of `map` and its depth, lifted on demand.
    seed: Option<Seed>,
}

struct Seed {
    depth: usize,
    lines: HashMap<[u64; 2], Arc<LineFn>>,
    windows: HashMap<WindowKey, Arc<Vec<f64>>>,
}

impl LineBook {
    pub fn new(map: EquivariantMap, n_max: usize, step: f64) -> Self {
        Self { map, n_max, step, memo: Mutex::new(HashMap::new()), windows: Mutex::new(HashMap::new()), seed: None }
    }

    /// A book for `map` that lifts the lines already computed in `prev`
    /// instead of evaluating from scratch, when `map` extends `prev.map`.
    pub fn extending(map: EquivariantMap, prev: &LineBook) -> Self {
        let mut book = Self::new(map, prev.n_max, prev.step);
        if book.map.extends(&prev.map) {
            book.seed = Some(Seed {
                depth: prev.map.depth(),
                lines: prev.memo.lock().expect("memo lock").clone(),
                windows: prev.windows.lock().expect("memo lock").clone(),
            });
        }
        book
    }

    pub fn matches(&self, n_max: usize, step: f64) -> bool {
        self.n_max == n_max && self.step == step
    }

    pub fn get(&self, x: &State) -> Result<Arc<LineFn>, EmbedError> {
        if let Some(l) = self.memo.lock().expect("memo lock").get(&x.key()) {
            return Ok(l.clone());
        }
        let lifted = match &self.seed {
            Some(seed) => match seed.lines.get(&x.key()) {
                Some(old) => {
                    let hw = self.n_max as f64;
                    let times: Vec<f64> = (0..old.values().len()).map(|i| -hw + i as f64 * self.step).collect();
                    let vals = self.map.lift(x, seed.depth, &times, old.values())?;
                    Some(LineFn::new_unchecked(self.n_max as f64, self.step, vals))
                }
                None => None,
            },
            None => None,
        };
        let line = match lifted {
            Some(l) => Arc::new(l),
            None => Arc::new(self.map.line(x, self.n_max as f64, self.step)?),
        };
        self.memo.lock().expect("memo lock").insert(x.key(), line.clone());
        Ok(line)
    }

    /// `f(x)` on `s + [0, a]` at `intervals` steps, as in
    /// [`EquivariantMap::window_values`].
    pub fn window(&self, x: &State, s: f64, a: f64, intervals: usize) -> Result<Arc<Vec<f64>>, EmbedError> {
        let key = (x.key(), s.to_bits(), a.to_bits(), intervals);
        if let Some(w) = self.windows.lock().expect("memo lock").get(&key) {
            return Ok(w.clone());
        }
        let old = self.seed.as_ref().and_then(|sd| sd.windows.get(&key).map(|w| (sd.depth, w.clone())));
        let vals = match old {
            Some((depth, old)) => {
                let step = a / intervals as f64;
                let times: Vec<f64> = (0..=intervals).map(|i| s + i as f64 * step).collect();
                self.map.lift(x, depth, &times, &old)?
            }
            None => self.map.window_values(x, s, a, intervals)?,
        };
        let vals = Arc::new(vals);
        self.windows.lock().expect("memo lock").insert(key, vals.clone());
        Ok(vals)
    }

    pub fn insert(&self, x: &State, line: Arc<LineFn>) {
        self.memo.lock().expect("memo lock").insert(x.key(), line);
    }
}

fn avoid_margin(map: &EquivariantMap, windows: &[WindowProbe], a: f64, intervals: usize) -> Result<(f64, usize), EmbedError> {
    let mut best = (f64::INFINITY, 0);
    for (i, w) in windows.iter().enumerate() {
        let vals = map.window_values(&w.state, w.s, a, intervals)?;
        let win = WindowFn::new_unchecked(a, a / intervals as f64, vals);
        let osc = oscillation(&win);
        if osc < best.0 {
            best = (osc, i);
        }
    }
    Ok(best)
}

fn avoid_margin_in(book: &LineBook, windows: &[WindowProbe], a: f64, intervals: usize) -> Result<(f64, usize), EmbedError> {
    let mut best = (f64::INFINITY, 0);
    for (i, w) in windows.iter().enumerate() {
        let vals = book.window(&w.state, w.s, a, intervals)?;
        let win = WindowFn::new_unchecked(a, a / intervals as f64, vals.as_ref().clone());
        let osc = oscillation(&win);
        if osc < best.0 {
            best = (osc, i);
        }
    }
    Ok(best)
}

fn separate_margin(book: &LineBook, b: &[State], c: &[State]) -> Result<(f64, usize), EmbedError> {
    let mut best = (f64::INFINITY, 0);
    for (i, x) in b.iter().enumerate() {
        let lx = book.get(x)?;
        for (j, y) in c.iter().enumerate() {
            let ly = book.get(y)?;
            let d = cr_dist(&lx, &ly, book.n_max)?;
            if d < best.0 {
                best = (d, i * c.len() + j);
            }
        }
    }
    Ok(best)
}

fn window_intervals(a: f64, delta: f64, opts: &DensityOptions) -> usize {
    let fine = (delta / 4.0).min(a / 4.0);
    ((32.0 * a / fine).ceil() as usize).clamp(opts.min_intervals, opts.max_intervals)
}

/// Slope bound handed to the perturbation: the measured slope plus a tenth
/// of the remaining room, never above the analytic `1 − δ/2` of the mix.
fn certified_tau(measured: f64, delta: f64) -> f64 {
    (measured + (1.0 - measured) / 10.0).min(1.0 - delta / 2.0).max(measured)
}

fn aux_spec(f: &EquivariantMap) -> BaseSpec {
    f.default_aux()
}

/// Windows `f₁(y)|[0,a]` on the section samples, ready for perturbation.
fn windows_on(
    f1: &EquivariantMap,
    states: &[State],
    offset: f64,
    a: f64,
    intervals: usize,
    delta: f64,
) -> Result<MapOnNet, EmbedError> {
    let mut wins = Vec::with_capacity(states.len());
    let mut measured = 0.0f64;
    for y in states {
        let w = f1.window(y, offset, a, intervals)?;
        measured = measured.max(max_slope(&w).map_or(0.0, |m| m.1));
        wins.push(w);
    }
    let tau = certified_tau(measured, delta);
    Ok(MapOnNet::new(states.to_vec(), wins, tau)?)
}

/// First offset whose window `[σ, σ + a]` misses every patched span on the
/// orbits of `states`; the least overlapping one if none is free.
fn free_offset(f1: &EquivariantMap, states: &[State], a: f64, opts: &DensityOptions) -> Result<f64, EmbedError> {
    let mut spans = Vec::new();
    for y in states {
        spans.extend(f1.patched_spans(y)?);
    }
    let pad = a / 16.0;
    let mut best = (f64::INFINITY, opts.window_offset);
    for &sigma in std::iter::once(&opts.window_offset).chain(&opts.offset_candidates) {
        if sigma.abs() + a >= f1.config.hit_pad {
            continue;
        }
        let overlap: f64 =
            spans.iter().map(|&(lo, hi)| ((sigma + a + pad).min(hi) - (sigma - pad).max(lo)).max(0.0)).sum();
        if overlap == 0.0 {
            return Ok(sigma);
        }
        if overlap < best.0 {
            best = (overlap, sigma);
        }
    }
    Ok(best.1)
}

/// Shrinks the window bump to the cover ball of the center sample.
fn fit_bump(sec: &mut LocalSection, pert: &Perturbed, center_index: usize) -> Result<(), EmbedError> {
    let ball = pert
        .plan
        .cover
        .balls
        .iter()
        .find(|b| b.center_index == center_index)
        .ok_or_else(|| EmbedError::Integrity(format!("section base point {center_index} is not a cover center")))?;
    let r2 = sec.r_hit.min(ball.radius);
    sec.q.r2 = r2;
    sec.q.r1 = r2 / 2.0;
    Ok(())
}

fn check_delta(delta: f64) -> Result<(), EmbedError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EmbedError::Precondition(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn check_not_fixed(sys: &FlowSystem, fixed: &FixedSet, p: &State) -> Result<(), EmbedError> {
    if fixed.contains(sys, p) || crate::flow::max_displacement(sys, p)? <= fixed.tol_fix {
        return Err(EmbedError::Precondition(format!("{p:?} is a fixed point")));
    }
    Ok(())
}

/// Largest sup-distance between `f` and `g` over the probe windows.
fn window_damage(f: &EquivariantMap, g: &EquivariantMap, probes: &[WindowProbe], a: f64, intervals: usize) -> Result<f64, EmbedError> {
    let mut worst = 0.0f64;
    for w in probes {
        let u = f.window_values(&w.state, w.s, a, intervals)?;
        let v = g.window_values(&w.state, w.s, a, intervals)?;
        for (x, y) in u.iter().zip(&v) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

pub struct AvoidOutcome {
    pub map: EquivariantMap,
    pub cert: DensityCert,
    pub section: LocalSection,
    pub perturbed: Perturbed,
    /// Sup-distance to the input over the certificate windows.
    pub damage: f64,
}

/// One `G(A)` step around the section through `p`.
pub fn densify_avoid_fixed(
    f: &EquivariantMap,
    fixed: &FixedSet,
    net: &SampleNet,
    p: &State,
    delta: f64,
    opts: &DensityOptions,
) -> Result<AvoidOutcome, EmbedError> {
    check_delta(delta)?;
    let sys = f.sys.clone();
    check_not_fixed(&sys, fixed, p)?;
    let mut sec = build_local_section(&sys, fixed, net, p, &opts.section)?;
    let f1 = mix(f, &aux_spec(f), delta)?;
    let a = sec.a;
    let intervals = window_intervals(a, delta, opts);
    let off = free_offset(&f1, &sec.s_points, a, opts)?;
    let on_s = windows_on(&f1, &sec.s_points, off, a, intervals, delta)?;
    let mut popts = opts.perturb.clone();
    popts.seed = opts.seed;
    popts.initial_radius = Some(sec.r_hit);
    let pert = perturb_avoid_constants(sys.as_ref(), &on_s, delta, &popts)?;
    fit_bump(&mut sec, &pert, 0)?;
    let g1 = glue_offset(&f1, vec![sec.clone()], pert.plan.clone(), off)?;

    let mut probes = vec![WindowProbe { state: *p, s: off }];
    for x in &net.points {
        if fixed.contains(sys.as_ref(), x) {
            continue;
        }
        for h in g1.top_patch_hits(x)? {
            if h.time.abs() <= a && sec.in_core(&sys, &h.state) && !(x == p && h.time.abs() < 1e-9) {
                probes.push(WindowProbe { state: *x, s: h.time + off });
            }
        }
    }
    let (margin, witness) = avoid_margin(&g1, &probes, a, intervals)?;
    if !(margin > 0.0) {
        return Err(EmbedError::ZeroMargin(format!("window of probe {witness} is constant")));
    }
    let damage = window_damage(f, &g1, &probes, a, intervals)?;
    let cert = DensityCert {
        stage: 0,
        target: CertTarget::AvoidFixed { p: *p, a, intervals, windows: probes },
        margin,
        delta,
        seed: opts.seed,
        witness,
    };
    Ok(AvoidOutcome { map: g1, cert, section: sec, perturbed: pert, damage })
}

pub struct SeparateOutcome {
    pub map: EquivariantMap,
    pub cert: DensityCert,
    pub sections: [LocalSection; 2],
    pub perturbed: Perturbed,
    pub scan: SeparationScan,
    /// Lines of the new map computed for the certificate.
    pub book: LineBook,
}

/// One `G(B, C)` step for the flow boxes through `p` and `q`.
pub fn densify_separate(
    f: &EquivariantMap,
    fixed: &FixedSet,
    net: &SampleNet,
    p: &State,
    q: &State,
    delta: f64,
    opts: &DensityOptions,
) -> Result<SeparateOutcome, EmbedError> {
    densify_separate_from(f, None, fixed, net, p, q, delta, opts)
}

/// [`densify_separate`] reusing the lines of `f` memoized in `lines`.
#[allow(clippy::too_many_arguments)]
pub fn densify_separate_from(
    f: &EquivariantMap,
    lines: Option<&LineBook>,
    fixed: &FixedSet,
    net: &SampleNet,
    p: &State,
    q: &State,
    delta: f64,
    opts: &DensityOptions,
) -> Result<SeparateOutcome, EmbedError> {
    check_delta(delta)?;
    let sys = f.sys.clone();
    if sys.dist(p, q) == 0.0 {
        return Err(EmbedError::Precondition("the two base points coincide".into()));
    }
    check_not_fixed(&sys, fixed, p)?;
    check_not_fixed(&sys, fixed, q)?;
    let mut s1 = build_local_section(&sys, fixed, net, p, &opts.section)?;
    let mut s2 = build_local_section(&sys, fixed, net, q, &opts.section)?;
    let gap = sys.dist(p, q) - s1.r_hit - s2.r_hit;
    if !(delta < gap) {
        return Err(EmbedError::Precondition(format!("δ = {delta} is not below the box distance bound {gap}")));
    }
    let mut a = s1.a.min(s2.a);
    let mut separated = false;
    for _ in 0..12 {
        s1.a = a;
        s2.a = a;
        if flowout_separation(&sys, &s1, &s2, 8)? > 0.0
            && flowout_injectivity_margin(&sys, &s1, 8)? > 0.0
            && flowout_injectivity_margin(&sys, &s2, 8)? > 0.0
        {
            separated = true;
            break;
        }
        a /= 2.0;
    }
    if !separated {
        return Err(EmbedError::Precondition("flow boxes stay overlapping after shrinking".into()));
    }
    let f1 = mix(f, &aux_spec(f), delta)?;
    let intervals = window_intervals(a, delta, opts);
    let mut states = s1.s_points.clone();
    states.extend(s2.s_points.iter().copied());
    let off = free_offset(&f1, &states, a, opts)?;
    let on_s = windows_on(&f1, &states, off, a, intervals, delta)?;
    let mut popts = opts.perturb.clone();
    popts.seed = opts.seed;
    popts.initial_radius = Some(s1.r_hit.max(s2.r_hit));
    let (pert, scan) = perturb_separating(sys.as_ref(), &on_s, delta, &popts)?;
    fit_bump(&mut s1, &pert, 0)?;
    fit_bump(&mut s2, &pert, s1.s_points.len())?;
    let g1 = glue_offset(&f1, vec![s1.clone(), s2.clone()], pert.plan.clone(), off)?;

    let mut b = vec![*p];
    let mut c = vec![*q];
    for x in &net.points {
        if fixed.contains(sys.as_ref(), x) {
            continue;
        }
        for h in g1.top_patch_hits(x)? {
            let sec = if h.section == 0 { &s1 } else { &s2 };
            if h.time.abs() <= a / 4.0 && sec.in_core(&sys, &h.state) {
                let side = if h.section == 0 { &mut b } else { &mut c };
                if !side.contains(x) {
                    side.push(*x);
                }
            }
        }
    }
    let book = match lines {
        Some(prev) if prev.matches(opts.n_max, opts.line_step) => LineBook::extending(g1.clone(), prev),
        _ => LineBook::new(g1.clone(), opts.n_max, opts.line_step),
    };
    let (margin, witness) = separate_margin(&book, &b, &c)?;
    if !(margin > 0.0) {
        return Err(EmbedError::ZeroMargin(format!("pair {witness} has coinciding images")));
    }
    let cert = DensityCert {
        stage: 0,
        target: CertTarget::Separate {
            p: *p,
            q: *q,
            b,
            c,
            n_max: opts.n_max,
            line_step: opts.line_step,
            far_mismatch: scan.min_far_mismatch,
        },
        margin,
        delta,
        seed: opts.seed,
        witness,
    };
    Ok(SeparateOutcome { map: g1, cert, sections: [s1, s2], perturbed: pert, scan, book })
}
