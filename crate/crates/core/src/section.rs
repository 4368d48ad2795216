//! Local sections `(a, S)` around non-fixed points and hitting times.
//!
//! The section functional `f(x) = ∫_c^0 h(T_t x) dt` increases at unit rate
//! along orbits near `p`; the section is the level set `f = f(p)` near `p`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FixedSet, FlowError, FlowKind, FlowSystem, Metric, Orbit, SampleNet, State};

pub const DEFAULT_TOL_S: f64 = 1e-8;
/// Hit times are refined until the Newton correction drops below this.
pub const HIT_TIME_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ROUNDS: usize = 20;
/// Coarse stride (in integrator steps) of the hit scan.
const SCAN_STRIDE: usize = 64;

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("cannot build a section through the fixed point {0:?}")]
    FixedPoint(State),
    #[error("no admissible section after {rounds} rounds: {diagnostics}")]
    GiveUp { rounds: usize, diagnostics: String },
    #[error("consecutive hits {t0} and {t1} are not more than a = {a} apart")]
    GapViolation { t0: f64, t1: f64, a: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Cubic smoothstep of the distance: 1 on `[0, r1]`, 0 on `[r2, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothstep {
    pub r1: f64,
    pub r2: f64,
}

impl Smoothstep {
    pub fn eval(&self, d: f64) -> f64 {
        if d <= self.r1 {
            1.0
        } else if d >= self.r2 {
            0.0
        } else {
            let z = (self.r2 - d) / (self.r2 - self.r1);
            z * z * (3.0 - 2.0 * z)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionParams {
    /// Requested time radius; derived from the bump radii when `None`.
    pub a: Option<f64>,
    /// Starting outer bump radius; derived from the flow when `None`.
    pub initial_radius: Option<f64>,
    pub max_rounds: usize,
    pub tol_s: f64,
    /// Probe points per axis (each side of `p`) in the containment checks.
    pub probes_per_side: usize,
    /// Probe times per side of zero in the containment checks.
    pub time_probes_per_side: usize,
}

impl Default for SectionParams {
    fn default() -> Self {
        Self {
            a: None,
            initial_radius: None,
            max_rounds: DEFAULT_MAX_ROUNDS,
            tol_s: DEFAULT_TOL_S,
            probes_per_side: 4,
            time_probes_per_side: 8,
        }
    }
}

/// A local section `(a, S)` through `p`.
///
/// Radii: `h` is one on `B(p, r1)` and vanishes off `B(p, r2)`; hits and
/// section points live in `B(p, r_hit)`; the window bump `q` is one on the
/// core `A₀ = S ∩ B(p, q.r1)` and vanishes off `B(p, q.r2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalSection {
    pub p: State,
    pub a: f64,
    /// Number of integrator steps in `[c, 0]`; `c = −c_steps·dt`.
    pub c_steps: usize,
    pub dt: f64,
    pub bump: Smoothstep,
    pub r_hit: f64,
    pub q: Smoothstep,
    pub f_p: f64,
    pub s_points: Vec<State>,
    pub tol_s: f64,
    /// Shrinking rounds used before the checks passed.
    pub rounds: usize,
}

impl LocalSection {
    pub fn c(&self) -> f64 {
        -(self.c_steps as f64) * self.dt
    }

    pub fn h(&self, sys: &FlowSystem, y: &State) -> f64 {
        self.bump.eval(sys.dist(y, &self.p))
    }

    /// Window bump `q` evaluated at a section state.
    pub fn q_at(&self, sys: &FlowSystem, y: &State) -> f64 {
        self.q.eval(sys.dist(y, &self.p))
    }

    pub fn in_core(&self, sys: &FlowSystem, y: &State) -> bool {
        sys.dist(y, &self.p) <= self.q.r1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sections serialize")
    }
}

/// Composite trapezoid approximation of `∫_c^0 h(T_t x) dt` at the integrator step.
pub fn section_functional(sys: &FlowSystem, sec: &LocalSection, x: &State) -> f64 {
    let m = sec.c_steps;
    let dt = sec.dt;
    let mut sum = 0.0;
    let mut y = *x;
    for j in 0..=m {
        if j > 0 {
            y = if sys.has_closed_form_evolution() {
                sys.reference(x, -(j as f64) * dt).expect("closed form")
            } else {
                sys.rk4_step(&y, -dt)
            };
        }
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        sum += w * sec.h(sys, &y);
    }
    sum * dt
}

/// Number of independent directions used to perturb a state within its domain.
pub fn intrinsic_dim(sys: &FlowSystem) -> usize {
    match sys.kind {
        FlowKind::Torus { .. } => 2,
        _ => 1,
    }
}

/// Moves `p` by `offsets` along the domain's intrinsic coordinates.
pub fn nudge(sys: &FlowSystem, p: &State, offsets: &[f64]) -> State {
    let c = p.coords();
    match sys.kind {
        FlowKind::Rotation { .. } => State::scalar((c[0] + offsets[0]).rem_euclid(std::f64::consts::TAU)),
        FlowKind::Logistic => State::scalar((c[0] + offsets[0]).clamp(0.0, 1.0)),
        FlowKind::Torus { .. } => State::new(&[
            (c[0] + offsets[0]).rem_euclid(std::f64::consts::TAU),
            (c[1] + offsets.get(1).copied().unwrap_or(0.0)).rem_euclid(std::f64::consts::TAU),
        ]),
        FlowKind::CircleGradient => {
            let th = c[1].atan2(c[0]) + offsets[0];
            State::new(&[th.cos(), th.sin()])
        }
    }
}

/// Grid of probe states in `B(p, r)`, `p` first.
fn ball_probes(sys: &FlowSystem, p: &State, r: f64, per_side: usize) -> Vec<State> {
    let k = per_side as i64;
    let mut out = vec![*p];
    let step = r / per_side.max(1) as f64;
    match intrinsic_dim(sys) {
        1 => {
            for i in -k..=k {
                if i != 0 {
                    out.push(nudge(sys, p, &[i as f64 * step]));
                }
            }
        }
        _ => {
            for i in -k..=k {
                for j in -k..=k {
                    if i != 0 || j != 0 {
                        out.push(nudge(sys, p, &[i as f64 * step, j as f64 * step]));
                    }
                }
            }
        }
    }
    out.retain(|y| sys.dist(y, p) <= r * (1.0 + 1e-12));
    out
}

/// Default outer bump radius before any shrinking.
fn default_scale(sys: &FlowSystem) -> f64 {
    match sys.kind {
        FlowKind::Logistic => 0.1,
        FlowKind::CircleGradient => 0.2,
        FlowKind::Rotation { .. } | FlowKind::Torus { .. } => 0.1 * std::f64::consts::PI,
    }
}

/// Local speed bound on `B(p, r)` from finite differences, with slack.
fn local_speed(sys: &FlowSystem, p: &State, r: f64) -> f64 {
    let h = 10.0 * sys.dt;
    let mut v = 0.0f64;
    for y in ball_probes(sys, p, r, 4) {
        for s in [h, -h] {
            if let Ok(z) = sys.evolve(&y, s) {
                v = v.max(sys.dist(&z, &y) / h);
            }
        }
    }
    (1.5 * v).min(sys.max_speed()).max(1e-12)
}

/// Builds a section through `p` by the shrinking schedule: halve the bump
/// radii until the sampled containment checks pass.
pub fn build_local_section(
    sys: &FlowSystem,
    fixed: &FixedSet,
    net: &SampleNet,
    p: &State,
    params: &SectionParams,
) -> Result<LocalSection, SectionError> {
    if fixed.contains(sys, p) || crate::flow::max_displacement(sys, p)? <= fixed.tol_fix {
        return Err(SectionError::FixedPoint(*p));
    }
    if let Some(a) = params.a {
        if !(a > 0.0) {
            return Err(SectionError::Invalid(format!("a must be positive, got {a}")));
        }
    }
    let d_fix = fixed.dist_to(sys, p);
    let mut r2 = params.initial_radius.unwrap_or_else(|| default_scale(sys)).min(d_fix / 3.0);
    if let (Some(a), None) = (params.a, params.initial_radius) {
        r2 = r2.max(6.0 * a * local_speed(sys, p, 0.0));
        r2 = r2.min(d_fix / 3.0);
    }
    let mut last = String::new();
    for round in 0..params.max_rounds {
        match try_radius(sys, net, p, r2, params) {
            Ok(mut sec) => {
                sec.rounds = round + 1;
                return Ok(sec);
            }
            Err(why) => last = format!("r2 = {r2:.3e}: {why}"),
        }
        r2 /= 2.0;
    }
    Err(SectionError::GiveUp { rounds: params.max_rounds, diagnostics: last })
}

fn try_radius(
    sys: &FlowSystem,
    net: &SampleNet,
    p: &State,
    r2: f64,
    params: &SectionParams,
) -> Result<LocalSection, String> {
    let dt = sys.dt;
    let r1 = r2 / 2.0;
    let r_hit = r1 / 4.0;
    // c: first backward grid time with d(T_c p, p) ≥ 2·r2.
    let t_search = 200.0f64.min(sys.horizon);
    let back = Orbit::compute(sys, p, -t_search, 0.0).map_err(|e| e.to_string())?;
    let zero = back.states.len() - 1;
    let mut c_steps = None;
    for j in 1..=zero {
        if sys.dist(&back.states[zero - j], p) >= 2.0 * r2 {
            c_steps = Some(j);
            break;
        }
    }
    let c_steps = c_steps.ok_or("backward orbit never leaves the bump support")?;
    let c = -(c_steps as f64) * dt;
    let v = local_speed(sys, p, r1);
    let a = params.a.unwrap_or_else(|| (r1 / (4.0 * v)).min(c.abs() / 2.0));
    if a >= c.abs() {
        return Err(format!("a = {a} not below |c| = {}", c.abs()));
    }
    // Probes: ∪_{|t|≤2a} T_t(B(p, r_hit)) ⊂ {h = 1}, and the c-shift avoids supp h.
    let nt = params.time_probes_per_side.max(1);
    let probes = ball_probes(sys, p, r_hit, params.probes_per_side);
    for y in &probes {
        let orb = Orbit::compute(sys, y, c - 2.0 * a, 2.0 * a).map_err(|e| e.to_string())?;
        for i in -(nt as i64)..=(nt as i64) {
            let t = 2.0 * a * i as f64 / nt as f64;
            let near = orb.state_at(sys, t);
            let dn = sys.dist(&near, p);
            if dn > r1 {
                return Err(format!("T_{t:.3e} of a probe leaves the plateau (d = {dn:.3e} > r1 = {r1:.3e})"));
            }
            let far = orb.state_at(sys, t + c);
            let df = sys.dist(&far, p);
            if df < r2 {
                return Err(format!("c-shifted probe meets the bump support (d = {df:.3e} < r2 = {r2:.3e})"));
            }
        }
    }
    let mut sec = LocalSection {
        p: *p,
        a,
        c_steps,
        dt,
        bump: Smoothstep { r1, r2 },
        r_hit,
        q: Smoothstep { r1: r_hit / 2.0, r2: r_hit },
        f_p: 0.0,
        s_points: Vec::new(),
        tol_s: params.tol_s,
        rounds: 0,
    };
    sec.f_p = section_functional(sys, &sec, p);
    // Section points: project probes and nearby net points onto f = f_p.
    let mut cands = probes;
    cands.extend(net.points.iter().filter(|y| sys.dist(y, p) <= r_hit).copied());
    let dedupe = r_hit / 8.0;
    let mut s_points: Vec<State> = Vec::new();
    for y in cands {
        let Some(z) = project_to_section(sys, &sec, &y) else { continue };
        if sys.dist(&z, p) > r_hit {
            continue;
        }
        if s_points.iter().all(|s| sys.dist(s, &z) > dedupe) {
            s_points.push(z);
        }
    }
    if s_points.is_empty() || sys.dist(&s_points[0], p) > 1e-9 {
        return Err("base point failed to project onto its own section".into());
    }
    sec.s_points = s_points;
    Ok(sec)
}

/// Flows `y` along its orbit until `|f − f_p| ≤ tol_S`.
pub fn project_to_section(sys: &FlowSystem, sec: &LocalSection, y: &State) -> Option<State> {
    let mut z = *y;
    for _ in 0..30 {
        let g = section_functional(sys, sec, &z) - sec.f_p;
        if g.abs() <= sec.tol_s * 1e-2 {
            return Some(z);
        }
        if g.abs() > sec.a {
            return None;
        }
        z = sys.evolve(&z, -g).ok()?;
    }
    let g = section_functional(sys, sec, &z) - sec.f_p;
    (g.abs() <= sec.tol_s).then_some(z)
}

/// One crossing of a section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub time: f64,
    pub state: State,
    /// Index of the section hit (within the slice passed to the scan).
    pub section: usize,
}

/// Sorted hitting times of an orbit within a window.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HitList {
    pub hits: Vec<Hit>,
    pub window: [f64; 2],
}

impl HitList {
    pub fn times(&self) -> Vec<f64> {
        self.hits.iter().map(|h| h.time).collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.hits.windows(2).map(|w| w[1].time - w[0].time).fold(f64::INFINITY, f64::min)
    }
}

/// Hits of the stored orbit on each section within `[t_lo, t_hi]`, merged and
/// checked for gaps larger than the smallest `a`.
pub fn hits_on_orbit(
    sys: &FlowSystem,
    secs: &[&LocalSection],
    orbit: &Orbit,
    t_lo: f64,
    t_hi: f64,
) -> Result<HitList, SectionError> {
    let mut hits = Vec::new();
    for (si, sec) in secs.iter().enumerate() {
        scan_section(sys, sec, si, orbit, t_lo, t_hi, &mut hits);
    }
    hits.sort_by(|a, b| a.time.total_cmp(&b.time));
    hits.dedup_by(|b, a| a.section == b.section && (a.time - b.time).abs() <= 1e-7);
    let a = secs.iter().map(|s| s.a).fold(f64::INFINITY, f64::min);
    for w in hits.windows(2) {
        if w[1].time - w[0].time <= a {
            return Err(SectionError::GapViolation { t0: w[0].time, t1: w[1].time, a });
        }
    }
    Ok(HitList { hits, window: [t_lo, t_hi] })
}

fn scan_section(
    sys: &FlowSystem,
    sec: &LocalSection,
    si: usize,
    orbit: &Orbit,
    t_lo: f64,
    t_hi: f64,
    out: &mut Vec<Hit>,
) {
    let n = orbit.states.len();
    let jump = sys.max_speed() * SCAN_STRIDE as f64 * orbit.dt;
    // Slightly wider than r_hit so crossings near the rim are not lost to the grid.
    let reach = sec.r_hit + 2.0 * sys.max_speed() * orbit.dt;
    let mut run: Option<(usize, f64)> = None;
    let finish = |run: &mut Option<(usize, f64)>, out: &mut Vec<Hit>| {
        if let Some((k, _)) = run.take() {
            if let Some(hit) = refine_hit(sys, sec, si, orbit, orbit.time(k)) {
                if hit.time >= t_lo && hit.time <= t_hi {
                    out.push(hit);
                }
            }
        }
    };
    let mut block = 0;
    while block < n {
        let end = (block + SCAN_STRIDE).min(n);
        if sys.dist(&orbit.states[block], &sec.p) > reach + jump {
            finish(&mut run, out);
            block = end;
            continue;
        }
        for k in block..end {
            let d = sys.dist(&orbit.states[k], &sec.p);
            if d <= reach {
                match run {
                    Some((_, best)) if best <= d => {}
                    _ => run = Some((k, d)),
                }
            } else {
                finish(&mut run, out);
            }
        }
        block = end;
    }
    finish(&mut run, out);
}

/// Newton refinement of a crossing: `f(T_t x)` grows at unit rate near the
/// section, so `t ← t − (f(T_t x) − f_p)`.
fn refine_hit(sys: &FlowSystem, sec: &LocalSection, si: usize, orbit: &Orbit, t0: f64) -> Option<Hit> {
    let mut t = t0;
    let mut y = orbit.state_at(sys, t);
    let mut g = section_functional(sys, sec, &y) - sec.f_p;
    for _ in 0..40 {
        if g.abs() > 2.0 * sec.a {
            return None;
        }
        t -= g;
        y = orbit.state_at(sys, t);
        let step = g;
        g = section_functional(sys, sec, &y) - sec.f_p;
        if step.abs() <= HIT_TIME_TOL {
            break;
        }
    }
    (g.abs() <= sec.tol_s && sys.dist(&y, &sec.p) <= sec.r_hit).then_some(Hit { time: t, state: y, section: si })
}

/// Hitting times of the orbit of `x` on one section within `window`.
pub fn hitting_times(
    sys: &FlowSystem,
    sec: &LocalSection,
    x: &State,
    window: [f64; 2],
) -> Result<HitList, SectionError> {
    if !(window[0].is_finite() && window[1].is_finite() && window[0] <= window[1]) {
        return Err(SectionError::Invalid(format!("window {window:?} must be finite and ordered")));
    }
    let pad = 2.0 * sec.a + 1.0;
    let orbit = Orbit::compute(sys, x, window[0] - pad, window[1] + pad)?;
    hits_on_orbit(sys, &[sec], &orbit, window[0], window[1])
}

/// Smallest distance between distinct points of the grid image of
/// `[−a, a] × S → X`; positive iff the sampled flow-out is injective.
pub fn flowout_injectivity_margin(sys: &FlowSystem, sec: &LocalSection, times_per_side: usize) -> Result<f64, SectionError> {
    let n = times_per_side.max(1) as i64;
    let mut pts = Vec::new();
    for s in &sec.s_points {
        for i in -n..=n {
            pts.push(sys.evolve(s, sec.a * i as f64 / n as f64)?);
        }
    }
    let mut margin = f64::INFINITY;
    for i in 0..pts.len() {
        for j in 0..i {
            margin = margin.min(sys.dist(&pts[i], &pts[j]));
        }
    }
    Ok(margin)
}

/// Smallest distance between the sampled flow-outs `[−2a, 2a]·S₁` and
/// `[−2a, 2a]·S₂` (with `a` the smaller time radius).
pub fn flowout_separation(sys: &FlowSystem, s1: &LocalSection, s2: &LocalSection, times_per_side: usize) -> Result<f64, SectionError> {
    let a = s1.a.min(s2.a);
    let n = times_per_side.max(1) as i64;
    let sample = |sec: &LocalSection| -> Result<Vec<State>, SectionError> {
        let mut v = Vec::new();
        for s in &sec.s_points {
            for i in -n..=n {
                v.push(sys.evolve(s, 2.0 * a * i as f64 / n as f64)?);
            }
        }
        Ok(v)
    };
    let (u, w) = (sample(s1)?, sample(s2)?);
    let mut margin = f64::INFINITY;
    for x in &u {
        for y in &w {
            margin = margin.min(sys.dist(x, y));
        }
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{detect_fixed, DEFAULT_TOL_FIX};
    use std::f64::consts::{PI, TAU};

    fn setup(sys: &FlowSystem, mesh: f64) -> (SampleNet, FixedSet) {
        let net = sys.regular_net(mesh).unwrap();
        let fixed = detect_fixed(sys, &net, DEFAULT_TOL_FIX).unwrap();
        (net, fixed)
    }

    #[test]
    fn functional_plateau_and_void() {
        let sys = FlowSystem::rotation(1.0);
        let (net, fixed) = setup(&sys, 0.1);
        let sec = build_local_section(&sys, &fixed, &net, &State::scalar(0.0), &SectionParams::default()).unwrap();
        // Orbit segment inside the plateau: rotate a copy of the section so h ≡ 1.
        let mut wide = sec.clone();
        wide.bump = Smoothstep { r1: 10.0, r2: 11.0 };
        let f = section_functional(&sys, &wide, &State::scalar(1.0));
        assert!((f - sec.c().abs()).abs() < 1e-12);
        // Far from p the integrand vanishes.
        let f = section_functional(&sys, &sec, &State::scalar(PI));
        assert_eq!(f, 0.0);
    }

    #[test]
    fn rotation_section_single_point_and_arithmetic_hits() {
        let sys = FlowSystem::rotation(1.0);
        let (net, fixed) = setup(&sys, 0.1);
        let params = SectionParams { a: Some(0.1), ..Default::default() };
        let sec = build_local_section(&sys, &fixed, &net, &State::scalar(0.0), &params).unwrap();
        assert_eq!(sec.a, 0.1);
        assert_eq!(sec.s_points.len(), 1);
        assert!(sys.dist(&sec.s_points[0], &State::scalar(0.0)) < 1e-12);
        let theta0 = 1.3;
        let hits = hitting_times(&sys, &sec, &State::scalar(theta0), [-20.0, 20.0]).unwrap();
        let expect: Vec<f64> = (-3..=3).map(|k| -theta0 + TAU * k as f64).filter(|t| (-20.0..=20.0).contains(t)).collect();
        let got = hits.times();
        assert_eq!(got.len(), expect.len(), "{got:?}");
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
    }

    #[test]
    fn logistic_section_is_transverse_and_injective() {
        let sys = FlowSystem::logistic();
        let (net, fixed) = setup(&sys, 0.05);
        let p = State::scalar(0.5);
        let sec = build_local_section(&sys, &fixed, &net, &p, &SectionParams::default()).unwrap();
        assert!(!sec.s_points.is_empty());
        for s in &sec.s_points {
            assert!((section_functional(&sys, &sec, s) - sec.f_p).abs() <= sec.tol_s);
        }
        let margin = flowout_injectivity_margin(&sys, &sec, 20).unwrap();
        assert!(margin > 0.0);
        // Additivity near p.
        for y in [0.5, 0.49, 0.505] {
            let y = State::scalar(y);
            let fy = section_functional(&sys, &sec, &y);
            for t in [-sec.a, -sec.a / 3.0, sec.a / 2.0, sec.a] {
                let z = sys.evolve(&y, t).unwrap();
                let r = section_functional(&sys, &sec, &z) - fy - t;
                assert!(r.abs() < 1e-6, "residual {r}");
            }
        }
    }

    #[test]
    fn fixed_points_rejected_and_never_hit() {
        let sys = FlowSystem::logistic();
        let (net, fixed) = setup(&sys, 0.05);
        let err = build_local_section(&sys, &fixed, &net, &State::scalar(0.0), &SectionParams::default());
        assert!(matches!(err, Err(SectionError::FixedPoint(_))));
        let sec = build_local_section(&sys, &fixed, &net, &State::scalar(0.5), &SectionParams::default()).unwrap();
        for x in [0.0, 1.0] {
            let hits = hitting_times(&sys, &sec, &State::scalar(x), [-30.0, 30.0]).unwrap();
            assert!(hits.hits.is_empty());
        }
    }

    #[test]
    fn gaps_exceed_a_on_the_net() {
        for sys in [FlowSystem::rotation(1.0), FlowSystem::logistic(), FlowSystem::circle_gradient()] {
            let (net, fixed) = setup(&sys, 0.1);
            let p = if sys.dim() == 2 { State::new(&[0.0, 1.0]) } else { State::scalar(0.5) };
            let sec = build_local_section(&sys, &fixed, &net, &p, &SectionParams::default()).unwrap();
            for x in &net.points {
                let hits = hitting_times(&sys, &sec, x, [-15.0, 15.0]).unwrap();
                assert!(hits.min_gap() > sec.a);
            }
        }
    }

    #[test]
    fn torus_section_has_transversal_points() {
        let sys = FlowSystem::torus([1.0, 2f64.sqrt()]);
        let (net, fixed) = setup(&sys, 0.5);
        let p = State::new(&[1.0, 1.0]);
        let sec = build_local_section(&sys, &fixed, &net, &p, &SectionParams::default()).unwrap();
        assert!(sec.s_points.len() > 1);
        assert!(flowout_injectivity_margin(&sys, &sec, 10).unwrap() > 0.0);
        let back: LocalSection = serde_json::from_str(&sec.to_json()).unwrap();
        assert_eq!(back.s_points.len(), sec.s_points.len());
    }

    #[test]
    fn hits_translate_with_the_orbit() {
        let sys = FlowSystem::logistic();
        let (net, fixed) = setup(&sys, 0.05);
        let sec = build_local_section(&sys, &fixed, &net, &State::scalar(0.5), &SectionParams::default()).unwrap();
        let x = State::scalar(0.2);
        let base = hitting_times(&sys, &sec, &x, [-10.0, 10.0]).unwrap();
        assert_eq!(base.hits.len(), 1);
        for u in [-0.7, 0.3, 1.25] {
            let y = sys.evolve(&x, u).unwrap();
            let moved = hitting_times(&sys, &sec, &y, [-10.0 - u, 10.0 - u]).unwrap();
            assert_eq!(moved.hits.len(), 1);
            assert!((moved.hits[0].time - (base.hits[0].time - u)).abs() < 1e-8);
        }
    }
}
