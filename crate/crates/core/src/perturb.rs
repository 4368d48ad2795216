//! Window perturbations of maps `X → L[0,a]`: constancy avoidance and shift
//! separation, built from a metric cover, a hat partition of unity and a
//! generic vector family placed on a node grid `b = a₁ < … < a_N = c`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Metric, State};
use crate::funcspace::{dist_sup, oscillation, FuncError, GridFn, WindowFn};
use crate::genvec::{sample_family, GenvecError, SamplingSpec, VecFamily, DEFAULT_MAX_TRIES};

pub const DEFAULT_TOL_MATCH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no cover meets the caps (state {cap_state:e}, image {cap_image:e}) above radius {radius:e}; refine the net")]
    CoverUnreachable { radius: f64, cap_state: f64, cap_image: f64 },
    #[error("state {0:?} is not covered")]
    Uncovered(State),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Genvec(#[from] GenvecError),
    #[error(transparent)]
    Func(#[from] FuncError),
}

/// A map `X → L[0,a]` known on finitely many states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapOnNet {
    pub states: Vec<State>,
    pub windows: Vec<WindowFn>,
    /// Certified slope bound of every window.
    pub tau: f64,
}

impl MapOnNet {
    pub fn new(states: Vec<State>, windows: Vec<WindowFn>, tau: f64) -> Result<Self, PerturbError> {
        if states.is_empty() || states.len() != windows.len() {
            return Err(PerturbError::Precondition(format!(
                "{} states but {} windows",
                states.len(),
                windows.len()
            )));
        }
        if windows.iter().any(|w| !w.same_grid(&windows[0])) {
            return Err(PerturbError::Precondition("windows use different grids".into()));
        }
        let map = Self { states, windows, tau };
        let measured = map.measured_tau();
        if measured > tau * (1.0 + 1e-12) + 1e-15 {
            return Err(PerturbError::Precondition(format!("measured slope {measured} exceeds certified τ = {tau}")));
        }
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn a(&self) -> f64 {
        self.windows[0].a()
    }

    pub fn intervals(&self) -> usize {
        self.windows[0].intervals()
    }

    pub fn step(&self) -> f64 {
        self.windows[0].step()
    }

    pub fn measured_tau(&self) -> f64 {
        self.windows.iter().map(crate::funcspace::lip_constant).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ball {
    pub center: State,
    pub center_index: usize,
    pub radius: f64,
    pub members: Vec<usize>,
}

/// Open metric balls `U_m = B(p_m, r)` covering a finite set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cover {
    pub balls: Vec<Ball>,
    pub radius: f64,
    pub max_state_diam: f64,
    pub max_image_diam: f64,
}

impl Cover {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

/// Greedy ball cover of the states of `f`: halve the radius from
/// `initial_radius` until every ball has state diameter `< cap_state` and
/// image diameter (sup distance of windows) `< cap_image`.
pub fn build_cover<M: Metric + ?Sized>(
    metric: &M,
    f: &MapOnNet,
    cap_state: f64,
    cap_image: f64,
    initial_radius: f64,
    min_radius: f64,
) -> Result<Cover, PerturbError> {
    if !(cap_state > 0.0 && cap_image > 0.0) {
        return Err(PerturbError::Precondition("cover caps must be positive".into()));
    }
    let n = f.len();
    let mut dists = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d = metric.dist(&f.states[i], &f.states[j]);
            dists[i * n + j] = d;
            dists[j * n + i] = d;
        }
    }
    let mut image_cache: Vec<Option<f64>> = vec![None; n * n];
    let mut radius = initial_radius;
    while radius >= min_radius {
        let mut covered = vec![false; n];
        let mut balls = Vec::new();
        let (mut worst_state, mut worst_image) = (0.0f64, 0.0f64);
        let mut ok = true;
        'greedy: for c in 0..n {
            if covered[c] {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| dists[c * n + j] < radius).collect();
            for (ii, &i) in members.iter().enumerate() {
                for &j in &members[..ii] {
                    let ds = dists[i * n + j];
                    let di = match image_cache[i * n + j] {
                        Some(v) => v,
                        None => {
                            let v = dist_sup(&f.windows[i], &f.windows[j])?;
                            image_cache[i * n + j] = Some(v);
                            v
                        }
                    };
                    worst_state = worst_state.max(ds);
                    worst_image = worst_image.max(di);
                    if ds >= cap_state || di >= cap_image {
                        ok = false;
                        break 'greedy;
                    }
                }
            }
            for &j in &members {
                covered[j] = true;
            }
            balls.push(Ball { center: f.states[c], center_index: c, radius, members });
        }
        if ok {
            return Ok(Cover { balls, radius, max_state_diam: worst_state, max_image_diam: worst_image });
        }
        radius /= 2.0;
    }
    Err(PerturbError::CoverUnreachable { radius, cap_state, cap_image })
}

/// Normalized hat weights `max(0, 1 − d(x, p_m)/r_m)`.
pub fn partition_of_unity<M: Metric + ?Sized>(metric: &M, x: &State, cover: &Cover) -> Result<Vec<f64>, PerturbError> {
    let mut w: Vec<f64> = cover
        .balls
        .iter()
        .map(|b| (1.0 - metric.dist(x, &b.center) / b.radius).max(0.0))
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(PerturbError::Uncovered(*x));
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    AvoidConstants,
    Separating,
}

/// Node grid, cover and vector family of one perturbation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub kind: PlanKind,
    pub a: f64,
    pub intervals: usize,
    pub delta: f64,
    pub tau: f64,
    /// `b = b_steps · step`; `c = a − b`.
    pub b_steps: usize,
    /// `Δ = stride · step`.
    pub stride: usize,
    /// `N`, the number of nodes in `A`.
    pub n_nodes: usize,
    /// `L`, the number of nodes in `Λ`.
    pub l_nodes: usize,
    pub box_radius: f64,
    pub cover: Cover,
    pub family: VecFamily,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn step(&self) -> f64 {
        self.a / self.intervals as f64
    }

    pub fn b(&self) -> f64 {
        self.b_steps as f64 * self.step()
    }

    pub fn c(&self) -> f64 {
        self.a - self.b()
    }

    pub fn big_delta(&self) -> f64 {
        self.stride as f64 * self.step()
    }

    /// Grid index of the node `a_n` (0-based `n`).
    pub fn node_index(&self, n: usize) -> usize {
        self.b_steps + n * self.stride
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|n| self.node_index(n) as f64 * self.step()).collect()
    }

    /// `Σ_m h_m(y) u_m(a_n)` for every node.
    pub fn node_values<M: Metric + ?Sized>(&self, metric: &M, y: &State) -> Result<Vec<f64>, PerturbError> {
        let w = partition_of_unity(metric, y, &self.cover)?;
        let mut out = vec![0.0; self.n_nodes];
        for (wm, u) in w.iter().zip(&self.family.vectors) {
            if *wm == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(u) {
                *o += wm * v;
            }
        }
        Ok(out)
    }

    /// The piecewise-linear function through `(0, left)`, `(a_n, nodes[n])`
    /// and `(a, right)`, evaluated at `t ∈ [0, a]`.
    pub fn eval_pl(&self, nodes: &[f64], left: f64, right: f64, t: f64) -> f64 {
        let step = self.step();
        let x = t / step;
        let first = self.node_index(0) as f64;
        let last = self.node_index(self.n_nodes - 1) as f64;
        if x <= 0.0 {
            left
        } else if x >= self.intervals as f64 {
            right
        } else if x <= first {
            left + (x / first) * (nodes[0] - left)
        } else if x >= last {
            let lam = (x - last) / (self.intervals as f64 - last);
            nodes[self.n_nodes - 1] + lam * (right - nodes[self.n_nodes - 1])
        } else {
            let pos = (x - first) / self.stride as f64;
            let n = (pos.floor() as usize).min(self.n_nodes - 2);
            let lam = pos - n as f64;
            nodes[n] + lam * (nodes[n + 1] - nodes[n])
        }
    }

    /// Grid values of the piecewise-linear function; endpoints copied bitwise.
    pub fn grid_values(&self, nodes: &[f64], left: f64, right: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.intervals + 1];
        v[0] = left;
        v[self.intervals] = right;
        let mut knots: Vec<(usize, f64)> = Vec::with_capacity(self.n_nodes + 2);
        knots.push((0, left));
        knots.extend((0..self.n_nodes).map(|n| (self.node_index(n), nodes[n])));
        knots.push((self.intervals, right));
        for w in knots.windows(2) {
            let ((i0, v0), (i1, v1)) = (w[0], w[1]);
            let len = (i1 - i0) as f64;
            for i in i0 + 1..i1 {
                v[i] = v0 + ((i - i0) as f64 / len) * (v1 - v0);
            }
            if i1 != self.intervals {
                v[i1] = v1;
            }
        }
        v
    }
}

/// Grid constants shared by both operators.
struct Grid {
    b_steps: usize,
    stride: usize,
    n_nodes: usize,
    l_nodes: usize,
}

fn choose_b(a: f64, intervals: usize, bound: f64) -> Result<usize, PerturbError> {
    let step = a / intervals as f64;
    let half = bound / 2.0;
    let j = (half / step).floor() as usize;
    if j == 0 {
        return Err(PerturbError::Precondition(format!(
            "window step {step:e} too coarse for b < {bound:e}; use more intervals"
        )));
    }
    Ok(j)
}

fn choose_stride(kind: PlanKind, a: f64, intervals: usize, b_steps: usize, delta: f64, m: usize) -> Result<Grid, PerturbError> {
    let step = a / intervals as f64;
    let inner = intervals - 2 * b_steps;
    for k in (1..=inner).rev() {
        if inner % k != 0 || (k as f64) * step >= delta / 4.0 {
            continue;
        }
        let n_nodes = inner / k + 1;
        match kind {
            PlanKind::AvoidConstants => {
                if n_nodes > m + 1 {
                    return Ok(Grid { b_steps, stride: k, n_nodes, l_nodes: n_nodes });
                }
            }
            PlanKind::Separating => {
                let quarter_idx = (a / 4.0 / step + 1e-9).floor() as usize;
                if quarter_idx < b_steps {
                    continue;
                }
                let l_nodes = (quarter_idx - b_steps) / k + 1;
                if l_nodes >= 2 * m && n_nodes > l_nodes && l_nodes >= m + 1 {
                    return Ok(Grid { b_steps, stride: k, n_nodes, l_nodes });
                }
            }
        }
    }
    Err(PerturbError::Precondition(format!(
        "no node spacing on a {intervals}-interval window satisfies the plan constraints for M = {m}; use more intervals"
    )))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbOptions {
    pub seed: u64,
    pub max_tries: usize,
    pub min_margin: f64,
    /// Starting cover radius; the diameter of the state set when `None`.
    pub initial_radius: Option<f64>,
    pub min_radius: f64,
    pub tol_match: f64,
    /// Relative pivot tolerance of the rank checks on sampled families.
    pub rank_tol: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_tries: DEFAULT_MAX_TRIES,
            min_margin: crate::genvec::DEFAULT_MIN_MARGIN,
            initial_radius: None,
            min_radius: 1e-12,
            tol_match: DEFAULT_TOL_MATCH,
            rank_tol: crate::genvec::DEFAULT_RANK_TOL,
        }
    }
}

fn state_diameter<M: Metric + ?Sized>(metric: &M, states: &[State]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..states.len() {
        for j in 0..i {
            d = d.max(metric.dist(&states[i], &states[j]));
        }
    }
    d
}

/// Builds the plan (cover, node grid, family) for either operator.
pub fn build_plan<M: Metric + ?Sized>(
    metric: &M,
    f: &MapOnNet,
    kind: PlanKind,
    delta: f64,
    opts: &PerturbOptions,
) -> Result<PerturbationPlan, PerturbError> {
    let tau = f.tau;
    if !(0.0..1.0).contains(&tau) {
        return Err(PerturbError::Precondition(format!("need certified τ < 1, got {tau}")));
    }
    if !(delta > 0.0) {
        return Err(PerturbError::Precondition(format!("δ must be positive, got {delta}")));
    }
    let (a, intervals) = (f.a(), f.intervals());
    let b_bound = match kind {
        PlanKind::AvoidConstants => (delta / 4.0).min(a / 2.0),
        PlanKind::Separating => (delta / 4.0).min(a / 4.0),
    };
    let b_steps = choose_b(a, intervals, b_bound)?;
    let b = b_steps as f64 * f.step();
    let box_radius = (delta / 4.0).min((1.0 - tau) * b / 2.0);
    let cap_state = match kind {
        PlanKind::AvoidConstants => f64::INFINITY,
        PlanKind::Separating => delta,
    };
    let r0 = opts.initial_radius.unwrap_or_else(|| state_diameter(metric, &f.states) * (1.0 + 1e-9) + 1e-12);
    let cover = build_cover(metric, f, cap_state, box_radius, r0, opts.min_radius)?;
    let grid = choose_stride(kind, a, intervals, b_steps, delta, cover.len())?;
    let idx: Vec<usize> = (0..grid.n_nodes).map(|n| grid.b_steps + n * grid.stride).collect();
    let targets: Vec<Vec<f64>> = cover
        .balls
        .iter()
        .map(|ball| idx.iter().map(|&i| f.windows[ball.center_index].values()[i]).collect())
        .collect();
    // Node slopes capped at (1 + τ)/2 < 1, so repeated patches of one window
    // stay strictly below slope one.
    let inc = grid.stride as f64 * f.step() * (1.0 + tau) / 2.0;
    let mut spec = match kind {
        PlanKind::AvoidConstants => SamplingSpec::non_constant(box_radius, inc, grid.n_nodes, opts.max_tries),
        PlanKind::Separating => SamplingSpec::separating(box_radius, inc, grid.l_nodes, opts.max_tries),
    };
    spec.min_margin = opts.min_margin;
    spec.rank_tol = opts.rank_tol;
    let family = sample_family(&targets, &spec, opts.seed)?;
    Ok(PerturbationPlan {
        kind,
        a,
        intervals,
        delta,
        tau,
        b_steps: grid.b_steps,
        stride: grid.stride,
        n_nodes: grid.n_nodes,
        l_nodes: grid.l_nodes,
        box_radius,
        cover,
        family,
        seed: opts.seed,
    })
}

/// `g(x)` for one state: nodes from the family, endpoints from `f(x)`, then
/// the proof's estimates re-checked on the result.
pub fn assemble_pl<M: Metric + ?Sized>(
    metric: &M,
    x: &State,
    fx: &WindowFn,
    plan: &PerturbationPlan,
) -> Result<WindowFn, PerturbError> {
    let nodes = plan.node_values(metric, x)?;
    let fv = fx.values();
    let values = plan.grid_values(&nodes, fv[0], fv[plan.intervals]);
    let b = plan.b();
    let gb = values[plan.b_steps];
    let ga = values[plan.node_index(plan.n_nodes - 1)];
    let c_gap = plan.a - plan.c();
    if (gb - fv[0]).abs() > b * (1.0 + 1e-12) || (ga - fv[plan.intervals]).abs() > c_gap * (1.0 + 1e-12) {
        return Err(PerturbError::Integrity(format!(
            "end segments too steep at {x:?}: |g(b) − f(0)| = {:e}, b = {b:e}",
            (gb - fv[0]).abs()
        )));
    }
    for n in 0..plan.n_nodes {
        let i = plan.node_index(n);
        if (values[i] - fv[i]).abs() >= plan.delta / 2.0 {
            return Err(PerturbError::Integrity(format!("node {n} moved by ≥ δ/2 at {x:?}")));
        }
    }
    let g = WindowFn::new(plan.a, plan.step(), values)
        .map_err(|e| PerturbError::Integrity(format!("assembled window at {x:?} is not one-Lipschitz: {e}")))?;
    let sup = dist_sup(&g, fx)?;
    if sup >= plan.delta {
        return Err(PerturbError::Integrity(format!("sup distance {sup:e} ≥ δ at {x:?}")));
    }
    Ok(g)
}

/// Summary of a perturbed map against its input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSummary {
    pub min_oscillation: f64,
    pub min_oscillation_index: usize,
    pub max_sup_distance: f64,
    pub endpoints_bitwise: bool,
    pub max_slope: f64,
    pub cover_size: usize,
    pub n_nodes: usize,
    pub l_nodes: usize,
}

fn summarize(f: &MapOnNet, g: &[WindowFn], plan: &PerturbationPlan) -> Result<PerturbSummary, PerturbError> {
    let mut s = PerturbSummary {
        min_oscillation: f64::INFINITY,
        min_oscillation_index: 0,
        max_sup_distance: 0.0,
        endpoints_bitwise: true,
        max_slope: 0.0,
        cover_size: plan.cover.len(),
        n_nodes: plan.n_nodes,
        l_nodes: plan.l_nodes,
    };
    for (i, (gi, fi)) in g.iter().zip(&f.windows).enumerate() {
        let osc = oscillation(gi);
        if osc < s.min_oscillation {
            s.min_oscillation = osc;
            s.min_oscillation_index = i;
        }
        s.max_sup_distance = s.max_sup_distance.max(dist_sup(gi, fi)?);
        let (gv, fv) = (gi.values(), fi.values());
        s.endpoints_bitwise &= gv[0].to_bits() == fv[0].to_bits() && gv[gv.len() - 1].to_bits() == fv[fv.len() - 1].to_bits();
        s.max_slope = s.max_slope.max(crate::funcspace::lip_constant(gi));
    }
    Ok(s)
}

fn apply_plan<M: Metric + ?Sized>(metric: &M, f: &MapOnNet, plan: &PerturbationPlan) -> Result<Vec<WindowFn>, PerturbError> {
    f.states.iter().zip(&f.windows).map(|(x, fx)| assemble_pl(metric, x, fx, plan)).collect()
}

/// A perturbation together with the plan that defines it everywhere on the cover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Perturbed {
    pub map: MapOnNet,
    pub plan: PerturbationPlan,
    pub summary: PerturbSummary,
}

/// Perturbs `f` by less than `δ` so that no output is constant.
pub fn perturb_avoid_constants<M: Metric + ?Sized>(
    metric: &M,
    f: &MapOnNet,
    delta: f64,
    opts: &PerturbOptions,
) -> Result<Perturbed, PerturbError> {
    let plan = build_plan(metric, f, PlanKind::AvoidConstants, delta, opts)?;
    let g = apply_plan(metric, f, &plan)?;
    let summary = summarize(f, &g, &plan)?;
    if !(summary.min_oscillation > 0.0) {
        return Err(PerturbError::Integrity(format!(
            "output {} is constant despite the rank certificate",
            summary.min_oscillation_index
        )));
    }
    let tau = summary.max_slope;
    Ok(Perturbed { map: MapOnNet { states: f.states.clone(), windows: g, tau }, plan, summary })
}

/// One (pair, shift) record of the separation scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanRow {
    pub i: usize,
    pub j: usize,
    pub eps: f64,
    /// Lower bound on the mismatch (exact when below the match tolerance).
    pub mismatch: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparationScan {
    pub pairs: usize,
    pub shifts: usize,
    pub tol_match: f64,
    /// Per ordered pair, the shift with the smallest mismatch bound.
    pub rows: Vec<ScanRow>,
    /// Matches other than `ε ≤ one grid step` with `d(x, y) < δ`.
    pub violations: Vec<ScanRow>,
    /// Smallest mismatch bound over pairs with `d(x, y) ≥ δ`.
    pub min_far_mismatch: f64,
    /// Smallest distance of `D_Λ g(y)` from the line `ℝe`, relative to its norm.
    pub min_kink_residual: f64,
}

impl SeparationScan {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FuncError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "eps", "mismatch"])?;
        for r in &self.rows {
            wr.write_record([r.i.to_string(), r.j.to_string(), format!("{:.17e}", r.eps), format!("{:.17e}", r.mismatch)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `max_t |g_i(t + ε) − g_j(t)|`, stopping as soon as it exceeds `tol`.
/// `shift2` is the shift in half grid steps.
fn shifted_mismatch(gi: &[f64], gj: &[f64], shift2: usize, tol: f64) -> f64 {
    let n = gi.len() - 1;
    let whole = shift2 / 2;
    let mut worst = 0.0f64;
    if shift2 % 2 == 0 {
        for k in 0..=n - whole {
            let d = (gi[k + whole] - gj[k]).abs();
            worst = worst.max(d);
            if worst > tol {
                return worst;
            }
        }
    } else {
        // t = k·step, t + ε = (k + whole + ½)·step; the last grid t needs t + ε ≤ a
        for k in 0..n - whole {
            let v = 0.5 * (gi[k + whole] + gi[k + whole + 1]);
            let d = (v - gj[k]).abs();
            worst = worst.max(d);
            if worst > tol {
                return worst;
            }
        }
    }
    worst
}

/// Exhaustive scan of all ordered pairs and all shifts `ε ∈ [0, a/2]` on the
/// half-step grid for exact (to `tol_match`) shifted matches.
pub fn separation_scan<M: Metric + ?Sized>(metric: &M, g: &MapOnNet, delta: f64, tol_match: f64, plan: Option<&PerturbationPlan>) -> SeparationScan {
    let n = g.len();
    let step = g.step();
    let max_shift2 = (g.intervals() / 2) * 2;
    let mut rows = Vec::with_capacity(n * n);
    let mut violations = Vec::new();
    let mut min_far = f64::INFINITY;
    for i in 0..n {
        let gi = g.windows[i].values();
        for j in 0..n {
            let gj = g.windows[j].values();
            let d = metric.dist(&g.states[i], &g.states[j]);
            let mut best = ScanRow { i, j, eps: 0.0, mismatch: f64::INFINITY };
            for s2 in 0..=max_shift2 {
                let eps = s2 as f64 * step / 2.0;
                let m = shifted_mismatch(gi, gj, s2, tol_match);
                if m < best.mismatch {
                    best = ScanRow { i, j, eps, mismatch: m };
                }
                if m <= tol_match && !(eps <= step * (1.0 + 1e-12) && d < delta) {
                    violations.push(ScanRow { i, j, eps, mismatch: m });
                }
            }
            if d >= delta {
                min_far = min_far.min(best.mismatch);
            }
            rows.push(best);
        }
    }
    let min_kink_residual = plan.map_or(f64::NAN, |p| kink_residual(g, p));
    SeparationScan { pairs: n * n, shifts: max_shift2 + 1, tol_match, rows, violations, min_far_mismatch: min_far, min_kink_residual }
}

/// Smallest relative distance of `D_L g(y)` (node differences over `Λ`) from `ℝe`.
fn kink_residual(g: &MapOnNet, plan: &PerturbationPlan) -> f64 {
    let l = plan.l_nodes.min(plan.n_nodes - 1);
    let mut worst = f64::INFINITY;
    for w in &g.windows {
        let v = w.values();
        let d: Vec<f64> = (0..l).map(|n| v[plan.node_index(n + 1)] - v[plan.node_index(n)]).collect();
        let mean = d.iter().sum::<f64>() / l as f64;
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let resid = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>().sqrt();
        worst = worst.min(if norm > 0.0 { resid / norm } else { 0.0 });
    }
    worst
}

/// Perturbs `f` by less than `δ` so that exact shifted matches
/// `g(x)(·+ε) = g(y)` with `0 ≤ ε ≤ a/2` force `ε = 0` and `d(x, y) < δ`.
pub fn perturb_separating<M: Metric + ?Sized>(
    metric: &M,
    f: &MapOnNet,
    delta: f64,
    opts: &PerturbOptions,
) -> Result<(Perturbed, SeparationScan), PerturbError> {
    if !(opts.tol_match > 0.0) {
        return Err(PerturbError::Precondition("tol_match must be positive".into()));
    }
    let plan = build_plan(metric, f, PlanKind::Separating, delta, opts)?;
    let g = apply_plan(metric, f, &plan)?;
    let summary = summarize(f, &g, &plan)?;
    let tau = summary.max_slope;
    let map = MapOnNet { states: f.states.clone(), windows: g, tau };
    let scan = separation_scan(metric, &map, delta, opts.tol_match, Some(&plan));
    if let Some(v) = scan.violations.first() {
        return Err(PerturbError::Integrity(format!(
            "windows {} and {} match at shift {:e} (mismatch {:e})",
            v.i, v.j, v.eps, v.mismatch
        )));
    }
    Ok((Perturbed { map, plan, summary }, scan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowSystem;

    fn constant_map(n: usize, level: f64, a: f64, intervals: usize) -> (FlowSystem, MapOnNet) {
        let sys = FlowSystem::logistic();
        let states: Vec<State> = (0..n).map(|i| State::scalar(i as f64 / (n - 1) as f64)).collect();
        let windows = vec![WindowFn::constant(a, intervals, level).unwrap(); n];
        (sys, MapOnNet::new(states, windows, 0.0).unwrap())
    }

    #[test]
    fn single_point_single_ball() {
        let (sys, f) = constant_map(2, 0.5, 1.0, 100);
        let f = MapOnNet { states: f.states[..1].to_vec(), windows: f.windows[..1].to_vec(), tau: 0.0 };
        let cover = build_cover(&sys, &f, 0.1, 0.1, 1.0, 1e-12).unwrap();
        assert_eq!(cover.len(), 1);
        let w = partition_of_unity(&sys, &f.states[0], &cover).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn constant_map_cover_follows_state_cap() {
        let (sys, f) = constant_map(50, 0.5, 1.0, 100);
        let cover = build_cover(&sys, &f, 0.1, 1e-3, 2.0, 1e-12).unwrap();
        assert!(cover.max_state_diam < 0.1);
        assert_eq!(cover.max_image_diam, 0.0);
        for x in &f.states {
            let w = partition_of_unity(&sys, x, &cover).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (wm, ball) in w.iter().zip(&cover.balls) {
                if *wm > 0.0 {
                    assert!(sys.dist(x, &ball.center) < ball.radius);
                }
            }
        }
    }

    #[test]
    fn pl_evaluation_matches_grid() {
        let (sys, f) = constant_map(5, 0.5, 1.0, 200);
        let p = perturb_avoid_constants(&sys, &f, 0.1, &PerturbOptions::default()).unwrap();
        let nodes = p.plan.node_values(&sys, &f.states[2]).unwrap();
        let w = &p.map.windows[2];
        for (i, v) in w.values().iter().enumerate() {
            let t = i as f64 * w.step();
            assert!((p.plan.eval_pl(&nodes, 0.5, 0.5, t) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn avoid_constants_on_constant_input() {
        let (sys, f) = constant_map(40, 0.5, 1.0, 400);
        let p = perturb_avoid_constants(&sys, &f, 0.1, &PerturbOptions { seed: 3, ..Default::default() }).unwrap();
        assert!(p.summary.min_oscillation > 0.0);
        assert!(p.summary.max_sup_distance < 0.1);
        assert!(p.summary.endpoints_bitwise);
        assert!(p.summary.max_slope <= 1.0);
    }

    #[test]
    fn large_delta_stays_in_range() {
        let (sys, f) = constant_map(10, 0.95, 1.0, 400);
        let p = perturb_avoid_constants(&sys, &f, 3.0, &PerturbOptions::default()).unwrap();
        for w in &p.map.windows {
            assert!(w.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn separating_on_small_net() {
        let (sys, f) = constant_map(30, 0.5, 1.0, 400);
        let (p, scan) = perturb_separating(&sys, &f, 0.1, &PerturbOptions { seed: 11, ..Default::default() }).unwrap();
        assert!(scan.passed());
        assert!(scan.min_far_mismatch > DEFAULT_TOL_MATCH);
        assert!(scan.min_kink_residual > 1e-9);
        assert!(p.summary.max_sup_distance < 0.1);
        // x = y with ε = 0 is the trivial match
        let self_row = scan.rows.iter().find(|r| r.i == 4 && r.j == 4).unwrap();
        assert_eq!(self_row.mismatch, 0.0);
        assert_eq!(self_row.eps, 0.0);
    }

    #[test]
    fn preconditions() {
        let (sys, f) = constant_map(3, 0.5, 1.0, 100);
        let mut bad = f.clone();
        bad.tau = 1.0;
        assert!(perturb_avoid_constants(&sys, &bad, 0.1, &PerturbOptions::default()).is_err());
        assert!(perturb_avoid_constants(&sys, &f, 0.0, &PerturbOptions::default()).is_err());
        let coarse = constant_map(3, 0.5, 1.0, 4).1;
        assert!(matches!(
            perturb_separating(&sys, &coarse, 0.1, &PerturbOptions::default()),
            Err(PerturbError::Precondition(_))
        ));
    }
}
