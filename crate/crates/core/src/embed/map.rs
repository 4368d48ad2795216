//! Layered equivariant maps `X → L(ℝ)`.
//!
//! A map is a Bebutov base followed by a stack of layers, each either a
//! convex mix with a second Bebutov map or a window patch glued along the
//! hitting times of one or two local sections. Evaluation follows the orbit,
//! so `eval(x, t + s) = eval(T_s x, t)` holds by construction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::kernel::{BaseEval, BaseSpec, KernelShape, KernelSpec};
use super::EmbedError;
use crate::flow::{Extension, FixedProfile, FlowSystem, Orbit, State};
use crate::funcspace::{LineFn, WindowFn};
use crate::perturb::PerturbationPlan;
use crate::section::{hits_on_orbit, LocalSection};

/// Evaluation budget: times must satisfy `|t| ≤ t_budget + hit_pad`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub t_budget: f64,
    /// Extra margin of the hit scan beyond `t_budget`; must exceed every window length.
    pub hit_pad: f64,
    /// Orbits kept in memory per map family.
    pub cache_orbits: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { t_budget: 32.0, hit_pad: 4.0, cache_orbits: 40 }
    }
}

impl EvalConfig {
    pub fn reach(&self) -> f64 {
        self.t_budget + self.hit_pad
    }
}

struct OrbitCtx {
    orbit: Orbit,
    base: BaseEval,
    aux: OnceLock<BaseEval>,
}

/// Orbit samples and kernel prefix sums shared by every map derived from
/// one Bebutov root.
pub struct EvalCache {
    orbits: Mutex<HashMap<[u64; 2], Arc<OrbitCtx>>>,
    aux: OnceLock<Arc<BaseSpec>>,
}

impl EvalCache {
    fn new() -> Self {
        Self { orbits: Mutex::new(HashMap::new()), aux: OnceLock::new() }
    }
}

/// A hit with `q > 0` and its patched node values.
#[derive(Debug, Clone)]
pub struct PatchHit {
    pub time: f64,
    pub state: State,
    pub section: usize,
    pub q: f64,
    pub nodes: Vec<f64>,
}

/// Window perturbation glued along hitting times: a hit at `s` patches
/// `[s + offset, s + offset + a]`.
pub struct Patch {
    pub sections: Vec<LocalSection>,
    pub plan: PerturbationPlan,
    pub offset: f64,
    hits: Mutex<HashMap<[u64; 2], Arc<Vec<PatchHit>>>>,
}

impl Patch {
    pub fn new(sections: Vec<LocalSection>, plan: PerturbationPlan, offset: f64) -> Self {
        Self { sections, plan, offset, hits: Mutex::new(HashMap::new()) }
    }

    pub fn a(&self) -> f64 {
        self.plan.a
    }
}

pub enum Layer {
    /// `(1 − δ)·parent + δ·f₀`.
    Mix { delta: f64 },
    Patch(Patch),
}

/// An equivariant map built from immutable, shared layers.
#[derive(Clone)]
pub struct EquivariantMap {
    pub sys: Arc<FlowSystem>,
    pub base: Arc<BaseSpec>,
    pub aux: Option<Arc<BaseSpec>>,
    layers: Vec<Arc<Layer>>,
    pub config: EvalConfig,
    /// Certified Lipschitz bound in `t`.
    pub lip_bound: f64,
    cache: Arc<EvalCache>,
}

impl std::fmt::Debug for EquivariantMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquivariantMap")
            .field("flow", &self.sys.name())
            .field("kernel", &self.base.kernel)
            .field("layers", &self.layers.len())
            .field("lip_bound", &self.lip_bound)
            .finish()
    }
}

/// The smoothed Bebutov map `x ↦ (t ↦ ∫ φ(t − s) h₀(T_s x) ds)` with kernel
/// width `4/min(1, δ)`.
pub fn bebutov(sys: &FlowSystem, h: &FixedProfile, delta: f64, shape: KernelShape) -> Result<EquivariantMap, EmbedError> {
    bebutov_with(sys, h, delta, shape, EvalConfig::default())
}

pub fn bebutov_with(
    sys: &FlowSystem,
    h: &FixedProfile,
    delta: f64,
    shape: KernelShape,
    config: EvalConfig,
) -> Result<EquivariantMap, EmbedError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(EmbedError::Precondition(format!("δ must be positive, got {delta}")));
    }
    sys.validate()?;
    let checked = FixedProfile::new(h.pairs.clone())?;
    let base = BaseSpec { kernel: KernelSpec::for_lipschitz(shape, delta), extension: Extension::new(checked, sys) };
    let lip_bound = base.kernel.lipschitz_bound();
    Ok(EquivariantMap {
        sys: Arc::new(sys.clone()),
        base: Arc::new(base),
        aux: None,
        layers: Vec::new(),
        config,
        lip_bound,
        cache: Arc::new(EvalCache::new()),
    })
}

/// `f₁ = (1 − δ)·f + δ·f₀`, where `f₀` is a Bebutov layer with slope at most 1/2.
pub fn mix(f: &EquivariantMap, f0: &BaseSpec, delta: f64) -> Result<EquivariantMap, EmbedError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(EmbedError::Precondition(format!("mixing weight {delta} outside [0,1]")));
    }
    if f0.kernel.lipschitz_bound() > 0.5 {
        return Err(EmbedError::Precondition(format!(
            "auxiliary map has slope bound {} > 1/2",
            f0.kernel.lipschitz_bound()
        )));
    }
    if f.lip_bound > 1.0 + 1e-12 {
        return Err(EmbedError::Precondition(format!("input slope bound {} exceeds 1", f.lip_bound)));
    }
    if delta == 0.0 {
        return Ok(f.clone());
    }
    let mut out = f.clone();
    let f0 = match &f.aux {
        Some(existing) if same_spec(existing, f0) => existing.clone(),
        Some(_) => return Err(EmbedError::Precondition("map already mixes a different auxiliary layer".into())),
        None => {
            let candidate = Arc::new(f0.clone());
            let stored = f.cache.aux.get_or_init(|| candidate.clone());
            if !same_spec(stored, f0) {
                // A sibling map claimed the cache for another auxiliary layer.
                out.cache = Arc::new(EvalCache::new());
                let _ = out.cache.aux.set(candidate.clone());
                candidate
            } else {
                stored.clone()
            }
        }
    };
    out.aux = Some(f0.clone());
    out.layers.push(Arc::new(Layer::Mix { delta }));
    out.lip_bound = (1.0 - delta) * f.lip_bound + delta * f0.kernel.lipschitz_bound();
    Ok(out)
}

fn same_spec(a: &BaseSpec, b: &BaseSpec) -> bool {
    a.kernel == b.kernel
        && a.extension.lipschitz == b.extension.lipschitz
        && a.extension.profile.pairs.len() == b.extension.profile.pairs.len()
        && a.extension.profile.pairs.iter().zip(&b.extension.profile.pairs).all(|(x, y)| x.0 == y.0 && x.1 == y.1)
}

/// Glues the plan's windows along hits of `sections`. Every section must use
/// the plan's window length, and `a` must fit inside the hit padding.
pub fn glue(f1: &EquivariantMap, sections: Vec<LocalSection>, plan: PerturbationPlan) -> Result<EquivariantMap, EmbedError> {
    glue_offset(f1, sections, plan, 0.0)
}

/// [`glue`] with every window moved by `offset` along the orbit.
pub fn glue_offset(
    f1: &EquivariantMap,
    sections: Vec<LocalSection>,
    plan: PerturbationPlan,
    offset: f64,
) -> Result<EquivariantMap, EmbedError> {
    if sections.is_empty() {
        return Err(EmbedError::Precondition("glue needs at least one section".into()));
    }
    for sec in &sections {
        if (sec.a - plan.a).abs() > 1e-12 * plan.a {
            return Err(EmbedError::Precondition(format!("section a = {} differs from window a = {}", sec.a, plan.a)));
        }
        if !(sec.q.r2 > 0.0 && sec.q.r1 < sec.q.r2) {
            return Err(EmbedError::Precondition("window bump radii must satisfy 0 ≤ r1 < r2".into()));
        }
    }
    if !(plan.a + offset.abs() < f1.config.hit_pad) {
        return Err(EmbedError::Precondition(format!(
            "window [{offset}, {offset} + {}] exceeds the hit padding",
            plan.a
        )));
    }
    let mut out = f1.clone();
    out.layers.push(Arc::new(Layer::Patch(Patch::new(sections, plan, offset))));
    out.lip_bound = f1.lip_bound.max(1.0);
    Ok(out)
}

impl EquivariantMap {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Arc<Layer>] {
        &self.layers
    }

    /// Longest window glued so far.
    pub fn max_window(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| match l.as_ref() {
                Layer::Patch(p) => Some(p.a()),
                Layer::Mix { .. } => None,
            })
            .fold(0.0, f64::max)
    }

    /// Second Bebutov layer with slope bound 1/2, sharing `h₀` with the base.
    pub fn default_aux(&self) -> BaseSpec {
        match &self.aux {
            Some(a) => (**a).clone(),
            None => BaseSpec {
                kernel: KernelSpec::for_lipschitz(self.base.kernel.shape, 0.5),
                extension: self.base.extension.clone(),
            },
        }
    }

    fn orbit_range(&self) -> f64 {
        let hw = self.base.kernel.half_width().max(self.aux.as_ref().map_or(0.0, |a| a.kernel.half_width()));
        // Auxiliary kernels are bounded by width 8 (slope bound 1/2).
        self.config.reach() + self.config.hit_pad + hw.max(4.0) + 1.0
    }

    fn ctx(&self, x: &State) -> Result<Arc<OrbitCtx>, EmbedError> {
        let key = x.key();
        if let Some(c) = self.cache.orbits.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let r = self.orbit_range();
        let orbit = Orbit::compute(&self.sys, x, -r, r)?;
        let base = BaseEval::new(&self.sys, &self.base, &orbit);
        let ctx = Arc::new(OrbitCtx { orbit, base, aux: OnceLock::new() });
        let mut guard = self.cache.orbits.lock().expect("cache lock");
        if guard.len() >= self.config.cache_orbits {
            guard.clear();
        }
        Ok(guard.entry(key).or_insert(ctx).clone())
    }

    fn patch_hits(&self, patch: &Patch, ctx: &OrbitCtx, x: &State) -> Result<Arc<Vec<PatchHit>>, EmbedError> {
        let key = x.key();
        if let Some(h) = patch.hits.lock().expect("hit lock").get(&key) {
            return Ok(h.clone());
        }
        let reach = self.config.reach();
        let secs: Vec<&LocalSection> = patch.sections.iter().collect();
        let off = patch.offset.abs();
        let list = hits_on_orbit(&self.sys, &secs, &ctx.orbit, -reach - patch.a() - off, reach + off)?;
        let mut out = Vec::with_capacity(list.hits.len());
        for hit in list.hits {
            let q = patch.sections[hit.section].q_at(&self.sys, &hit.state);
            if q > 0.0 {
                let nodes = patch.plan.node_values(self.sys.as_ref(), &hit.state)?;
                out.push(PatchHit { time: hit.time, state: hit.state, section: hit.section, q, nodes });
            }
        }
        let out = Arc::new(out);
        patch.hits.lock().expect("hit lock").insert(key, out.clone());
        Ok(out)
    }

    /// Hits with `q > 0` of the topmost patch layer, for certificates.
    pub fn top_patch_hits(&self, x: &State) -> Result<Vec<PatchHit>, EmbedError> {
        match self.layers.len() {
            0 => Ok(Vec::new()),
            n => self.layer_hits(n - 1, x),
        }
    }

    /// Hits with `q > 0` of layer `index` (empty for mix layers).
    pub fn layer_hits(&self, index: usize, x: &State) -> Result<Vec<PatchHit>, EmbedError> {
        let Layer::Patch(p) = self.layers[index].as_ref() else {
            return Ok(Vec::new());
        };
        let ctx = self.ctx(x)?;
        Ok(self.patch_hits(p, &ctx, x)?.as_ref().clone())
    }

    /// Time spans `[s + offset, s + offset + a]` of `x`'s orbit already
    /// modified by some patch layer.
    pub fn patched_spans(&self, x: &State) -> Result<Vec<(f64, f64)>, EmbedError> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Patch(p) = layer.as_ref() {
                for h in self.layer_hits(i, x)? {
                    let lo = h.time + p.offset;
                    out.push((lo, lo + p.a()));
                }
            }
        }
        Ok(out)
    }

    /// `f(x)(t)` at every requested time.
    pub fn eval(&self, x: &State, times: &[f64]) -> Result<Vec<f64>, EmbedError> {
        let reach = self.config.reach();
        if let Some(t) = times.iter().find(|t| !(t.abs() <= reach)) {
            return Err(EmbedError::WindowBudget { t: *t, budget: reach });
        }
        let ctx = self.ctx(x)?;
        self.eval_depth(&ctx, x, self.layers.len(), times)
    }

    pub fn eval_at(&self, x: &State, t: f64) -> Result<f64, EmbedError> {
        Ok(self.eval(x, &[t])?[0])
    }

    fn eval_depth(&self, ctx: &OrbitCtx, x: &State, depth: usize, times: &[f64]) -> Result<Vec<f64>, EmbedError> {
        if depth == 0 {
            return times
                .iter()
                .map(|&t| ctx.base.eval(t).ok_or(EmbedError::WindowBudget { t, budget: self.config.reach() }))
                .collect();
        }
        match self.layers[depth - 1].as_ref() {
            Layer::Mix { delta } => {
                let parent = self.eval_depth(ctx, x, depth - 1, times)?;
                let aux_spec = self.aux.as_ref().expect("mix layers carry an auxiliary spec");
                let aux = ctx.aux.get_or_init(|| BaseEval::new(&self.sys, aux_spec, &ctx.orbit));
                times
                    .iter()
                    .zip(parent)
                    .map(|(&t, v)| {
                        let w = aux.eval(t).ok_or(EmbedError::WindowBudget { t, budget: self.config.reach() })?;
                        Ok((1.0 - delta) * v + delta * w)
                    })
                    .collect()
            }
            Layer::Patch(patch) => {
                let hits = self.patch_hits(patch, ctx, x)?;
                let (a, off) = (patch.a(), patch.offset);
                // Index of the hit whose window contains t; gaps exceed a so it is unique.
                let owner: Vec<Option<usize>> = times
                    .iter()
                    .map(|&t| {
                        let k = hits.partition_point(|h| h.time + off <= t);
                        (k > 0 && t <= hits[k - 1].time + off + a).then(|| k - 1)
                    })
                    .collect();
                let mut used: Vec<usize> = owner.iter().flatten().copied().collect();
                used.sort_unstable();
                used.dedup();
                if used.is_empty() {
                    return self.eval_depth(ctx, x, depth - 1, times);
                }
                let mut req = times.to_vec();
                for &k in &used {
                    req.push(hits[k].time + off);
                    req.push(hits[k].time + off + a);
                }
                let parent = self.eval_depth(ctx, x, depth - 1, &req)?;
                let n = times.len();
                let mut out = parent[..n].to_vec();
                for (i, o) in owner.iter().enumerate() {
                    if let Some(k) = o {
                        let j = used.binary_search(k).expect("used hit");
                        let (left, right) = (parent[n + 2 * j], parent[n + 2 * j + 1]);
                        let h = &hits[*k];
                        let pl = patch.plan.eval_pl(&h.nodes, left, right, times[i] - h.time - off);
                        out[i] = (1.0 - h.q) * out[i] + h.q * pl;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Whether `self` is `prev` with further layers stacked on top.
    pub fn extends(&self, prev: &EquivariantMap) -> bool {
        Arc::ptr_eq(&self.base, &prev.base)
            && Arc::ptr_eq(&self.sys, &prev.sys)
            && self.config == prev.config
            && prev.layers.len() <= self.layers.len()
            && prev.layers.iter().zip(&self.layers).all(|(a, b)| Arc::ptr_eq(a, b))
    }

    /// Lifts values of the depth-`from` truncation at `times` to the full
    /// map. Matches [`eval`](Self::eval) bit for bit.
    pub fn lift(&self, x: &State, from: usize, times: &[f64], values: &[f64]) -> Result<Vec<f64>, EmbedError> {
        assert_eq!(times.len(), values.len(), "lift: length mismatch");
        let reach = self.config.reach();
        if let Some(t) = times.iter().find(|t| !(t.abs() <= reach)) {
            return Err(EmbedError::WindowBudget { t: *t, budget: reach });
        }
        let ctx = self.ctx(x)?;
        let mut vals = values.to_vec();
        for depth in from + 1..=self.layers.len() {
            match self.layers[depth - 1].as_ref() {
                Layer::Mix { delta } => {
                    let aux_spec = self.aux.as_ref().expect("mix layers carry an auxiliary spec");
                    let aux = ctx.aux.get_or_init(|| BaseEval::new(&self.sys, aux_spec, &ctx.orbit));
                    for (v, &t) in vals.iter_mut().zip(times) {
                        let w = aux.eval(t).ok_or(EmbedError::WindowBudget { t, budget: reach })?;
                        *v = (1.0 - delta) * *v + delta * w;
                    }
                }
                Layer::Patch(patch) => {
                    let hits = self.patch_hits(patch, &ctx, x)?;
                    let (a, off) = (patch.a(), patch.offset);
                    let mut ends = Vec::new();
                    let mut owners = Vec::new();
                    for (i, &t) in times.iter().enumerate() {
                        let k = hits.partition_point(|h| h.time + off <= t);
                        if k > 0 && t <= hits[k - 1].time + off + a {
                            owners.push((i, k - 1));
                        }
                    }
                    let mut used: Vec<usize> = owners.iter().map(|o| o.1).collect();
                    used.dedup();
                    if used.is_empty() {
                        continue;
                    }
                    for &k in &used {
                        ends.push(hits[k].time + off);
                        ends.push(hits[k].time + off + a);
                    }
                    let parent = self.eval_depth(&ctx, x, depth - 1, &ends)?;
                    for (i, k) in owners {
                        let j = used.binary_search(&k).expect("used hit");
                        let h = &hits[k];
                        let pl = patch.plan.eval_pl(&h.nodes, parent[2 * j], parent[2 * j + 1], times[i] - h.time - off);
                        vals[i] = (1.0 - h.q) * vals[i] + h.q * pl;
                    }
                }
            }
        }
        Ok(vals)
    }

    /// `f(x)` on `[−T, T]` at `step`, without re-validation.
    pub fn line(&self, x: &State, half_width: f64, step: f64) -> Result<LineFn, EmbedError> {
        let n = (2.0 * half_width / step).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| -half_width + i as f64 * step).collect();
        Ok(LineFn::new_unchecked(half_width, step, self.eval(x, &times)?))
    }

    /// `t ↦ f(x)(t0 + t)` on `[0, a]`, validated as a one-Lipschitz window.
    pub fn window(&self, x: &State, t0: f64, a: f64, intervals: usize) -> Result<WindowFn, EmbedError> {
        let step = a / intervals as f64;
        let times: Vec<f64> = (0..=intervals).map(|i| t0 + i as f64 * step).collect();
        Ok(WindowFn::new(a, step, self.eval(x, &times)?)?)
    }

    /// Same as [`window`](Self::window) without the slope check.
    pub fn window_values(&self, x: &State, t0: f64, a: f64, intervals: usize) -> Result<Vec<f64>, EmbedError> {
        let step = a / intervals as f64;
        let times: Vec<f64> = (0..=intervals).map(|i| t0 + i as f64 * step).collect();
        self.eval(x, &times)
    }
}
