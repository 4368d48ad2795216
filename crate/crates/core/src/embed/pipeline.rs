//! Finite-stage assembly: a schedule of avoid-fixed and separation stages
//! over a net, with every earlier certificate re-verified after each stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{densify_avoid_fixed, densify_separate_from, DensityCert, DensityOptions, LineBook};
use super::kernel::KernelShape;
use super::map::{bebutov_with, EquivariantMap, EvalConfig, Layer};
use super::samples::{sample_map, FinalChecks, MapSamples};
use super::EmbedError;
use crate::flow::{FixedProfile, FixedSet, FlowSystem, Metric, SampleNet};
use crate::funcspace::{cr_dist, lip_constant, GridFn, LineFn};

const STAGE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub delta0: f64,
    pub seed: u64,
    pub kernel: KernelShape,
    /// `δ` of the initial Bebutov map (slope bound `min(1, δ)/2`).
    pub base_delta: f64,
    pub density: DensityOptions,
    /// `δ_k ≤ (smallest live margin) / margin_divisor`.
    pub margin_divisor: f64,
    pub max_retries: usize,
    /// Abort once `δ_k` drops below this.
    pub min_delta: f64,
    pub eval: EvalConfig,
    pub equivariance_shifts: Vec<f64>,
    pub probe_half_width: f64,
    pub probe_step: f64,
    /// Optional cap on the number of scheduled stages.
    pub max_stages: Option<usize>,
    /// Spacing of the candidate window offsets `0, ±w, ±2w, …`; a stage
    /// patches the first one clear of earlier patches on its orbits.
    pub offset_step: f64,
    pub max_offset: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            delta0: 0.1,
            seed: 0,
            kernel: KernelShape::Triangular,
            base_delta: 1.0,
            density: DensityOptions::default(),
            margin_divisor: 8.0,
            max_retries: 5,
            min_delta: 1e-12,
            eval: EvalConfig::default(),
            equivariance_shifts: vec![-1.3, 0.7, 2.1],
            probe_half_width: 5.0,
            probe_step: 0.05,
            max_stages: None,
            offset_step: 0.04,
            max_offset: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageKind {
    AvoidFixed { p: usize },
    Separate { p: usize, q: usize },
}

/// A-points: net points with `d(x, F) > 2·mesh`; then pairs of non-fixed
/// net points with `d > 4·mesh`.
pub fn schedule(sys: &FlowSystem, net: &SampleNet, fixed: &FixedSet) -> Vec<StageKind> {
    let mesh = net.mesh;
    let moving: Vec<usize> = (0..net.len()).filter(|&i| !fixed.contains(sys, &net.points[i])).collect();
    let mut out: Vec<StageKind> = moving
        .iter()
        .filter(|&&i| fixed.dist_to(sys, &net.points[i]) > 2.0 * mesh * (1.0 + 1e-9))
        .map(|&p| StageKind::AvoidFixed { p })
        .collect();
    for (k, &i) in moving.iter().enumerate() {
        for &j in &moving[k + 1..] {
            if sys.dist(&net.points[i], &net.points[j]) > 4.0 * mesh * (1.0 + 1e-9) {
                out.push(StageKind::Separate { p: i, q: j });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub kind: StageKind,
    pub seed: u64,
    pub delta: f64,
    pub attempts: usize,
    pub margin: f64,
    pub window: f64,
    pub offset: f64,
    /// Sup-distance to the previous map over the net lines.
    pub damage: f64,
    pub lipschitz: f64,
    /// Smallest re-verified margin of all certificates after this stage.
    pub min_live_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub flow: String,
    pub mesh: f64,
    pub net_size: usize,
    pub fixed: Vec<usize>,
    pub delta0: f64,
    pub seed: u64,
    pub n_max: usize,
    pub line_step: f64,
    pub scheduled: usize,
    pub stages: Vec<StageRecord>,
    pub certificates: Vec<DensityCert>,
    pub final_checks: Option<FinalChecks>,
    /// `None` when every scheduled stage ran.
    pub aborted: Option<String>,
}

pub struct PipelineOutcome {
    pub map: EquivariantMap,
    pub report: PipelineReport,
    /// Final net lines, in net order.
    pub lines: Vec<LineFn>,
    /// Pairwise `cr_dist` of the final net lines.
    pub pairwise: Vec<Vec<f64>>,
    pub samples: MapSamples,
}

fn net_lines(book: &LineBook, net: &SampleNet) -> Result<Vec<LineFn>, EmbedError> {
    let lines: Vec<_> = net.points.par_iter().map(|x| book.get(x)).collect::<Result<_, _>>()?;
    Ok(lines.into_iter().map(|l| (*l).clone()).collect())
}

fn sup_diff(a: &LineFn, b: &LineFn) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct StageResult {
    map: EquivariantMap,
    cert: DensityCert,
    book: LineBook,
    lines: Vec<LineFn>,
    margins: Vec<f64>,
    damage: f64,
    lipschitz: f64,
    window: f64,
    offset: f64,
}

/// Runs the schedule from the Bebutov map of `h`.
pub fn pipeline(
    sys: &FlowSystem,
    h: &FixedProfile,
    net: &SampleNet,
    fixed: &FixedSet,
    targets: &[StageKind],
    opts: &PipelineOptions,
) -> Result<PipelineOutcome, EmbedError> {
    if !h.is_injective() {
        return Err(EmbedError::Precondition("h is not injective on F".into()));
    }
    if !(opts.delta0 > 0.0 && opts.delta0 < 1.0) {
        return Err(EmbedError::Precondition(format!("δ₀ must lie in (0, 1), got {}", opts.delta0)));
    }
    let n_max = opts.density.n_max;
    if n_max as f64 > opts.eval.t_budget {
        return Err(EmbedError::Precondition(format!("n_max = {n_max} exceeds the evaluation budget")));
    }
    let targets: Vec<StageKind> = match opts.max_stages {
        Some(m) => targets.iter().take(m).copied().collect(),
        None => targets.to_vec(),
    };
    let step = opts.density.line_step;
    let mut map = bebutov_with(sys, h, opts.base_delta, opts.kernel, opts.eval)?;
    let mut book = LineBook::new(map.clone(), n_max, step);
    let mut lines = net_lines(&book, net)?;
    let mut certs: Vec<DensityCert> = Vec::new();
    let mut margins: Vec<f64> = Vec::new();
    let mut records = Vec::new();
    let mut aborted = None;

    'stages: for (k, stage) in targets.iter().enumerate() {
        let live = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let mut delta = opts.delta0.min(live / opts.margin_divisor);
        let stage_seed = opts.seed.wrapping_add((k as u64 + 1).wrapping_mul(STAGE_SEED_STRIDE));
        let mut last_err = String::new();
        for attempt in 0..=opts.max_retries {
            if !(delta >= opts.min_delta) {
                aborted = Some(format!("margin collapse at stage {k}: δ = {delta:e} (last error: {last_err})"));
                break 'stages;
            }
            let seed = stage_seed.wrapping_add(attempt as u64);
            match run_stage(&map, &book, &lines, &certs, net, fixed, stage, delta, seed, opts) {
                Ok(res) => {
                    let mut cert = res.cert;
                    cert.stage = k;
                    records.push(StageRecord {
                        index: k,
                        kind: *stage,
                        seed,
                        delta,
                        attempts: attempt + 1,
                        margin: cert.margin,
                        window: res.window,
                        offset: res.offset,
                        damage: res.damage,
                        lipschitz: res.lipschitz,
                        min_live_margin: res.margins.iter().copied().fold(cert.margin, f64::min),
                    });
                    margins = res.margins;
                    margins.push(cert.margin);
                    certs.push(cert);
                    map = res.map;
                    book = res.book;
                    lines = res.lines;
                    continue 'stages;
                }
                Err(e) => {
                    last_err = e.to_string();
                    delta /= 2.0;
                }
            }
        }
        aborted = Some(format!("stage {k} failed after {} attempts: {last_err}", opts.max_retries + 1));
        break;
    }

    let samples = sample_map(
        &map,
        &book,
        &certs,
        net,
        fixed,
        &opts.equivariance_shifts,
        opts.probe_half_width,
        opts.probe_step,
    )?;
    let final_checks = samples.checks(sys)?;
    let pairwise = pairwise(&lines, n_max)?;
    let report = PipelineReport {
        flow: sys.name().to_string(),
        mesh: net.mesh,
        net_size: net.len(),
        fixed: (0..net.len()).filter(|&i| fixed.contains(sys, &net.points[i])).collect(),
        delta0: opts.delta0,
        seed: opts.seed,
        n_max,
        line_step: step,
        scheduled: targets.len(),
        stages: records,
        certificates: certs,
        final_checks: Some(final_checks),
        aborted,
    };
    Ok(PipelineOutcome { map, report, lines, pairwise, samples })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    map: &EquivariantMap,
    book: &LineBook,
    lines: &[LineFn],
    certs: &[DensityCert],
    net: &SampleNet,
    fixed: &FixedSet,
    stage: &StageKind,
    delta: f64,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<StageResult, EmbedError> {
    let dopts = DensityOptions { seed, offset_candidates: offset_candidates(opts), ..opts.density.clone() };
    let (next, cert, window, next_book) = match *stage {
        StageKind::AvoidFixed { p } => {
            let out = densify_avoid_fixed(map, fixed, net, &net.points[p], delta, &dopts)?;
            let a = out.section.a;
            let next_book = LineBook::extending(out.map.clone(), book);
            (out.map, out.cert, a, next_book)
        }
        StageKind::Separate { p, q } => {
            let out =
                densify_separate_from(map, Some(book), fixed, net, &net.points[p], &net.points[q], delta, &dopts)?;
            let a = out.sections[0].a;
            (out.map, out.cert, a, out.book)
        }
    };
    let next_lines = net_lines(&next_book, net)?;
    let damage = lines.iter().zip(&next_lines).map(|(u, v)| sup_diff(u, v)).fold(0.0, f64::max);
    if damage > 3.0 * delta * (1.0 + 1e-9) {
        return Err(EmbedError::Integrity(format!("stage moved the net images by {damage:e} > 3δ")));
    }
    let lipschitz = next_lines.iter().map(lip_constant).fold(0.0, f64::max);
    if lipschitz > 1.0 + 1e-12 {
        return Err(EmbedError::Integrity(format!("grid slope {lipschitz} exceeds 1")));
    }
    let mut margins = Vec::with_capacity(certs.len());
    for (j, c) in certs.iter().enumerate() {
        let (m, _) = c.reverify(&next, Some(&next_book))?;
        if !(m > 0.0) {
            return Err(EmbedError::ZeroMargin(format!("certificate {j} lost its margin")));
        }
        margins.push(m);
    }
    let offset = match next.layers().last().map(|l| l.as_ref()) {
        Some(Layer::Patch(p)) => p.offset,
        _ => 0.0,
    };
    Ok(StageResult { map: next, cert, book: next_book, lines: next_lines, margins, damage, lipschitz, window, offset })
}

fn offset_candidates(opts: &PipelineOptions) -> Vec<f64> {
    let n = if opts.offset_step > 0.0 { (opts.max_offset / opts.offset_step).floor() as usize } else { 0 };
    (1..=n).flat_map(|k| [k as f64 * opts.offset_step, -(k as f64) * opts.offset_step]).collect()
}

fn pairwise(lines: &[LineFn], n_max: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let n = lines.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { Ok(0.0) } else { cr_dist(&lines[i], &lines[j], n_max) }).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    Ok(rows)
}

/// Runs the default schedule for `net`.
pub fn run_default(
    sys: &FlowSystem,
    h: &FixedProfile,
    net: &SampleNet,
    fixed: &FixedSet,
    opts: &PipelineOptions,
) -> Result<PipelineOutcome, EmbedError> {
    let targets = schedule(sys, net, fixed);
    pipeline(sys, h, net, fixed, &targets, opts)
}
