//! Experiment runner: configuration, orchestration of the construction,
//! check reports, serialized artifacts and CSV export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::embed::{run_default, EmbedError, FinalChecks, MapSamples, PipelineOutcome, PipelineReport};
use crate::flow::FlowError;
use crate::genvec::{witness_e_du, witness_shifted, GenvecError, VecFamily};

mod config;
mod export;
mod report;

pub use config::{ExperimentConfig, FlowSpec, HPoint, NetSpec, SchedulePolicy, Setup, Tolerances};
pub use export::export;
pub use report::{CheckRecord, Relation, Report, ReportBody, Stamp, Status};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const SAMPLES_FILE: &str = "samples.json";
pub const PIPELINE_FILE: &str = "pipeline.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("corrupt artifact: {0}")]
    Artifact(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Genvec(#[from] GenvecError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// 2 for bad input (usage, configuration, artifacts), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Usage(_) | ExperimentError::Artifact(_) => 2,
            _ => 1,
        }
    }
}

const ANCHOR_STAGES: &str = "finite-stage construction";
const ANCHOR_LIPSCHITZ: &str = "one-Lipschitz target space L(R)";
const ANCHOR_EQUIVARIANCE: &str = "equivariance f(T_s x) = f(x)(. + s)";
const ANCHOR_FIXED: &str = "f restricted to Fix(X,T) equals h";
const ANCHOR_INJECTIVE: &str = "injectivity on pairs farther than 4 mesh";
const ANCHOR_CERTS: &str = "stage margins of the open dense sets";
const ANCHOR_CLOSE: &str = "pairs within 4 mesh (not certified)";
const ANCHOR_E_DU: &str = "independence of e, Du_1, ..., Du_m";
const ANCHOR_SHIFTED: &str = "independence of shifted restrictions";

/// Records for the checks that can be re-derived from map samples.
pub fn final_check_records(fc: &FinalChecks, tol: &Tolerances) -> Vec<CheckRecord> {
    let (li, lt) = fc.lipschitz_witness;
    let (ei, es, et) = fc.equivariance_witness;
    let mut out = vec![
        CheckRecord::judge(
            "grid_lipschitz",
            ANCHOR_LIPSCHITZ,
            fc.lipschitz,
            Relation::AtMost,
            1.0,
            Some(format!("point {li}, t = {lt}")),
        ),
        CheckRecord::judge(
            "equivariance",
            ANCHOR_EQUIVARIANCE,
            fc.equivariance_residual,
            Relation::AtMost,
            tol.equivariance,
            Some(format!("point {ei}, s = {es}, t = {et}")),
        ),
        CheckRecord::judge(
            "fixed_restriction",
            ANCHOR_FIXED,
            fc.fixed_residual,
            Relation::AtMost,
            tol.fixed,
            fc.fixed_witness.map(|i| format!("point {i}")),
        ),
        CheckRecord::judge(
            "injectivity_margin",
            ANCHOR_INJECTIVE,
            fc.injectivity_margin,
            Relation::Above,
            0.0,
            fc.injectivity_witness.map(|(i, j)| format!("pair ({i}, {j}) of {} far pairs", fc.far_pairs)),
        ),
    ];
    let (worst, at) = fc
        .certificate_margins
        .iter()
        .enumerate()
        .fold((f64::INFINITY, None), |acc, (i, &m)| if m < acc.0 || acc.1.is_none() { (m, Some(i)) } else { acc });
    out.push(CheckRecord::judge(
        "certificates_survive",
        ANCHOR_CERTS,
        worst,
        Relation::Above,
        0.0,
        at.map(|i| format!("certificate {i} of {}", fc.certificate_margins.len())),
    ));
    out.push(CheckRecord::info("close_pairs_margin", ANCHOR_CLOSE, fc.close_pairs_margin, None));
    out
}

fn echo(config: &ExperimentConfig) -> serde_json::Value {
    let mut c = config.clone();
    c.output_dir = None;
    serde_json::to_value(c).expect("config serializes")
}

pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub report: Report,
    /// `None` when the construction failed before producing a map.
    pub pipeline: Option<PipelineOutcome>,
}

/// Runs the default schedule for `config`. Errors inside the construction
/// become failed report lines; only configuration problems are returned.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = Instant::now();
    let setup = config.setup()?;
    let result = run_default(&setup.sys, &setup.h, &setup.net, &setup.fixed, &setup.options);
    let mut checks = Vec::new();
    let pipeline = match result {
        Ok(out) => {
            let r = &out.report;
            checks.push(CheckRecord::judge(
                "stages_completed",
                ANCHOR_STAGES,
                r.stages.len() as f64,
                Relation::Equal,
                r.scheduled as f64,
                r.aborted.clone(),
            ));
            if let Some(fc) = &r.final_checks {
                checks.extend(final_check_records(fc, &config.tolerances));
            }
            Some(out)
        }
        Err(e) => {
            checks.push(CheckRecord::judge("construction", ANCHOR_STAGES, 0.0, Relation::Above, 0.0, Some(e.to_string())));
            None
        }
    };
    let body = ReportBody { command: "run".into(), seed: Some(config.seed), inputs: echo(config), checks };
    let report = Report { body, stamp: Stamp::now(started.elapsed().as_secs_f64()) };
    Ok(RunOutcome { config: config.clone(), report, pipeline })
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), ExperimentError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let res = if pretty { serde_json::to_writer_pretty(file, value) } else { serde_json::to_writer(file, value) };
    res.map_err(|e| ExperimentError::Io(e.into()))
}

impl RunOutcome {
    /// Writes the config echo, reports, map samples and stage log to `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, text: &str| -> Result<(), ExperimentError> {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        let mut cfg = self.config.clone();
        cfg.output_dir = None;
        put(CONFIG_FILE, &cfg.to_json())?;
        put(REPORT_FILE, &self.report.to_json())?;
        put(REPORT_TEXT_FILE, &self.report.to_text())?;
        if let Some(out) = &self.pipeline {
            write_json(&dir.join(SAMPLES_FILE), &out.samples, false)?;
            written.push(dir.join(SAMPLES_FILE));
            write_json(&dir.join(PIPELINE_FILE), &out.report, true)?;
            written.push(dir.join(PIPELINE_FILE));
        }
        Ok(written)
    }
}

/// Map samples from a run directory (or a samples file).
pub fn load_samples(path: &Path) -> Result<MapSamples, ExperimentError> {
    let file = if path.is_dir() { path.join(SAMPLES_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(ExperimentError::Usage(format!("no map artifact at {}", file.display())));
    }
    let text = std::fs::read_to_string(&file)?;
    let samples: MapSamples =
        serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact(format!("{}: {e}", file.display())))?;
    samples.validate().map_err(|e| ExperimentError::Artifact(e.to_string()))?;
    Ok(samples)
}

pub fn load_pipeline_report(dir: &Path) -> Result<Option<PipelineReport>, ExperimentError> {
    let file = dir.join(PIPELINE_FILE);
    if !file.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&file)?;
    serde_json::from_str(&text).map(Some).map_err(|e| ExperimentError::Artifact(format!("{}: {e}", file.display())))
}

/// Re-derives every final check from serialized samples, without the map.
pub fn verify(samples: &MapSamples, config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let started = Instant::now();
    config.validate()?;
    let sys = config.flow_system()?;
    if let Some(p) = samples.points.iter().find(|p| p.dim() != sys.dim()) {
        return Err(ExperimentError::Artifact(format!("state {p:?} does not belong to flow `{}`", config.flow.name)));
    }
    if samples.n_max != config.tolerances.n_max {
        return Err(ExperimentError::Config(format!(
            "artifact uses n_max = {}, configuration says {}",
            samples.n_max, config.tolerances.n_max
        )));
    }
    let fc = samples.checks(&sys).map_err(|e| ExperimentError::Artifact(e.to_string()))?;
    let body = ReportBody {
        command: "verify".into(),
        seed: Some(config.seed),
        inputs: echo(config),
        checks: final_check_records(&fc, &config.tolerances),
    };
    Ok(Report { body, stamp: Stamp::now(started.elapsed().as_secs_f64()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WitnessRequest {
    EDu { l: usize, m: usize },
    /// Every admissible `α` when `alpha` is `None`.
    Shifted { n: usize, l: usize, m: usize, alpha: Option<usize> },
}

/// Explicit witness families with their exact rank certificates.
pub fn witness(req: WitnessRequest) -> Result<(Report, Vec<VecFamily>), ExperimentError> {
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut families = Vec::new();
    match req {
        WitnessRequest::EDu { l, m } => {
            let fam = witness_e_du(l, m)?;
            let c = &fam.certificates[0];
            checks.push(exact_rank_record(&format!("e_du l={l} m={m}"), ANCHOR_E_DU, c.rank, c.exact, m + 1, c.rows));
            families.push(fam);
        }
        WitnessRequest::Shifted { n, l, m, alpha } => {
            if !(n > l) {
                return Err(GenvecError::Precondition(format!("need n > l, got n={n}, l={l}")).into());
            }
            let alphas: Vec<usize> = match alpha {
                Some(a) => vec![a],
                None => (2..=n - l + 1).collect(),
            };
            for a in alphas {
                let fam = witness_shifted(n, l, m, a)?;
                let c = &fam.certificates[0];
                let name = format!("shifted n={n} l={l} m={m} alpha={a}");
                checks.push(exact_rank_record(&name, ANCHOR_SHIFTED, c.rank, c.exact, 2 * m, c.rows));
                families.push(fam);
            }
        }
    }
    let body = ReportBody {
        command: "witness".into(),
        seed: None,
        inputs: serde_json::to_value(req).expect("request serializes"),
        checks,
    };
    Ok((Report { body, stamp: Stamp::now(started.elapsed().as_secs_f64()) }, families))
}

fn exact_rank_record(name: &str, anchor: &str, rank: usize, exact: bool, want: usize, rows: usize) -> CheckRecord {
    let mut rec = CheckRecord::judge(
        name,
        anchor,
        rank as f64,
        Relation::Equal,
        want as f64,
        Some(format!("{rows} rows, {} elimination", if exact { "integer" } else { "floating-point" })),
    );
    if !exact {
        rec.status = Status::Fail;
    }
    rec
}
