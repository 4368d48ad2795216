use std::path::{Path, PathBuf};

use super::{load_pipeline_report, load_samples, ExperimentError};
use crate::embed::StageKind;
use crate::funcspace::cr_dist;

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Writes plot-ready CSV files for the run in `dir` into `out`.
pub fn export(dir: &Path, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let samples = load_samples(dir)?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let path = out.join("net.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let dim = samples.points[0].dim();
    let mut header = vec!["point".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.push("fixed".into());
    w.write_record(&header)?;
    for (i, p) in samples.points.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.coords().iter().map(|c| num(*c)));
        row.push(samples.fixed.iter().any(|f| f.0 == i).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let path = out.join("lines.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["point", "t", "value"])?;
    let hw = samples.n_max as f64;
    for (i, line) in samples.lines.iter().enumerate() {
        for (k, v) in line.iter().enumerate() {
            w.write_record([i.to_string(), num(-hw + k as f64 * samples.line_step), num(*v)])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out.join("windows.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["window", "point", "t", "value"])?;
    for (j, win) in samples.windows.iter().enumerate() {
        for (k, v) in win.values.iter().enumerate() {
            w.write_record([j.to_string(), win.point.to_string(), num(win.start + k as f64 * win.step), num(*v)])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out.join("equivariance.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["point", "shift", "t", "direct", "shifted", "residual"])?;
    for e in &samples.equivariance {
        for (k, (a, b)) in e.direct.iter().zip(&e.shifted).enumerate() {
            w.write_record([
                e.point.to_string(),
                num(e.shift),
                num(e.t0 + k as f64 * e.step),
                num(*a),
                num(*b),
                num((a - b).abs()),
            ])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out.join("pairwise.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["i", "j", "cr_dist"])?;
    let lines: Vec<_> = (0..samples.points.len()).map(|i| samples.line(i)).collect();
    for i in 0..lines.len() {
        for j in 0..i {
            let d = cr_dist(&lines[i], &lines[j], samples.n_max).map_err(|e| ExperimentError::Artifact(e.to_string()))?;
            w.write_record([j.to_string(), i.to_string(), num(d)])?;
        }
    }
    w.flush()?;
    written.push(path);

    if let Some(report) = load_pipeline_report(dir)? {
        let path = out.join("stages.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "stage", "kind", "p", "q", "delta", "attempts", "margin", "window", "offset", "damage", "lipschitz",
            "min_live_margin",
        ])?;
        for s in &report.stages {
            let (kind, p, q) = match s.kind {
                StageKind::AvoidFixed { p } => ("avoid_fixed", p.to_string(), String::new()),
                StageKind::Separate { p, q } => ("separate", p.to_string(), q.to_string()),
            };
            w.write_record([
                s.index.to_string(),
                kind.to_string(),
                p,
                q,
                num(s.delta),
                s.attempts.to_string(),
                num(s.margin),
                num(s.window),
                num(s.offset),
                num(s.damage),
                num(s.lipschitz),
                num(s.min_live_margin),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
