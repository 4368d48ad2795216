use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    /// Reported only; never affects the exit code.
    Info,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "==")]
    Equal,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::Above => ">",
            Relation::Equal => "==",
        }
    }

    pub fn holds(self, measured: f64, bound: f64) -> bool {
        match self {
            Relation::AtMost => measured <= bound,
            Relation::Above => measured > bound,
            Relation::Equal => measured == bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The property of the construction this line checks.
    pub anchor: String,
    /// `None` when the measured value is not finite (e.g. an empty minimum).
    pub measured: Option<f64>,
    pub relation: Relation,
    pub bound: f64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl CheckRecord {
    /// Judges `measured relation bound`. An infinite measured value passes
    /// only a `>` check (a vacuous minimum); NaN always fails.
    pub fn judge(name: &str, anchor: &str, measured: f64, relation: Relation, bound: f64, witness: Option<String>) -> Self {
        let ok = relation.holds(measured, bound);
        Self {
            name: name.into(),
            anchor: anchor.into(),
            measured: measured.is_finite().then_some(measured),
            relation,
            bound,
            status: if ok { Status::Pass } else { Status::Fail },
            witness,
        }
    }

    pub fn info(name: &str, anchor: &str, measured: f64, witness: Option<String>) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            measured: measured.is_finite().then_some(measured),
            relation: Relation::Equal,
            bound: 0.0,
            status: Status::Info,
            witness,
        }
    }

    pub fn line(&self) -> String {
        let measured = self.measured.map_or_else(|| "none".to_string(), |m| format!("{m:e}"));
        let mut s = match self.status {
            Status::Info => format!("{} {} [{}] value={measured}", self.status.label(), self.name, self.anchor),
            _ => format!(
                "{} {} [{}] measured={measured} {} {:e}",
                self.status.label(),
                self.name,
                self.anchor,
                self.relation.symbol(),
                self.bound
            ),
        };
        if let Some(w) = &self.witness {
            let _ = write!(s, " witness: {w}");
        }
        s
    }
}

/// The deterministic part of a report: same inputs, same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub command: String,
    pub seed: Option<u64>,
    /// Echo of the inputs (configuration or witness parameters).
    pub inputs: serde_json::Value,
    pub checks: Vec<CheckRecord>,
}

/// Environment details; excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub version: String,
    pub threads: usize,
    pub elapsed_seconds: f64,
}

impl Stamp {
    pub fn now(elapsed_seconds: f64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            elapsed_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub body: ReportBody,
    pub stamp: Stamp,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.body.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.body.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.body.checks.iter().find(|c| c.name == name)
    }

    /// 0 when every check passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report body serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seed = self.body.seed.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(s, "lipembed {} seed={seed}", self.body.command);
        for c in &self.body.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        let _ = writeln!(
            s,
            "{} ({} checks, {} failed) version={} threads={} elapsed={:.2}s",
            if self.passed() { "ALL PASS" } else { "FAILURES" },
            self.body.checks.iter().filter(|c| c.status != Status::Info).count(),
            self.failures().count(),
            self.stamp.version,
            self.stamp.threads,
            self.stamp.elapsed_seconds
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judging() {
        assert_eq!(CheckRecord::judge("a", "x", 0.5, Relation::AtMost, 1.0, None).status, Status::Pass);
        assert_eq!(CheckRecord::judge("a", "x", 1.5, Relation::AtMost, 1.0, None).status, Status::Fail);
        assert_eq!(CheckRecord::judge("a", "x", f64::NAN, Relation::AtMost, 1.0, None).status, Status::Fail);
        let vacuous = CheckRecord::judge("a", "x", f64::INFINITY, Relation::Above, 0.0, None);
        assert_eq!(vacuous.status, Status::Pass);
        assert_eq!(vacuous.measured, None);
        assert_eq!(CheckRecord::judge("a", "x", 0.0, Relation::Above, 0.0, None).status, Status::Fail);
    }

    #[test]
    fn info_lines_never_fail_a_report() {
        let body = ReportBody {
            command: "t".into(),
            seed: Some(1),
            inputs: serde_json::Value::Null,
            checks: vec![CheckRecord::info("note", "x", 3.0, None)],
        };
        let r = Report { body, stamp: Stamp::now(0.0) };
        assert!(r.passed());
        assert_eq!(r.exit_code(), 0);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }
}
