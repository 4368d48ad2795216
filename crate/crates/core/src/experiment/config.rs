use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::embed::{KernelShape, PipelineOptions};
use crate::flow::{detect_fixed, FixedProfile, FixedSet, FlowSystem, SampleNet, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// Either the flow's regular net at `mesh`, or explicit points whose
/// covering radius is `mesh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub mesh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<State>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HPoint {
    pub point: State,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_fix: f64,
    pub tol_match: f64,
    pub rank_tol: f64,
    /// Truncation of the compact-open distance; lines live on `[−n_max, n_max]`.
    pub n_max: usize,
    /// Report bounds.
    pub equivariance: f64,
    pub fixed: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_fix: crate::flow::DEFAULT_TOL_FIX,
            tol_match: crate::perturb::DEFAULT_TOL_MATCH,
            rank_tol: crate::genvec::DEFAULT_RANK_TOL,
            n_max: 20,
            equivariance: 1e-5,
            fixed: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulePolicy {
    /// Run only the first stages of the default schedule.
    pub max_stages: Option<usize>,
    pub kernel: KernelShape,
    pub margin_divisor: f64,
    pub max_retries: usize,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self { max_stages: None, kernel: KernelShape::Triangular, margin_divisor: 8.0, max_retries: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub flow: FlowSpec,
    pub net: NetSpec,
    /// Prescribed values on the fixed points; may be empty.
    #[serde(default)]
    pub h: Vec<HPoint>,
    pub delta0: f64,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub schedule: SchedulePolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Everything the pipeline needs, built from a validated config.
pub struct Setup {
    pub sys: FlowSystem,
    pub h: FixedProfile,
    pub net: SampleNet,
    pub fixed: FixedSet,
    pub options: PipelineOptions,
}

impl ExperimentConfig {
    pub const PRESETS: &'static [&'static str] = &["logistic", "rotation", "logistic_short"];

    /// Bundled configurations.
    pub fn preset(name: &str) -> Result<Self, ExperimentError> {
        let logistic = Self {
            flow: FlowSpec { name: "logistic".into(), params: vec![] },
            net: NetSpec { mesh: 0.05, points: None },
            h: vec![
                HPoint { point: State::scalar(0.0), value: 0.0 },
                HPoint { point: State::scalar(1.0), value: 1.0 },
            ],
            delta0: 0.1,
            seed: 42,
            tolerances: Tolerances::default(),
            schedule: SchedulePolicy::default(),
            output_dir: None,
        };
        match name {
            "logistic" => Ok(logistic),
            "logistic_short" => {
                let mut c = logistic;
                c.schedule.max_stages = Some(6);
                Ok(c)
            }
            "rotation" => Ok(Self {
                flow: FlowSpec { name: "rotation".into(), params: vec![1.0] },
                net: NetSpec { mesh: 0.5, points: None },
                h: vec![],
                ..logistic
            }),
            other => Err(ExperimentError::Config(format!(
                "unknown preset `{other}` (available: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn flow_system(&self) -> Result<FlowSystem, ExperimentError> {
        FlowSystem::from_name(&self.flow.name, &self.flow.params).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let sys = self.flow_system()?;
        let t = &self.tolerances;
        for (name, v) in [
            ("tol_fix", t.tol_fix),
            ("tol_match", t.tol_match),
            ("rank_tol", t.rank_tol),
            ("equivariance", t.equivariance),
            ("fixed", t.fixed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        let budget = crate::embed::EvalConfig::default().t_budget;
        if t.n_max == 0 || t.n_max as f64 > budget {
            return bad(format!("n_max must lie in [1, {budget}], got {}", t.n_max));
        }
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return bad(format!("delta0 must lie in (0, 1), got {}", self.delta0));
        }
        if !(self.net.mesh > 0.0 && self.net.mesh.is_finite()) {
            return bad(format!("net mesh must be positive, got {}", self.net.mesh));
        }
        if !(self.schedule.margin_divisor >= 1.0) {
            return bad("margin_divisor must be at least 1".into());
        }
        let dim = sys.dim();
        let points = self.net.points.iter().flatten().chain(self.h.iter().map(|p| &p.point));
        for p in points {
            if p.dim() != dim {
                return bad(format!("point {p:?} has dimension {}, flow `{}` needs {dim}", p.dim(), self.flow.name));
            }
        }
        for hp in &self.h {
            if !(0.0..=1.0).contains(&hp.value) {
                return bad(format!("h value {} outside [0, 1]", hp.value));
            }
        }
        if !self.profile()?.is_injective() {
            return bad("h is not injective on F".into());
        }
        Ok(())
    }

    fn profile(&self) -> Result<FixedProfile, ExperimentError> {
        FixedProfile::new(self.h.iter().map(|p| (p.point, p.value)).collect())
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn setup(&self) -> Result<Setup, ExperimentError> {
        self.validate()?;
        let sys = self.flow_system()?;
        let net = match &self.net.points {
            Some(p) => SampleNet::new(p.clone(), self.net.mesh, &sys),
            None => sys.regular_net(self.net.mesh),
        }
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let fixed = detect_fixed(&sys, &net, self.tolerances.tol_fix)?;
        let mut options = PipelineOptions {
            delta0: self.delta0,
            seed: self.seed,
            kernel: self.schedule.kernel,
            margin_divisor: self.schedule.margin_divisor,
            max_retries: self.schedule.max_retries,
            max_stages: self.schedule.max_stages,
            ..PipelineOptions::default()
        };
        options.density.n_max = self.tolerances.n_max;
        options.density.perturb.tol_match = self.tolerances.tol_match;
        options.density.perturb.rank_tol = self.tolerances.rank_tol;
        Ok(Setup { sys, h: self.profile()?, net, fixed, options })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ExperimentConfig::PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn bundled_config_matches_preset() {
        let file = ExperimentConfig::from_json(include_str!("../../../../configs/logistic.json")).unwrap();
        assert_eq!(file, ExperimentConfig::preset("logistic").unwrap());
    }

    #[test]
    fn zero_match_tolerance_is_rejected() {
        let mut c = ExperimentConfig::preset("logistic").unwrap();
        c.tolerances.tol_match = 0.0;
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn non_injective_h_is_rejected() {
        let mut c = ExperimentConfig::preset("logistic").unwrap();
        c.h[1].value = 0.0;
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn unknown_keys_and_bad_dimensions_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"flow":{"name":"logistic"},"net":{"mesh":0.1},"delta0":0.1,"seed":1,"extra":1}"#).is_err());
        let mut c = ExperimentConfig::preset("logistic").unwrap();
        c.h[0].point = State::new(&[0.0, 0.0]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"flow":{"name":"logistic"},"net":{"mesh":0.1},"delta0":0.1,"seed":1}"#).unwrap();
        assert_eq!(c.tolerances, Tolerances::default());
        let s = c.setup().unwrap();
        assert_eq!(s.net.len(), 11);
        assert_eq!(s.fixed.points.len(), 2);
    }
}
