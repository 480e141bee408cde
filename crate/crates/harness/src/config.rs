//! JSON experiment configuration.
//!
//! Every block and field is optional; omitted values take the documented
//! defaults, which depend on the method for the method block. Unknown keys
//! are rejected with the path of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// A number, or `"auto"` to derive the value from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl AutoOr {
    pub const AUTO: Self = Self::Auto(AutoTag::Auto);

    pub fn value(self) -> Option<f64> {
        match self {
            Self::Auto(_) => None,
            Self::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for AutoOr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto(_) => f.write_str("auto"),
            Self::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Teki,
    Eki,
    Ils,
    Gd,
    Agd,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Teki => "teki",
            Self::Eki => "eki",
            Self::Ils => "ils",
            Self::Gd => "gd",
            Self::Agd => "agd",
        }
    }

    pub fn is_particle(self) -> bool {
        matches!(self, Self::Teki | Self::Eki | Self::Ils)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleChoice {
    Ml,
    Sl,
}

impl ScheduleChoice {
    pub fn kind(self) -> mlopt::schedule::ScheduleKind {
        match self {
            Self::Ml => mlopt::schedule::ScheduleKind::Multilevel,
            Self::Sl => mlopt::schedule::ScheduleKind::SingleLevel,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.kind().as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorChoice {
    Perturbed,
    Inflated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflationShape {
    /// `B = β I`.
    Identity,
    /// `B = β C₀`.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoundingChoice {
    #[default]
    Identity,
    NextPowerOfTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub n_x: usize,
    pub n_y: usize,
    /// Prior covariance `C₀ = diag(i^{−2β})`.
    pub prior_exponent: f64,
    pub lambda: f64,
    /// Noise standard deviation `γ`; `Γ = γ² I`.
    pub noise_scale: f64,
    /// Use `y = F_ref x†` without added noise.
    pub noise_free: bool,
    pub truth_seed: u64,
    pub reference_level: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n_x: 100,
            n_y: 15,
            prior_exponent: 1.0,
            lambda: 1.0,
            noise_scale: 0.01,
            noise_free: false,
            truth_seed: 1,
            reference_level: 4096.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub shape: InflationShape,
    /// `"auto"` picks `β = ln(1/c) / (2 λ τ)`.
    pub beta: AutoOr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    #[serde(default)]
    pub schedules: Option<Vec<ScheduleChoice>>,
    #[serde(default)]
    pub c: Option<AutoOr>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub e0: Option<AutoOr>,
    #[serde(default)]
    pub bias_constant: Option<f64>,
    #[serde(default)]
    pub rounding: Option<RoundingChoice>,
    #[serde(default)]
    pub ensemble_size: Option<usize>,
    #[serde(default)]
    pub tau_interval: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub integrator: Option<IntegratorChoice>,
    #[serde(default)]
    pub inflation: Option<InflationConfig>,
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            schedules: None,
            c: None,
            alpha: None,
            e0: None,
            bias_constant: None,
            rounding: None,
            ensemble_size: None,
            tau_interval: None,
            step: None,
            integrator: None,
            inflation: None,
        }
    }
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self::new(MethodKind::Teki)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Tolerances, strictly decreasing.
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: (2..=8).map(|p| 2f64.powi(-p)).collect(),
            replicates: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
    pub svg: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: "records.csv".into(),
            svg: "figure.svg".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub method: MethodConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Method parameters with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub kind: MethodKind,
    pub schedules: Vec<ScheduleChoice>,
    pub c: AutoOr,
    pub alpha: f64,
    pub e0: AutoOr,
    pub bias_constant: f64,
    pub rounding: RoundingChoice,
    pub ensemble_size: usize,
    pub tau_interval: f64,
    pub step: f64,
    pub integrator: IntegratorChoice,
    pub inflation: Option<InflationConfig>,
}

fn fail<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(HarnessError::config(path, message))
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        fail(path, format!("must be a positive finite number, got {v}"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::config(if path == "." { "<root>".into() } else { path }, e.inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Default configuration for a method.
    pub fn for_method(kind: MethodKind) -> Self {
        Self {
            method: MethodConfig::new(kind),
            ..Self::default()
        }
    }

    pub fn settings(&self) -> MethodSettings {
        let m = &self.method;
        let (ensemble_size, tau_interval, step) = match m.kind {
            MethodKind::Teki | MethodKind::Eki => (50, 0.1, 0.1),
            MethodKind::Ils => (500, 0.1, 0.001),
            MethodKind::Gd | MethodKind::Agd => (1, 1.0, 1.0),
        };
        MethodSettings {
            kind: m.kind,
            schedules: m.schedules.clone().unwrap_or_else(|| vec![ScheduleChoice::Ml, ScheduleChoice::Sl]),
            c: m.c.unwrap_or(AutoOr::Value(0.5)),
            alpha: m.alpha.unwrap_or(1.0),
            e0: m.e0.unwrap_or(AutoOr::AUTO),
            bias_constant: m.bias_constant.unwrap_or(1.0),
            rounding: m.rounding.unwrap_or_default(),
            ensemble_size: m.ensemble_size.unwrap_or(ensemble_size),
            tau_interval: m.tau_interval.unwrap_or(tau_interval),
            step: m.step.unwrap_or(step),
            integrator: m.integrator.unwrap_or(IntegratorChoice::Perturbed),
            inflation: m.inflation.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.n_x == 0 {
            return fail("problem.n_x", "must be at least 1");
        }
        if p.n_y == 0 {
            return fail("problem.n_y", "must be at least 1");
        }
        if !p.prior_exponent.is_finite() {
            return fail("problem.prior_exponent", "must be finite");
        }
        positive("problem.lambda", p.lambda)?;
        positive("problem.noise_scale", p.noise_scale)?;
        if !(p.reference_level >= 1.0) || !p.reference_level.is_finite() {
            return fail("problem.reference_level", "must be a finite level >= 1");
        }
        mlopt::forward::mesh_exponent(p.reference_level)
            .map_err(|e| HarnessError::config("problem.reference_level", e.to_string()))?;

        let m = &self.method;
        let s = self.settings();
        if s.schedules.is_empty() {
            return fail("method.schedules", "must list at least one schedule kind");
        }
        if let AutoOr::Value(c) = s.c {
            if !(c > 0.0 && c < 1.0) {
                return fail("method.c", format!("must lie in (0, 1), got {c}"));
            }
        }
        positive("method.alpha", s.alpha)?;
        if let AutoOr::Value(e0) = s.e0 {
            positive("method.e0", e0)?;
        }
        if !(s.bias_constant >= 1.0) || !s.bias_constant.is_finite() {
            return fail("method.bias_constant", "must be at least 1");
        }
        if s.kind.is_particle() {
            if s.ensemble_size == 0 {
                return fail("method.ensemble_size", "must be at least 1");
            }
            positive("method.tau_interval", s.tau_interval)?;
            positive("method.step", s.step)?;
            mlopt::eki::inner_steps(s.tau_interval, s.step)
                .map_err(|e| HarnessError::config("method.step", e.to_string()))?;
        } else {
            for (name, set) in [
                ("ensemble_size", m.ensemble_size.is_some()),
                ("tau_interval", m.tau_interval.is_some()),
                ("step", m.step.is_some()),
                ("integrator", m.integrator.is_some()),
                ("inflation", m.inflation.is_some()),
            ] {
                if set {
                    return fail(&format!("method.{name}"), format!("not used by method {}", s.kind));
                }
            }
        }
        if m.integrator.is_some() && !matches!(s.kind, MethodKind::Teki | MethodKind::Eki) {
            return fail("method.integrator", format!("not used by method {}", s.kind));
        }
        if let Some(infl) = &s.inflation {
            if !matches!(s.kind, MethodKind::Teki | MethodKind::Eki) {
                return fail("method.inflation", format!("not used by method {}", s.kind));
            }
            if s.integrator != IntegratorChoice::Inflated {
                return fail("method.inflation", "requires \"integrator\": \"inflated\"");
            }
            if let AutoOr::Value(b) = infl.beta {
                if !(b >= 0.0) || !b.is_finite() {
                    return fail("method.inflation.beta", format!("must be nonnegative, got {b}"));
                }
            }
        }

        let sw = &self.sweep;
        if sw.epsilons.is_empty() {
            return fail("sweep.epsilons", "must not be empty");
        }
        for (i, &e) in sw.epsilons.iter().enumerate() {
            positive(&format!("sweep.epsilons[{i}]"), e)?;
        }
        if sw.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return fail("sweep.epsilons", "must be sorted in strictly decreasing order");
        }
        if sw.replicates == 0 {
            return fail("sweep.replicates", "must be at least 1");
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.csv)
    }

    pub fn svg_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.svg)
    }
}
