//! Run configuration: TOML in, validated, written back fully resolved.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qptorus::continuation::{BranchConfig, Constraints, DeficitCase};
use qptorus::harmonics::HarmonicScheme;
use qptorus::registry::ModelSpec;
use qptorus::shooting::NewtonOptions;
use qptorus::stability::LyapunovOptions;
use qptorus::{Error, FrequencyVector, SecondOrderModel};
use serde::{Deserialize, Serialize};

/// Problem with the configuration itself (exit status 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub torus: TorusSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub continuation: Option<ContinuationSection>,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSection {
    /// Base frequencies `ω_1 … ω_d`.
    pub frequencies: Vec<f64>,
    /// How many leading frequencies are forcing frequencies.
    pub forced: usize,
    /// Harmonic magnitudes per angle `φ_2 … φ_d`.
    #[serde(default)]
    pub harmonics: Vec<Vec<u32>>,
    /// Grid points per angle; defaults follow the harmonic content.
    #[serde(default)]
    pub samples: Option<Vec<usize>>,
    /// Newmark steps per base period.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Zero,
    /// Closed-form response of the model with its nonlinearity removed.
    Linear,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub seed: SeedSource,
    pub snapshot: Option<PathBuf>,
    /// Uniform random perturbation added to the seed coefficients.
    pub perturbation: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Harmonic terms added to the seed.
    pub terms: Vec<SeedTerm>,
}

/// `cos · cos(k·φ̃) + sin · sin(k·φ̃)` added to one coordinate of the
/// section: displacement `dof`, or its derivative along the first angle
/// (`q̇ / ω_1`) when `rate` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTerm {
    pub dof: usize,
    #[serde(default)]
    pub rate: bool,
    #[serde(default)]
    pub harmonic: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        let newton = NewtonOptions::default();
        Self {
            seed: SeedSource::Linear,
            snapshot: None,
            perturbation: 0.0,
            epsilon: newton.epsilon,
            max_iterations: newton.max_iterations,
            terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    /// `"omega1"` or the name of a model parameter.
    pub parameter: String,
    pub case: DeficitCase,
    pub start: Option<f64>,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default = "one")]
    pub direction: f64,
    #[serde(default)]
    pub initial_step: Option<f64>,
    #[serde(default)]
    pub min_step: Option<f64>,
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default)]
    pub max_points: Option<usize>,
    #[serde(default)]
    pub corrector_iterations: Option<usize>,
    /// DOF whose peak displacement is reported as the amplitude.
    #[serde(default)]
    pub amplitude_dof: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub enabled: bool,
    pub periods: usize,
    pub interval: usize,
    pub band: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let o = LyapunovOptions::default();
        Self {
            enabled: false,
            periods: o.periods,
            interval: o.interval,
            band: o.band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub output: PathBuf,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output: PathBuf::from("qptorus-out"),
            workers: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| invalid(format!("malformed config {}: {e}", path.display())))?;
        // snapshot paths are relative to the config file
        let mut config = config;
        if let (Some(p), Some(dir)) = (&config.solve.snapshot, path.parent()) {
            if p.is_relative() {
                let joined = dir.join(p);
                config.solve.snapshot = Some(std::fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        Ok(config)
    }

    /// Check everything that can be checked without computing.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        let freq = self.frequencies()?;
        let scheme = self.scheme()?;
        if scheme.torus_dim() != freq.dim() {
            bail!(invalid(format!(
                "{} base frequencies need {} harmonic lists, found {}",
                freq.dim(),
                freq.dim() - 1,
                self.torus.harmonics.len()
            )));
        }
        if self.torus.steps < 4 {
            bail!(invalid(format!("at least 4 steps per period are needed, got {}", self.torus.steps)));
        }
        let model = self.build_model()?;
        if let Some(j) = model.forcing().iter().map(|t| t.frequency).find(|&j| j >= freq.forced()) {
            bail!(invalid(format!(
                "forcing uses base frequency {} but only {} are forcing frequencies",
                j + 1,
                freq.forced()
            )));
        }
        if !(self.solve.epsilon > 0.0) || self.solve.max_iterations == 0 {
            bail!(invalid("solve.epsilon must be positive and solve.max_iterations nonzero"));
        }
        if self.solve.seed == SeedSource::Snapshot && self.solve.snapshot.is_none() {
            bail!(invalid("seed = \"snapshot\" needs solve.snapshot"));
        }
        for t in &self.solve.terms {
            if t.dof >= model.dofs() {
                bail!(invalid(format!("seed term on DOF {} outside {} DOFs", t.dof, model.dofs())));
            }
            if t.harmonic.len() != freq.dim() - 1 {
                bail!(invalid(format!("seed term harmonic needs {} entries", freq.dim() - 1)));
            }
            if t.harmonic.iter().any(|&k| k != 0) && scheme.harmonic_slot(&t.harmonic).is_none() {
                bail!(invalid(format!("seed term harmonic {:?} is not in the scheme", t.harmonic)));
            }
        }
        if !(self.solve.perturbation >= 0.0) {
            bail!(invalid("solve.perturbation must be non-negative"));
        }
        if self.run.workers == 0 {
            bail!(invalid("run.workers must be at least 1"));
        }
        if self.stability.periods < 10 || self.stability.interval == 0 || !(self.stability.band > 0.0) {
            bail!(invalid("stability needs periods >= 10, interval >= 1 and a positive band"));
        }
        if let Some(c) = &self.continuation {
            self.validate_continuation(c, &freq, &model)?;
        }
        Ok(())
    }

    fn validate_continuation(
        &self,
        c: &ContinuationSection,
        freq: &FrequencyVector,
        model: &SecondOrderModel,
    ) -> anyhow::Result<()> {
        let omega = c.parameter == "omega1";
        match c.case {
            DeficitCase::ForcingFrequency if !omega => {
                bail!(invalid("case forcing_frequency continues in omega1"))
            }
            DeficitCase::ModelParameter | DeficitCase::Autonomous if omega => {
                bail!(invalid(format!("case {:?} continues in a model parameter, not omega1", c.case)))
            }
            _ => {}
        }
        if !omega {
            self.model
                .param(&c.parameter)
                .map_err(|e| invalid(e.to_string()))?;
        }
        Constraints::for_case(c.case, freq).map_err(|e| invalid(e.to_string()))?;
        if c.amplitude_dof >= model.dofs() {
            bail!(invalid(format!("amplitude_dof {} outside {} DOFs", c.amplitude_dof, model.dofs())));
        }
        if !(c.direction == 1.0 || c.direction == -1.0) {
            bail!(invalid("continuation.direction must be 1 or -1"));
        }
        let b = self.branch_config().map_err(|e| invalid(e.to_string()))?;
        if !(b.min_step > 0.0 && b.min_step <= b.initial_step && b.initial_step <= b.max_step) {
            bail!(invalid("steps must satisfy 0 < min_step <= initial_step <= max_step"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> anyhow::Result<FrequencyVector> {
        FrequencyVector::new(self.torus.frequencies.clone(), self.torus.forced).map_err(|e| invalid(e.to_string()))
    }

    pub fn scheme(&self) -> anyhow::Result<HarmonicScheme> {
        HarmonicScheme::new(self.torus.harmonics.clone(), self.torus.samples.clone())
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn build_model(&self) -> anyhow::Result<SecondOrderModel> {
        self.model.build().map_err(|e| invalid(e.to_string()))
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            epsilon: self.solve.epsilon,
            max_iterations: self.solve.max_iterations,
        }
    }

    pub fn lyapunov(&self) -> LyapunovOptions {
        LyapunovOptions {
            periods: self.stability.periods,
            interval: self.stability.interval,
            band: self.stability.band,
        }
    }

    pub fn branch_config(&self) -> Result<BranchConfig, Error> {
        let c = self
            .continuation
            .as_ref()
            .ok_or_else(|| Error::Config("no [continuation] section".into()))?;
        let d = BranchConfig::default();
        Ok(BranchConfig {
            p_min: c.p_min,
            p_max: c.p_max,
            direction: c.direction,
            initial_step: c.initial_step.unwrap_or(d.initial_step),
            min_step: c.min_step.unwrap_or(d.min_step),
            max_step: c.max_step.unwrap_or(d.max_step),
            max_points: c.max_points.unwrap_or(d.max_points),
            corrector_iterations: c.corrector_iterations.unwrap_or(d.corrector_iterations),
            ..d
        })
    }

    /// The configuration with every default spelled out.
    pub fn resolved(&self) -> anyhow::Result<Self> {
        let mut out = self.clone();
        out.model.params = self.model.resolved_params().map_err(|e| invalid(e.to_string()))?;
        out.torus.samples = Some(self.scheme()?.sample_counts().to_vec());
        if let Some(c) = &mut out.continuation {
            let b = self.branch_config()?;
            c.initial_step = Some(b.initial_step);
            c.min_step = Some(b.min_step);
            c.max_step = Some(b.max_step);
            c.max_points = Some(b.max_points);
            c.corrector_iterations = Some(b.corrector_iterations);
        }
        Ok(out)
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(&self.resolved()?).context("serializing resolved config")?;
        std::fs::write(dir.join("config.resolved.toml"), text).context("writing resolved config")
    }
}
