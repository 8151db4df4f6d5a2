use std::fs;
use std::path::{Path, PathBuf};

use region_sched::complexity::ScoreVariant;
use region_sched::grid::{make_schedule, ScheduleKind, SigmaSchedule};
use region_sched::oracle::SceneSpec;
use region_sched::sampler::{Partitioner, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Full,
    Sdit,
    Ras,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Sdit => "sdit",
            Method::Ras => "ras",
            Method::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Number of noise levels, one more than the number of denoising steps.
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            sigma_max: 1.0,
            sigma_min: 0.0,
            steps: 31,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> region_sched::Result<SigmaSchedule> {
        make_schedule(self.kind, self.sigma_max, self.sigma_min, self.steps)
    }
}

/// Sweep axes for `ablate`. An absent axis is not swept; a present but
/// empty one is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub partitioner: Option<Vec<Partitioner>>,
    pub scorer: Option<Vec<ScoreVariant>>,
    pub ratio: Option<Vec<f64>>,
    pub dilation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub method: Method,
    /// Standard deviation of each mixture component of the oracle prior.
    pub component_std: f64,
    /// Keys the initial noise; `--seed` also overrides `sampler.seed`.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_maps: bool,
    /// Record every denoiser call as a replayable trace under `trace/`.
    pub record_trace: bool,
    /// Trace directory read by `replay` when none is given on the command line.
    pub trace_dir: Option<PathBuf>,
    /// Fill the `wall_time` column of ablation tables; off keeps output
    /// byte-reproducible.
    pub timing: bool,
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            method: Method::Sdit,
            component_std: 0.05,
            seed: 0,
            output_dir: PathBuf::from("out"),
            emit_maps: false,
            record_trace: false,
            trace_dir: None,
            timing: false,
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            field: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                field: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, out: Option<PathBuf>, seed: Option<u64>) {
        if let Some(out) = out {
            self.output_dir = out;
        }
        if let Some(seed) = seed {
            self.seed = seed;
            self.sampler.seed = seed;
        }
    }

    /// Checks every nested invariant, reporting the dotted path of the
    /// first offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: String, message: String| CliError::Config { field, message };
        self.scene
            .check()
            .map_err(|(f, m)| bad(format!("scene.{f}"), m))?;
        if self.schedule.steps < 2 {
            return Err(bad("schedule.steps".into(), format!("must be >= 2, got {}", self.schedule.steps)));
        }
        if !(self.schedule.sigma_max > self.schedule.sigma_min) {
            return Err(bad(
                "schedule.sigma_max".into(),
                format!("must exceed sigma_min ({} <= {})", self.schedule.sigma_max, self.schedule.sigma_min),
            ));
        }
        if !(self.schedule.sigma_min >= 0.0) {
            return Err(bad("schedule.sigma_min".into(), format!("must be >= 0, got {}", self.schedule.sigma_min)));
        }
        self.schedule
            .build()
            .map_err(|e| bad("schedule".into(), e.to_string()))?;
        self.sampler
            .check()
            .map_err(|(f, m)| bad(format!("sampler.{f}"), m))?;
        if !(self.component_std > 0.0 && self.component_std.is_finite()) {
            return Err(bad("component_std".into(), format!("must be > 0, got {}", self.component_std)));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(bad("output_dir".into(), "must not be empty".into()));
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate(self.method)?;
        }
        Ok(())
    }
}

impl SweepConfig {
    fn validate(&self, method: Method) -> Result<(), CliError> {
        let bad = |field: &str, message: String| CliError::Config {
            field: format!("sweep.{field}"),
            message,
        };
        let lens = [
            ("partitioner", self.partitioner.as_ref().map(Vec::len)),
            ("scorer", self.scorer.as_ref().map(Vec::len)),
            ("ratio", self.ratio.as_ref().map(Vec::len)),
            ("dilation", self.dilation.as_ref().map(Vec::len)),
        ];
        if let Some((name, _)) = lens.iter().find(|(_, n)| *n == Some(0)) {
            return Err(bad(name, "sweep axis is empty".into()));
        }
        if lens.iter().all(|(_, n)| n.is_none()) {
            return Err(CliError::Config {
                field: "sweep".into(),
                message: "no sweep axes given".into(),
            });
        }
        if let Some(r) = self.ratio.iter().flatten().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(bad("ratio", format!("values must be in (0, 1], got {r}")));
        }
        if !matches!(method, Method::Sdit | Method::Random) {
            return Err(CliError::Config {
                field: "method".into(),
                message: format!("sweeps need method sdit or random, got {}", method.name()),
            });
        }
        Ok(())
    }
}
