use std::fs;
use std::path::{Path, PathBuf};

use region_sched::grid::{LatentGrid, SigmaSchedule};
use region_sched::io::{
    write_array, write_mask_ppm, write_pgm, write_region_ppm, write_trace, PgmScale, TraceRecorder,
};
use region_sched::metrics::{compare, MetricReport};
use region_sched::oracle::{oracle_case, OracleCase};
use region_sched::sampler::{
    full_sample, ras_like_sample, sdit_sample_observed, Denoiser, RunReport, SamplerConfig, Selection, StepView,
};
use region_sched::ssd::StepMode;
use region_sched::ENGINE_VERSION;
use serde::Serialize;

use crate::config::{Method, RunConfig};
use crate::error::CliError;

/// Which per-step images to write while sampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapOptions {
    pub regions: bool,
    pub complexity: bool,
    pub masks: bool,
}

impl MapOptions {
    fn any(self) -> bool {
        self.regions || self.complexity || self.masks
    }
}

/// Scene, prior, initial noise and schedule for one config.
pub struct Harness {
    pub case: OracleCase,
    pub schedule: SigmaSchedule,
    pub data_range: f64,
}

impl Harness {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let case = oracle_case(&cfg.scene, cfg.schedule.sigma_max, cfg.component_std, cfg.seed)?;
        let schedule = cfg.schedule.build()?;
        let [lo, hi] = cfg.scene.value_range;
        Ok(Self {
            case,
            schedule,
            data_range: hi - lo,
        })
    }

    pub fn reference(&self) -> Result<(LatentGrid, RunReport), CliError> {
        Ok(full_sample(&self.case.denoiser, &self.case.x_t, &self.schedule)?)
    }

    /// Runs `method` with `sampler`, optionally writing maps into `maps_dir`.
    pub fn sample(
        &self,
        d: &impl Denoiser,
        method: Method,
        sampler: &SamplerConfig,
        maps: MapOptions,
        maps_dir: &Path,
    ) -> Result<(LatentGrid, RunReport), CliError> {
        let x_t = &self.case.x_t;
        let s = &self.schedule;
        match method {
            Method::Full => Ok(full_sample(d, x_t, s)?),
            Method::Ras => Ok(ras_like_sample(d, x_t, s, sampler.ssd.p_min, sampler.patch)?),
            Method::Sdit | Method::Random => {
                let mut cfg = sampler.clone();
                if method == Method::Random {
                    cfg.selection = Selection::Random;
                }
                let observe = |v: &StepView<'_>| -> region_sched::Result<()> {
                    if maps.any() && v.plan.mode == StepMode::Sparse {
                        write_step_maps(v, maps, maps_dir)?;
                    }
                    Ok(())
                };
                Ok(sdit_sample_observed(d, x_t, s, &cfg, observe)?)
            }
        }
    }
}

pub fn step_file(dir: &Path, stem: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_t{t:04}.{ext}"))
}

fn write_step_maps(v: &StepView<'_>, maps: MapOptions, dir: &Path) -> region_sched::Result<()> {
    if maps.regions {
        if let Some(m) = v.regions {
            write_region_ppm(m, step_file(dir, "seg", v.t, "ppm"))?;
        }
    }
    if maps.complexity {
        if let Some(c) = v.complexity {
            write_pgm(c.scores(), c.height(), c.width(), PgmScale::MinMax, step_file(dir, "cmplx", v.t, "pgm"))?;
        }
    }
    if maps.masks {
        write_mask_ppm(&v.plan.active, step_file(dir, "mask", v.t, "ppm"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunDocument<'a> {
    engine_version: &'static str,
    command: &'static str,
    method: &'static str,
    config: &'a RunConfig,
    report: &'a RunReport,
    metrics: Option<MetricReport>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `run` and `maps`. `maps_only` forces every map on and skips the result array.
pub fn cmd_run(cfg: &RunConfig, maps_only: bool) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let harness = Harness::new(cfg)?;
    let maps = if maps_only {
        MapOptions {
            regions: true,
            complexity: true,
            masks: true,
        }
    } else {
        MapOptions {
            regions: cfg.emit_maps,
            complexity: cfg.emit_maps,
            masks: false,
        }
    };

    let (result, report) = if cfg.record_trace {
        let recorder = TraceRecorder::new(&harness.case.denoiser);
        let run = harness.sample(&recorder, cfg.method, &cfg.sampler, maps, out)?;
        write_trace(out.join("trace"), &recorder.into_frames())?;
        run
    } else {
        harness.sample(&harness.case.denoiser, cfg.method, &cfg.sampler, maps, out)?
    };

    let metrics = if cfg.method == Method::Full {
        None
    } else {
        let (reference, _) = harness.reference()?;
        Some(compare(&result, &reference, harness.data_range)?)
    };
    let doc = RunDocument {
        engine_version: ENGINE_VERSION,
        command: if maps_only { "maps" } else { "run" },
        method: cfg.method.name(),
        config: cfg,
        report: &report,
        metrics,
    };
    write_json(&out.join("report.json"), &doc)?;
    if !maps_only {
        write_array(&result, out.join("result.npy"))?;
    }
    Ok(())
}
