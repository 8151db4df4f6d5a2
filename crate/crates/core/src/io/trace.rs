//! `trace.json` manifests of recorded denoiser outputs, and offline replay of
//! the scheduler over them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::npy::{read_array, write_array};
use crate::error::{Error, Result};
use crate::grid::{BitMask, LatentGrid};
use crate::sampler::{Denoiser, Evaluation, RunReport, SamplerConfig, Scheduler};
use crate::ssd::StepMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub t: usize,
    pub sigma: f64,
    pub x: PathBuf,
    pub eps: PathBuf,
    pub x_pred: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceManifest {
    pub steps: Vec<TraceStep>,
}

/// One recorded denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub t: usize,
    pub sigma: f64,
    pub x: LatentGrid,
    pub eps: LatentGrid,
    pub x_pred: LatentGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub frames: Vec<TraceFrame>,
}

const MANIFEST: &str = "trace.json";

/// Loads and validates `dir/trace.json` and every array it references.
pub fn load_trace(dir: impl AsRef<Path>) -> Result<Trace> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let manifest: TraceManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if manifest.steps.is_empty() {
        return Err(Error::Manifest("trace has no steps".into()));
    }
    for pair in manifest.steps.windows(2) {
        if !(pair[1].sigma < pair[0].sigma) {
            return Err(Error::Manifest(format!(
                "sigma must strictly decrease: step {} has {} after {}",
                pair[1].t, pair[1].sigma, pair[0].sigma
            )));
        }
        if pair[1].t <= pair[0].t {
            return Err(Error::Manifest(format!("step indices must increase ({} after {})", pair[1].t, pair[0].t)));
        }
    }
    let mut frames = Vec::with_capacity(manifest.steps.len());
    let mut shape = None;
    for step in &manifest.steps {
        if !step.sigma.is_finite() || step.sigma < 0.0 {
            return Err(Error::Manifest(format!("step {} has invalid sigma {}", step.t, step.sigma)));
        }
        let load = |rel: &Path| -> Result<LatentGrid> {
            let file = dir.join(rel);
            if !file.is_file() {
                return Err(Error::Manifest(format!("missing array file {}", file.display())));
            }
            read_array(&file).map_err(|e| Error::Manifest(format!("{}: {e}", file.display())))
        };
        let frame = TraceFrame {
            t: step.t,
            sigma: step.sigma,
            x: load(&step.x)?,
            eps: load(&step.eps)?,
            x_pred: load(&step.x_pred)?,
        };
        let s = frame.x.shape();
        if frame.eps.shape() != s || frame.x_pred.shape() != s || shape.is_some_and(|p| p != s) {
            return Err(Error::Manifest(format!("step {} arrays disagree in shape", step.t)));
        }
        shape = Some(s);
        frames.push(frame);
    }
    Ok(Trace {
        steps: manifest.steps,
        frames,
    })
}

/// Writes `frames` as NPY files plus a `trace.json` manifest into `dir`.
pub fn write_trace(dir: impl AsRef<Path>, frames: &[TraceFrame]) -> Result<TraceManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut steps = Vec::with_capacity(frames.len());
    for f in frames {
        let name = |kind: &str| PathBuf::from(format!("{kind}_t{:04}.npy", f.t));
        let step = TraceStep {
            t: f.t,
            sigma: f.sigma,
            x: name("x"),
            eps: name("eps"),
            x_pred: name("x_pred"),
        };
        write_array(&f.x, dir.join(&step.x))?;
        write_array(&f.eps, dir.join(&step.eps))?;
        write_array(&f.x_pred, dir.join(&step.x_pred))?;
        steps.push(step);
    }
    let manifest = TraceManifest { steps };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Wraps a denoiser, evaluating the full grid on every call and keeping a
/// frame per call. Masked outputs are identical to the inner denoiser's.
#[derive(Debug)]
pub struct TraceRecorder<D> {
    inner: D,
    frames: Mutex<Vec<TraceFrame>>,
}

impl<D: Denoiser> TraceRecorder<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            frames: Mutex::new(Vec::new()),
        }
    }

    pub fn into_frames(self) -> Vec<TraceFrame> {
        self.frames.into_inner().expect("recorder lock poisoned")
    }
}

impl<D: Denoiser> Denoiser for TraceRecorder<D> {
    fn evaluate_masked(&self, x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()> {
        let full = self.inner.evaluate(x, sigma)?;
        for i in mask.indices() {
            out.eps.pixel_mut(i).copy_from_slice(full.eps.pixel(i));
            out.x_pred.pixel_mut(i).copy_from_slice(full.x_pred.pixel(i));
        }
        let mut frames = self.frames.lock().expect("recorder lock poisoned");
        let t = frames.len();
        frames.push(TraceFrame {
            t,
            sigma,
            x: x.clone(),
            eps: full.eps,
            x_pred: full.x_pred,
        });
        Ok(())
    }
}

/// Serves recorded predictions, looked up by exact σ, ignoring the latent.
#[derive(Debug, Clone)]
pub struct PlaybackDenoiser {
    frames: Vec<TraceFrame>,
}

impl PlaybackDenoiser {
    pub fn new(frames: Vec<TraceFrame>) -> Self {
        Self { frames }
    }
}

impl Denoiser for PlaybackDenoiser {
    fn evaluate_masked(&self, _x: &LatentGrid, sigma: f64, mask: &BitMask, out: &mut Evaluation) -> Result<()> {
        let f = self
            .frames
            .iter()
            .find(|f| f.sigma == sigma)
            .ok_or_else(|| Error::Manifest(format!("no recorded frame at sigma {sigma}")))?;
        for i in mask.indices() {
            out.eps.pixel_mut(i).copy_from_slice(f.eps.pixel(i));
            out.x_pred.pixel_mut(i).copy_from_slice(f.x_pred.pixel(i));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub t: usize,
    pub sigma: f64,
    pub mode: StepMode,
    pub ratio: f64,
    pub active_pixel_count: usize,
    pub cached_pixel_count: usize,
    pub region_count: usize,
    /// Relative L2 between extrapolated and recorded noise on cached pixels.
    pub extrapolation_error: Option<f64>,
    /// Probe divergence, as the in-loop sampler would measure it.
    pub divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub report: RunReport,
    pub rows: Vec<ReplayRow>,
    /// Active set per step.
    pub masks: Vec<BitMask>,
}

/// Runs segmentation, scoring, selection and extrapolation over recorded
/// latents without integrating anything.
pub fn replay_schedule(trace: &Trace, cfg: &SamplerConfig) -> Result<ReplayResult> {
    let frames = &trace.frames;
    let first = frames.first().ok_or_else(|| Error::Manifest("trace has no steps".into()))?;
    let (h, w, _) = first.x.shape();
    let sigmas: Vec<f64> = frames.iter().map(|f| f.sigma).collect();
    let mut sched = Scheduler::new(cfg, &sigmas, frames.len(), first.x.shape())?;
    let mut records = Vec::with_capacity(frames.len());
    let mut rows = Vec::with_capacity(frames.len());
    let mut masks = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        sched.plan(t, &f.x)?;
        let fresh = Evaluation {
            eps: f.eps.clone(),
            x_pred: f.x_pred.clone(),
        };
        let outcome = sched.resolve(&fresh, true)?;
        let mask = sched.active().expect("resolved step keeps its plan").clone();
        let rec = outcome.record;
        rows.push(ReplayRow {
            t: f.t,
            sigma: f.sigma,
            mode: rec.mode,
            ratio: rec.ratio,
            active_pixel_count: rec.active_pixel_count,
            cached_pixel_count: h * w - rec.active_pixel_count,
            region_count: rec.region_count,
            extrapolation_error: outcome.cached_error,
            divergence: rec.divergence,
        });
        masks.push(mask);
        records.push(rec);
    }
    Ok(ReplayResult {
        report: RunReport::from_steps(h, w, records),
        rows,
        masks,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn replay_csv(rows: &[ReplayRow]) -> String {
    let mut out = String::from(
        "t,sigma,mode,ratio,active_pixel_count,cached_pixel_count,region_count,extrapolation_error,divergence\n",
    );
    for r in rows {
        let mode = match r.mode {
            StepMode::Full => "full",
            StepMode::Sparse => "sparse",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.sigma,
            mode,
            r.ratio,
            r.active_pixel_count,
            r.cached_pixel_count,
            r.region_count,
            opt(r.extrapolation_error),
            opt(r.divergence)
        )
        .expect("writing to a String");
    }
    out
}
