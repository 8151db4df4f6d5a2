use std::fs;
use std::path::Path;

use region_sched::io::{load_trace, replay_csv, replay_schedule, write_mask_ppm};
use region_sched::ssd::StepMode;
use region_sched::ENGINE_VERSION;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{ensure_dir, step_file, write_json};

pub fn cmd_replay(cfg: &RunConfig, trace_dir: Option<&Path>) -> Result<(), CliError> {
    let dir = trace_dir.or(cfg.trace_dir.as_deref()).ok_or_else(|| CliError::Config {
        field: "trace_dir".into(),
        message: "replay needs a trace directory (--trace or `trace_dir`)".into(),
    })?;
    let trace = load_trace(dir)?;
    let result = replay_schedule(&trace, &cfg.sampler)?;

    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let csv_path = out.join("replay.csv");
    fs::write(&csv_path, replay_csv(&result.rows)).map_err(|e| CliError::io(&csv_path, e))?;
    for (row, mask) in result.rows.iter().zip(&result.masks) {
        if row.mode == StepMode::Sparse {
            write_mask_ppm(mask, step_file(out, "mask", row.t, "ppm"))?;
        }
    }
    write_json(
        &out.join("report.json"),
        &serde_json::json!({
            "engine_version": ENGINE_VERSION,
            "command": "replay",
            "config": cfg,
            "report": result.report,
        }),
    )
}
