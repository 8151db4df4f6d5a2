use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use region_sched::grid::LatentGrid;
use region_sched::metrics::{compare, MetricReport, PSNR_CAP_DB};
use region_sched::sampler::SamplerConfig;
use region_sched::ENGINE_VERSION;
use serde::Serialize;

use crate::config::{Method, RunConfig, SweepConfig};
use crate::error::CliError;
use crate::run::{ensure_dir, write_json, Harness, MapOptions};

/// One sweep: a CSV file with its axis columns and the cells to run.
struct Sweep {
    name: &'static str,
    axes: Vec<&'static str>,
    cells: Vec<Cell>,
}

struct Cell {
    labels: Vec<String>,
    sampler: SamplerConfig,
}

fn plan_sweeps(base: &SamplerConfig, sweep: &SweepConfig) -> Vec<Sweep> {
    let mut out = Vec::new();
    if let Some(parts) = &sweep.partitioner {
        let cells = parts
            .iter()
            .map(|&p| Cell {
                labels: vec![serde_json::to_value(p).unwrap().as_str().unwrap().to_string()],
                sampler: SamplerConfig {
                    partitioner: p,
                    ..base.clone()
                },
            })
            .collect();
        out.push(Sweep {
            name: "partitioner",
            axes: vec!["partitioner"],
            cells,
        });
    }
    if let Some(scorers) = &sweep.scorer {
        let cells = scorers
            .iter()
            .map(|&s| Cell {
                labels: vec![s.name().to_string()],
                sampler: SamplerConfig {
                    scorer: s,
                    ..base.clone()
                },
            })
            .collect();
        out.push(Sweep {
            name: "scorer",
            axes: vec!["scorer"],
            cells,
        });
    }
    if sweep.ratio.is_some() || sweep.dilation.is_some() {
        let ratios = sweep.ratio.clone().unwrap_or_else(|| vec![base.ssd.p_min]);
        let dilations = sweep.dilation.clone().unwrap_or_else(|| vec![base.dilation]);
        let mut cells = Vec::new();
        for &ratio in &ratios {
            for &dilation in &dilations {
                let mut sampler = base.clone();
                sampler.ssd.p_min = ratio;
                sampler.ssd.p_max = sampler.ssd.p_max.max(ratio);
                sampler.dilation = dilation;
                cells.push(Cell {
                    labels: vec![ratio.to_string(), dilation.to_string()],
                    sampler,
                });
            }
        }
        out.push(Sweep {
            name: "ratio_dilation",
            axes: vec!["ratio", "dilation"],
            cells,
        });
    }
    out
}

#[derive(Clone)]
struct Row {
    method: String,
    labels: Vec<String>,
    compute_ratio: f64,
    metrics: MetricReport,
    seconds: f64,
}

fn write_csv(path: &Path, axes: &[&str], rows: &[Row], timing: bool) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["method"];
    header.extend_from_slice(axes);
    header.extend_from_slice(&["compute_ratio", "mse", "psnr", "ssim", "wall_time"]);
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.method.clone()];
        rec.extend(r.labels.iter().cloned());
        rec.push(r.compute_ratio.to_string());
        rec.push(r.metrics.mse.to_string());
        rec.push(r.metrics.psnr.to_string());
        rec.push(r.metrics.ssim.to_string());
        rec.push(if timing { format!("{:.6}", r.seconds) } else { "NA".into() });
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct CellDocument<'a> {
    engine_version: &'static str,
    sweep: &'static str,
    labels: &'a [String],
    sampler: &'a SamplerConfig,
    compute_ratio: f64,
    metrics: &'a MetricReport,
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(sweep) = &cfg.sweep else {
        return Err(CliError::Config {
            field: "sweep".into(),
            message: "ablate needs a `sweep` section".into(),
        });
    };
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let harness = Harness::new(cfg)?;
    let started = Instant::now();
    let (reference, _) = harness.reference()?;
    let reference_row = Row {
        method: Method::Full.name().into(),
        labels: Vec::new(),
        compute_ratio: 1.0,
        metrics: MetricReport {
            mse: 0.0,
            psnr: PSNR_CAP_DB,
            ssim: 1.0,
        },
        seconds: started.elapsed().as_secs_f64(),
    };

    for sw in plan_sweeps(&cfg.sampler, sweep) {
        let cell_root = out.join("cells").join(sw.name);
        let rows = sw
            .cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| run_cell(&harness, cfg.method, &reference, cell, &cell_root.join(format!("{i:03}")), sw.name))
            .collect::<Result<Vec<Row>, CliError>>()?;
        let mut table = vec![Row {
            labels: vec!["NA".into(); sw.axes.len()],
            ..reference_row.clone()
        }];
        table.extend(rows);
        write_csv(&out.join(format!("ablate_{}.csv", sw.name)), &sw.axes, &table, cfg.timing)?;
    }
    write_json(
        &out.join("report.json"),
        &serde_json::json!({
            "engine_version": ENGINE_VERSION,
            "command": "ablate",
            "method": cfg.method.name(),
            "config": cfg,
        }),
    )
}

fn run_cell(
    harness: &Harness,
    method: Method,
    reference: &LatentGrid,
    cell: &Cell,
    dir: &Path,
    sweep: &'static str,
) -> Result<Row, CliError> {
    ensure_dir(dir)?;
    let started = Instant::now();
    let (result, report) = harness.sample(&harness.case.denoiser, method, &cell.sampler, MapOptions::default(), dir)?;
    let seconds = started.elapsed().as_secs_f64();
    let metrics = compare(&result, reference, harness.data_range)?;
    write_json(
        &dir.join("report.json"),
        &CellDocument {
            engine_version: ENGINE_VERSION,
            sweep,
            labels: &cell.labels,
            sampler: &cell.sampler,
            compute_ratio: report.compute_ratio,
            metrics: &metrics,
        },
    )?;
    Ok(Row {
        method: method.name().into(),
        labels: cell.labels.clone(),
        compute_ratio: report.compute_ratio,
        metrics,
        seconds,
    })
}
