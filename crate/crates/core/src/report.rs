//! Post-hoc plots and markdown summaries of finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::EvaluationSummary;
use crate::training::{read_loss_csv, LossRow, RunLogEntry};

pub const LOSS_STAGE1: &str = "loss_stage1.svg";
pub const LOSS_STAGE2: &str = "loss_stage2.svg";
pub const IOU_VS_ROUND: &str = "iou_vs_round.svg";
pub const SUMMARY: &str = "summary.md";

const CONFIG: &str = "config.resolved.json";
const FINAL_EVAL: &str = "final_eval.json";

/// Files written by [`write_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub plots: Vec<PathBuf>,
    pub summary: PathBuf,
}

/// One row of the lambda sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub lambda: f64,
    pub eval: EvaluationSummary,
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("cannot draw {}: {e}", path.display()))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Draws seg, adv and disc loss against a running iteration index.
pub fn plot_losses(rows: &[(f64, LossRow)], title: &str, path: &Path) -> Result<()> {
    let (x0, x1) = bounds(rows.iter().map(|r| r.0));
    let (y0, y1) = bounds(rows.iter().flat_map(|(_, r)| [r.seg_loss, r.adv_loss, r.disc_loss]));
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc("iteration").y_desc("loss").draw().map_err(|e| plot_err(path, e))?;
    type Series = (&'static str, RGBColor, fn(&LossRow) -> f64);
    let series: [Series; 3] = [
        ("segmentation", BLUE, |r| r.seg_loss),
        ("adversarial", RED, |r| r.adv_loss),
        ("discriminator", GREEN, |r| r.disc_loss),
    ];
    for (name, colour, get) in series {
        chart
            .draw_series(LineSeries::new(rows.iter().map(|(x, r)| (*x, get(r))), colour))
            .map_err(|e| plot_err(path, e))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], colour));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Validation IoU of each self-training round, with the stage-1 model as a
/// dashed reference line.
pub fn plot_iou_rounds(log: &[RunLogEntry], path: &Path) -> Result<()> {
    let baseline = log.iter().find(|e| e.round == 0).map(|e| e.metrics.iou);
    let points: Vec<(f64, f64)> = log.iter().filter(|e| e.round > 0).map(|e| (e.round as f64, e.metrics.iou)).collect();
    let last = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let (y0, y1) = bounds(points.iter().map(|p| p.1).chain(baseline));
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("validation IoU per self-training round", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.5..last + 0.5, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc("round").y_desc("IoU").draw().map_err(|e| plot_err(path, e))?;
    if let Some(b) = baseline {
        chart
            .draw_series(DashedLineSeries::new([(0.5, b), (last + 0.5, b)], 6, 4, BLACK.into()))
            .map_err(|e| plot_err(path, e))?
            .label("stage 1")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));
    }
    chart
        .draw_series(LineSeries::new(points.iter().copied(), BLUE))
        .map_err(|e| plot_err(path, e))?
        .label("self-training")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLUE));
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled()))).map_err(|e| plot_err(path, e))?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

fn is_run(dir: &Path) -> bool {
    dir.join(CONFIG).is_file()
}

fn read_eval(dir: &Path) -> Result<EvaluationSummary> {
    let path = dir.join(FINAL_EVAL);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Stage-2 loss rows of every round, laid end to end.
fn stage2_losses(stage2: &Path) -> Result<Vec<(f64, LossRow)>> {
    let mut rows = Vec::new();
    let mut offset = 0.0;
    for round in 1.. {
        let path = stage2.join(format!("round_{round}")).join("losses.csv");
        if !path.is_file() {
            break;
        }
        let part = read_loss_csv(&path)?;
        let len = part.len() as f64;
        rows.extend(part.into_iter().map(|r| (offset + r.iteration as f64, r)));
        offset += len;
    }
    Ok(rows)
}

/// Completed runs directly below `dir`, sorted by lambda then name.
pub fn collect_sweep(dir: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let sub = entry.path();
        if !(is_run(&sub) && sub.join(FINAL_EVAL).is_file()) {
            continue;
        }
        let cfg = RunConfig::load(&sub.join(CONFIG))?;
        rows.push(SweepRow {
            name: entry.file_name().to_string_lossy().into_owned(),
            lambda: cfg.stage2.lambda,
            eval: read_eval(&sub)?,
        });
    }
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then_with(|| a.name.cmp(&b.name)));
    Ok(rows)
}

fn metric_row(out: &mut String, label: &str, e: &EvaluationSummary) {
    let _ = writeln!(out, "| {label} | {:.4} | {:.4} | {:.4} | {:.4} |", e.iou, e.com, e.cor, e.f1);
}

/// Writes plots for a run directory, or a lambda table for a directory of runs.
/// Outputs go to `out_dir`, which defaults to `dir`.
pub fn write_report(dir: &Path, out_dir: Option<&Path>) -> Result<ReportFiles> {
    let out_dir = out_dir.unwrap_or(dir);
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let mut plots = Vec::new();
    let mut md = String::from("# Run report\n\n");
    let mut found = false;

    if is_run(dir) {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let cfg = RunConfig::load(&dir.join(CONFIG))?;
        let _ = writeln!(
            md,
            "- seed: {}\n- lambda: {}\n- max rounds: {}\n",
            cfg.seed, cfg.stage2.lambda, cfg.stage2.max_rounds
        );

        let stage1 = dir.join("stage1").join("losses.csv");
        if stage1.is_file() {
            let rows: Vec<_> = read_loss_csv(&stage1)?.into_iter().map(|r| (r.iteration as f64, r)).collect();
            let path = out_dir.join(LOSS_STAGE1);
            plot_losses(&rows, "stage 1 losses", &path)?;
            plots.push(path);
            found = true;
        }
        let stage2 = dir.join("stage2");
        let rows = stage2_losses(&stage2)?;
        if !rows.is_empty() {
            let path = out_dir.join(LOSS_STAGE2);
            plot_losses(&rows, "stage 2 losses", &path)?;
            plots.push(path);
            found = true;
        }
        let log_path = stage2.join("run_log.jsonl");
        if log_path.is_file() {
            let log = RunLogEntry::read_all(&log_path)?;
            let path = out_dir.join(IOU_VS_ROUND);
            plot_iou_rounds(&log, &path)?;
            plots.push(path);
            found = true;
            md.push_str("## Rounds\n\n| round | easy | hard | IoU | F1 |\n|---|---|---|---|---|\n");
            for e in &log {
                let (easy, hard) =
                    e.split_sizes.map_or(("-".into(), "-".into()), |(a, b)| (a.to_string(), b.to_string()));
                let _ = writeln!(md, "| {} | {easy} | {hard} | {:.4} | {:.4} |", e.round, e.metrics.iou, e.metrics.f1);
            }
            md.push('\n');
        }
        if dir.join(FINAL_EVAL).is_file() {
            let e = read_eval(dir)?;
            md.push_str("## Final evaluation\n\n| model | IoU | COM | COR | F1 |\n|---|---|---|---|---|\n");
            metric_row(&mut md, "final", &e);
            md.push('\n');
            found = true;
        }
        if !plots.is_empty() {
            md.push_str("## Plots\n\n");
            for p in &plots {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let _ = writeln!(md, "- [{name}]({name})");
            }
            md.push('\n');
        }
    } else {
        let sweep = collect_sweep(dir)?;
        if !sweep.is_empty() {
            std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
            found = true;
            md.push_str("## Lambda sweep\n\n| lambda | run | IoU | COM | COR | F1 |\n|---|---|---|---|---|---|\n");
            for r in &sweep {
                let e = &r.eval;
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    r.lambda, r.name, e.iou, e.com, e.cor, e.f1
                );
            }
            md.push('\n');
        }
    }

    if !found {
        return Err(Error::invalid(format!("no run logs found in {}", dir.display())));
    }
    let summary = out_dir.join(SUMMARY);
    std::fs::write(&summary, md).map_err(|e| Error::io(&summary, e))?;
    Ok(ReportFiles { plots, summary })
}
