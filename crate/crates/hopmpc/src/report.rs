//! Summary tables and SVG plots built from run logs and sweep tables.
//!
//! Output depends only on the input files and their order, so identical
//! inputs give byte-identical reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hopmpc_core::energy::{torque_stats, EnergyError};
use hopmpc_core::Vec2;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runlog::{read_table, save_table, LogRow, Schema, TableError};
use crate::sweep::{summarize, Axis, SweepRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no input files")]
    NoInput,
    #[error("{path}: {source}")]
    Table { path: PathBuf, source: TableError },
    #[error("{0}: no metered samples")]
    NoSamples(PathBuf),
    #[error("{path}: {source}")]
    Energy { path: PathBuf, source: EnergyError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plot {0}: {1}")]
    Plot(String, String),
}

/// Metrics of one run log, recomputed from its metered rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub file: String,
    pub seed: u64,
    pub ups: bool,
    pub duration: f64,
    pub energy: f64,
    pub distance: f64,
    pub cot: Option<f64>,
    pub hip_mean: f64,
    pub hip_std: f64,
    pub hip_upper_quartile: f64,
    pub hip_peak: f64,
    pub knee_mean: f64,
    pub knee_std: f64,
    pub knee_upper_quartile: f64,
    pub knee_peak: f64,
}

impl Schema for RunMetrics {
    const KIND: &'static str = "report-runs";
    const VERSION: u32 = 1;
    const COLUMNS: &'static [&'static str] = &[
        "file", "seed", "ups", "duration", "energy", "distance", "cot", "hip_mean", "hip_std", "hip_upper_quartile",
        "hip_peak", "knee_mean", "knee_std", "knee_upper_quartile", "knee_peak",
    ];
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_metrics(file: &str, rows: &[LogRow], mass: f64, g: f64) -> Option<RunMetrics> {
    let m: Vec<&LogRow> = rows.iter().filter(|r| r.measured).collect();
    if m.len() < 2 {
        return None;
    }
    let mut energy = 0.0;
    let mut distance = 0.0;
    for w in m.windows(2) {
        energy += 0.5 * (w[0].power + w[1].power) * (w[1].t - w[0].t);
        distance += (w[1].px - w[0].px).abs();
    }
    let taus: Vec<(Vec2, bool)> = m.iter().map(|r| (Vec2::new(r.tau_hip, r.tau_knee), r.stance)).collect();
    let [hip, knee] = torque_stats(taus.iter().map(|(t, s)| (t, *s))).ok()?;
    Some(RunMetrics {
        file: file.to_string(),
        seed: m[0].seed,
        ups: m[0].ups,
        duration: m[m.len() - 1].t - m[0].t,
        energy,
        distance,
        cot: (distance > 0.0).then(|| energy / (mass * g * distance)),
        hip_mean: hip.mean_abs,
        hip_std: hip.std_abs,
        hip_upper_quartile: hip.upper_quartile,
        hip_peak: hip.peak,
        knee_mean: knee.mean_abs,
        knee_std: knee.std_abs,
        knee_upper_quartile: knee.upper_quartile,
        knee_peak: knee.peak,
    })
}

/// Energy and torque table for runs grouped by UPS state.
pub fn energy_table(runs: &[RunMetrics]) -> String {
    let mut s = String::new();
    writeln!(s, "| UPS | runs | E+ (J) | knee mean abs torque (N m) | knee upper quartile (N m) | hip mean abs torque (N m) | hip upper quartile (N m) | CoT |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|---|---|").unwrap();
    let mut means = [None, None];
    for (i, ups) in [true, false].into_iter().enumerate() {
        let g: Vec<&RunMetrics> = runs.iter().filter(|r| r.ups == ups).collect();
        if g.is_empty() {
            continue;
        }
        let col = |f: fn(&RunMetrics) -> f64| {
            let (m, sd) = mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            format!("{m:.2} ± {sd:.2}")
        };
        let cots: Vec<f64> = g.iter().filter_map(|r| r.cot).collect();
        let cot = if cots.len() == g.len() {
            let (m, sd) = mean_std(&cots);
            format!("{m:.3} ± {sd:.3}")
        } else {
            "n/a".into()
        };
        means[i] = Some(mean_std(&g.iter().map(|r| r.energy).collect::<Vec<_>>()).0);
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            if ups { "on" } else { "off" },
            g.len(),
            col(|r| r.energy),
            col(|r| r.knee_mean),
            col(|r| r.knee_upper_quartile),
            col(|r| r.hip_mean),
            col(|r| r.hip_upper_quartile),
            cot
        )
        .unwrap();
    }
    if let [Some(on), Some(off)] = means {
        writeln!(s, "\nEnergy reduction with UPS: {:.1}%", 100.0 * (off - on) / off).unwrap();
    }
    s
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let axis = rows.first().map_or(Axis::Velocity, |r| r.axis);
    let label = match axis {
        Axis::Velocity => "v (m/s)",
        Axis::Stiffness => "k_s (N/m)",
    };
    writeln!(s, "| {label} | UPS | CoT | E+ (J) | hop frequency (Hz) | flag |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|").unwrap();
    let opt = |v: Option<f64>, p: usize| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.p$}"));
    for r in rows {
        writeln!(
            s,
            "| {:.3} | {} | {} | {} | {} | {} |",
            r.value,
            if r.ups { "on" } else { "off" },
            opt(r.cot, 4),
            opt(r.energy, 2),
            opt(r.hop_frequency, 3),
            r.flag
        )
        .unwrap();
    }
    let sum = summarize(axis, rows);
    writeln!(s).unwrap();
    match sum.mean_relative_reduction {
        Some(m) => writeln!(s, "Mean CoT reduction with UPS: {:.1}%", 100.0 * m).unwrap(),
        None => writeln!(s, "Mean CoT reduction with UPS: n/a").unwrap(),
    }
    writeln!(s, "UPS-on CoT below UPS-off at {} of {} points", sum.points_on_below_off, sum.points).unwrap();
    if !sum.gaps.is_empty() {
        writeln!(s, "Gaps at {:?}", sum.gaps).unwrap();
    }
    s
}

fn plot_err(name: &str) -> impl Fn(&dyn std::fmt::Display) -> ReportError + '_ {
    move |e| ReportError::Plot(name.to_string(), e.to_string())
}

fn bounds(pts: impl Iterator<Item = (f64, f64)> + Clone) -> ((f64, f64), (f64, f64)) {
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (x0, x1) = fold(&mut pts.clone().map(|p| p.0));
    let (y0, y1) = fold(&mut pts.map(|p| p.1));
    let pad = |a: f64, b: f64| {
        if !(a.is_finite() && b.is_finite()) {
            (0.0, 1.0)
        } else if b - a < 1e-12 {
            (a - 0.5, b + 0.5)
        } else {
            let d = 0.05 * (b - a);
            (a - d, b + d)
        }
    };
    (pad(x0, x1), pad(y0, y1))
}

/// Line plot of several named series.
fn line_plot(path: &Path, caption: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<(), ReportError> {
    let name = path.display().to_string();
    let err = plot_err(&name);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let ((x0, x1), (y0, y1)) = bounds(series.iter().flat_map(|s| s.1.iter().copied()).collect::<Vec<_>>().into_iter());
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Normalized histogram of stance `|tau|` per joint and UPS state.
fn torque_histograms(logs: &[Vec<LogRow>], bin: f64) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut out = Vec::new();
    for (j, joint) in ["hip", "knee"].into_iter().enumerate() {
        for ups in [true, false] {
            let mags: Vec<f64> = logs
                .iter()
                .flatten()
                .filter(|r| r.measured && r.stance && r.ups == ups)
                .map(|r| if j == 0 { r.tau_hip.abs() } else { r.tau_knee.abs() })
                .collect();
            if mags.is_empty() {
                continue;
            }
            let nbins = (mags.iter().copied().fold(0.0, f64::max) / bin) as usize + 1;
            let mut h = vec![0usize; nbins];
            for m in &mags {
                h[(m / bin) as usize] += 1;
            }
            let pts = h
                .iter()
                .enumerate()
                .map(|(i, c)| ((i as f64 + 0.5) * bin, *c as f64 / mags.len() as f64))
                .collect();
            out.push((format!("{joint}, UPS {}", if ups { "on" } else { "off" }), pts));
        }
    }
    out
}

/// Which table a file holds, read from its first line.
enum Input {
    Log(Vec<LogRow>),
    Sweep(Vec<SweepRow>),
}

fn read_input(path: &Path) -> Result<Input, ReportError> {
    let text = std::fs::read_to_string(path)?;
    let table = |source| ReportError::Table {
        path: path.to_path_buf(),
        source,
    };
    if text.starts_with(&SweepRow::magic()) {
        Ok(Input::Sweep(read_table(text.as_bytes()).map_err(table)?))
    } else {
        Ok(Input::Log(read_table(text.as_bytes()).map_err(table)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub runs: Vec<RunMetrics>,
    pub files: Vec<PathBuf>,
}

/// Build the report for `inputs` into `out_dir`.
pub fn report(inputs: &[PathBuf], out_dir: &Path, mass: f64, g: f64) -> Result<Report, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::NoInput);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut logs = Vec::new();
    let mut runs = Vec::new();
    let mut sweeps = Vec::new();
    for p in inputs {
        let label = p.display().to_string();
        match read_input(p)? {
            Input::Log(rows) => {
                let m = run_metrics(&label, &rows, mass, g).ok_or_else(|| ReportError::NoSamples(p.clone()))?;
                runs.push(m);
                logs.push(rows);
            }
            Input::Sweep(rows) => {
                if rows.is_empty() {
                    return Err(ReportError::NoSamples(p.clone()));
                }
                sweeps.push(rows);
            }
        }
    }
    let mut files = Vec::new();
    if !runs.is_empty() {
        let f = out_dir.join("runs.csv");
        save_table(&runs, &f).map_err(|source| ReportError::Table {
            path: f.clone(),
            source,
        })?;
        files.push(f);
        let f = out_dir.join("energy_table.md");
        std::fs::write(&f, energy_table(&runs))?;
        files.push(f);
        let f = out_dir.join("torque_distribution.svg");
        line_plot(&f, "Stance joint torque distribution", "|tau| (N m)", "fraction of samples", &torque_histograms(&logs, 1.0))?;
        files.push(f);
    }
    for (i, rows) in sweeps.iter().enumerate() {
        let axis = rows[0].axis;
        let stem = match axis {
            Axis::Velocity => format!("cot_velocity_{i}"),
            Axis::Stiffness => format!("cot_frequency_{i}"),
        };
        let f = out_dir.join(format!("{stem}.md"));
        std::fs::write(&f, sweep_table(rows))?;
        files.push(f);
        let series: Vec<(String, Vec<(f64, f64)>)> = [true, false]
            .into_iter()
            .map(|ups| {
                let pts = rows
                    .iter()
                    .filter(|r| r.ups == ups && r.is_valid())
                    .filter_map(|r| {
                        let x = match axis {
                            Axis::Velocity => Some(r.value),
                            Axis::Stiffness => r.hop_frequency,
                        };
                        Some((x?, r.cot?))
                    })
                    .collect();
                (format!("UPS {}", if ups { "on" } else { "off" }), pts)
            })
            .collect();
        let (caption, x_label) = match axis {
            Axis::Velocity => ("CoT against forward velocity", "v (m/s)"),
            Axis::Stiffness => ("CoT against hop frequency", "hop frequency (Hz)"),
        };
        let f = out_dir.join(format!("{stem}.svg"));
        line_plot(&f, caption, x_label, "CoT", &series)?;
        files.push(f);
    }
    Ok(Report { runs, files })
}
