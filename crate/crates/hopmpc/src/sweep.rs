//! Parameter sweeps. Points run in parallel, each with its own controller and
//! plant; rows are reduced serially in grid order so the result does not
//! depend on scheduling.

use hopmpc_core::slip::{build_gait_library, GaitLibrary, SlipError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigFileError, ExperimentConfig};
use crate::runlog::Schema;
use crate::runner::{run, RunSetup, StopRule};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("gait library for k_s = {stiffness} failed at {speed} m/s: {source}")]
    Library {
        stiffness: f64,
        speed: f64,
        source: SlipError,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Velocity,
    Stiffness,
}

/// One (axis point, UPS state) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub ups: bool,
    pub seed: u64,
    /// Empty for a valid point; otherwise why the point is a gap.
    pub flag: String,
    pub hops: usize,
    pub energy: Option<f64>,
    pub distance: Option<f64>,
    pub cot: Option<f64>,
    pub hop_frequency: Option<f64>,
    pub mean_apex_speed: Option<f64>,
    /// Degraded ticks over the whole run, settling included.
    pub degraded_ticks: u64,
}

impl SweepRow {
    pub fn is_valid(&self) -> bool {
        self.flag.is_empty() && self.cot.is_some()
    }
}

impl Schema for SweepRow {
    const KIND: &'static str = "sweep";
    const VERSION: u32 = 1;
    const COLUMNS: &'static [&'static str] = &[
        "axis", "value", "ups", "seed", "flag", "hops", "energy", "distance", "cot", "hop_frequency",
        "mean_apex_speed", "degraded_ticks",
    ];
}

/// Paired comparison of the two UPS states over a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: Axis,
    pub points: usize,
    /// Axis values where either UPS state has no valid row.
    pub gaps: Vec<f64>,
    pub complete: bool,
    /// Mean over complete points of `(cot_off - cot_on) / cot_off`.
    pub mean_relative_reduction: Option<f64>,
    /// Complete points where the UPS-on CoT is strictly lower.
    pub points_on_below_off: usize,
    /// Hop frequency at the CoT minimum, `[on, off]`.
    pub argmin_frequency: [Option<f64>; 2],
    /// Interior CoT minimum strictly below both endpoints, `[on, off]`.
    pub u_shaped: [bool; 2],
    /// Hop frequency strictly increasing along the axis, `[on, off]`.
    pub frequency_increasing: [bool; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

fn steady_rule(cfg: &ExperimentConfig, speed: f64) -> StopRule {
    let s = &cfg.sweep;
    StopRule::Steady {
        speed,
        hops: s.hops,
        settle_apexes: s.settle_apexes,
        tolerance: s.speed_tolerance,
        max_apexes: s.max_apexes,
    }
}

/// Run one point; failures become flagged rows instead of errors.
fn run_point(cfg: &ExperimentConfig, lib: &GaitLibrary, axis: Axis, value: f64, speed: f64, ups: bool) -> SweepRow {
    let mut row = SweepRow {
        axis,
        value,
        ups,
        seed: cfg.seed,
        flag: String::new(),
        hops: 0,
        energy: None,
        distance: None,
        cot: None,
        hop_frequency: None,
        mean_apex_speed: None,
        degraded_ticks: 0,
    };
    let setup = match RunSetup::from_config(cfg, ups) {
        Ok(s) => s,
        Err(e) => {
            row.flag = format!("config: {e}");
            return row;
        }
    };
    match run(&setup, lib, &steady_rule(cfg, speed)) {
        Ok(out) => {
            let s = out.summary;
            row.degraded_ticks = s.degraded_ticks;
            if !s.settled {
                row.flag = "unsettled".into();
            } else if s.degraded_measured > 0 {
                row.flag = "degraded".into();
            }
            if s.settled {
                row.hops = s.measured_hops;
                row.energy = Some(s.energy);
                row.distance = Some(s.distance);
                row.cot = s.cost_of_transport;
                row.hop_frequency = s.hop_frequency;
                row.mean_apex_speed = s.mean_apex_speed;
            }
        }
        Err(e) => row.flag = format!("error: {e}").replace(['\n', ','], " "),
    }
    row
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, SweepError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))
}

pub fn sweep_velocity(cfg: &ExperimentConfig, lib: &GaitLibrary, jobs: usize) -> Result<SweepResult, SweepError> {
    cfg.validate()?;
    let points: Vec<(f64, bool)> = cfg
        .velocity_grid()
        .into_iter()
        .flat_map(|v| [(v, true), (v, false)])
        .collect();
    let rows: Vec<SweepRow> = pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|&(v, ups)| run_point(cfg, lib, Axis::Velocity, v, v, ups))
            .collect()
    });
    Ok(SweepResult {
        summary: summarize(Axis::Velocity, &rows),
        rows,
    })
}

/// CoT against hop frequency: the library is rebuilt for every stiffness.
pub fn sweep_frequency(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult, SweepError> {
    cfg.validate()?;
    let stiffness = cfg.stiffness_grid();
    let rows: Vec<Vec<SweepRow>> = pool(jobs)?.install(|| {
        stiffness
            .par_iter()
            .map(|&k| {
                let mut c = cfg.clone();
                c.robot.slip_stiffness = Some(k);
                let params = c.slip_params().map_err(ConfigFileError::from)?;
                let lib = build_gait_library(&params, &c.library_options()).map_err(|(speed, source)| {
                    SweepError::Library {
                        stiffness: k,
                        speed,
                        source,
                    }
                })?;
                let speed = c.sweep.frequency_speed;
                Ok([true, false]
                    .into_par_iter()
                    .map(|ups| run_point(&c, &lib, Axis::Stiffness, k, speed, ups))
                    .collect())
            })
            .collect::<Result<_, SweepError>>()
    })?;
    let rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    Ok(SweepResult {
        summary: summarize(Axis::Stiffness, &rows),
        rows,
    })
}

fn u_shaped(cot: &[f64]) -> bool {
    if cot.len() < 3 {
        return false;
    }
    let interior = cot[1..cot.len() - 1].iter().copied().fold(f64::INFINITY, f64::min);
    interior < cot[0] && interior < cot[cot.len() - 1]
}

/// Serial reduction over the rows of one sweep.
pub fn summarize(axis: Axis, rows: &[SweepRow]) -> SweepSummary {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let find = |v: f64, ups: bool| rows.iter().find(|r| r.value == v && r.ups == ups && r.is_valid());
    let mut gaps = Vec::new();
    let mut reductions = Vec::new();
    let mut below = 0;
    for &v in &values {
        match (find(v, true), find(v, false)) {
            (Some(on), Some(off)) => {
                let (a, b) = (on.cot.unwrap_or(f64::NAN), off.cot.unwrap_or(f64::NAN));
                reductions.push((b - a) / b);
                below += (a < b) as usize;
            }
            _ => gaps.push(v),
        }
    }
    let per_state = |ups: bool| -> (Option<f64>, bool, bool) {
        let series: Vec<&SweepRow> = values.iter().filter_map(|&v| find(v, ups)).collect();
        if series.len() != values.len() {
            return (None, false, false);
        }
        let cot: Vec<f64> = series.iter().map(|r| r.cot.unwrap_or(f64::NAN)).collect();
        let freq: Vec<Option<f64>> = series.iter().map(|r| r.hop_frequency).collect();
        let argmin = cot
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .and_then(|(i, _)| freq[i]);
        let increasing = freq.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
        (argmin, u_shaped(&cot), increasing)
    };
    let (on, off) = (per_state(true), per_state(false));
    SweepSummary {
        axis,
        points: values.len(),
        complete: gaps.is_empty(),
        gaps,
        mean_relative_reduction: (!reductions.is_empty())
            .then(|| reductions.iter().sum::<f64>() / reductions.len() as f64),
        points_on_below_off: below,
        argmin_frequency: [on.0, off.0],
        u_shaped: [on.1, off.1],
        frequency_increasing: [on.2, off.2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, ups: bool, cot: f64, freq: f64) -> SweepRow {
        SweepRow {
            axis: Axis::Stiffness,
            value,
            ups,
            seed: 0,
            flag: String::new(),
            hops: 10,
            energy: Some(cot * 10.0),
            distance: Some(10.0),
            cot: Some(cot),
            hop_frequency: Some(freq),
            mean_apex_speed: Some(1.0),
            degraded_ticks: 0,
        }
    }

    #[test]
    fn summary_of_a_clean_grid() {
        let rows = vec![
            row(1.0, true, 0.5, 2.0),
            row(1.0, false, 1.0, 2.0),
            row(2.0, true, 0.3, 2.2),
            row(2.0, false, 0.9, 2.3),
            row(3.0, true, 0.6, 2.5),
            row(3.0, false, 0.8, 2.6),
        ];
        let s = summarize(Axis::Stiffness, &rows);
        assert!(s.complete);
        assert_eq!(s.points_on_below_off, 3);
        let expected = (0.5 + (0.6 / 0.9) + 0.25) / 3.0;
        assert!((s.mean_relative_reduction.unwrap() - expected).abs() < 1e-12);
        assert_eq!(s.argmin_frequency, [Some(2.2), Some(2.6)]);
        assert_eq!(s.u_shaped, [true, false]);
        assert_eq!(s.frequency_increasing, [true, true]);
    }

    #[test]
    fn flagged_points_are_gaps() {
        let mut bad = row(2.0, false, 0.1, 2.3);
        bad.flag = "degraded".into();
        let rows = vec![row(1.0, true, 0.5, 2.0), row(1.0, false, 1.0, 2.0), row(2.0, true, 0.3, 2.2), bad];
        let s = summarize(Axis::Velocity, &rows);
        assert!(!s.complete);
        assert_eq!(s.gaps, vec![2.0]);
        assert_eq!(s.points_on_below_off, 1);
        assert_eq!(s.mean_relative_reduction, Some(0.5));
        assert_eq!(s.argmin_frequency[1], None);
    }
}
