//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use hopmpc_core::slip::{build_gait_library, GaitLibrary, SlipError};
use thiserror::Error;

use crate::config::{ConfigFileError, ExperimentConfig};
use crate::library_file::{self, LibraryFileError};
use crate::qp_dump::{self, DumpError};
use crate::report::{self, ReportError};
use crate::runlog::{save_table, TableError};
use crate::runner::{run, segment_tracking, RunError, RunSetup, StopRule};
use crate::sweep::{sweep_frequency, sweep_velocity, SweepError, SweepResult};

#[derive(Debug, Parser)]
#[command(name = "hopmpc", version, about = "Hopping robot MPC experiments")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the gait library and write `gaitlib.csv`.
    Gaitlib,
    /// One closed-loop run.
    Run {
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        ups: OnOff,
        /// Gait library file; defaults to `<out>/gaitlib.csv` if present.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Hop in place for `run.in_place_hops` metered hops instead of
        /// following the velocity profile.
        #[arg(long)]
        in_place: bool,
        /// Also write the last SRB QP as JSON.
        #[arg(long)]
        dump_qp: bool,
    },
    /// CoT over the velocity grid with and without the UPS.
    SweepVelocity {
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// CoT and hop frequency over the spring-stiffness grid.
    SweepFrequency,
    /// Tables and plots from run logs and sweep tables.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigFileError),
    #[error("gait library: no convergence at {speed} m/s: {source}")]
    Library { speed: f64, source: SlipError },
    #[error("gait library file: {0}")]
    LibraryFile(#[from] LibraryFileError),
    #[error("run: {0}")]
    Run(#[from] RunError),
    #[error("sweep: {0}")]
    Sweep(#[from] SweepError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("table: {0}")]
    Table(#[from] TableError),
    #[error("qp dump: {0}")]
    Dump(#[from] DumpError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("--jobs must be at least 1")]
    Jobs,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes")
}

impl Cli {
    fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    /// Run the command, returning the lines printed on success.
    pub fn execute(&self) -> Result<Vec<String>, CliError> {
        if self.jobs == 0 {
            return Err(CliError::Jobs);
        }
        let cfg = self.load_config()?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out)?;
        match &self.command {
            Command::Gaitlib => gaitlib(&cfg, &out),
            Command::Run {
                ups,
                library,
                in_place,
                dump_qp,
            } => {
                let lib = library_for(&cfg, library.as_deref(), &out)?;
                run_cmd(&cfg, &lib, *ups == OnOff::On, *in_place, *dump_qp, &out)
            }
            Command::SweepVelocity { library } => {
                let lib = library_for(&cfg, library.as_deref(), &out)?;
                let res = sweep_velocity(&cfg, &lib, self.jobs)?;
                write_sweep(&cfg, &res, "sweep_velocity", &out)
            }
            Command::SweepFrequency => {
                let res = sweep_frequency(&cfg, self.jobs)?;
                write_sweep(&cfg, &res, "sweep_frequency", &out)
            }
            Command::Report { inputs } => {
                let c = cfg.constants().map_err(ConfigFileError::from)?;
                let rep = report::report(inputs, &out.join("report"), c.mass, c.g())?;
                Ok(rep.files.iter().map(|f| format!("wrote {}", f.display())).collect())
            }
        }
    }
}

fn build_library(cfg: &ExperimentConfig) -> Result<GaitLibrary, CliError> {
    let params = cfg.slip_params().map_err(ConfigFileError::from)?;
    build_gait_library(&params, &cfg.library_options()).map_err(|(speed, source)| CliError::Library { speed, source })
}

fn library_for(cfg: &ExperimentConfig, path: Option<&Path>, out: &Path) -> Result<GaitLibrary, CliError> {
    let params = cfg.slip_params().map_err(ConfigFileError::from)?;
    let default = out.join("gaitlib.csv");
    match path {
        Some(p) => Ok(library_file::load(p, &params)?),
        None if default.exists() => Ok(library_file::load(&default, &params)?),
        None => build_library(cfg),
    }
}

fn gaitlib(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let start = std::time::Instant::now();
    let lib = build_library(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let (mut worst, mut at) = (0.0f64, 0.0);
    for e in &lib.entries {
        let r = e
            .fixed_point_residual(&lib.params)
            .map_err(|err| CliError::Library {
                speed: e.commanded_speed,
                source: err.into(),
            })?;
        if r >= worst {
            worst = r;
            at = e.commanded_speed;
        }
    }
    let path = out.join("gaitlib.csv");
    library_file::save(&lib, &cfg.library_options().grid, &path)?;
    Ok(vec![
        format!("{} entries in {elapsed:.2} s", lib.entries.len()),
        format!("max fixed-point residual {worst:.3e} at {at} m/s"),
        format!("wrote {}", path.display()),
    ])
}

fn run_cmd(
    cfg: &ExperimentConfig,
    lib: &GaitLibrary,
    ups: bool,
    in_place: bool,
    dump_qp: bool,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    let setup = RunSetup::from_config(cfg, ups)?;
    let rule = if in_place {
        StopRule::Steady {
            speed: 0.0,
            hops: cfg.run.in_place_hops,
            settle_apexes: cfg.sweep.settle_apexes,
            tolerance: cfg.sweep.speed_tolerance,
            max_apexes: cfg.sweep.max_apexes,
        }
    } else {
        StopRule::Profile(cfg.run.profile.clone())
    };
    let res = run(&setup, lib, &rule)?;
    let kind = if in_place { "inplace" } else { "profile" };
    let dir = out.join(format!("run_{kind}_ups_{}_seed_{}", if ups { "on" } else { "off" }, cfg.seed));
    std::fs::create_dir_all(&dir)?;
    save_table(&res.log, &dir.join("log.csv"))?;
    save_table(&res.ticks, &dir.join("ticks.csv"))?;
    save_table(&res.apexes, &dir.join("apexes.csv"))?;
    std::fs::write(dir.join("summary.json"), json(&res.summary))?;
    let s = &res.summary;
    let mut lines = vec![
        format!("{:.3} s simulated, {} ticks, {} degraded", s.sim_time, s.ticks, s.degraded_ticks),
        format!("E+ = {:.3} J over {:.3} m, peak |pitch| {:.3} rad", s.energy, s.distance, s.max_abs_pitch),
    ];
    if let Some(c) = s.cost_of_transport {
        lines.push(format!("CoT = {c:.4}"));
    }
    if let Some(m) = s.median_stance_tick_us {
        lines.push(format!("median stance tick {:.3} ms", m * 1e-3));
    }
    if !in_place {
        let tracking = segment_tracking(&res.apexes, &cfg.run.profile, cfg.sweep.speed_tolerance);
        for t in &tracking {
            lines.push(format!(
                "segment {} m/s: {} apexes, converged after {} hops",
                t.speed,
                t.apexes,
                t.hops_to_converge.map_or("no".into(), |h| h.to_string())
            ));
        }
        std::fs::write(dir.join("tracking.json"), json(&tracking))?;
    }
    if dump_qp {
        if let Some(qp) = &res.last_srb_qp {
            qp_dump::save(qp, &dir.join("srb_qp.json"))?;
        }
    }
    lines.push(format!("wrote {}", dir.display()));
    Ok(lines)
}

fn write_sweep(cfg: &ExperimentConfig, res: &SweepResult, stem: &str, out: &Path) -> Result<Vec<String>, CliError> {
    let csv = out.join(format!("{stem}.csv"));
    save_table(&res.rows, &csv)?;
    std::fs::write(out.join(format!("{stem}_summary.json")), json(&res.summary))?;
    let c = cfg.constants().map_err(ConfigFileError::from)?;
    let rep = report::report(std::slice::from_ref(&csv), &out.join(format!("{stem}_report")), c.mass, c.g())?;
    let s = &res.summary;
    let mut lines = vec![format!(
        "{} points, UPS-on CoT lower at {}; mean reduction {}",
        s.points,
        s.points_on_below_off,
        s.mean_relative_reduction
            .map_or("n/a".into(), |m| format!("{:.1}%", 100.0 * m))
    )];
    if !s.complete {
        lines.push(format!("gaps at {:?}", s.gaps));
    }
    lines.push(format!("wrote {}", csv.display()));
    lines.extend(rep.files.iter().map(|f| format!("wrote {}", f.display())));
    Ok(lines)
}
