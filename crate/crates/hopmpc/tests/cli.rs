use std::path::Path;

use clap::Parser;
use hopmpc::cli::{Cli, CliError};
use hopmpc::config::ConfigFileError;
use hopmpc::runlog::{LogRow, Schema};
use hopmpc::runner::RunError;

const NARROW: &str = "[library]\nspeed_min = 0.0\nspeed_max = 1.0\nspeed_step = 0.5\n";

fn cli(dir: &Path, config: &str, args: &[&str]) -> Result<Vec<String>, CliError> {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    let mut argv = vec![
        "hopmpc".to_string(),
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        dir.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    Cli::try_parse_from(argv).unwrap().execute()
}

#[test]
fn gaitlib_writes_narrowed_grid() {
    let dir = tempfile::tempdir().unwrap();
    let lines = cli(dir.path(), NARROW, &["gaitlib"]).unwrap();
    assert!(lines[0].starts_with("3 entries"), "{lines:?}");
    let text = std::fs::read_to_string(dir.path().join("gaitlib.csv")).unwrap();
    assert!(text.starts_with("# hopmpc-gaitlib v1"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let err = cli(dir.path(), "[controller]\nhorizn = 10\n", &["gaitlib"]).unwrap_err();
    assert!(matches!(err, CliError::Config(ConfigFileError::Schema(_))));
    assert!(err.to_string().contains("horizn"), "{err}");
}

#[test]
fn zero_length_profile_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{NARROW}[run]\nprofile = [{{ speed = 0.0, duration = 0.0 }}]\n");
    let err = cli(dir.path(), &config, &["run"]).unwrap_err();
    assert!(matches!(err, CliError::Run(RunError::EmptyRun)), "{err}");
}

#[test]
fn run_then_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{NARROW}[run]\nprofile = [{{ speed = 0.0, duration = 1.2 }}, {{ speed = 0.5, duration = 1.0 }}]\n");
    cli(dir.path(), &config, &["gaitlib"]).unwrap();
    cli(dir.path(), &config, &["run", "--dump-qp"]).unwrap();
    let run_dir = dir.path().join("run_profile_ups_on_seed_0");
    for f in ["log.csv", "ticks.csv", "apexes.csv", "summary.json", "tracking.json", "srb_qp.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let qp = hopmpc::qp_dump::load(&run_dir.join("srb_qp.json")).unwrap();
    assert!(qp.n() > 0);

    let log = run_dir.join("log.csv").display().to_string();
    let read = |name: &str| std::fs::read(dir.path().join("report").join(name)).unwrap();
    cli(dir.path(), &config, &["report", &log]).unwrap();
    let first = (read("runs.csv"), read("energy_table.md"), read("torque_distribution.svg"));
    cli(dir.path(), &config, &["report", &log]).unwrap();
    let second = (read("runs.csv"), read("energy_table.md"), read("torque_distribution.svg"));
    assert!(first == second, "report output differs between identical invocations");
}

#[test]
fn report_rejects_malformed_log() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    let header = LogRow::COLUMNS.join(",");
    std::fs::write(&bad, format!("# hopmpc-runlog v1\n{header}\n1,true,oops\n")).unwrap();
    let err = cli(dir.path(), "", &["report", &bad.display().to_string()]).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
