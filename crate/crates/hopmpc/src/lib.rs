//! Experiment harness around `hopmpc-core`: configuration files, gait
//! library and run-log formats, closed-loop runs, parameter sweeps and
//! reports.

pub mod config;
pub mod library_file;
pub mod runlog;
pub mod runner;
pub mod report;
pub mod sweep;
pub mod qp_dump;
pub mod cli;
