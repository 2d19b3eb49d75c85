//! Experiment configuration file (TOML).
//!
//! Every section is optional and every key has a default; unknown keys are
//! rejected. See `config/default.toml` for the full schema with comments.

use std::path::{Path, PathBuf};

use hopmpc_core::controller::{ControllerConfig, PdGains};
use hopmpc_core::energy::MotorModel;
use hopmpc_core::kino_mpc::SqpSettings;
use hopmpc_core::plant::PlantSettings;
use hopmpc_core::slip::{LibraryOptions, SlipParams, SpeedGrid};
use hopmpc_core::srb_mpc::{Discretization, MpcWeights};
use hopmpc_core::state::{validate_constants, ConfigError, ConstantOverrides};
use hopmpc_core::{LegGeometry, RobotConstants, UpsModel, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(#[from] toml::de::Error),
    #[error(transparent)]
    Constants(#[from] ConfigError),
    #[error("invalid {section}: {reason}")]
    Invalid { section: &'static str, reason: String },
}

fn invalid(section: &'static str, reason: impl ToString) -> ConfigFileError {
    ConfigFileError::Invalid {
        section,
        reason: reason.to_string(),
    }
}

/// Overrides of the robot constants; absent keys keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub mass: Option<f64>,
    pub inertia: Option<f64>,
    pub slip_stiffness: Option<f64>,
    pub rest_length: Option<f64>,
    pub friction: Option<f64>,
    pub q_min: Option<[f64; 2]>,
    pub q_max: Option<[f64; 2]>,
    pub tau_max: Option<[f64; 2]>,
    pub gravity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegSection {
    pub thigh_length: f64,
    pub shank_length: f64,
    pub hip_offset: [f64; 2],
}

impl Default for LegSection {
    fn default() -> Self {
        let g = LegGeometry::default();
        Self {
            thigh_length: g.thigh_length,
            shank_length: g.shank_length,
            hip_offset: [g.hip_offset_body.x, g.hip_offset_body.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsSection {
    pub stiffness: f64,
    pub engagement_angle: f64,
}

impl Default for UpsSection {
    fn default() -> Self {
        let u = UpsModel::default();
        Self {
            stiffness: u.stiffness,
            engagement_angle: u.engagement_angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorSection {
    pub torque_constant: f64,
    pub winding_resistance: f64,
}

impl Default for MotorSection {
    fn default() -> Self {
        let m = MotorModel::default();
        Self {
            torque_constant: m.torque_constant,
            winding_resistance: m.winding_resistance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySection {
    pub speed_min: f64,
    pub speed_max: f64,
    pub speed_step: f64,
    pub nominal_height: f64,
}

impl Default for LibrarySection {
    fn default() -> Self {
        let o = LibraryOptions::default();
        Self {
            speed_min: o.grid.min,
            speed_max: o.grid.max,
            speed_step: o.grid.step,
            nominal_height: o.nominal_height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscretizationName {
    ForwardEuler,
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// State weights `[px, pz, theta, vx, vz, theta_dot]`.
    pub q: [f64; 6],
    pub r_f: [f64; 2],
    pub r_tau: [f64; 2],
    pub gamma: f64,
    pub horizon: usize,
    pub horizon_span: f64,
    pub control_dt: f64,
    pub sketch_dt: f64,
    pub clearance: f64,
    pub swing_fraction: f64,
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    pub sqp_iterations: usize,
    pub discretization: DiscretizationName,
    pub min_normal_force: f64,
    pub friction_margin: f64,
    pub release_normal_force: f64,
    pub intra_step_shaping: bool,
    pub srb_only: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Self {
            q: c.weights.q,
            r_f: c.weights.r_f,
            r_tau: c.weights.r_tau,
            gamma: c.weights.gamma,
            horizon: c.weights.horizon,
            horizon_span: c.horizon_span,
            control_dt: c.control_dt,
            sketch_dt: c.sketch_dt,
            clearance: c.clearance,
            swing_fraction: c.swing_fraction,
            kp: [c.gains.kp.x, c.gains.kp.y],
            kd: [c.gains.kd.x, c.gains.kd.y],
            sqp_iterations: c.sqp.outer_iterations,
            discretization: match c.discretization {
                Discretization::ForwardEuler => DiscretizationName::ForwardEuler,
                Discretization::SecondOrder => DiscretizationName::SecondOrder,
            },
            min_normal_force: c.min_normal_force,
            friction_margin: c.friction_margin,
            release_normal_force: c.release_normal_force,
            intra_step_shaping: c.intra_step_shaping,
            srb_only: c.srb_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// Plant integration step (s).
    pub dt: f64,
    pub rotor_inertia: f64,
    pub flight_substep: f64,
    pub release_force: f64,
    pub joint_margin: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantSettings::default();
        Self {
            dt: 1e-3,
            rotor_inertia: p.rotor_inertia,
            flight_substep: p.flight_substep,
            release_force: p.release_force,
            joint_margin: p.joint_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSegment {
    /// Commanded forward speed (m/s).
    pub speed: f64,
    /// Segment length (s).
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// CoM height of the initial drop (m).
    pub drop_height: f64,
    pub profile: Vec<ProfileSegment>,
    /// Consecutive degraded kinodynamic solves that abort a run.
    pub max_degraded_ticks: usize,
    /// Number of in-place hops for `--hops` style runs.
    pub in_place_hops: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            drop_height: 0.45,
            profile: vec![
                ProfileSegment { speed: 0.0, duration: 1.5 },
                ProfileSegment { speed: 1.0, duration: 3.0 },
                ProfileSegment { speed: 2.0, duration: 3.0 },
                ProfileSegment { speed: 1.5, duration: 3.0 },
            ],
            max_degraded_ticks: 20,
            in_place_hops: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub velocity_min: f64,
    pub velocity_max: f64,
    pub velocity_step: f64,
    pub stiffness_min: f64,
    pub stiffness_max: f64,
    pub stiffness_points: usize,
    /// Speed of the frequency sweep (m/s).
    pub frequency_speed: f64,
    /// Hops measured per point once the speed has settled.
    pub hops: usize,
    /// Consecutive apexes within `speed_tolerance` that count as settled.
    pub settle_apexes: usize,
    pub speed_tolerance: f64,
    /// Give up on a point after this many apexes without settling.
    pub max_apexes: usize,
    /// Seeds of the repeated in-place runs.
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            velocity_min: 0.5,
            velocity_max: 2.3,
            velocity_step: 0.2,
            stiffness_min: 1000.0,
            stiffness_max: 6000.0,
            stiffness_points: 8,
            frequency_speed: 1.0,
            hops: 10,
            settle_apexes: 3,
            speed_tolerance: 0.1,
            max_apexes: 30,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Amplitude scale of the seeded initial-state perturbation (0 disables it).
    pub perturbation: f64,
    pub robot: RobotSection,
    pub leg: LegSection,
    pub ups: UpsSection,
    pub motor: MotorSection,
    pub library: LibrarySection,
    pub controller: ControllerSection,
    pub plant: PlantSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            perturbation: 1.0,
            robot: RobotSection::default(),
            leg: LegSection::default(),
            ups: UpsSection::default(),
            motor: MotorSection::default(),
            library: LibrarySection::default(),
            controller: ControllerSection::default(),
            plant: PlantSection::default(),
            run: RunSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Log-spaced points from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![min];
    }
    let (a, b) = (min.ln(), max.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigFileError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        self.constants()?;
        self.motor().validate().map_err(|e| invalid("motor", e))?;
        self.controller_config().validate().map_err(|e| invalid("controller", e))?;
        let p = &self.plant;
        if !(p.dt > 0.0 && p.dt <= 1e-3) {
            return Err(invalid("plant", "dt must be in (0, 1e-3]"));
        }
        if !(p.rotor_inertia > 0.0 && p.flight_substep > 0.0 && p.release_force >= 0.0 && p.joint_margin >= 0.0) {
            return Err(invalid("plant", "inertia and substep must be positive, margins non-negative"));
        }
        let l = &self.library;
        if !(l.speed_step > 0.0 && l.speed_max >= l.speed_min && l.nominal_height > 0.0) {
            return Err(invalid("library", "need speed_step > 0, speed_max >= speed_min, nominal_height > 0"));
        }
        if self.run.profile.iter().any(|s| !(s.duration >= 0.0 && s.speed.is_finite())) {
            return Err(invalid("run", "profile durations must be non-negative"));
        }
        let s = &self.sweep;
        if !(s.velocity_step > 0.0 && s.velocity_max >= s.velocity_min) {
            return Err(invalid("sweep", "velocity grid is empty"));
        }
        if !(s.stiffness_min > 0.0 && s.stiffness_max >= s.stiffness_min && s.stiffness_points > 0) {
            return Err(invalid("sweep", "stiffness grid is empty"));
        }
        if s.hops == 0 || s.settle_apexes == 0 || !(s.speed_tolerance > 0.0) {
            return Err(invalid("sweep", "hops, settle_apexes and speed_tolerance must be positive"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> LegGeometry {
        LegGeometry {
            thigh_length: self.leg.thigh_length,
            shank_length: self.leg.shank_length,
            hip_offset_body: Vec2::from(self.leg.hip_offset),
        }
    }

    /// Spring model; `enabled = false` gives the rigid-knee baseline.
    pub fn ups(&self, enabled: bool) -> UpsModel {
        UpsModel {
            stiffness: self.ups.stiffness,
            engagement_angle: self.ups.engagement_angle,
            enabled,
        }
    }

    pub fn constants(&self) -> Result<RobotConstants, ConfigError> {
        let r = &self.robot;
        let overrides = ConstantOverrides {
            mass: r.mass,
            inertia: r.inertia,
            slip_stiffness: r.slip_stiffness,
            rest_length: r.rest_length,
            friction: r.friction,
            q_min: r.q_min,
            q_max: r.q_max,
            tau_max: r.tau_max,
            gravity: r.gravity,
        };
        validate_constants(&overrides, &self.geometry(), &self.ups(true))
    }

    pub fn slip_params(&self) -> Result<SlipParams, ConfigError> {
        Ok(SlipParams::from(&self.constants()?))
    }

    pub fn motor(&self) -> MotorModel {
        MotorModel {
            torque_constant: self.motor.torque_constant,
            winding_resistance: self.motor.winding_resistance,
        }
    }

    pub fn library_options(&self) -> LibraryOptions {
        LibraryOptions {
            grid: SpeedGrid {
                min: self.library.speed_min,
                max: self.library.speed_max,
                step: self.library.speed_step,
            },
            nominal_height: self.library.nominal_height,
            ..Default::default()
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            weights: MpcWeights {
                q: c.q,
                r_f: c.r_f,
                r_tau: c.r_tau,
                gamma: c.gamma,
                horizon: c.horizon,
            },
            sqp: SqpSettings {
                outer_iterations: c.sqp_iterations,
                ..Default::default()
            },
            gains: PdGains {
                kp: Vec2::from(c.kp),
                kd: Vec2::from(c.kd),
            },
            clearance: c.clearance,
            horizon_span: c.horizon_span,
            control_dt: c.control_dt,
            sketch_dt: c.sketch_dt,
            swing_fraction: c.swing_fraction,
            discretization: match c.discretization {
                DiscretizationName::ForwardEuler => Discretization::ForwardEuler,
                DiscretizationName::SecondOrder => Discretization::SecondOrder,
            },
            min_normal_force: c.min_normal_force,
            friction_margin: c.friction_margin,
            release_normal_force: c.release_normal_force,
            intra_step_shaping: c.intra_step_shaping,
            srb_only: c.srb_only,
            ..Default::default()
        }
    }

    pub fn plant_settings(&self) -> PlantSettings {
        PlantSettings {
            rotor_inertia: self.plant.rotor_inertia,
            flight_substep: self.plant.flight_substep,
            release_force: self.plant.release_force,
            joint_margin: self.plant.joint_margin,
            ..Default::default()
        }
    }

    pub fn velocity_grid(&self) -> Vec<f64> {
        SpeedGrid {
            min: self.sweep.velocity_min,
            max: self.sweep.velocity_max,
            step: self.sweep.velocity_step,
        }
        .speeds()
    }

    pub fn stiffness_grid(&self) -> Vec<f64> {
        log_grid(self.sweep.stiffness_min, self.sweep.stiffness_max, self.sweep.stiffness_points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_values() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.constants().unwrap(), RobotConstants::default());
        assert_eq!(cfg.controller_config(), ControllerConfig::default());
        let c = cfg.constants().unwrap();
        assert_eq!(c.mass, 2.5);
        assert_eq!(c.slip_stiffness, 1500.0);
        assert_eq!(c.friction, 0.7);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[robot]\nmas = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("mas"), "{err}");
        let err = ExperimentConfig::from_toml("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn out_of_range_constants_are_rejected() {
        let err = ExperimentConfig::from_toml("[robot]\nrest_length = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::Constants(ConfigError::Inconsistent(_))), "{err}");
        let err = ExperimentConfig::from_toml("[robot]\nfriction = -0.1\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::Constants(ConfigError::OutOfRange { name: "friction", .. })), "{err}");
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let text = include_str!("../../../config/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sweep_grids() {
        let cfg = ExperimentConfig::default();
        let v = cfg.velocity_grid();
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], 0.5);
        assert_eq!(v[9], 2.3);
        let k = cfg.stiffness_grid();
        assert_eq!(k.len(), 8);
        assert!((k[0] - 1000.0).abs() < 1e-9 && (k[7] - 6000.0).abs() < 1e-9);
        assert!(k.windows(2).all(|w| w[1] > w[0]));
    }
}
