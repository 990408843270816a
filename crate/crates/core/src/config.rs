//! Declarative scenario configuration: schema-versioned TOML with unknown
//! keys rejected and units carried in the field names.

use crate::error::{Error, Result};
use crate::features::{ActuatorFaultFamily, ScenarioFamily, SensorFaultFamily, UniformRange};
use crate::model::{
    default_pyramid_elevation, pyramid_wheel_config, spacecraft_control_law, spacecraft_model,
    ActuatorFaultProfile, ControlLaw, Disturbance, FaultScenario, Reference, Signal,
    SpacecraftParams, SystemModel, Waveform, Window,
};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub scenario: ScenarioBlock,
    pub observer: ObserverBlock,
    pub sim: SimBlock,
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub train: Option<TrainBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Spacecraft(SpacecraftConfig),
    Lti(LtiConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftConfig {
    pub inertia_diag_kgm2: [f64; 3],
    pub wheel_inertia_kgm2: f64,
    pub torque_limit_nm: f64,
    #[serde(default)]
    pub pyramid_elevation_rad: Option<f64>,
    pub kp_diag: [f64; 3],
    pub kd_diag: [f64; 3],
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Rest-to-rest reorientation target.
    Constant { theta_ref_rad: [f64; 3] },
    /// Per-axis sinusoidal attitude tracking (keeps the wheels loaded so
    /// loss-of-effectiveness faults stay observable).
    Sinusoid {
        amplitude_rad: [f64; 3],
        omega_rad_per_s: [f64; 3],
        phase_rad: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiConfig {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub a_row_major: Vec<f64>,
    pub b_row_major: Vec<f64>,
    pub c_row_major: Vec<f64>,
    /// `n x q_a` actuator fault columns.
    pub fault_cols_row_major: Vec<f64>,
    pub num_actuator_channels: usize,
    /// `p x q_s` sensor fault directions.
    pub sensor_dirs_row_major: Vec<f64>,
    pub num_sensor_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub horizon_s: f64,
    #[serde(default)]
    pub actuator_faults: Vec<ActuatorFaultConfig>,
    #[serde(default)]
    pub sensor_faults: Vec<SensorFaultConfig>,
    #[serde(default)]
    pub disturbance_bound: f64,
    #[serde(default)]
    pub disturbance_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActuatorFaultConfig {
    /// Effectiveness drops to the given value inside the window.
    LossOfEffectiveness {
        /// 1-based channel index.
        channel: usize,
        effectiveness: f64,
        window_s: [f64; 2],
    },
    /// Additive sinusoidal fault signal.
    AdditiveSine {
        channel: usize,
        amplitude: f64,
        omega_rad_per_s: f64,
        t_ref_s: f64,
        phase_rad: f64,
        window_s: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorFaultConfig {
    /// 1-based channel index.
    pub channel: usize,
    pub amplitude: f64,
    pub omega_rad_per_s: f64,
    pub t_ref_s: f64,
    #[serde(default)]
    pub phase_rad: f64,
    pub window_s: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverBlock {
    /// Observers to run: any of "md", "gd".
    pub run: Vec<String>,
    pub gamma_a: f64,
    pub gamma_s: f64,
    pub sigma_a: f64,
    pub sigma_s: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// Explicit per-channel curvature; omit to use `xi_file` or the default
    /// range midpoint.
    #[serde(default)]
    pub xi_actuators: Option<Vec<f64>>,
    #[serde(default)]
    pub xi_sensors: Option<Vec<f64>>,
    /// Curvature file written by `analyze`.
    #[serde(default)]
    pub xi_file: Option<String>,
    /// Gain scale applied to the gradient-descent baseline so both laws run
    /// at comparable effective rates (mirror descent divides its drive by
    /// the Hessian blocks).
    #[serde(default = "default_gd_gamma_scale")]
    pub gd_gamma_scale: f64,
    /// Contraction rate target for the gain/metric design.
    pub lambda_target: f64,
    /// Radius of the contraction verification cloud around the operating
    /// point.
    pub verify_radius: f64,
    pub weight_guard: f64,
    #[serde(default)]
    pub features_actuator_file: Option<String>,
    #[serde(default)]
    pub features_sensor_file: Option<String>,
    /// Initialize last layers from the trained values stored in the feature
    /// files (otherwise zero).
    #[serde(default)]
    pub init_weights_from_training: bool,
    pub u_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub dt_s: f64,
    pub decimation: usize,
    pub weight_snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Stack order R; omit to use the maximal relative degree.
    #[serde(default)]
    pub order: Option<usize>,
    pub max_relative_degree: usize,
    pub angle_floor_rad: f64,
    /// Number of fault-free trajectory samples for the angle profile.
    pub sample_count: usize,
    pub xi_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub scenario_count: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub rollout_dt_s: f64,
    pub rollout_horizon_s: f64,
    pub sample_interval_s: f64,
    pub effectiveness_range: [f64; 2],
    pub window_start_range_s: [f64; 2],
    pub window_duration_range_s: [f64; 2],
    pub sensor_amplitude_range: [f64; 2],
    pub sensor_omega_range_rad_per_s: [f64; 2],
    pub fault_probability: f64,
}

/// Curvature file produced by `analyze` and consumed by `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiFile {
    pub xi_actuators: Vec<f64>,
    pub xi_sensors: Vec<f64>,
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sim.dt_s <= 0.0 || self.scenario.horizon_s <= self.sim.dt_s {
            return Err(Error::Config(
                "sim.dt_s must be positive and below scenario.horizon_s".into(),
            ));
        }
        if self.sim.decimation == 0 || self.sim.weight_snapshot_every == 0 {
            return Err(Error::Config("decimation factors must be >= 1".into()));
        }
        if self.observer.run.is_empty() {
            return Err(Error::Config("observer.run must name at least one of md, gd".into()));
        }
        for name in &self.observer.run {
            if name != "md" && name != "gd" {
                return Err(Error::Config(format!("unknown observer kind {name}")));
            }
        }
        let ob = &self.observer;
        if ob.beta <= 0.0 || ob.epsilon <= 0.0 || ob.alpha < 0.0 {
            return Err(Error::Config(
                "observer requires beta > 0, epsilon > 0, alpha >= 0".into(),
            ));
        }
        if ob.lambda_target <= 0.0 || ob.verify_radius <= 0.0 || ob.weight_guard <= 0.0 {
            return Err(Error::Config(
                "lambda_target, verify_radius and weight_guard must be positive".into(),
            ));
        }
        let an = &self.analysis;
        if an.xi_range[0] <= 0.0 || an.xi_range[0] >= an.xi_range[1] {
            return Err(Error::Config(
                "analysis.xi_range must satisfy 0 < min < max".into(),
            ));
        }
        if an.sample_count == 0 || an.max_relative_degree == 0 {
            return Err(Error::Config(
                "analysis.sample_count and max_relative_degree must be >= 1".into(),
            ));
        }
        let (q_a, q_s) = self.channel_counts();
        for f in &self.scenario.actuator_faults {
            let (channel, window) = match f {
                ActuatorFaultConfig::LossOfEffectiveness {
                    channel, window_s, ..
                } => (*channel, window_s),
                ActuatorFaultConfig::AdditiveSine {
                    channel, window_s, ..
                } => (*channel, window_s),
            };
            if channel == 0 || channel > q_a {
                return Err(Error::Config(format!(
                    "actuator fault channel {channel} out of 1..={q_a}"
                )));
            }
            if window[0] >= window[1] {
                return Err(Error::Config("fault window must have start < end".into()));
            }
            if let ActuatorFaultConfig::LossOfEffectiveness { effectiveness, .. } = f {
                if !(0.0..=1.0).contains(effectiveness) {
                    return Err(Error::Config("effectiveness must lie in [0, 1]".into()));
                }
            }
        }
        for f in &self.scenario.sensor_faults {
            if f.channel == 0 || f.channel > q_s {
                return Err(Error::Config(format!(
                    "sensor fault channel {} out of 1..={q_s}",
                    f.channel
                )));
            }
            if f.window_s[0] >= f.window_s[1] {
                return Err(Error::Config("fault window must have start < end".into()));
            }
        }
        if let ModelConfig::Spacecraft(sc) = &self.model {
            if sc.inertia_diag_kgm2.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config("inertia entries must be positive".into()));
            }
            if sc.torque_limit_nm <= 0.0 || sc.wheel_inertia_kgm2 <= 0.0 {
                return Err(Error::Config(
                    "torque limit and wheel inertia must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn channel_counts(&self) -> (usize, usize) {
        match &self.model {
            ModelConfig::Spacecraft(_) => (4, 3),
            ModelConfig::Lti(l) => (l.num_actuator_channels, l.num_sensor_channels),
        }
    }

    pub fn build_model(&self) -> Result<SystemModel> {
        match &self.model {
            ModelConfig::Spacecraft(_) => spacecraft_model(&self.spacecraft_params()?),
            ModelConfig::Lti(l) => {
                let a = DMatrix::from_row_slice(l.state_dim, l.state_dim, &l.a_row_major);
                let b = DMatrix::from_row_slice(l.state_dim, l.input_dim, &l.b_row_major);
                let c = DMatrix::from_row_slice(l.output_dim, l.state_dim, &l.c_row_major);
                let bf = DMatrix::from_row_slice(
                    l.state_dim,
                    l.num_actuator_channels,
                    &l.fault_cols_row_major,
                );
                let dirs: Vec<DVector<f64>> = (0..l.num_sensor_channels)
                    .map(|j| {
                        DVector::from_fn(l.output_dim, |i, _| {
                            l.sensor_dirs_row_major[i * l.num_sensor_channels + j]
                        })
                    })
                    .collect();
                SystemModel::lti(a, b, c, bf, dirs)
            }
        }
    }

    pub fn spacecraft_params(&self) -> Result<SpacecraftParams> {
        match &self.model {
            ModelConfig::Spacecraft(sc) => Ok(SpacecraftParams {
                inertia_diag: Vector3::from_column_slice(&sc.inertia_diag_kgm2),
                wheel_inertia: sc.wheel_inertia_kgm2,
                torque_limit: sc.torque_limit_nm,
                wheel_config: pyramid_wheel_config(
                    sc.pyramid_elevation_rad
                        .unwrap_or_else(default_pyramid_elevation),
                ),
                kp: Vector3::from_column_slice(&sc.kp_diag),
                kd: Vector3::from_column_slice(&sc.kd_diag),
            }),
            _ => Err(Error::Config("model is not a spacecraft".into())),
        }
    }

    pub fn reference(&self) -> Result<Reference> {
        match &self.model {
            ModelConfig::Spacecraft(sc) => Ok(match &sc.reference {
                ReferenceConfig::Constant { theta_ref_rad } => Reference::Constant {
                    theta: Vector3::from_column_slice(theta_ref_rad),
                },
                ReferenceConfig::Sinusoid {
                    amplitude_rad,
                    omega_rad_per_s,
                    phase_rad,
                } => Reference::Sinusoid {
                    amplitude: Vector3::from_column_slice(amplitude_rad),
                    omega: Vector3::from_column_slice(omega_rad_per_s),
                    phase: Vector3::from_column_slice(phase_rad),
                },
            }),
            _ => Err(Error::Config("model is not a spacecraft".into())),
        }
    }

    /// Control law for the configured model: PD attitude tracking for the
    /// spacecraft, zero input for LTI toys.
    pub fn control_law(&self) -> Result<ControlLaw> {
        match &self.model {
            ModelConfig::Spacecraft(_) => Ok(spacecraft_control_law(
                self.spacecraft_params()?,
                self.reference()?,
            )),
            ModelConfig::Lti(l) => {
                let m = l.input_dim;
                Ok(Box::new(move |_t, _x| DVector::zeros(m)))
            }
        }
    }

    pub fn build_scenario(&self) -> Result<FaultScenario> {
        let (q_a, q_s) = self.channel_counts();
        let model = self.build_model()?;
        let mut scenario = FaultScenario::fault_free(
            q_a,
            q_s,
            model.state_dim(),
            self.scenario.horizon_s,
        );
        scenario.disturbance = Disturbance::bounded(
            model.state_dim(),
            self.scenario.disturbance_bound,
            self.scenario.disturbance_seed,
        );
        for f in &self.scenario.actuator_faults {
            match f {
                ActuatorFaultConfig::LossOfEffectiveness {
                    channel,
                    effectiveness,
                    window_s,
                } => {
                    scenario.actuator_profiles[channel - 1] =
                        Some(ActuatorFaultProfile::loss_of_effectiveness(
                            *effectiveness,
                            Window {
                                start: window_s[0],
                                end: window_s[1],
                            },
                        ));
                }
                ActuatorFaultConfig::AdditiveSine {
                    channel,
                    amplitude,
                    omega_rad_per_s,
                    t_ref_s,
                    phase_rad,
                    window_s,
                } => {
                    scenario.actuator_profiles[channel - 1] =
                        Some(ActuatorFaultProfile::Additive {
                            signal: Signal::windowed(
                                Waveform::Sine {
                                    amplitude: *amplitude,
                                    omega: *omega_rad_per_s,
                                    t_ref: *t_ref_s,
                                    phase: *phase_rad,
                                },
                                Window {
                                    start: window_s[0],
                                    end: window_s[1],
                                },
                                0.0,
                            ),
                        });
                }
            }
        }
        for f in &self.scenario.sensor_faults {
            scenario.sensor_profiles[f.channel - 1] = Some(Signal::windowed(
                Waveform::Sine {
                    amplitude: f.amplitude,
                    omega: f.omega_rad_per_s,
                    t_ref: f.t_ref_s,
                    phase: f.phase_rad,
                },
                Window {
                    start: f.window_s[0],
                    end: f.window_s[1],
                },
                0.0,
            ));
        }
        Ok(scenario)
    }

    /// Training scenario family derived from the train block (ranges applied
    /// to every channel).
    pub fn scenario_family(&self) -> Result<ScenarioFamily> {
        let tb = self
            .train
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [train] block".into()))?;
        let (q_a, q_s) = self.channel_counts();
        let model = self.build_model()?;
        Ok(ScenarioFamily {
            horizon: tb.rollout_horizon_s,
            dt: tb.rollout_dt_s,
            sample_interval: tb.sample_interval_s,
            x0: DVector::zeros(model.state_dim()),
            actuator_faults: (0..q_a)
                .map(|channel| ActuatorFaultFamily {
                    channel,
                    probability: tb.fault_probability,
                    effectiveness: UniformRange {
                        lo: tb.effectiveness_range[0],
                        hi: tb.effectiveness_range[1],
                    },
                    start: UniformRange {
                        lo: tb.window_start_range_s[0],
                        hi: tb.window_start_range_s[1],
                    },
                    duration: UniformRange {
                        lo: tb.window_duration_range_s[0],
                        hi: tb.window_duration_range_s[1],
                    },
                })
                .collect(),
            sensor_faults: (0..q_s)
                .map(|channel| SensorFaultFamily {
                    channel,
                    probability: tb.fault_probability,
                    amplitude: UniformRange {
                        lo: tb.sensor_amplitude_range[0],
                        hi: tb.sensor_amplitude_range[1],
                    },
                    omega: UniformRange {
                        lo: tb.sensor_omega_range_rad_per_s[0],
                        hi: tb.sensor_omega_range_rad_per_s[1],
                    },
                    start: UniformRange {
                        lo: tb.window_start_range_s[0],
                        hi: tb.window_start_range_s[1],
                    },
                    duration: UniformRange {
                        lo: tb.window_duration_range_s[0],
                        hi: tb.window_duration_range_s[1],
                    },
                })
                .collect(),
        })
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn config_hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        hex_digest(text.as_bytes())
    }

    /// Hash over the blocks that determine trace comparability: model,
    /// scenario and time grid.
    pub fn scenario_hash(&self) -> String {
        #[derive(Serialize)]
        struct Comparable<'a> {
            model: &'a ModelConfig,
            scenario: &'a ScenarioBlock,
            dt_s: f64,
        }
        let text = toml::to_string(&Comparable {
            model: &self.model,
            scenario: &self.scenario,
            dt_s: self.sim.dt_s,
        })
        .unwrap_or_default();
        hex_digest(text.as_bytes())
    }
}

fn default_gd_gamma_scale() -> f64 {
    1.0
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = std::fmt::Write::write_fmt(&mut out, format_args!("{b:02x}"));
    }
    out
}

/// The spacecraft case-study configuration with the fault profiles left
/// empty. Fault windows, amplitudes and the observer roster come from the
/// shipped scenario files or the caller.
pub fn default_spacecraft_config() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        model: ModelConfig::Spacecraft(SpacecraftConfig {
            inertia_diag_kgm2: [1.0, 1.0, 0.8],
            wheel_inertia_kgm2: 0.01,
            torque_limit_nm: 0.14,
            pyramid_elevation_rad: None,
            kp_diag: [22.5, 18.0, 15.0],
            kd_diag: [12.0, 9.0, 7.5],
            reference: ReferenceConfig::Sinusoid {
                amplitude_rad: [0.35, -0.35, 0.15],
                omega_rad_per_s: [0.30, 0.26, 0.30],
                phase_rad: [-1.15, 1.10, 1.22],
            },
        }),
        scenario: ScenarioBlock {
            horizon_s: 60.0,
            actuator_faults: Vec::new(),
            sensor_faults: Vec::new(),
            disturbance_bound: 0.0,
            disturbance_seed: 0,
        },
        observer: ObserverBlock {
            run: vec!["md".into(), "gd".into()],
            gamma_a: 50.0,
            gamma_s: 50.0,
            sigma_a: 0.1,
            sigma_s: 0.1,
            beta: 1.0,
            alpha: 0.1,
            epsilon: 1e-4,
            xi_actuators: None,
            xi_sensors: None,
            xi_file: None,
            gd_gamma_scale: 0.15,
            lambda_target: 1.0,
            verify_radius: 0.4,
            weight_guard: 1e3,
            features_actuator_file: None,
            features_sensor_file: None,
            init_weights_from_training: false,
            u_floor: 1e-3,
        },
        sim: SimBlock {
            dt_s: 1e-3,
            decimation: 1,
            weight_snapshot_every: 50,
        },
        analysis: AnalysisBlock {
            order: None,
            max_relative_degree: 4,
            angle_floor_rad: 1e-3,
            sample_count: 100,
            xi_range: [1.0, 5.0],
        },
        train: Some(TrainBlock {
            scenario_count: 24,
            epochs: 120,
            hidden: vec![32, 32, 32],
            rollout_dt_s: 2e-3,
            rollout_horizon_s: 60.0,
            sample_interval_s: 0.25,
            effectiveness_range: [0.1, 0.9],
            window_start_range_s: [5.0, 30.0],
            window_duration_range_s: [10.0, 25.0],
            sensor_amplitude_range: [-0.05, 0.05],
            sensor_omega_range_rad_per_s: [0.8, 2.5],
            fault_probability: 0.7,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = default_spacecraft_config();
        let text = config.to_toml().unwrap();
        let parsed = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(parsed, config);
        // and the canonical hash is stable across the round trip
        assert_eq!(parsed.config_hash(), config.config_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = default_spacecraft_config().to_toml().unwrap();
        text.push_str("\nunexpected_key = 1\n");
        let err = ScenarioConfig::from_toml(&text);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn schema_version_is_checked() {
        let mut config = default_spacecraft_config();
        config.schema_version = 99;
        let text = toml::to_string(&config).unwrap();
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_channels_and_windows_are_rejected() {
        let mut config = default_spacecraft_config();
        config
            .scenario
            .actuator_faults
            .push(ActuatorFaultConfig::LossOfEffectiveness {
                channel: 9,
                effectiveness: 0.5,
                window_s: [1.0, 2.0],
            });
        assert!(config.validate().is_err());

        let mut config = default_spacecraft_config();
        config.scenario.sensor_faults.push(SensorFaultConfig {
            channel: 1,
            amplitude: 0.01,
            omega_rad_per_s: 1.0,
            t_ref_s: 0.0,
            phase_rad: 0.0,
            window_s: [5.0, 2.0],
        });
        assert!(config.validate().is_err());
    }

    #[test]
    fn scenario_hash_tracks_comparability() {
        let a = default_spacecraft_config();
        let mut b = a.clone();
        b.observer.gamma_a = 99.0; // observer settings do not affect comparability
        assert_eq!(a.scenario_hash(), b.scenario_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.scenario.horizon_s = 30.0;
        assert_ne!(a.scenario_hash(), c.scenario_hash());
    }

    #[test]
    fn built_scenario_reproduces_configured_signals() {
        let mut config = default_spacecraft_config();
        config
            .scenario
            .actuator_faults
            .push(ActuatorFaultConfig::LossOfEffectiveness {
                channel: 2,
                effectiveness: 0.25,
                window_s: [20.0, 50.0],
            });
        config.scenario.sensor_faults.push(SensorFaultConfig {
            channel: 1,
            amplitude: 0.035,
            omega_rad_per_s: 0.6 * std::f64::consts::PI,
            t_ref_s: 15.0,
            phase_rad: 0.0,
            window_s: [15.0, 50.0],
        });
        let scenario = config.build_scenario().unwrap();
        let u = DVector::from_vec(vec![0.1, 0.08, -0.02, 0.05]);
        let fa = scenario.actuator_fault(30.0, &u);
        assert!((fa[1] - (0.25 - 1.0) * 0.08).abs() < 1e-15);
        assert_eq!(fa[0], 0.0);
        let fs = scenario.sensor_fault(20.0);
        let expect = 0.035 * (0.6 * std::f64::consts::PI * 5.0).sin();
        assert!((fs[0] - expect).abs() < 1e-15);
        assert_eq!(scenario.actuator_fault(10.0, &u)[1], 0.0);
    }
}
