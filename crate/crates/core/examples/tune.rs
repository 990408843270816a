// Scratch harness for exploring the case-study scenarios while tuning
// observer gains. Not part of the public surface.

use fdikit::cli::{prepare_run, RunSetup};
use fdikit::config::{
    default_spacecraft_config, ActuatorFaultConfig, ScenarioConfig, SensorFaultConfig,
};
use fdikit::sim::{lyapunov_monitor, metrics, run_scenario};
use std::path::Path;

fn paper_actuator_config() -> ScenarioConfig {
    let mut config = default_spacecraft_config();
    config
        .scenario
        .actuator_faults
        .push(ActuatorFaultConfig::LossOfEffectiveness {
            channel: 2,
            effectiveness: 0.25,
            window_s: [20.0, 50.0],
        });
    config
        .scenario
        .actuator_faults
        .push(ActuatorFaultConfig::LossOfEffectiveness {
            channel: 3,
            effectiveness: 0.5,
            window_s: [10.0, 35.0],
        });
    config
}

fn paper_combined_config() -> ScenarioConfig {
    let mut config = paper_actuator_config();
    config.scenario.sensor_faults.push(SensorFaultConfig {
        channel: 1,
        amplitude: 0.035,
        omega_rad_per_s: 0.6 * std::f64::consts::PI,
        t_ref_s: 15.0,
        phase_rad: 0.0,
        window_s: [15.0, 50.0],
    });
    config.scenario.sensor_faults.push(SensorFaultConfig {
        channel: 2,
        amplitude: -0.030,
        omega_rad_per_s: 0.5 * std::f64::consts::PI,
        t_ref_s: 20.0,
        phase_rad: std::f64::consts::FRAC_PI_2,
        window_s: [20.0, 55.0],
    });
    config
}

fn main() {
    let out = Path::new("target/tune_out");
    std::fs::create_dir_all(out).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("actuator");

    // train once into the out dir
    let mut base = default_spacecraft_config();
    apply_overrides(&mut base, &args);
    let feat_a = out.join("features_actuator.json");
    if !feat_a.exists() || args.iter().any(|a| a == "--retrain") {
        let model = base.build_model().unwrap();
        let control = base.control_law().unwrap();
        let family = base.scenario_family().unwrap();
        let tb = base.train.clone().unwrap();
        let t0 = std::time::Instant::now();
        let ds =
            fdikit::features::generate_dataset(&model, &control, &family, tb.scenario_count, 42)
                .unwrap();
        println!("dataset: {} records in {:?}", ds.len(), t0.elapsed());
        let t0 = std::time::Instant::now();
        let trained = fdikit::features::train_features(
            &ds,
            &fdikit::features::ArchSpec {
                hidden: tb.hidden.clone(),
            },
            tb.epochs,
            42,
        )
        .unwrap();
        println!(
            "trained in {:?}: loss_a {:.3e} loss_s {:.3e}",
            t0.elapsed(),
            trained.final_loss_actuator,
            trained.final_loss_sensor
        );
        trained
            .actuator
            .save(&feat_a, Some(&trained.w_actuator))
            .unwrap();
        trained
            .sensor
            .save(&out.join("features_sensor.json"), Some(&trained.w_sensor))
            .unwrap();
    }

    let mut config = match which {
        "combined" => paper_combined_config(),
        _ => paper_actuator_config(),
    };
    apply_overrides(&mut config, &args);
    config.observer.features_actuator_file = Some(feat_a.display().to_string());
    config.observer.features_sensor_file =
        Some(out.join("features_sensor.json").display().to_string());
    // xi from the known case-study geometry: actuators non-isolable (max),
    // sensors orthogonal (min)
    if args.iter().any(|a| a == "--init-trained") {
        config.observer.init_weights_from_training = true;
    }
    config.observer.xi_actuators = Some(vec![config.analysis.xi_range[1]; 4]);
    config.observer.xi_sensors = Some(vec![config.analysis.xi_range[0]; 3]);

    let t0 = std::time::Instant::now();
    let setup = prepare_run(&config, out, 0).unwrap();
    let RunSetup {
        model,
        scenario,
        sim,
        mut observers,
        ..
    } = setup;
    let trace = run_scenario(&model, &scenario, &mut observers, &sim).unwrap();
    println!("sim {:?}, failure: {:?}", t0.elapsed(), trace.failure);

    let report = metrics(&trace, &model, &scenario);
    for om in &report.observers {
        println!("--- {} ---", om.label);
        println!("e_rms      = {:?}", om.e_rms);
        println!("e_max      = {:?}", om.e_max);
        println!("fa_rms_act = {:?}", om.fa_rms_active);
        println!("fa_rms_hea = {:?}", om.fa_rms_healthy);
        println!("fa_mean_u  = {:?}", om.fa_mean_abs_union);
        println!("fs_rms_act = {:?}", om.fs_rms_active);
        println!("fs_rms_hea = {:?}", om.fs_rms_healthy);
        println!("eta_steady = {:?}", om.eta_steady_err);
        println!("eta_tailmn = {:?}", om.eta_tail_mean);
    }
    if args.iter().any(|a| a == "--slice") {
        let ot = trace.observer("md").unwrap();
        let ocfg = &observers[0].1;
        println!("t   | fa_true:   2       3    | fa_hat:  1       2       3       4   | eta2  eta3");
        for r in (0..trace.rows()).step_by(if args.iter().any(|a| a == "--fine") { 1000 } else { 2000 }) {
            let _ = &ocfg;
            println!(
                "{:5.1} | u2={:8.4} | {:8.4} {:8.4} | {:8.4} {:8.4} {:8.4} {:8.4} | {:6.2} {:6.2}",
                trace.time[r], trace.u[r][1], trace.fa_true[r][1], trace.fa_true[r][2],
                ot.fa_hat[r][0], ot.fa_hat[r][1], ot.fa_hat[r][2], ot.fa_hat[r][3],
                ot.eta_hat[r][1], ot.eta_hat[r][2]
            );
        }
    }
    if trace.failure.is_none() {
        for (label, ocfg, _) in &observers {
            let mon = lyapunov_monitor(&trace, label, ocfg).unwrap();
            println!(
                "[{label}] alpha={:.4e} sigma={:.4e} bound={:.4e} enters_stays={} guard_ok={} wa_max={:.3} ws_max={:.3}",
                mon.alpha,
                mon.sigma,
                mon.ultimate_bound,
                mon.enters_and_stays,
                mon.guard_ok,
                trace.observer(label).unwrap().wa_norm.iter().cloned().fold(0.0, f64::max),
                trace.observer(label).unwrap().ws_norm.iter().cloned().fold(0.0, f64::max),
            );
        }
    }
}

fn apply_overrides(config: &mut ScenarioConfig, args: &[String]) {
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--set-").and_then(|s| s.split_once('=')) {
            let v: f64 = v.parse().unwrap();
            match k {
                "gamma_a" => config.observer.gamma_a = v,
                "gamma_s" => config.observer.gamma_s = v,
                "sigma_a" => config.observer.sigma_a = v,
                "sigma_s" => config.observer.sigma_s = v,
                "alpha" => config.observer.alpha = v,
                "beta" => config.observer.beta = v,
                "epsilon" => config.observer.epsilon = v,
                "xi_max" => {
                    config.analysis.xi_range = [v * 0.5, v];
                }
                "lambda" => config.observer.lambda_target = v,
                "u_floor" => config.observer.u_floor = v,
                "gd_scale" => config.observer.gd_gamma_scale = v,
                "ref_scale" => {
                    if let fdikit::config::ModelConfig::Spacecraft(sc) = &mut config.model {
                        if let fdikit::config::ReferenceConfig::Sinusoid {
                            amplitude_rad, omega_rad_per_s, ..
                        } = &mut sc.reference
                        {
                            for a in amplitude_rad.iter_mut() {
                                *a *= v;
                            }
                            for w in omega_rad_per_s.iter_mut() {
                                *w *= 1.0 / v.max(0.1);
                            }
                        }
                    }
                }
                "ref_omega" => {
                    if let fdikit::config::ModelConfig::Spacecraft(sc) = &mut config.model {
                        if let fdikit::config::ReferenceConfig::Sinusoid {
                            omega_rad_per_s, ..
                        } = &mut sc.reference
                        {
                            for w in omega_rad_per_s.iter_mut() {
                                *w *= v;
                            }
                        }
                    }
                }
                "ref_amp" => {
                    if let fdikit::config::ModelConfig::Spacecraft(sc) = &mut config.model {
                        if let fdikit::config::ReferenceConfig::Sinusoid {
                            amplitude_rad, ..
                        } = &mut sc.reference
                        {
                            for a in amplitude_rad.iter_mut() {
                                *a *= v;
                            }
                        }
                    }
                }
                "epochs" => {
                    if let Some(tb) = config.train.as_mut() {
                        tb.epochs = v as usize;
                    }
                }
                "count" => {
                    if let Some(tb) = config.train.as_mut() {
                        tb.scenario_count = v as usize;
                    }
                }
                _ => panic!("unknown override {k}"),
            }
        }
    }
}
