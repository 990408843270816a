//! Command-line entry points: `analyze`, `train`, `run`, `compare`.
//!
//! Exit codes: 0 success, 2 config error, 3 divergence, 4 comparison failure.

use crate::config::{hex_digest, ScenarioConfig, XiFile};
use crate::error::{Error, Result};
use crate::features::{generate_dataset, train_features, ArchSpec, FeatureMap};
use crate::geometry::{
    angle_profile, diffmap_jacobians, isolability_report, relative_degrees, TrajectorySample,
};
use crate::model::plant_step;
use crate::observer::{
    default_verification_cloud, design_metric_and_gain, design_xi_from_angles, AdaptationLaw,
    MirrorMapEN, ObserverConfig, ObserverState,
};
use crate::sim::{lyapunov_monitor, metrics, read_csv, run_scenario, write_csv, SimConfig};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_COMPARISON: i32 = 4;

#[derive(Parser)]
#[command(
    name = "fdikit",
    about = "Geometric fault detection and identification: isolability analysis and \
             mirror-descent fault observers for control-affine systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Isolability analysis: per-channel principal angles along a fault-free
    /// trajectory, plus the suggested mirror-map curvature.
    Analyze(AnalyzeArgs),
    /// Generate a training dataset and fit the estimator feature maps.
    Train(TrainArgs),
    /// Co-simulate the faulted plant with the configured observers.
    Run(RunArgs),
    /// Side-by-side fault-estimation deltas of two trace files.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct RunArgs {
    /// One or more scenario configs; independent configs run in parallel
    /// under --jobs.
    #[arg(long, required = true)]
    pub config: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Validate the configuration and touch no outputs.
    #[arg(long, default_value_t = false)]
    pub dry_run: bool,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Mirror-descent trace CSV.
    #[arg(long)]
    pub md: PathBuf,
    /// Gradient-descent trace CSV.
    #[arg(long)]
    pub gd: PathBuf,
}

/// Parses `args` and executes; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return EXIT_CONFIG;
        }
    };
    let outcome = match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::ObserverDiverged { .. } => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn out_stem(config_path: &Path) -> String {
    config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn provenance(config: &ScenarioConfig, seed: u64) -> String {
    format!("# config_hash={} seed={seed}\n", config.config_hash())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let config = ScenarioConfig::from_path(&args.config)?;
    ensure_dir(&args.out_dir)?;
    let model = config.build_model()?;
    let control = config.control_law()?;

    // fault-free trajectory sampling
    let horizon = config.scenario.horizon_s;
    let dt = config.sim.dt_s.max(1e-3);
    let steps = (horizon / dt).round() as usize;
    let every = (steps / config.analysis.sample_count).max(1);
    let scenario = crate::model::FaultScenario::fault_free(
        model.num_actuator_channels(),
        model.num_sensor_channels(),
        model.state_dim(),
        horizon,
    );
    let mut x = DVector::zeros(model.state_dim());
    let mut samples = Vec::new();
    for k in 0..steps {
        let t = k as f64 * dt;
        if k % every == 0 && samples.len() < config.analysis.sample_count {
            samples.push(TrajectorySample {
                t,
                state: x.clone(),
                input: control(t, &x),
            });
        }
        x = plant_step(&model, &scenario, &control, t, &x, dt)?;
    }

    let (degrees, r_max) =
        relative_degrees(&model, &samples[0].state, config.analysis.max_relative_degree)?;
    let order = config.analysis.order.unwrap_or(r_max);
    let floor = config.analysis.angle_floor_rad;
    let profile = angle_profile(&model, &samples, order, floor)?;
    let jac = diffmap_jacobians(&model, &samples[0].state, &samples[0].input, order)?;
    let report = isolability_report(&jac, floor);

    // structured-text report
    let stem = out_stem(&args.config);
    let mut text = provenance(&config, args.seed);
    let _ = writeln!(text, "isolability analysis");
    let _ = writeln!(text, "relative_degrees = {degrees:?}");
    let _ = writeln!(text, "order = {order}");
    let _ = writeln!(text, "angle_floor_rad = {floor}");
    let _ = writeln!(text, "samples = {}", profile.times.len());
    let _ = writeln!(text, "skipped_samples = {}", profile.skipped.len());
    for (i, ch) in report.actuators.iter().enumerate() {
        let _ = writeln!(
            text,
            "actuator {} theta_min_rad = {:.6e} theta_lower_bound_rad = {:.6e} isolable = {}",
            i + 1,
            ch.theta_min,
            profile.actuator_lower_bounds[i],
            ch.isolable
        );
    }
    for (j, ch) in report.sensors.iter().enumerate() {
        let _ = writeln!(
            text,
            "sensor {} theta_min_rad = {:.6e} theta_lower_bound_rad = {:.6e} isolable = {}",
            j + 1,
            ch.theta_min,
            profile.sensor_lower_bounds[j],
            ch.isolable
        );
    }
    let report_path = args.out_dir.join(format!("{stem}_isolability.txt"));
    std::fs::write(&report_path, &text)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;

    // per-sample angle CSV
    let mut csv = provenance(&config, args.seed);
    let mut header = vec!["t".to_string()];
    header.extend((0..profile.actuator_theta_min.len()).map(|i| format!("theta_a{}", i + 1)));
    header.extend((0..profile.sensor_theta_min.len()).map(|j| format!("theta_s{}", j + 1)));
    let _ = writeln!(csv, "{}", header.join(","));
    for (s, t) in profile.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for series in &profile.actuator_theta_min {
            row.push(series[s].to_string());
        }
        for series in &profile.sensor_theta_min {
            row.push(series[s].to_string());
        }
        let _ = writeln!(csv, "{}", row.join(","));
    }
    let angles_path = args.out_dir.join(format!("{stem}_angles.csv"));
    std::fs::write(&angles_path, &csv)
        .map_err(|e| Error::io(angles_path.display().to_string(), e))?;

    // suggested curvature from the conservative lower bounds
    let range = (config.analysis.xi_range[0], config.analysis.xi_range[1]);
    let xi_a = design_xi_from_angles(&profile.actuator_lower_bounds, range)?;
    let xi_s = design_xi_from_angles(&profile.sensor_lower_bounds, range)?;
    let xi = XiFile {
        xi_actuators: xi_a.as_slice().to_vec(),
        xi_sensors: xi_s.as_slice().to_vec(),
    };
    let xi_text = format!(
        "{}{}",
        provenance(&config, args.seed),
        toml::to_string_pretty(&xi).map_err(|e| Error::Config(e.to_string()))?
    );
    let xi_path = args.out_dir.join(format!("{stem}_xi.toml"));
    std::fs::write(&xi_path, xi_text).map_err(|e| Error::io(xi_path.display().to_string(), e))?;

    println!(
        "analyze: wrote {}, {}, {}",
        report_path.display(),
        angles_path.display(),
        xi_path.display()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let config = ScenarioConfig::from_path(&args.config)?;
    ensure_dir(&args.out_dir)?;
    let model = config.build_model()?;
    let control = config.control_law()?;
    let family = config.scenario_family()?;
    let tb = config.train.as_ref().expect("validated train block");

    let dataset = generate_dataset(&model, &control, &family, tb.scenario_count, args.seed)?;
    let arch = ArchSpec {
        hidden: tb.hidden.clone(),
    };
    let trained = train_features(&dataset, &arch, tb.epochs, args.seed)?;

    let actuator_path = feature_path(&config, &args.out_dir, true);
    let sensor_path = feature_path(&config, &args.out_dir, false);
    trained
        .actuator
        .save(&actuator_path, Some(&trained.w_actuator))?;
    trained.sensor.save(&sensor_path, Some(&trained.w_sensor))?;

    let stem = out_stem(&args.config);
    let mut text = provenance(&config, args.seed);
    let _ = writeln!(text, "training report");
    let _ = writeln!(text, "records = {}", dataset.len());
    let _ = writeln!(text, "epochs = {}", tb.epochs);
    let _ = writeln!(text, "hidden = {:?}", tb.hidden);
    let _ = writeln!(text, "final_loss_actuator = {:e}", trained.final_loss_actuator);
    let _ = writeln!(text, "final_loss_sensor = {:e}", trained.final_loss_sensor);
    let _ = writeln!(
        text,
        "lipschitz_actuator = {:e}",
        trained.actuator.lipschitz_estimate()
    );
    let _ = writeln!(
        text,
        "lipschitz_sensor = {:e}",
        trained.sensor.lipschitz_estimate()
    );
    let report_path = args.out_dir.join(format!("{stem}_train.txt"));
    std::fs::write(&report_path, &text)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;

    println!(
        "train: wrote {}, {}, {}",
        actuator_path.display(),
        sensor_path.display(),
        report_path.display()
    );
    Ok(EXIT_OK)
}

fn feature_path(config: &ScenarioConfig, out_dir: &Path, actuator: bool) -> PathBuf {
    let configured = if actuator {
        &config.observer.features_actuator_file
    } else {
        &config.observer.features_sensor_file
    };
    match configured {
        Some(p) => PathBuf::from(p),
        None => out_dir.join(if actuator {
            "features_actuator.json"
        } else {
            "features_sensor.json"
        }),
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Everything needed to co-simulate one configured scenario.
pub struct RunSetup {
    pub config: ScenarioConfig,
    pub model: crate::model::SystemModel,
    pub scenario: crate::model::FaultScenario,
    pub sim: SimConfig,
    pub observers: Vec<(String, ObserverConfig, ObserverState)>,
}

/// Builds the model, scenario, observer stack and simulator configuration
/// from a validated config and the feature files it references.
pub fn prepare_run(config: &ScenarioConfig, out_dir: &Path, seed: u64) -> Result<RunSetup> {
    let model = config.build_model()?;
    let scenario = config.build_scenario()?;
    let control = config.control_law()?;
    let ob = &config.observer;

    let (features_a, w_a_init) = FeatureMap::load(&feature_path(config, out_dir, true))?;
    let (features_s, w_s_init) = FeatureMap::load(&feature_path(config, out_dir, false))?;

    let n = model.state_dim();
    let m = model.input_dim();
    let p = model.output_dim();
    let x_op = DVector::zeros(n);
    let u_op = DVector::zeros(m);
    let cloud = default_verification_cloud(&x_op, ob.verify_radius);
    let design = design_metric_and_gain(&model, &x_op, &u_op, ob.lambda_target, &cloud)?;

    let (xi_a, xi_s) = resolve_xi(config, m, p)?;
    let mirror_a = MirrorMapEN::new(ob.beta, ob.alpha, ob.epsilon, xi_a)?;
    let mirror_s = MirrorMapEN::new(ob.beta, ob.alpha, ob.epsilon, xi_s)?;

    let w_a0 = if ob.init_weights_from_training {
        w_a_init.unwrap_or_else(|| nalgebra::DMatrix::zeros(features_a.output_dim(), m))
    } else {
        nalgebra::DMatrix::zeros(features_a.output_dim(), m)
    };
    let w_s0 = if ob.init_weights_from_training {
        w_s_init.unwrap_or_else(|| nalgebra::DMatrix::zeros(features_s.output_dim(), p))
    } else {
        nalgebra::DMatrix::zeros(features_s.output_dim(), p)
    };

    let mut observers = Vec::new();
    for name in &ob.run {
        let law = if name == "md" {
            AdaptationLaw::MirrorDescent
        } else {
            AdaptationLaw::GradientDescent
        };
        let gain_scale = if law == AdaptationLaw::GradientDescent {
            ob.gd_gamma_scale
        } else {
            1.0
        };
        let ocfg = ObserverConfig {
            gain_l: design.gain_l.clone(),
            metric: design.metric.clone(),
            gamma_a: DVector::from_element(m, ob.gamma_a * gain_scale),
            gamma_s: DVector::from_element(p, ob.gamma_s * gain_scale),
            sigma_a: ob.sigma_a,
            sigma_s: ob.sigma_s,
            mirror_a: mirror_a.clone(),
            mirror_s: mirror_s.clone(),
            features_a: features_a.clone(),
            features_s: features_s.clone(),
            law,
            weight_guard: ob.weight_guard,
        };
        ocfg.validate(&model)?;
        let state =
            ObserverState::new(DVector::zeros(n), w_a0.clone(), w_s0.clone());
        observers.push((name.clone(), ocfg, state));
    }

    let sim = SimConfig {
        dt: config.sim.dt_s,
        horizon: config.scenario.horizon_s,
        x0: DVector::zeros(n),
        observer_x0: DVector::zeros(n),
        control,
        decimation: config.sim.decimation,
        weight_snapshot_every: config.sim.weight_snapshot_every,
        u_floor: ob.u_floor,
        config_hash: config.config_hash(),
        scenario_hash: config.scenario_hash(),
        seed,
    };

    Ok(RunSetup {
        config: config.clone(),
        model,
        scenario,
        sim,
        observers,
    })
}

fn resolve_xi(
    config: &ScenarioConfig,
    m: usize,
    p: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ob = &config.observer;
    if let (Some(a), Some(s)) = (&ob.xi_actuators, &ob.xi_sensors) {
        if a.len() != m || s.len() != p {
            return Err(Error::Config("explicit xi lengths do not match".into()));
        }
        return Ok((
            DVector::from_column_slice(a),
            DVector::from_column_slice(s),
        ));
    }
    if let Some(path) = &ob.xi_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
        let xi: XiFile = toml::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        if xi.xi_actuators.len() != m || xi.xi_sensors.len() != p {
            return Err(Error::Config(format!("{path}: xi lengths do not match")));
        }
        return Ok((
            DVector::from_column_slice(&xi.xi_actuators),
            DVector::from_column_slice(&xi.xi_sensors),
        ));
    }
    // midpoint of the configured range when no analysis output is wired in
    let mid = 0.5 * (config.analysis.xi_range[0] + config.analysis.xi_range[1]);
    Ok((
        DVector::from_element(m, mid),
        DVector::from_element(p, mid),
    ))
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    // validate every config before touching outputs
    let mut configs = Vec::new();
    for path in &args.config {
        configs.push((path.clone(), ScenarioConfig::from_path(path)?));
    }
    if args.dry_run {
        for (path, _) in &configs {
            println!("dry-run: {} ok", path.display());
        }
        return Ok(EXIT_OK);
    }
    ensure_dir(&args.out_dir)?;

    let jobs = args.jobs.max(1);
    let mut results: Vec<Result<i32>> = Vec::with_capacity(configs.len());
    if jobs == 1 || configs.len() == 1 {
        for (path, config) in &configs {
            results.push(run_one(path, config, &args.out_dir, args.seed));
        }
    } else {
        // independent scenario runs only; each writes its own files
        let out_dir = args.out_dir.clone();
        let seed = args.seed;
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in configs.chunks(jobs.max(1)) {
                for (path, config) in chunk {
                    let out_dir = out_dir.clone();
                    handles.push(scope.spawn(move || run_one(path, config, &out_dir, seed)));
                }
                for h in handles.drain(..) {
                    results.push(h.join().expect("run thread panicked"));
                }
            }
        });
    }

    let mut exit = EXIT_OK;
    for r in results {
        match r {
            Ok(code) => exit = exit.max(code),
            Err(e) => {
                eprintln!("error: {e}");
                exit = exit.max(exit_code_for(&e));
            }
        }
    }
    Ok(exit)
}

fn run_one(config_path: &Path, config: &ScenarioConfig, out_dir: &Path, seed: u64) -> Result<i32> {
    let setup = prepare_run(config, out_dir, seed)?;
    let RunSetup {
        config,
        model,
        scenario,
        sim,
        mut observers,
    } = setup;
    let trace = run_scenario(&model, &scenario, &mut observers, &sim)?;
    let stem = out_stem(config_path);

    // one trace file per observer so the compare command can consume them
    for (label, _, _) in &observers {
        let single = single_observer_trace(&trace, label);
        let path = out_dir.join(format!("{stem}_{label}.csv"));
        write_csv(&single, &path)?;
        println!("run: wrote {}", path.display());
    }

    let report = metrics(&trace, &model, &scenario);
    let mut text = provenance(&config, seed);
    let _ = writeln!(text, "scenario_hash = {}", trace.scenario_hash);
    if let Some((t, what)) = &trace.failure {
        let _ = writeln!(text, "FAILED at t = {t:.3}: {what}");
    }
    for om in &report.observers {
        let _ = writeln!(text, "[{}]", om.label);
        let _ = writeln!(text, "e_rms = {:?}", om.e_rms);
        let _ = writeln!(text, "e_max = {:?}", om.e_max);
        let _ = writeln!(text, "fa_rms_active = {:?}", om.fa_rms_active);
        let _ = writeln!(text, "fa_rms_healthy = {:?}", om.fa_rms_healthy);
        let _ = writeln!(text, "fa_mean_abs_union = {:?}", om.fa_mean_abs_union);
        let _ = writeln!(text, "fs_rms_active = {:?}", om.fs_rms_active);
        let _ = writeln!(text, "fs_rms_healthy = {:?}", om.fs_rms_healthy);
        let _ = writeln!(text, "eta_steady_err = {:?}", om.eta_steady_err);
        let _ = writeln!(text, "eta_tail_mean = {:?}", om.eta_tail_mean);
    }
    let metrics_path = out_dir.join(format!("{stem}_metrics.txt"));
    std::fs::write(&metrics_path, &text)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    println!("run: wrote {}", metrics_path.display());

    if trace.failure.is_none() {
        for (label, ocfg, _) in &observers {
            let monitor = lyapunov_monitor(&trace, label, ocfg)?;
            let mut text = provenance(&config, seed);
            let _ = writeln!(text, "lyapunov monitor [{label}]");
            let _ = writeln!(text, "alpha = {:e}", monitor.alpha);
            let _ = writeln!(text, "sigma = {:e}", monitor.sigma);
            let _ = writeln!(text, "ultimate_bound = {:e}", monitor.ultimate_bound);
            let _ = writeln!(text, "enters_and_stays = {}", monitor.enters_and_stays);
            let _ = writeln!(text, "uub_verified = {}", monitor.uub_verified);
            let _ = writeln!(text, "guard_ok = {}", monitor.guard_ok);
            let path = out_dir.join(format!("{stem}_monitor_{label}.txt"));
            std::fs::write(&path, &text).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("run: wrote {}", path.display());
        }
    }

    if let Some((t, what)) = &trace.failure {
        eprintln!("divergence at t = {t:.3}: {what}");
        return Ok(EXIT_DIVERGENCE);
    }
    Ok(EXIT_OK)
}

/// Restriction of a multi-observer trace to a single observer.
fn single_observer_trace(trace: &crate::sim::SimTrace, label: &str) -> crate::sim::SimTrace {
    let mut single = trace.clone();
    single.observers.retain(|o| o.label == label);
    single
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let md = read_csv(&args.md)?;
    let gd = read_csv(&args.gd)?;
    let hash_md = md.meta.get("scenario_hash").cloned().unwrap_or_default();
    let hash_gd = gd.meta.get("scenario_hash").cloned().unwrap_or_default();
    if hash_md.is_empty() || hash_md != hash_gd {
        return Err(Error::IncomparableTraces(format!(
            "scenario hashes differ: {hash_md} vs {hash_gd}"
        )));
    }
    let t_md = md
        .column("t")
        .ok_or_else(|| Error::IncomparableTraces("missing time column".into()))?;
    let t_gd = gd
        .column("t")
        .ok_or_else(|| Error::IncomparableTraces("missing time column".into()))?;
    if t_md.len() != t_gd.len()
        || t_md
            .iter()
            .zip(t_gd.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::IncomparableTraces(
            "traces do not share the time grid".into(),
        ));
    }

    let prefix_md = observer_prefix(&md)?;
    let prefix_gd = observer_prefix(&gd)?;

    let mut md_total = 0.0;
    let mut gd_total = 0.0;
    println!("channel, md_rms, gd_rms, delta");
    for kind in ["fahat", "fshat"] {
        let truth_name = if kind == "fahat" { "fa_true" } else { "fs_true" };
        for ch in 1.. {
            let truth = match md.column(&format!("{truth_name}{ch}")) {
                Some(col) => col,
                None => break,
            };
            let est_md = md
                .column(&format!("{prefix_md}_{kind}{ch}"))
                .ok_or_else(|| Error::IncomparableTraces(format!("missing {kind}{ch}")))?;
            let est_gd = gd
                .column(&format!("{prefix_gd}_{kind}{ch}"))
                .ok_or_else(|| Error::IncomparableTraces(format!("missing {kind}{ch}")))?;
            let rms_md = rms_diff(&est_md, &truth);
            let rms_gd = rms_diff(&est_gd, &truth);
            md_total += rms_md * rms_md;
            gd_total += rms_gd * rms_gd;
            println!(
                "{kind}{ch}, {rms_md:.6e}, {rms_gd:.6e}, {:.6e}",
                rms_md - rms_gd
            );
        }
    }
    let md_total = md_total.sqrt();
    let gd_total = gd_total.sqrt();
    println!("total fault-estimation rms: md = {md_total:.6e}, gd = {gd_total:.6e}");
    if md_total <= gd_total {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_COMPARISON)
    }
}

fn observer_prefix(table: &crate::sim::TraceTable) -> Result<String> {
    for col in &table.columns {
        if let Some(idx) = col.find("_fahat1") {
            if col.ends_with("_fahat1") {
                return Ok(col[..idx].to_string());
            }
        }
    }
    Err(Error::IncomparableTraces(
        "no observer fault-estimate columns found".into(),
    ))
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let d = a[i] - b[i];
        acc += d * d;
    }
    (acc / n as f64).sqrt()
}

// ---------------------------------------------------------------------------

/// Hash of arbitrary bytes, re-exported for output provenance.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex_digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_spacecraft_config;

    fn write_config(dir: &Path, config: &ScenarioConfig, name: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, config.to_toml().unwrap()).unwrap();
        path
    }

    fn quick_config() -> ScenarioConfig {
        let mut config = default_spacecraft_config();
        config.scenario.horizon_s = 2.0;
        config.sim.dt_s = 2e-3;
        config.analysis.sample_count = 4;
        if let Some(tb) = config.train.as_mut() {
            tb.scenario_count = 2;
            tb.epochs = 5;
            tb.rollout_horizon_s = 4.0;
            tb.rollout_dt_s = 4e-3;
            tb.hidden = vec![8];
            tb.window_start_range_s = [0.5, 1.0];
            tb.window_duration_range_s = [1.0, 2.0];
        }
        config
    }

    #[test]
    fn analyze_then_run_round_trips_the_xi_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = quick_config();
        let path = write_config(dir.path(), &config, "case.toml");

        let code = cmd_analyze(&AnalyzeArgs {
            config: path.clone(),
            out_dir: out.clone(),
            seed: 0,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        let xi_path = out.join("case_xi.toml");
        assert!(xi_path.exists());
        // xi file parses and matches the channel counts
        let xi: XiFile = toml::from_str(&std::fs::read_to_string(&xi_path).unwrap()).unwrap();
        assert_eq!(xi.xi_actuators.len(), 4);
        assert_eq!(xi.xi_sensors.len(), 3);
        // actuator channels are never isolable for the pyramid: max curvature
        for v in &xi.xi_actuators {
            assert!((v - 5.0).abs() < 1e-9);
        }
        // sensor channels are orthogonal to everything: min curvature
        for v in &xi.xi_sensors {
            assert!((v - 1.0).abs() < 1e-9);
        }

        // train tiny features, then run with the xi file wired in
        let code = cmd_train(&TrainArgs {
            config: path.clone(),
            out_dir: out.clone(),
            seed: 1,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);

        config.observer.xi_file = Some(xi_path.display().to_string());
        config.observer.features_actuator_file =
            Some(out.join("features_actuator.json").display().to_string());
        config.observer.features_sensor_file =
            Some(out.join("features_sensor.json").display().to_string());
        config.observer.run = vec!["md".into()];
        let path2 = write_config(dir.path(), &config, "case_run.toml");
        let code = cmd_run(&RunArgs {
            config: vec![path2],
            out_dir: out.clone(),
            seed: 0,
            jobs: 1,
            dry_run: false,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        assert!(out.join("case_run_md.csv").exists());
        assert!(out.join("case_run_metrics.txt").exists());
        assert!(out.join("case_run_monitor_md.txt").exists());
    }

    #[test]
    fn dry_run_touches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = quick_config();
        let path = write_config(dir.path(), &config, "case.toml");
        let code = cmd_run(&RunArgs {
            config: vec![path],
            out_dir: out.clone(),
            seed: 0,
            jobs: 1,
            dry_run: true,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        assert!(!out.exists());
    }

    #[test]
    fn missing_feature_files_give_clear_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir_all(&out).unwrap();
        let config = quick_config();
        match prepare_run(&config, &out, 0) {
            Err(Error::Io { path, .. }) => assert!(path.contains("features_actuator.json")),
            Err(other) => panic!("expected io error, got {other}"),
            Ok(_) => panic!("expected io error, got success"),
        }
    }

    #[test]
    fn degenerate_md_gd_configs_produce_identical_traces() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = quick_config();
        let path = write_config(dir.path(), &config, "case.toml");
        cmd_train(&TrainArgs {
            config: path,
            out_dir: out.clone(),
            seed: 3,
        })
        .unwrap();

        // alpha = 0, beta = 1, xi = 1 collapses mirror descent onto gradient
        // descent
        config.observer.alpha = 0.0;
        config.observer.beta = 1.0;
        config.observer.xi_actuators = Some(vec![1.0; 4]);
        config.observer.xi_sensors = Some(vec![1.0; 3]);
        config.observer.features_actuator_file =
            Some(out.join("features_actuator.json").display().to_string());
        config.observer.features_sensor_file =
            Some(out.join("features_sensor.json").display().to_string());
        config
            .scenario
            .actuator_faults
            .push(crate::config::ActuatorFaultConfig::LossOfEffectiveness {
                channel: 2,
                effectiveness: 0.25,
                window_s: [0.5, 1.5],
            });
        let path2 = write_config(dir.path(), &config, "case_eq.toml");
        let code = cmd_run(&RunArgs {
            config: vec![path2],
            out_dir: out.clone(),
            seed: 0,
            jobs: 1,
            dry_run: false,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);

        // identical traces: compare exits 0 with zero deltas
        let code = cmd_compare(&CompareArgs {
            md: out.join("case_eq_md.csv"),
            gd: out.join("case_eq_gd.csv"),
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        let md = std::fs::read_to_string(out.join("case_eq_md.csv")).unwrap();
        let gd = std::fs::read_to_string(out.join("case_eq_gd.csv")).unwrap();
        // identical numerics modulo the md_/gd_ column prefixes
        assert_eq!(md.replace("md_", "o_"), gd.replace("gd_", "o_"));
    }

    #[test]
    fn compare_rejects_mismatched_scenarios() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "# scenario_hash=xyz\nt,md_fahat1,fa_true1\n0,0,0\n").unwrap();
        std::fs::write(&b, "# scenario_hash=other\nt,gd_fahat1,fa_true1\n0,0,0\n").unwrap();
        let err = cmd_compare(&CompareArgs { md: a, gd: b });
        assert!(matches!(err, Err(Error::IncomparableTraces(_))));
    }

    #[test]
    fn compare_known_rms_delta() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        // constant estimate errors 0.2 vs 0.3
        let mut md = String::from("# scenario_hash=s\nt,fa_true1,md_fahat1\n");
        let mut gd = String::from("# scenario_hash=s\nt,fa_true1,gd_fahat1\n");
        for k in 0..50 {
            let _ = writeln!(md, "{},0,0.2", k as f64 * 0.1);
            let _ = writeln!(gd, "{},0,0.3", k as f64 * 0.1);
        }
        std::fs::write(&a, md).unwrap();
        std::fs::write(&b, gd).unwrap();
        let code = cmd_compare(&CompareArgs {
            md: a.clone(),
            gd: b.clone(),
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        // reversed: MD worse, exit encodes the comparison failure
        let code = cmd_compare(&CompareArgs { md: b, gd: a }).unwrap();
        assert_eq!(code, EXIT_COMPARISON);
    }
}
