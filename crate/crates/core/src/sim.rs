//! Fixed-step co-simulation of plant and observers under fault scenarios,
//! trace telemetry, summary metrics, threshold detection, and the Lyapunov
//! runtime monitor.
//!
//! The true plant integrates with the control law evaluated at the RK4 stage
//! times (the closed loop stays smooth); each observer steps in lockstep with
//! the measurement and commanded input sampled at the step start.

use crate::error::{Error, Result};
use crate::model::{eval_output, plant_step, ControlLaw, FaultScenario, SystemModel, Window};
use crate::observer::{step_by_law, MirrorMapEN, ObserverConfig, ObserverState};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Configuration and trace
// ---------------------------------------------------------------------------

pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub observer_x0: DVector<f64>,
    pub control: ControlLaw,
    /// Keep every k-th step in the trace.
    pub decimation: usize,
    /// Keep a full weight snapshot every k-th *stored* row.
    pub weight_snapshot_every: usize,
    /// Effectiveness reconstruction floor on |u_i|.
    pub u_floor: f64,
    pub config_hash: String,
    pub scenario_hash: String,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.horizon <= self.dt {
            return Err(Error::InvalidArgument(
                "sim requires dt > 0 and horizon > dt".into(),
            ));
        }
        if self.decimation == 0 || self.weight_snapshot_every == 0 {
            return Err(Error::InvalidArgument(
                "decimation factors must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Telemetry of one observer over the stored rows.
#[derive(Debug, Clone)]
pub struct ObserverTrace {
    pub label: String,
    pub x_hat: Vec<DVector<f64>>,
    pub residual: Vec<DVector<f64>>,
    pub fa_hat: Vec<DVector<f64>>,
    pub fs_hat: Vec<DVector<f64>>,
    pub eta_hat: Vec<DVector<f64>>,
    pub wa_norm: Vec<f64>,
    pub ws_norm: Vec<f64>,
    /// `(row index, W_a, W_s)` snapshots for the Lyapunov monitor.
    pub weight_snapshots: Vec<(usize, DMatrix<f64>, DMatrix<f64>)>,
    pub guard_hits: u64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub time: Vec<f64>,
    pub x_true: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub fa_true: Vec<DVector<f64>>,
    /// True sensor fault mapped to output space.
    pub fs_true: Vec<DVector<f64>>,
    pub eta_true: Vec<DVector<f64>>,
    pub observers: Vec<ObserverTrace>,
    /// Set when the plant or an observer diverged: `(time, description)`.
    pub failure: Option<(f64, String)>,
    pub dt: f64,
    pub decimation: usize,
    pub config_hash: String,
    pub scenario_hash: String,
    pub seed: u64,
}

impl SimTrace {
    pub fn observer(&self, label: &str) -> Option<&ObserverTrace> {
        self.observers.iter().find(|o| o.label == label)
    }

    pub fn rows(&self) -> usize {
        self.time.len()
    }
}

// ---------------------------------------------------------------------------
// Co-simulation
// ---------------------------------------------------------------------------

/// Integrates the true plant and every observer in lockstep. Deterministic
/// for a fixed configuration. On divergence the partial trace is returned
/// with the failure marker set.
pub fn run_scenario(
    model: &SystemModel,
    scenario: &FaultScenario,
    observers: &mut [(String, ObserverConfig, ObserverState)],
    cfg: &SimConfig,
) -> Result<SimTrace> {
    cfg.validate()?;
    for (_, ocfg, _) in observers.iter() {
        ocfg.validate(model)?;
    }
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let p = model.output_dim();
    let m = model.input_dim();

    let mut trace = SimTrace {
        time: Vec::new(),
        x_true: Vec::new(),
        u: Vec::new(),
        fa_true: Vec::new(),
        fs_true: Vec::new(),
        eta_true: Vec::new(),
        observers: observers
            .iter()
            .map(|(label, _, _)| ObserverTrace {
                label: label.clone(),
                x_hat: Vec::new(),
                residual: Vec::new(),
                fa_hat: Vec::new(),
                fs_hat: Vec::new(),
                eta_hat: Vec::new(),
                wa_norm: Vec::new(),
                ws_norm: Vec::new(),
                weight_snapshots: Vec::new(),
                guard_hits: 0,
            })
            .collect(),
        failure: None,
        dt: cfg.dt,
        decimation: cfg.decimation,
        config_hash: cfg.config_hash.clone(),
        scenario_hash: cfg.scenario_hash.clone(),
        seed: cfg.seed,
    };

    let mut x = cfg.x0.clone();
    let mut eta_last: Vec<DVector<f64>> = observers
        .iter()
        .map(|_| DVector::from_element(m, 1.0))
        .collect();

    'sim: for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let u = (cfg.control)(t, &x);
        let fa = scenario.actuator_fault(t, &u);
        let fs = scenario.sensor_fault(t);
        let y = eval_output(model, &x, &fs)?;

        let store = k % cfg.decimation == 0 || k == steps;
        if store {
            let row = trace.time.len();
            trace.time.push(t);
            trace.x_true.push(x.clone());
            trace.u.push(u.clone());
            trace.fa_true.push(fa.clone());
            let mut fs_out = DVector::zeros(p);
            for (j, e) in model.sensor_fault_dirs().iter().enumerate() {
                fs_out += e * fs[j];
            }
            trace.fs_true.push(fs_out);
            trace.eta_true.push(scenario.effectiveness(t));

            for (oi, (_, ocfg, ostate)) in observers.iter().enumerate() {
                let ot = &mut trace.observers[oi];
                let fa_hat = ostate.fault_estimate_actuator(ocfg, &u);
                let fs_hat = ostate.fault_estimate_sensor(ocfg, &u);
                let y_hat = model.output(&ostate.x_hat) + &fs_hat;
                let mut eta = eta_last[oi].clone();
                for i in 0..m {
                    if u[i].abs() > cfg.u_floor {
                        eta[i] = 1.0 + fa_hat[i] / u[i];
                    }
                }
                eta_last[oi] = eta.clone();
                ot.x_hat.push(ostate.x_hat.clone());
                ot.residual.push(&y - y_hat);
                ot.fa_hat.push(fa_hat);
                ot.fs_hat.push(fs_hat);
                ot.eta_hat.push(eta);
                ot.wa_norm.push(ostate.w_a.norm());
                ot.ws_norm.push(ostate.w_s.norm());
                ot.guard_hits = ostate.guard_hits;
                if row % cfg.weight_snapshot_every == 0 {
                    ot.weight_snapshots
                        .push((row, ostate.w_a.clone(), ostate.w_s.clone()));
                }
            }
        }

        if k == steps {
            break;
        }

        for (label, ocfg, ostate) in observers.iter_mut() {
            match step_by_law(ocfg, model, ostate, &y, &u, t, cfg.dt) {
                Ok((next, _)) => *ostate = next,
                Err(e) => {
                    trace.failure = Some((t, format!("observer {label}: {e}")));
                    break 'sim;
                }
            }
        }

        match plant_step(model, scenario, &cfg.control, t, &x, cfg.dt) {
            Ok(next) => {
                if next.iter().all(|v| v.is_finite()) {
                    x = next;
                } else {
                    trace.failure = Some((t, "plant state non-finite".into()));
                    break 'sim;
                }
            }
            Err(e) => {
                trace.failure = Some((t, format!("plant: {e}")));
                break 'sim;
            }
        }
    }

    Ok(trace)
}

// ---------------------------------------------------------------------------
// Lyapunov monitor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MonitorReport {
    /// `(t, V)` on the weight-snapshot grid.
    pub v_series: Vec<(f64, f64)>,
    /// Fitted decay rate from the regression of dV/dt on V.
    pub alpha: f64,
    /// Tightest offset making `V(k+1) <= V(k) exp(-alpha dt) + sigma dt` hold.
    pub sigma: f64,
    /// `sigma / alpha` when the fit is conclusive.
    pub ultimate_bound: f64,
    /// Whether V enters `{V <= 1.1 sigma/alpha}` and stays there.
    pub enters_and_stays: bool,
    /// False when the fitted alpha is non-positive.
    pub uub_verified: bool,
    /// True when the weight guard never clamped.
    pub guard_ok: bool,
    /// Ideal-weight proxies used (offline least squares on the true faults).
    pub w_star_a: DMatrix<f64>,
    pub w_star_s: DMatrix<f64>,
}

/// Lyapunov value `V = e^T M e / 2 + sum_i D_a(w*_i || w_i)/gamma_i +
/// sum_j D_s(w*_j || w_j)/gamma_j` along the trace, with the ideal weights
/// proxied by the least-squares fit of the true fault signals on the feature
/// values of the run. Fits `(alpha, sigma)` and reports the residual-set
/// verdict.
pub fn lyapunov_monitor(
    trace: &SimTrace,
    observer_label: &str,
    cfg: &ObserverConfig,
) -> Result<MonitorReport> {
    let ot = trace
        .observer(observer_label)
        .ok_or_else(|| Error::InvalidArgument(format!("no observer {observer_label} in trace")))?;
    if trace.failure.is_some() {
        return Err(Error::InvalidArgument(
            "monitor requires a completed trace".into(),
        ));
    }

    // W* proxies: ridge-stabilized least squares of the true fault signals on
    // the features observed along the run
    let w_star_a = least_squares_weights(trace, ot, &cfg.features_a, true)?;
    let w_star_s = least_squares_weights(trace, ot, &cfg.features_s, false)?;

    let mut v_series = Vec::with_capacity(ot.weight_snapshots.len());
    for (row, w_a, w_s) in &ot.weight_snapshots {
        let e = &trace.x_true[*row] - &ot.x_hat[*row];
        let mut v = 0.5 * (e.transpose() * &cfg.metric * &e)[(0, 0)];
        v += bregman_sum(&cfg.mirror_a, &w_star_a, w_a, &cfg.gamma_a)?;
        v += bregman_sum(&cfg.mirror_s, &w_star_s, w_s, &cfg.gamma_s)?;
        v_series.push((trace.time[*row], v));
    }
    if v_series.len() < 8 {
        return Err(Error::InvalidArgument(
            "monitor requires at least 8 weight snapshots".into(),
        ));
    }

    // regression of the numerically differentiated V on V: V' = -alpha V + sigma
    let mut sum_v = 0.0;
    let mut sum_d = 0.0;
    let mut sum_vv = 0.0;
    let mut sum_vd = 0.0;
    let mut count = 0.0;
    for w in v_series.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt <= 0.0 {
            continue;
        }
        let v_mid = 0.5 * (w[0].1 + w[1].1);
        let dv = (w[1].1 - w[0].1) / dt;
        sum_v += v_mid;
        sum_d += dv;
        sum_vv += v_mid * v_mid;
        sum_vd += v_mid * dv;
        count += 1.0;
    }
    let denom = count * sum_vv - sum_v * sum_v;
    let alpha = if denom.abs() > 1e-30 {
        -((count * sum_vd - sum_v * sum_d) / denom)
    } else {
        0.0
    };

    let guard_ok = ot.guard_hits == 0;
    if alpha <= 0.0 {
        return Ok(MonitorReport {
            v_series,
            alpha,
            sigma: f64::NAN,
            ultimate_bound: f64::INFINITY,
            enters_and_stays: false,
            uub_verified: false,
            guard_ok,
            w_star_a,
            w_star_s,
        });
    }

    // tightest sigma making the one-step inequality hold everywhere
    let mut sigma = 0.0f64;
    for w in v_series.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt <= 0.0 {
            continue;
        }
        let needed = (w[1].1 - w[0].1 * (-alpha * dt).exp()) / dt;
        sigma = sigma.max(needed);
    }
    let ultimate_bound = sigma / alpha;
    let threshold = 1.1 * ultimate_bound;
    let entry = v_series.iter().position(|&(_, v)| v <= threshold);
    let enters_and_stays = match entry {
        Some(idx) => v_series[idx..].iter().all(|&(_, v)| v <= threshold),
        None => false,
    };

    Ok(MonitorReport {
        v_series,
        alpha,
        sigma,
        ultimate_bound,
        enters_and_stays,
        uub_verified: true,
        guard_ok,
        w_star_a,
        w_star_s,
    })
}

fn bregman_sum(
    map: &MirrorMapEN,
    w_star: &DMatrix<f64>,
    w: &DMatrix<f64>,
    gamma: &DVector<f64>,
) -> Result<f64> {
    // column-wise Bregman sum weighted by 1/gamma; column separability makes
    // the per-column divergence well defined
    let mut total = 0.0;
    for j in 0..w.ncols() {
        let wj = w.column(j).into_owned();
        let sj = w_star.column(j).into_owned();
        let single = MirrorMapEN::new(
            map.beta,
            map.alpha,
            map.eps,
            DVector::from_element(1, map.xi[j]),
        )?;
        let d = single.bregman(
            &DMatrix::from_column_slice(sj.len(), 1, sj.as_slice()),
            &DMatrix::from_column_slice(wj.len(), 1, wj.as_slice()),
        )?;
        let g = gamma[j].max(1e-12);
        total += d / g;
    }
    Ok(total)
}

fn least_squares_weights(
    trace: &SimTrace,
    ot: &ObserverTrace,
    features: &crate::features::FeatureMap,
    actuator: bool,
) -> Result<DMatrix<f64>> {
    let rows = trace.rows();
    let n_f = features.output_dim();
    let out_dim = if actuator {
        trace.fa_true[0].len()
    } else {
        trace.fs_true[0].len()
    };
    let mut gram = DMatrix::<f64>::zeros(n_f, n_f);
    let mut rhs = DMatrix::<f64>::zeros(n_f, out_dim);
    for r in 0..rows {
        let phi = features.eval(&ot.x_hat[r], &trace.u[r]);
        gram += &phi * phi.transpose();
        let target = if actuator {
            &trace.fa_true[r]
        } else {
            &trace.fs_true[r]
        };
        rhs += &phi * target.transpose();
    }
    let ridge = 1e-8 * rows as f64;
    gram += DMatrix::identity(n_f, n_f) * ridge;
    gram.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular feature Gram matrix".into()))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ObserverMetrics {
    pub label: String,
    /// Per output axis RMS and max of the state estimation error `h(x) - h(x_hat)`.
    pub e_rms: Vec<f64>,
    pub e_max: Vec<f64>,
    /// Per actuator channel: RMS of `fa_hat - fa_true` over the channel's
    /// active window (NaN when the channel has no window).
    pub fa_rms_active: Vec<f64>,
    /// RMS over the complement of the channel's window.
    pub fa_rms_healthy: Vec<f64>,
    /// Mean |fa_hat| over the union of all active windows.
    pub fa_mean_abs_union: Vec<f64>,
    /// Per output axis: RMS of `fs_hat - fs_true` over the axis's sensor
    /// window (NaN when no sensor fault targets the axis).
    pub fs_rms_active: Vec<f64>,
    pub fs_rms_healthy: Vec<f64>,
    /// Mean |eta_hat - eta_true| over the last quarter of each channel's
    /// window (NaN when no window).
    pub eta_steady_err: Vec<f64>,
    /// Mean of eta_hat over the last quarter of each channel's window (NaN
    /// when no window); the phase lag of the estimate averages out here.
    pub eta_tail_mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub observers: Vec<ObserverMetrics>,
}

/// Per-axis estimation-error statistics and windowed fault-estimation errors.
pub fn metrics(trace: &SimTrace, model: &SystemModel, scenario: &FaultScenario) -> MetricsReport {
    let p = model.output_dim();
    let m = trace.u[0].len();
    let rows = trace.rows();
    let times = &trace.time;

    let actuator_windows: Vec<Option<Window>> = scenario
        .actuator_profiles
        .iter()
        .map(|p| p.as_ref().and_then(|p| p.window()))
        .collect();
    // map each sensor channel to the output axis its direction loads most
    let mut sensor_axis_windows: Vec<Option<Window>> = vec![None; p];
    for (j, profile) in scenario.sensor_profiles.iter().enumerate() {
        if let Some(sig) = profile {
            if let Some(w) = sig.window {
                let dir = &model.sensor_fault_dirs()[j];
                let axis = (0..p)
                    .max_by(|&a, &b| dir[a].abs().partial_cmp(&dir[b].abs()).unwrap())
                    .unwrap_or(j);
                sensor_axis_windows[axis] = Some(w);
            }
        }
    }
    let union_active = |t: f64| actuator_windows.iter().flatten().any(|w| w.contains(t));

    let mut out = Vec::new();
    for ot in &trace.observers {
        let mut e_rms = vec![0.0; p];
        let mut e_max = vec![0.0f64; p];
        for r in 0..rows {
            let e = model.output(&trace.x_true[r]) - model.output(&ot.x_hat[r]);
            for a in 0..p {
                e_rms[a] += e[a] * e[a];
                e_max[a] = e_max[a].max(e[a].abs());
            }
        }
        for v in e_rms.iter_mut() {
            *v = (*v / rows as f64).sqrt();
        }

        let mut fa_rms_active = vec![f64::NAN; m];
        let mut fa_rms_healthy = vec![0.0; m];
        let mut fa_mean_abs_union = vec![0.0; m];
        let mut union_count = 0usize;
        for (i, win) in actuator_windows.iter().enumerate() {
            let mut active_sq = 0.0;
            let mut active_n = 0usize;
            let mut healthy_sq = 0.0;
            let mut healthy_n = 0usize;
            for r in 0..rows {
                let d = ot.fa_hat[r][i] - trace.fa_true[r][i];
                match win {
                    Some(w) if w.contains(times[r]) => {
                        active_sq += d * d;
                        active_n += 1;
                    }
                    _ => {
                        healthy_sq += d * d;
                        healthy_n += 1;
                    }
                }
            }
            if active_n > 0 {
                fa_rms_active[i] = (active_sq / active_n as f64).sqrt();
            }
            if healthy_n > 0 {
                fa_rms_healthy[i] = (healthy_sq / healthy_n as f64).sqrt();
            }
        }
        for r in 0..rows {
            if union_active(times[r]) {
                union_count += 1;
                for i in 0..m {
                    fa_mean_abs_union[i] += ot.fa_hat[r][i].abs();
                }
            }
        }
        if union_count > 0 {
            for v in fa_mean_abs_union.iter_mut() {
                *v /= union_count as f64;
            }
        }

        let mut fs_rms_active = vec![f64::NAN; p];
        let mut fs_rms_healthy = vec![0.0; p];
        for axis in 0..p {
            let mut active_sq = 0.0;
            let mut active_n = 0usize;
            let mut healthy_sq = 0.0;
            let mut healthy_n = 0usize;
            for r in 0..rows {
                let d = ot.fs_hat[r][axis] - trace.fs_true[r][axis];
                match sensor_axis_windows[axis] {
                    Some(w) if w.contains(times[r]) => {
                        active_sq += d * d;
                        active_n += 1;
                    }
                    _ => {
                        healthy_sq += d * d;
                        healthy_n += 1;
                    }
                }
            }
            if active_n > 0 {
                fs_rms_active[axis] = (active_sq / active_n as f64).sqrt();
            }
            if healthy_n > 0 {
                fs_rms_healthy[axis] = (healthy_sq / healthy_n as f64).sqrt();
            }
        }

        let mut eta_steady_err = vec![f64::NAN; m];
        let mut eta_tail_mean = vec![f64::NAN; m];
        for (i, win) in actuator_windows.iter().enumerate() {
            if let Some(w) = win {
                let tail_start = w.end - 0.25 * (w.end - w.start);
                let mut acc = 0.0;
                let mut mean = 0.0;
                let mut n = 0usize;
                for r in 0..rows {
                    if times[r] >= tail_start && times[r] <= w.end {
                        acc += (ot.eta_hat[r][i] - trace.eta_true[r][i]).abs();
                        mean += ot.eta_hat[r][i];
                        n += 1;
                    }
                }
                if n > 0 {
                    eta_steady_err[i] = acc / n as f64;
                    eta_tail_mean[i] = mean / n as f64;
                }
            }
        }

        out.push(ObserverMetrics {
            label: ot.label.clone(),
            e_rms,
            e_max,
            fa_rms_active,
            fa_rms_healthy,
            fa_mean_abs_union,
            fs_rms_active,
            fs_rms_healthy,
            eta_steady_err,
            eta_tail_mean,
        });
    }
    MetricsReport { observers: out }
}

// ---------------------------------------------------------------------------
// Threshold detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DetectionThresholds {
    /// Per actuator channel magnitude threshold on |fa_hat|.
    pub actuator_magnitude: Vec<f64>,
    /// Per output axis magnitude threshold on |fs_hat|.
    pub sensor_magnitude: Vec<f64>,
    /// Continuous dwell time before a flag is raised, seconds.
    pub dwell: f64,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub channel: crate::geometry::ChannelId,
    /// Time at which the dwell condition completed.
    pub onset: f64,
    /// Onset latency relative to the true fault start (NaN if no true fault).
    pub latency: f64,
}

/// Flags a channel when its estimate magnitude exceeds the threshold
/// continuously for the dwell time.
pub fn detect(
    trace: &SimTrace,
    scenario: &FaultScenario,
    observer_label: &str,
    thresholds: &DetectionThresholds,
) -> Result<Vec<Detection>> {
    let ot = trace
        .observer(observer_label)
        .ok_or_else(|| Error::InvalidArgument(format!("no observer {observer_label} in trace")))?;
    let mut detections = Vec::new();
    let rows = trace.rows();

    let mut scan = |series: &dyn Fn(usize) -> f64,
                    threshold: f64,
                    channel: crate::geometry::ChannelId,
                    true_start: Option<f64>| {
        let mut above_since: Option<f64> = None;
        for r in 0..rows {
            let t = trace.time[r];
            if series(r).abs() > threshold {
                let start = *above_since.get_or_insert(t);
                if t - start >= thresholds.dwell {
                    detections.push(Detection {
                        channel,
                        onset: t,
                        latency: true_start.map(|s| t - s).unwrap_or(f64::NAN),
                    });
                    return;
                }
            } else {
                above_since = None;
            }
        }
    };

    for i in 0..thresholds.actuator_magnitude.len() {
        let start = scenario.actuator_profiles[i]
            .as_ref()
            .and_then(|p| p.window())
            .map(|w| w.start);
        scan(
            &|r| ot.fa_hat[r][i],
            thresholds.actuator_magnitude[i],
            crate::geometry::ChannelId::Actuator(i),
            start,
        );
    }
    for j in 0..thresholds.sensor_magnitude.len() {
        let start = scenario
            .sensor_profiles
            .get(j)
            .and_then(|p| p.as_ref())
            .and_then(|s| s.window)
            .map(|w| w.start);
        scan(
            &|r| ot.fs_hat[r][j],
            thresholds.sensor_magnitude[j],
            crate::geometry::ChannelId::Sensor(j),
            start,
        );
    }
    Ok(detections)
}

// ---------------------------------------------------------------------------
// CSV export / import
// ---------------------------------------------------------------------------

/// Writes the trace as CSV: `#`-prefixed provenance header lines, a column
/// header row, one data row per stored step. Column order is the header row;
/// floats use the shortest round-trip representation.
pub fn write_csv(trace: &SimTrace, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# fdikit trace v1");
    let _ = writeln!(out, "# config_hash={}", trace.config_hash);
    let _ = writeln!(out, "# scenario_hash={}", trace.scenario_hash);
    let _ = writeln!(out, "# seed={}", trace.seed);
    let _ = writeln!(out, "# dt={} decimation={}", trace.dt, trace.decimation);

    let n = trace.x_true[0].len();
    let m = trace.u[0].len();
    let q_a = trace.fa_true[0].len();
    let p = trace.fs_true[0].len();
    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((0..n).map(|i| format!("x{}", i + 1)));
    cols.extend((0..m).map(|i| format!("u{}", i + 1)));
    cols.extend((0..q_a).map(|i| format!("fa_true{}", i + 1)));
    cols.extend((0..p).map(|i| format!("fs_true{}", i + 1)));
    cols.extend((0..q_a).map(|i| format!("eta_true{}", i + 1)));
    for ot in &trace.observers {
        let l = &ot.label;
        cols.extend((0..n).map(|i| format!("{l}_xhat{}", i + 1)));
        cols.extend((0..p).map(|i| format!("{l}_r{}", i + 1)));
        cols.extend((0..q_a).map(|i| format!("{l}_fahat{}", i + 1)));
        cols.extend((0..p).map(|i| format!("{l}_fshat{}", i + 1)));
        cols.extend((0..q_a).map(|i| format!("{l}_etahat{}", i + 1)));
        cols.push(format!("{l}_wa_norm"));
        cols.push(format!("{l}_ws_norm"));
    }
    let _ = writeln!(out, "{}", cols.join(","));

    for r in 0..trace.rows() {
        let mut row: Vec<String> = vec![trace.time[r].to_string()];
        push_vec(&mut row, &trace.x_true[r]);
        push_vec(&mut row, &trace.u[r]);
        push_vec(&mut row, &trace.fa_true[r]);
        push_vec(&mut row, &trace.fs_true[r]);
        push_vec(&mut row, &trace.eta_true[r]);
        for ot in &trace.observers {
            push_vec(&mut row, &ot.x_hat[r]);
            push_vec(&mut row, &ot.residual[r]);
            push_vec(&mut row, &ot.fa_hat[r]);
            push_vec(&mut row, &ot.fs_hat[r]);
            push_vec(&mut row, &ot.eta_hat[r]);
            row.push(ot.wa_norm[r].to_string());
            row.push(ot.ws_norm[r].to_string());
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    for x in v.iter() {
        row.push(x.to_string());
    }
}

/// A parsed trace CSV: provenance metadata, named columns, rows.
#[derive(Debug, Clone)]
pub struct TraceTable {
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.data.iter().map(|r| r[idx]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<TraceTable> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut meta = BTreeMap::new();
    let mut columns = Vec::new();
    let mut data = Vec::new();
    for line in text.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some((k, v)) = token.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        } else if columns.is_empty() {
            columns = line.split(',').map(|s| s.to_string()).collect();
        } else if !line.trim().is_empty() {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.parse::<f64>()).collect();
            data.push(row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?);
        }
    }
    if columns.is_empty() {
        return Err(Error::Config(format!("{}: empty trace", path.display())));
    }
    Ok(TraceTable {
        meta,
        columns,
        data,
    })
}
