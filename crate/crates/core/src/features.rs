//! Offline-trained feature maps for the fault estimators.
//!
//! A full estimator network maps `(x, u)` to a fault vector. Training splits
//! it into frozen hidden layers (the [`FeatureMap`], tanh activations with
//! z-score input normalization baked in) and a linear last layer that the
//! observer adapts online. Dataset generation simulates randomized fault
//! scenarios of the closed-loop plant and records labelled snapshots.

use crate::error::{Error, Result};
use crate::model::{
    plant_step, ActuatorFaultProfile, ControlLaw, FaultScenario, Signal, SystemModel, Waveform,
    Window,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const FEATURE_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Layer {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

/// Frozen hidden layers of a fault estimator: z-scored input followed by
/// tanh layers. Evaluation is deterministic and smooth.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
    norm_mean: DVector<f64>,
    norm_std: DVector<f64>,
    lipschitz: f64,
}

impl FeatureMap {
    /// Identity features: the z-scored raw input passes straight through.
    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim: input_dim,
            layers: Vec::new(),
            norm_mean: DVector::zeros(input_dim),
            norm_std: DVector::from_element(input_dim, 1.0),
            lipschitz: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    /// Feature vector for a raw `(state, input)` pair.
    pub fn eval(&self, state: &DVector<f64>, input: &DVector<f64>) -> DVector<f64> {
        let mut raw = DVector::zeros(state.len() + input.len());
        raw.rows_mut(0, state.len()).copy_from(state);
        raw.rows_mut(state.len(), input.len()).copy_from(input);
        self.eval_raw(&raw)
    }

    pub fn eval_raw(&self, raw: &DVector<f64>) -> DVector<f64> {
        assert_eq!(raw.len(), self.input_dim, "feature input dimension");
        let mut z = DVector::zeros(self.input_dim);
        for i in 0..self.input_dim {
            z[i] = (raw[i] - self.norm_mean[i]) / self.norm_std[i];
        }
        for layer in &self.layers {
            z = &layer.weight * z + &layer.bias;
            z.apply(|v| *v = v.tanh());
        }
        z
    }

    /// Product of layer spectral norms times the activation constant (tanh
    /// has constant 1), including the normalization scaling. Upper-bounds
    /// every difference quotient of the map.
    pub fn lipschitz_bound(&self) -> f64 {
        let norm_factor = self
            .norm_std
            .iter()
            .map(|&s| 1.0 / s)
            .fold(0.0f64, f64::max);
        let mut bound = norm_factor;
        for layer in &self.layers {
            let smax = layer.weight.clone().svd(false, false).singular_values.max();
            bound *= smax;
        }
        bound
    }

    pub fn save(&self, path: &Path, last_layer: Option<&DMatrix<f64>>) -> Result<()> {
        let file = FeatureMapFile {
            version: FEATURE_FILE_VERSION,
            activation: "tanh".into(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            norm_mean: self.norm_mean.as_slice().to_vec(),
            norm_std: self.norm_std.as_slice().to_vec(),
            lipschitz: self.lipschitz,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight_row_major: row_major(&l.weight),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
            last_layer: last_layer.map(|w| LayerFile {
                rows: w.nrows(),
                cols: w.ncols(),
                weight_row_major: row_major(w),
                bias: Vec::new(),
            }),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Config(format!("feature serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Loads a feature map and, when present, the stored last-layer matrix.
    pub fn load(path: &Path) -> Result<(Self, Option<DMatrix<f64>>)> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: FeatureMapFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.version != FEATURE_FILE_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported feature file version {}",
                path.display(),
                file.version
            )));
        }
        if file.activation != "tanh" {
            return Err(Error::Config(format!(
                "{}: unsupported activation {}",
                path.display(),
                file.activation
            )));
        }
        let layers = file
            .layers
            .iter()
            .map(|l| Layer {
                weight: from_row_major(l.rows, l.cols, &l.weight_row_major),
                bias: DVector::from_column_slice(&l.bias),
            })
            .collect();
        let last = file
            .last_layer
            .as_ref()
            .map(|l| from_row_major(l.rows, l.cols, &l.weight_row_major));
        Ok((
            Self {
                input_dim: file.input_dim,
                output_dim: file.output_dim,
                layers,
                norm_mean: DVector::from_column_slice(&file.norm_mean),
                norm_std: DVector::from_column_slice(&file.norm_std),
                lipschitz: file.lipschitz,
            },
            last,
        ))
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight_row_major: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapFile {
    version: u32,
    activation: String,
    input_dim: usize,
    output_dim: usize,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    lipschitz: f64,
    layers: Vec<LayerFile>,
    last_layer: Option<LayerFile>,
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Labelled training records: raw `(state, input)` rows with the actuator and
/// sensor fault vectors active at the snapshot time.
#[derive(Debug, Clone)]
pub struct FaultDataset {
    pub inputs: Vec<DVector<f64>>,
    /// Actuator fault signal per channel, length `m`.
    pub actuator_labels: Vec<DVector<f64>>,
    /// Sensor fault vector in output space, length `p`.
    pub sensor_labels: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl FaultDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct UniformRange {
    pub lo: f64,
    pub hi: f64,
}

impl UniformRange {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActuatorFaultFamily {
    pub channel: usize,
    pub probability: f64,
    pub effectiveness: UniformRange,
    pub start: UniformRange,
    pub duration: UniformRange,
}

#[derive(Debug, Clone)]
pub struct SensorFaultFamily {
    pub channel: usize,
    pub probability: f64,
    /// Signed amplitude range.
    pub amplitude: UniformRange,
    pub omega: UniformRange,
    pub start: UniformRange,
    pub duration: UniformRange,
}

/// Ranges from which randomized training scenarios are drawn.
#[derive(Debug, Clone)]
pub struct ScenarioFamily {
    pub horizon: f64,
    pub dt: f64,
    pub sample_interval: f64,
    pub x0: DVector<f64>,
    pub actuator_faults: Vec<ActuatorFaultFamily>,
    pub sensor_faults: Vec<SensorFaultFamily>,
}

/// Simulates `count` randomized fault scenarios of the closed-loop plant and
/// records snapshots at the family's sampling rate. Deterministic for a fixed
/// seed. Diverged scenarios are dropped; more than 50% drops is an error.
pub fn generate_dataset(
    model: &SystemModel,
    control: &ControlLaw,
    family: &ScenarioFamily,
    count: usize,
    seed: u64,
) -> Result<FaultDataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be >= 1".into()));
    }
    let q_a = model.num_actuator_channels();
    let q_s = model.num_sensor_channels();
    let m = model.input_dim();
    let p = model.output_dim();
    if q_a != m {
        return Err(Error::InvalidArgument(
            "the estimator pipeline requires one actuator fault channel per input".into(),
        ));
    }

    let mut inputs = Vec::new();
    let mut actuator_labels = Vec::new();
    let mut sensor_labels = Vec::new();
    let mut dropped = 0usize;

    for s in 0..count {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s as u64 + 1));
        let scenario = sample_scenario(family, q_a, q_s, model.state_dim(), &mut rng);
        match rollout_records(model, control, family, &scenario, p) {
            Ok(mut records) => {
                for r in records.drain(..) {
                    inputs.push(r.0);
                    actuator_labels.push(r.1);
                    sensor_labels.push(r.2);
                }
            }
            Err(_) => dropped += 1,
        }
    }

    if dropped * 2 > count || inputs.is_empty() {
        return Err(Error::GenerationFailure {
            dropped,
            total: count,
        });
    }

    let dim = inputs[0].len();
    let mut mean = DVector::zeros(dim);
    for r in &inputs {
        mean += r;
    }
    mean /= inputs.len() as f64;
    let mut var = DVector::zeros(dim);
    for r in &inputs {
        let d = r - &mean;
        var += d.component_mul(&d);
    }
    var /= inputs.len() as f64;
    let std = var.map(|v| v.sqrt().max(1e-8));

    Ok(FaultDataset {
        inputs,
        actuator_labels,
        sensor_labels,
        mean,
        std,
    })
}

fn sample_scenario(
    family: &ScenarioFamily,
    q_a: usize,
    q_s: usize,
    state_dim: usize,
    rng: &mut ChaCha8Rng,
) -> FaultScenario {
    let mut scenario = FaultScenario::fault_free(q_a, q_s, state_dim, family.horizon);
    for fam in &family.actuator_faults {
        let active = rng.random_range(0.0..1.0) < fam.probability;
        let eta = fam.effectiveness.sample(rng);
        let start = fam.start.sample(rng);
        let duration = fam.duration.sample(rng);
        if active && fam.channel < q_a {
            scenario.actuator_profiles[fam.channel] =
                Some(ActuatorFaultProfile::loss_of_effectiveness(
                    eta,
                    Window {
                        start,
                        end: start + duration,
                    },
                ));
        }
    }
    for fam in &family.sensor_faults {
        let active = rng.random_range(0.0..1.0) < fam.probability;
        let amplitude = fam.amplitude.sample(rng);
        let omega = fam.omega.sample(rng);
        let start = fam.start.sample(rng);
        let duration = fam.duration.sample(rng);
        if active && fam.channel < q_s {
            scenario.sensor_profiles[fam.channel] = Some(Signal::windowed(
                Waveform::Sine {
                    amplitude,
                    omega,
                    t_ref: start,
                    phase: 0.0,
                },
                Window {
                    start,
                    end: start + duration,
                },
                0.0,
            ));
        }
    }
    scenario
}

type Record = (DVector<f64>, DVector<f64>, DVector<f64>);

fn rollout_records(
    model: &SystemModel,
    control: &ControlLaw,
    family: &ScenarioFamily,
    scenario: &FaultScenario,
    p: usize,
) -> Result<Vec<Record>> {
    let steps = (family.horizon / family.dt).round() as usize;
    let sample_every = (family.sample_interval / family.dt).round().max(1.0) as usize;
    let mut x = family.x0.clone();
    let mut records = Vec::new();
    for k in 0..steps {
        let t = k as f64 * family.dt;
        if k % sample_every == 0 {
            let u = control(t, &x);
            let fa = scenario.actuator_fault(t, &u);
            let fs = scenario.sensor_fault(t);
            let mut fs_out = DVector::zeros(p);
            for (j, e) in model.sensor_fault_dirs().iter().enumerate() {
                fs_out += e * fs[j];
            }
            let mut raw = DVector::zeros(x.len() + u.len());
            raw.rows_mut(0, x.len()).copy_from(&x);
            raw.rows_mut(x.len(), u.len()).copy_from(&u);
            records.push((raw, fa, fs_out));
        }
        x = plant_step(model, scenario, control, t, &x, family.dt)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("plant rollout".into()));
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Hidden-layer widths of the estimator networks. The default matches a
/// 4-layer network: three hidden layers of width 32 plus the linear last
/// layer that the observer adapts.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32, 32],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFeatures {
    pub actuator: FeatureMap,
    pub sensor: FeatureMap,
    /// Last layer of the actuator net, `n_a x m`.
    pub w_actuator: DMatrix<f64>,
    /// Last layer of the sensor net, `n_s x p`.
    pub w_sensor: DMatrix<f64>,
    pub final_loss_actuator: f64,
    pub final_loss_sensor: f64,
}

const LEARNING_RATE: f64 = 0.05;
const BATCH_SIZE: usize = 64;

/// Trains both estimator networks on the dataset by mini-batch gradient
/// descent on the squared loss, then splits each into frozen features and a
/// last layer. Deterministic for a fixed seed.
pub fn train_features(
    dataset: &FaultDataset,
    arch: &ArchSpec,
    epochs: usize,
    seed: u64,
) -> Result<TrainedFeatures> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let (actuator, w_actuator, final_loss_actuator) = train_one(
        dataset,
        &dataset.actuator_labels,
        arch,
        epochs,
        seed ^ 0xa5a5_5a5a,
    )?;
    let (sensor, w_sensor, final_loss_sensor) = train_one(
        dataset,
        &dataset.sensor_labels,
        arch,
        epochs,
        seed ^ 0x5a5a_a5a5,
    )?;
    Ok(TrainedFeatures {
        actuator,
        sensor,
        w_actuator,
        w_sensor,
        final_loss_actuator,
        final_loss_sensor,
    })
}

fn train_one(
    dataset: &FaultDataset,
    labels: &[DVector<f64>],
    arch: &ArchSpec,
    epochs: usize,
    seed: u64,
) -> Result<(FeatureMap, DMatrix<f64>, f64)> {
    let in_dim = dataset.inputs[0].len();
    let out_dim = labels[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut layers = Vec::new();
    let mut prev = in_dim;
    for &width in &arch.hidden {
        layers.push(Layer {
            weight: xavier(&mut rng, width, prev),
            bias: DVector::zeros(width),
        });
        prev = width;
    }
    let feature_dim = prev;
    // last layer stored so that the estimate is W^T phi; zero init keeps the
    // readout inside the span actually excited by the data
    let mut w_last = DMatrix::zeros(feature_dim, out_dim);

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss = f64::INFINITY;

    // pre-normalize inputs once
    let normalized: Vec<DVector<f64>> = dataset
        .inputs
        .iter()
        .map(|r| {
            let mut z = DVector::zeros(in_dim);
            for i in 0..in_dim {
                z[i] = (r[i] - dataset.mean[i]) / dataset.std[i];
            }
            z
        })
        .collect();

    for epoch in 0..epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(BATCH_SIZE) {
            epoch_loss += sgd_batch(&normalized, labels, chunk, &mut layers, &mut w_last);
        }
        loss = epoch_loss / n as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }

    let mut fm = FeatureMap {
        input_dim: in_dim,
        output_dim: feature_dim,
        layers,
        norm_mean: dataset.mean.clone(),
        norm_std: dataset.std.clone(),
        lipschitz: 0.0,
    };
    fm.lipschitz = fm.lipschitz_bound();
    Ok((fm, w_last, loss))
}

/// One gradient step on a mini-batch; returns the summed squared error.
fn sgd_batch(
    inputs: &[DVector<f64>],
    labels: &[DVector<f64>],
    batch: &[usize],
    layers: &mut [Layer],
    w_last: &mut DMatrix<f64>,
) -> f64 {
    let b = batch.len() as f64;
    let mut grad_w_last = DMatrix::zeros(w_last.nrows(), w_last.ncols());
    let mut grad_layers: Vec<(DMatrix<f64>, DVector<f64>)> = layers
        .iter()
        .map(|l| {
            (
                DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                DVector::zeros(l.bias.len()),
            )
        })
        .collect();
    let mut total = 0.0;

    for &idx in batch {
        // forward, caching activations
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(inputs[idx].clone());
        for layer in layers.iter() {
            let mut z = &layer.weight * acts.last().unwrap() + &layer.bias;
            z.apply(|v| *v = v.tanh());
            acts.push(z);
        }
        let phi = acts.last().unwrap();
        let pred = w_last.transpose() * phi;
        let err = &pred - &labels[idx];
        total += err.norm_squared();

        grad_w_last += phi * err.transpose();
        let mut delta = &*w_last * &err;
        for (li, layer) in layers.iter().enumerate().rev() {
            // through tanh: a = tanh(pre), da/dpre = 1 - a^2
            let a = &acts[li + 1];
            let mut dpre = delta.clone();
            for i in 0..dpre.len() {
                dpre[i] *= 1.0 - a[i] * a[i];
            }
            grad_layers[li].0 += &dpre * acts[li].transpose();
            grad_layers[li].1 += &dpre;
            if li > 0 {
                delta = layer.weight.transpose() * dpre;
            }
        }
    }

    let step = LEARNING_RATE / b;
    *w_last -= grad_w_last * step;
    for (layer, (gw, gb)) in layers.iter_mut().zip(grad_layers.iter()) {
        layer.weight -= gw * step;
        layer.bias -= gb * step;
    }
    total * 0.5
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
