//! Control-affine system models with actuator and sensor fault channels,
//! fault scenarios, and the spacecraft reaction-wheel instance.
//!
//! The plant is `x' = f(x) + sum_k g_k(x) u_k + sum_i g_i^f(x) f_a_i(t) + d(t)`
//! with measured output `y = h(x) + sum_j e_j f_s_j(t)`.

use crate::error::{Error, Result};
use crate::ode::rk4_step;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ControlLaw = Box<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A nonlinear control-affine plant with declared fault channels.
///
/// All maps are pure; the struct is immutable after construction and safe to
/// share across threads.
pub struct SystemModel {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    drift: VectorFn,
    control_fields: Vec<VectorFn>,
    actuator_fault_fields: Vec<VectorFn>,
    sensor_fault_dirs: Vec<DVector<f64>>,
    output_map: VectorFn,
    drift_jacobian: Option<MatrixFn>,
    control_jacobians: Option<Vec<MatrixFn>>,
    output_jacobian: Option<MatrixFn>,
}

impl SystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        drift: VectorFn,
        control_fields: Vec<VectorFn>,
        actuator_fault_fields: Vec<VectorFn>,
        sensor_fault_dirs: Vec<DVector<f64>>,
        output_map: VectorFn,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(
                "state, input and output dimensions must be positive".into(),
            ));
        }
        if control_fields.len() != input_dim {
            return Err(Error::Dimension {
                what: "control fields",
                expected: input_dim,
                got: control_fields.len(),
            });
        }
        if actuator_fault_fields.is_empty() && sensor_fault_dirs.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one actuator or sensor fault channel is required".into(),
            ));
        }
        for (j, e) in sensor_fault_dirs.iter().enumerate() {
            if e.len() != output_dim {
                return Err(Error::Dimension {
                    what: "sensor fault direction",
                    expected: output_dim,
                    got: e.len(),
                });
            }
            if e.norm() == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "sensor fault direction {j} is zero"
                )));
            }
        }
        Ok(Self {
            state_dim,
            input_dim,
            output_dim,
            drift,
            control_fields,
            actuator_fault_fields,
            sensor_fault_dirs,
            output_map,
            drift_jacobian: None,
            control_jacobians: None,
            output_jacobian: None,
        })
    }

    pub fn with_drift_jacobian(mut self, jac: MatrixFn) -> Self {
        self.drift_jacobian = Some(jac);
        self
    }

    pub fn with_control_jacobians(mut self, jacs: Vec<MatrixFn>) -> Self {
        self.control_jacobians = Some(jacs);
        self
    }

    pub fn with_output_jacobian(mut self, jac: MatrixFn) -> Self {
        self.output_jacobian = Some(jac);
        self
    }

    /// Linear time-invariant helper: `x' = Ax + Bu + B_f fa`, `y = Cx + E fs`.
    pub fn lti(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        b_fault: DMatrix<f64>,
        sensor_fault_dirs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || b_fault.nrows() != n {
            return Err(Error::InvalidArgument(
                "lti: inconsistent matrix dimensions".into(),
            ));
        }
        let control_fields: Vec<VectorFn> = (0..m)
            .map(|k| {
                let col = b.column(k).into_owned();
                Box::new(move |_x: &DVector<f64>| col.clone()) as VectorFn
            })
            .collect();
        let fault_fields: Vec<VectorFn> = (0..b_fault.ncols())
            .map(|k| {
                let col = b_fault.column(k).into_owned();
                Box::new(move |_x: &DVector<f64>| col.clone()) as VectorFn
            })
            .collect();
        let a_drift = a.clone();
        let c_out = c.clone();
        let model = Self::new(
            n,
            m,
            p,
            Box::new(move |x| &a_drift * x),
            control_fields,
            fault_fields,
            sensor_fault_dirs,
            Box::new(move |x| &c_out * x),
        )?;
        let b_zero = DMatrix::zeros(n, n);
        Ok(model
            .with_drift_jacobian(Box::new(move |_| a.clone()))
            .with_control_jacobians(
                (0..m)
                    .map(|_| {
                        let z = b_zero.clone();
                        Box::new(move |_: &DVector<f64>| z.clone()) as MatrixFn
                    })
                    .collect(),
            )
            .with_output_jacobian(Box::new(move |_| c.clone())))
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn num_actuator_channels(&self) -> usize {
        self.actuator_fault_fields.len()
    }
    pub fn num_sensor_channels(&self) -> usize {
        self.sensor_fault_dirs.len()
    }
    pub fn sensor_fault_dirs(&self) -> &[DVector<f64>] {
        &self.sensor_fault_dirs
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.output_map)(x)
    }

    pub fn control_field(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.control_fields[k])(x)
    }

    pub fn actuator_fault_field(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.actuator_fault_fields[i])(x)
    }

    /// Stacked input matrix `g(x) = [g_1(x) ... g_m(x)]`.
    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.state_dim, self.input_dim);
        for k in 0..self.input_dim {
            g.set_column(k, &self.control_field(k, x));
        }
        g
    }

    /// Drift Jacobian: analytic when provided, otherwise central differences.
    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.drift_jacobian {
            Some(j) => j(x),
            None => crate::linalg::fd_jacobian(&|xx| self.drift(xx), x, self.state_dim, 1e-6),
        }
    }

    pub fn output_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.output_jacobian {
            Some(j) => j(x),
            None => crate::linalg::fd_jacobian(&|xx| self.output(xx), x, self.output_dim, 1e-6),
        }
    }

    pub fn control_jacobian(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.control_jacobians {
            Some(js) => js[k](x),
            None => {
                crate::linalg::fd_jacobian(&|xx| self.control_field(k, xx), x, self.state_dim, 1e-6)
            }
        }
    }

    pub fn has_output_jacobian(&self) -> bool {
        self.output_jacobian.is_some()
    }
}

/// `f(x) + g(x) u + g^f(x) fa + d`.
pub fn eval_dynamics(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    fa: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    check_dim("actuator fault", model.num_actuator_channels(), fa.len())?;
    check_dim("disturbance", model.state_dim(), d.len())?;
    let mut dx = model.drift(x) + d;
    for k in 0..model.input_dim() {
        if u[k] != 0.0 {
            dx += model.control_field(k, x) * u[k];
        }
    }
    for i in 0..model.num_actuator_channels() {
        if fa[i] != 0.0 {
            dx += model.actuator_fault_field(i, x) * fa[i];
        }
    }
    if !dx.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dynamics evaluation".into()));
    }
    Ok(dx)
}

/// `h(x) + sum_j e_j fs_j`.
pub fn eval_output(model: &SystemModel, x: &DVector<f64>, fs: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("sensor fault", model.num_sensor_channels(), fs.len())?;
    let mut y = model.output(x);
    for j in 0..model.num_sensor_channels() {
        if fs[j] != 0.0 {
            y += &model.sensor_fault_dirs()[j] * fs[j];
        }
    }
    Ok(y)
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fault scenario signals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Constant(f64),
    /// `amplitude * sin(omega * (t - t_ref) + phase)`
    Sine {
        amplitude: f64,
        omega: f64,
        t_ref: f64,
        phase: f64,
    },
}

impl Waveform {
    fn value(&self, t: f64) -> f64 {
        match self {
            Waveform::Constant(v) => *v,
            Waveform::Sine {
                amplitude,
                omega,
                t_ref,
                phase,
            } => amplitude * (omega * (t - t_ref) + phase).sin(),
        }
    }
}

/// A time signal that takes `baseline` outside its active window.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub waveform: Waveform,
    pub window: Option<Window>,
    pub baseline: f64,
}

impl Signal {
    pub fn windowed(waveform: Waveform, window: Window, baseline: f64) -> Self {
        Self {
            waveform,
            window: Some(window),
            baseline,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.window {
            Some(w) if !w.contains(t) => self.baseline,
            _ => self.waveform.value(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActuatorFaultProfile {
    /// `fa_i = (eta(t) - 1) u_i`, computed from the commanded (saturated)
    /// input of the aligned physical actuator. `eta` has baseline 1.
    LossOfEffectiveness { effectiveness: Signal },
    /// Additive fault signal with baseline 0.
    Additive { signal: Signal },
}

impl ActuatorFaultProfile {
    pub fn loss_of_effectiveness(effectiveness: f64, window: Window) -> Self {
        ActuatorFaultProfile::LossOfEffectiveness {
            effectiveness: Signal::windowed(Waveform::Constant(effectiveness), window, 1.0),
        }
    }

    /// Fault signal value at time `t` given the commanded input `u_i` of the
    /// aligned actuator channel.
    pub fn value(&self, t: f64, u_i: f64) -> f64 {
        match self {
            ActuatorFaultProfile::LossOfEffectiveness { effectiveness } => {
                (effectiveness.eval(t) - 1.0) * u_i
            }
            ActuatorFaultProfile::Additive { signal } => signal.eval(t),
        }
    }

    /// The true effectiveness `eta(t)` (1 for additive profiles).
    pub fn effectiveness(&self, t: f64) -> f64 {
        match self {
            ActuatorFaultProfile::LossOfEffectiveness { effectiveness } => effectiveness.eval(t),
            ActuatorFaultProfile::Additive { .. } => 1.0,
        }
    }

    pub fn window(&self) -> Option<Window> {
        match self {
            ActuatorFaultProfile::LossOfEffectiveness { effectiveness } => effectiveness.window,
            ActuatorFaultProfile::Additive { signal } => signal.window,
        }
    }
}

/// Smooth bounded disturbance built from a few seeded sinusoids with
/// `||d(t)|| < bound` for all `t`.
#[derive(Debug, Clone)]
pub struct Disturbance {
    terms: Vec<(DVector<f64>, f64, f64)>,
    bound: f64,
}

impl Disturbance {
    pub fn zero(dim: usize) -> Self {
        Self {
            terms: vec![(DVector::zeros(dim), 0.0, 0.0)],
            bound: 0.0,
        }
    }

    pub fn bounded(dim: usize, bound: f64, seed: u64) -> Self {
        if bound <= 0.0 {
            return Self::zero(dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        let n_terms = 3;
        for _ in 0..n_terms {
            let mut dir = DVector::zeros(dim);
            for v in dir.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            if dir.norm() > 0.0 {
                dir /= dir.norm();
            }
            let omega = rng.random_range(0.1..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            terms.push((dir * (0.95 * bound / n_terms as f64), omega, phase));
        }
        Self { terms, bound }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let dim = self.terms[0].0.len();
        let mut d = DVector::zeros(dim);
        for (amp, omega, phase) in &self.terms {
            d += amp * (omega * t + phase).sin();
        }
        d
    }
}

/// Time-indexed fault schedules and disturbance for one simulation.
pub struct FaultScenario {
    pub actuator_profiles: Vec<Option<ActuatorFaultProfile>>,
    pub sensor_profiles: Vec<Option<Signal>>,
    pub disturbance: Disturbance,
    pub horizon: f64,
}

impl FaultScenario {
    pub fn fault_free(q_a: usize, q_s: usize, state_dim: usize, horizon: f64) -> Self {
        Self {
            actuator_profiles: vec![None; q_a],
            sensor_profiles: vec![None; q_s],
            disturbance: Disturbance::zero(state_dim),
            horizon,
        }
    }

    /// Actuator fault vector at time `t`, given the commanded input.
    pub fn actuator_fault(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let mut fa = DVector::zeros(self.actuator_profiles.len());
        for (i, p) in self.actuator_profiles.iter().enumerate() {
            if let Some(p) = p {
                let u_i = if i < u.len() { u[i] } else { 0.0 };
                fa[i] = p.value(t, u_i);
            }
        }
        fa
    }

    /// Sensor fault channel values at time `t`.
    pub fn sensor_fault(&self, t: f64) -> DVector<f64> {
        let mut fs = DVector::zeros(self.sensor_profiles.len());
        for (j, p) in self.sensor_profiles.iter().enumerate() {
            if let Some(p) = p {
                fs[j] = p.eval(t);
            }
        }
        fs
    }

    /// True effectiveness per actuator channel at time `t`.
    pub fn effectiveness(&self, t: f64) -> DVector<f64> {
        let mut eta = DVector::from_element(self.actuator_profiles.len(), 1.0);
        for (i, p) in self.actuator_profiles.iter().enumerate() {
            if let Some(p) = p {
                eta[i] = p.effectiveness(t);
            }
        }
        eta
    }
}

// ---------------------------------------------------------------------------
// Spacecraft reaction-wheel instance
// ---------------------------------------------------------------------------

/// 3-axis attitude plant parameters: rigid body with four reaction wheels in
/// a pyramid configuration and a PD attitude controller.
#[derive(Debug, Clone)]
pub struct SpacecraftParams {
    /// Principal inertia diagonal, kg m^2.
    pub inertia_diag: Vector3<f64>,
    /// Single wheel inertia, kg m^2.
    pub wheel_inertia: f64,
    /// Per-wheel torque saturation, N m.
    pub torque_limit: f64,
    /// 3x4 torque distribution matrix; columns are wheel spin axes.
    pub wheel_config: DMatrix<f64>,
    pub kp: Vector3<f64>,
    pub kd: Vector3<f64>,
}

/// Symmetric four-wheel pyramid with unit-norm columns. The default elevation
/// `atan(1/sqrt(2))` makes `A A^T = (4/3) I` (isotropic torque authority).
pub fn pyramid_wheel_config(elevation: f64) -> DMatrix<f64> {
    let (s, c) = elevation.sin_cos();
    DMatrix::from_row_slice(3, 4, &[c, 0.0, -c, 0.0, 0.0, c, 0.0, -c, s, s, s, s])
}

pub fn default_pyramid_elevation() -> f64 {
    (1.0 / 2.0f64.sqrt()).atan()
}

impl Default for SpacecraftParams {
    fn default() -> Self {
        Self {
            inertia_diag: Vector3::new(1.0, 1.0, 0.8),
            wheel_inertia: 0.01,
            torque_limit: 0.14,
            wheel_config: pyramid_wheel_config(default_pyramid_elevation()),
            kp: Vector3::new(22.5, 18.0, 15.0),
            kd: Vector3::new(12.0, 9.0, 7.5),
        }
    }
}

impl SpacecraftParams {
    pub fn validate(&self) -> Result<()> {
        if self.inertia_diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(
                "spacecraft inertia must be positive definite".into(),
            ));
        }
        if self.torque_limit <= 0.0 {
            return Err(Error::InvalidArgument("torque limit must be positive".into()));
        }
        if self.wheel_inertia <= 0.0 {
            return Err(Error::InvalidArgument("wheel inertia must be positive".into()));
        }
        let rank = self.wheel_config.clone().svd(false, false);
        let smax = rank.singular_values.max();
        let nz = rank
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * smax)
            .count();
        if nz < 3 {
            return Err(Error::InvalidArgument(
                "wheel configuration matrix must have full row rank".into(),
            ));
        }
        Ok(())
    }

    /// Right pseudoinverse of the wheel configuration, `A^T (A A^T)^{-1}`.
    pub fn wheel_pinv(&self) -> DMatrix<f64> {
        let a = &self.wheel_config;
        let aat = a * a.transpose();
        let inv = aat.try_inverse().expect("wheel config has full row rank");
        a.transpose() * inv
    }
}

/// Builds the 6-state attitude model: `x = (theta, theta_dot)` with the
/// small-angle kinematic map, four wheel-torque inputs through the pyramid
/// matrix, actuator fault channels aligned with the wheels (`g_i^f = g_i`),
/// and per-axis additive sensor fault channels on `y = theta`.
pub fn spacecraft_model(params: &SpacecraftParams) -> Result<SystemModel> {
    params.validate()?;
    let inertia = Matrix3::from_diagonal(&params.inertia_diag);
    let inertia_inv = Matrix3::from_diagonal(&Vector3::new(
        1.0 / params.inertia_diag[0],
        1.0 / params.inertia_diag[1],
        1.0 / params.inertia_diag[2],
    ));

    let drift_inertia = inertia;
    let drift_inv = inertia_inv;
    let drift: VectorFn = Box::new(move |x: &DVector<f64>| {
        let omega = Vector3::new(x[3], x[4], x[5]);
        let gyro = -drift_inv * omega.cross(&(drift_inertia * omega));
        DVector::from_vec(vec![x[3], x[4], x[5], gyro[0], gyro[1], gyro[2]])
    });

    let mut control_fields: Vec<VectorFn> = Vec::with_capacity(4);
    let mut fault_fields: Vec<VectorFn> = Vec::with_capacity(4);
    for k in 0..4 {
        let axis = params.wheel_config.column(k).into_owned();
        let accel = inertia_inv * Vector3::new(axis[0], axis[1], axis[2]);
        let col = DVector::from_vec(vec![0.0, 0.0, 0.0, accel[0], accel[1], accel[2]]);
        let col_f = col.clone();
        control_fields.push(Box::new(move |_x: &DVector<f64>| col.clone()));
        fault_fields.push(Box::new(move |_x: &DVector<f64>| col_f.clone()));
    }

    let sensor_dirs: Vec<DVector<f64>> = (0..3)
        .map(|j| {
            let mut e = DVector::zeros(3);
            e[j] = 1.0;
            e
        })
        .collect();

    let output_map: VectorFn =
        Box::new(|x: &DVector<f64>| DVector::from_vec(vec![x[0], x[1], x[2]]));

    let jac_inertia = inertia;
    let jac_inv = inertia_inv;
    let drift_jac: MatrixFn = Box::new(move |x: &DVector<f64>| {
        let omega = Vector3::new(x[3], x[4], x[5]);
        // d/domega [omega x (I omega)] = skew(omega) I - skew(I omega)
        let gyro_jac = -jac_inv * (skew(&omega) * jac_inertia - skew(&(jac_inertia * omega)));
        let mut j = DMatrix::zeros(6, 6);
        for i in 0..3 {
            j[(i, 3 + i)] = 1.0;
            for c in 0..3 {
                j[(3 + i, 3 + c)] = gyro_jac[(i, c)];
            }
        }
        j
    });

    let output_jac: MatrixFn = Box::new(|_x: &DVector<f64>| {
        let mut j = DMatrix::zeros(3, 6);
        for i in 0..3 {
            j[(i, i)] = 1.0;
        }
        j
    });

    let control_jacs: Vec<MatrixFn> = (0..4)
        .map(|_| Box::new(|_x: &DVector<f64>| DMatrix::zeros(6, 6)) as MatrixFn)
        .collect();

    Ok(SystemModel::new(
        6,
        4,
        3,
        drift,
        control_fields,
        fault_fields,
        sensor_dirs,
        output_map,
    )?
    .with_drift_jacobian(drift_jac)
    .with_control_jacobians(control_jacs)
    .with_output_jacobian(output_jac))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// PD body torque before wheel allocation.
pub fn pd_body_torque(
    params: &SpacecraftParams,
    x: &DVector<f64>,
    x_ref: &DVector<f64>,
) -> Vector3<f64> {
    let mut torque = Vector3::zeros();
    for i in 0..3 {
        torque[i] = -params.kp[i] * (x[i] - x_ref[i]) - params.kd[i] * (x[3 + i] - x_ref[3 + i]);
    }
    torque
}

/// PD attitude law mapped to wheel commands through the pseudoinverse of the
/// wheel configuration, with per-wheel saturation.
pub fn nominal_controller(
    params: &SpacecraftParams,
    x: &DVector<f64>,
    x_ref: &DVector<f64>,
) -> DVector<f64> {
    assert_eq!(x.len(), 6, "spacecraft state is 6-dimensional");
    assert_eq!(x_ref.len(), 6, "reference state is 6-dimensional");
    let torque = pd_body_torque(params, x, x_ref);
    let mut u = params.wheel_pinv() * DVector::from_vec(vec![torque[0], torque[1], torque[2]]);
    for v in u.iter_mut() {
        *v = v.clamp(-params.torque_limit, params.torque_limit);
    }
    u
}

/// Attitude reference trajectory for the case study.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Rest-to-rest reorientation target.
    Constant { theta: Vector3<f64> },
    /// Per-axis `theta_i(t) = amp_i sin(omega_i t + phase_i)` tracking.
    Sinusoid {
        amplitude: Vector3<f64>,
        omega: Vector3<f64>,
        phase: Vector3<f64>,
    },
}

impl Reference {
    /// Full reference state `(theta_ref, theta_dot_ref)` at time `t`.
    pub fn state(&self, t: f64) -> DVector<f64> {
        match self {
            Reference::Constant { theta } => {
                DVector::from_vec(vec![theta[0], theta[1], theta[2], 0.0, 0.0, 0.0])
            }
            Reference::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                let mut x = DVector::zeros(6);
                for i in 0..3 {
                    x[i] = amplitude[i] * (omega[i] * t + phase[i]).sin();
                    x[3 + i] = amplitude[i] * omega[i] * (omega[i] * t + phase[i]).cos();
                }
                x
            }
        }
    }
}

/// Control law closure for the spacecraft: PD tracking of `reference`.
pub fn spacecraft_control_law(params: SpacecraftParams, reference: Reference) -> ControlLaw {
    Box::new(move |t, x| nominal_controller(&params, x, &reference.state(t)))
}

// ---------------------------------------------------------------------------
// Plant stepping under a scenario
// ---------------------------------------------------------------------------

/// Closed-loop plant derivative at `(t, x)` with faults and disturbance from
/// the scenario and the commanded input from `control`.
pub fn plant_derivative(
    model: &SystemModel,
    scenario: &FaultScenario,
    control: &ControlLaw,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let u = control(t, x);
    let fa = scenario.actuator_fault(t, &u);
    let d = scenario.disturbance.eval(t);
    eval_dynamics(model, x, &u, &fa, &d)
}

/// One RK4 step of the closed-loop plant; the control law is evaluated at the
/// integrator stage times so the closed loop stays smooth.
pub fn plant_step(
    model: &SystemModel,
    scenario: &FaultScenario,
    control: &ControlLaw,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    rk4_step(
        &|tau, xs: &DVector<f64>| plant_derivative(model, scenario, control, tau, xs),
        t,
        x,
        dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rest_control() -> ControlLaw {
        Box::new(|_t, _x| DVector::zeros(4))
    }

    #[test]
    fn drift_only_when_all_forcing_vanishes() {
        let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.2]);
        let dx = eval_dynamics(
            &model,
            &x,
            &DVector::zeros(4),
            &DVector::zeros(4),
            &DVector::zeros(6),
        )
        .unwrap();
        assert_relative_eq!(dx, model.drift(&x), epsilon = 1e-14);
    }

    #[test]
    fn linear_model_input_column_at_origin() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let model = SystemModel::lti(a, b.clone(), c, b.clone(), vec![]).unwrap();
        let dx = eval_dynamics(
            &model,
            &DVector::zeros(2),
            &DVector::from_vec(vec![1.0]),
            &DVector::zeros(1),
            &DVector::zeros(2),
        )
        .unwrap();
        assert_relative_eq!(dx, DVector::from_vec(vec![0.0, 2.0]), epsilon = 1e-14);
    }

    /// Independent scalar-by-scalar evaluation of Euler's rigid-body equations
    /// with wheel torques, used as an oracle for the matrix-based model.
    fn euler_oracle(params: &SpacecraftParams, x: &[f64], torque_channels: &[f64]) -> Vec<f64> {
        let (i1, i2, i3) = (
            params.inertia_diag[0],
            params.inertia_diag[1],
            params.inertia_diag[2],
        );
        let (w1, w2, w3) = (x[3], x[4], x[5]);
        // body torque from wheel channels through the configuration columns
        let mut tau = [0.0; 3];
        for (k, &f) in torque_channels.iter().enumerate() {
            for ax in 0..3 {
                tau[ax] += params.wheel_config[(ax, k)] * f;
            }
        }
        // I w' = -w x (I w) + tau, written out per component
        let h = [i1 * w1, i2 * w2, i3 * w3];
        let cross = [
            w2 * h[2] - w3 * h[1],
            w3 * h[0] - w1 * h[2],
            w1 * h[1] - w2 * h[0],
        ];
        vec![
            w1_dot(x),
            w2_dot(x),
            w3_dot(x),
            (-cross[0] + tau[0]) / i1,
            (-cross[1] + tau[1]) / i2,
            (-cross[2] + tau[2]) / i3,
        ]
    }

    fn w1_dot(x: &[f64]) -> f64 {
        x[3]
    }
    fn w2_dot(x: &[f64]) -> f64 {
        x[4]
    }
    fn w3_dot(x: &[f64]) -> f64 {
        x[5]
    }

    #[test]
    fn spacecraft_dynamics_match_componentwise_euler_oracle() {
        let params = SpacecraftParams::default();
        let model = spacecraft_model(&params).unwrap();
        // rest attitude with rates, nominal PD command, wheel 2 at 25% effectiveness
        let x = DVector::from_vec(vec![0.05, -0.03, 0.02, 0.1, -0.05, 0.08]);
        let x_ref = DVector::zeros(6);
        let u = nominal_controller(&params, &x, &x_ref);
        let eta2 = 0.25;
        let mut fa = DVector::zeros(4);
        fa[1] = (eta2 - 1.0) * u[1];
        let dx = eval_dynamics(&model, &x, &u, &fa, &DVector::zeros(6)).unwrap();

        // oracle: effective per-wheel torque is u_k plus the fault channel
        let mut channels = vec![u[0], u[1], u[2], u[3]];
        channels[1] += fa[1];
        let expect = euler_oracle(&params, x.as_slice(), &channels);
        for i in 0..6 {
            assert_relative_eq!(dx[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn output_with_paper_sensor_sinusoids_at_t20() {
        let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
        let scenario = FaultScenario {
            actuator_profiles: vec![None; 4],
            sensor_profiles: vec![
                Some(Signal::windowed(
                    Waveform::Sine {
                        amplitude: 0.035,
                        omega: 0.6 * std::f64::consts::PI,
                        t_ref: 15.0,
                        phase: 0.0,
                    },
                    Window {
                        start: 15.0,
                        end: 50.0,
                    },
                    0.0,
                )),
                Some(Signal::windowed(
                    Waveform::Sine {
                        amplitude: -0.030,
                        omega: 0.5 * std::f64::consts::PI,
                        t_ref: 20.0,
                        phase: std::f64::consts::FRAC_PI_2,
                    },
                    Window {
                        start: 20.0,
                        end: 55.0,
                    },
                    0.0,
                )),
                None,
            ],
            disturbance: Disturbance::zero(6),
            horizon: 60.0,
        };
        let x = DVector::from_vec(vec![0.01, 0.02, -0.01, 0.0, 0.0, 0.0]);
        let fs = scenario.sensor_fault(20.0);
        let y = eval_output(&model, &x, &fs).unwrap();
        let h = model.output(&x);
        // f_s1(20) = 0.035 sin(0.6 pi * 5), f_s2(20) = -0.030 cos(0)
        assert_relative_eq!(
            y[0] - h[0],
            0.035 * (0.6 * std::f64::consts::PI * 5.0).sin(),
            epsilon = 1e-12
        );
        assert_relative_eq!(y[1] - h[1], -0.030, epsilon = 1e-12);
        assert_relative_eq!(y[2] - h[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn input_matrix_at_rest_is_inertia_scaled_wheel_config() {
        let params = SpacecraftParams::default();
        let model = spacecraft_model(&params).unwrap();
        let g = model.input_matrix(&DVector::zeros(6));
        for k in 0..4 {
            for ax in 0..3 {
                assert_relative_eq!(g[(ax, k)], 0.0, epsilon = 1e-15);
                assert_relative_eq!(
                    g[(3 + ax, k)],
                    params.wheel_config[(ax, k)] / params.inertia_diag[ax],
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn gyroscopic_term_vanishes_at_zero_rate() {
        let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.3, 0.0, 0.0, 0.0]);
        let dx = model.drift(&x);
        for i in 3..6 {
            assert_eq!(dx[i], 0.0);
        }
    }

    #[test]
    fn input_columns_lie_in_wheel_config_column_space() {
        // rank oracle: appending any input column to the wheel image leaves rank 3
        let params = SpacecraftParams::default();
        let model = spacecraft_model(&params).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.05, -0.02, 0.2, -0.3, 0.1]);
        let g = model.input_matrix(&x);
        let image: DMatrix<f64> = g.rows(3, 3).into_owned();
        for k in 0..4 {
            let mut aug = DMatrix::zeros(3, 5);
            aug.view_mut((0, 0), (3, 4)).copy_from(&image);
            aug.set_column(4, &g.column(k).rows(3, 3).into_owned());
            let sv = aug.svd(false, false).singular_values;
            let smax = sv.max();
            let rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
            assert_eq!(rank, 3);
        }
    }

    #[test]
    fn controller_zero_at_reference_and_roll_error_example() {
        let params = SpacecraftParams::default();
        let x_ref = DVector::from_vec(vec![0.05, 0.1, -0.02, 0.0, 0.0, 0.0]);
        let u = nominal_controller(&params, &x_ref, &x_ref);
        assert!(u.norm() < 1e-15);

        // pure roll error 0.1 rad gives body torque (-2.25, 0, 0) before allocation
        let mut x = x_ref.clone();
        x[0] += 0.1;
        let tau = pd_body_torque(&params, &x, &x_ref);
        assert_relative_eq!(tau[0], -2.25, epsilon = 1e-12);
        assert_relative_eq!(tau[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(tau[2], 0.0, epsilon = 1e-12);
        // allocation preserves the body torque while unsaturated
        let mut x_small = x_ref.clone();
        x_small[0] += 0.005;
        let u = nominal_controller(&params, &x_small, &x_ref);
        let realized = &params.wheel_config * &u;
        assert_relative_eq!(realized[0], -22.5 * 0.005, epsilon = 1e-12);
    }

    #[test]
    fn controller_saturates_per_wheel() {
        let params = SpacecraftParams::default();
        let x = DVector::from_vec(vec![1.5, -2.0, 1.0, 0.5, 0.5, -0.5]);
        let u = nominal_controller(&params, &x, &DVector::zeros(6));
        for v in u.iter() {
            assert!(v.abs() <= params.torque_limit + 1e-15);
        }
        assert!(u.iter().any(|v| v.abs() == params.torque_limit));
    }

    #[test]
    fn finite_difference_jacobians_match_analytic() {
        let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.05, 0.2, 0.4, -0.2, 0.3]);
        let analytic = model.drift_jacobian(&x);
        let fd = crate::linalg::fd_jacobian(&|xx| model.drift(xx), &x, 6, 1e-6);
        assert!((analytic.clone() - &fd).norm() < 1e-5 * (1.0 + analytic.norm()));

        let out_analytic = model.output_jacobian(&x);
        let out_fd = crate::linalg::fd_jacobian(&|xx| model.output(xx), &x, 3, 1e-6);
        assert!((out_analytic - out_fd).norm() < 1e-7);
    }

    #[test]
    fn body_momentum_norm_conserved_with_zero_input() {
        let params = SpacecraftParams::default();
        let model = spacecraft_model(&params).unwrap();
        let scenario = FaultScenario::fault_free(4, 3, 6, 10.0);
        let control = rest_control();
        let mut x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.3, -0.2, 0.25]);
        let h0 = (Matrix3::from_diagonal(&params.inertia_diag)
            * Vector3::new(x[3], x[4], x[5]))
        .norm();
        let dt = 1e-3;
        for k in 0..10_000 {
            x = plant_step(&model, &scenario, &control, k as f64 * dt, &x, dt).unwrap();
        }
        let h1 = (Matrix3::from_diagonal(&params.inertia_diag)
            * Vector3::new(x[3], x[4], x[5]))
        .norm();
        assert!((h1 - h0).abs() < 1e-10, "momentum drift {}", (h1 - h0).abs());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
        let err = eval_dynamics(
            &model,
            &DVector::zeros(5),
            &DVector::zeros(4),
            &DVector::zeros(4),
            &DVector::zeros(6),
        );
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn disturbance_stays_strictly_inside_bound() {
        let d = Disturbance::bounded(6, 0.01, 7);
        for k in 0..2000 {
            let t = k as f64 * 0.05;
            assert!(d.eval(t).norm() < 0.01);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // eval_dynamics is affine in (u, fa, d)
        #[test]
        fn dynamics_affine_in_forcing(
            xs in proptest::collection::vec(-0.5f64..0.5, 6),
            u1 in proptest::collection::vec(-0.1f64..0.1, 4),
            u2 in proptest::collection::vec(-0.1f64..0.1, 4),
        ) {
            let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
            let x = DVector::from_vec(xs);
            let u1 = DVector::from_vec(u1);
            let u2 = DVector::from_vec(u2);
            let fa = DVector::zeros(4);
            let d = DVector::zeros(6);
            let lhs = eval_dynamics(&model, &x, &(&u1 + &u2), &fa, &d).unwrap()
                - eval_dynamics(&model, &x, &u1, &fa, &d).unwrap();
            let rhs = eval_dynamics(&model, &x, &u2, &fa, &d).unwrap()
                - eval_dynamics(&model, &x, &DVector::zeros(4), &fa, &d).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        // eval_output is affine in fs with slope [e_1 ... e_qs]
        #[test]
        fn output_affine_in_sensor_faults(
            xs in proptest::collection::vec(-0.5f64..0.5, 6),
            fs in proptest::collection::vec(-0.2f64..0.2, 3),
        ) {
            let model = spacecraft_model(&SpacecraftParams::default()).unwrap();
            let x = DVector::from_vec(xs);
            let fs = DVector::from_vec(fs);
            let y = eval_output(&model, &x, &fs).unwrap();
            let y0 = eval_output(&model, &x, &DVector::zeros(3)).unwrap();
            let mut slope = DVector::zeros(3);
            for j in 0..3 {
                slope += model.sensor_fault_dirs()[j].clone() * fs[j];
            }
            prop_assert!((y - y0 - slope).norm() < 1e-14);
        }
    }
}
