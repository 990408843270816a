//! Fault signature geometry: output differential maps, signature and residue
//! subspaces, principal angles, and per-channel isolability.
//!
//! The stacked map `y^{[0:R]} = (y, y', ..., y^(R))` is linearized around a
//! fault-free operating point. Actuator channel `i` contributes the column
//! `F_a_i` (the partial of the stack with respect to its fault signal at
//! zero), sensor channel `j` contributes `E_s_j = [e_j; 0; ...]` under the
//! frozen-constant convention for fault-signal time derivatives. Channel `i`
//! is isolable exactly when its signature subspace intersects the span of all
//! other signatures trivially, i.e. when the minimal principal angle between
//! them is positive.

use crate::error::{Error, Result};
use crate::model::SystemModel;
use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Step scale for the recursive directional finite differences on the
/// stacked derivative functions.
const LIE_FD_STEP: f64 = 1e-5;
/// Relative singular-value cutoff for rank decisions.
const RANK_REL_TOL: f64 = 1e-10;
/// Nonzero test scale for the relative-degree Lie derivative.
const REL_DEGREE_TOL: f64 = 1e-8;

pub const DEFAULT_MAX_RELATIVE_DEGREE: usize = 4;
pub const DEFAULT_ANGLE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelId {
    Actuator(usize),
    Sensor(usize),
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelId::Actuator(i) => write!(f, "actuator {}", i + 1),
            ChannelId::Sensor(j) => write!(f, "sensor {}", j + 1),
        }
    }
}

/// First-order variation of the stacked output differential map at a point.
#[derive(Debug, Clone)]
pub struct DiffMapJacobians {
    pub order: usize,
    /// Jacobian of the fault-free stacked map w.r.t. the state, `p(R+1) x n`.
    pub c_r: DMatrix<f64>,
    /// Per actuator channel, the stacked partial w.r.t. its fault signal.
    pub actuator_signatures: Vec<DVector<f64>>,
    /// Per sensor channel, the stacked partial w.r.t. its fault signal.
    pub sensor_signatures: Vec<DVector<f64>>,
    pub eval_state: DVector<f64>,
    pub eval_input: DVector<f64>,
}

impl DiffMapJacobians {
    pub fn ambient_dim(&self) -> usize {
        self.c_r.nrows()
    }

    pub fn signature(&self, channel: ChannelId) -> Result<&DVector<f64>> {
        match channel {
            ChannelId::Actuator(i) => self.actuator_signatures.get(i),
            ChannelId::Sensor(j) => self.sensor_signatures.get(j),
        }
        .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {channel}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceLabel {
    /// Image of the fault-free map `C_R`.
    Nominal,
    Signature(ChannelId),
    Residue(ChannelId),
    General,
}

/// Orthonormal basis of a subspace of the output differential space.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub basis: DMatrix<f64>,
    pub label: SubspaceLabel,
}

impl SubspaceBasis {
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.basis.ncols() == 0
    }
}

/// Orthonormal basis of the column space of `m`; rank decided by the relative
/// singular-value cutoff. An all-zero matrix yields an empty basis.
pub fn orthonormalize(m: &DMatrix<f64>) -> SubspaceBasis {
    orthonormalize_labeled(m, SubspaceLabel::General)
}

pub fn orthonormalize_labeled(m: &DMatrix<f64>, label: SubspaceLabel) -> SubspaceBasis {
    let n = m.nrows();
    if m.ncols() == 0 || m.iter().all(|&v| v == 0.0) {
        return SubspaceBasis {
            basis: DMatrix::zeros(n, 0),
            label,
        };
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd requested u");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_REL_TOL * smax)
        .count();
    SubspaceBasis {
        basis: u.columns(0, rank).into_owned(),
        label,
    }
}

/// Principal angles between two subspaces, ascending, in `[0, pi/2]`:
/// `theta_k = arccos(sigma_k)` for the singular values of `Q_U^T Q_V`.
pub fn principal_angles(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<Vec<f64>> {
    if u.ambient_dim() != v.ambient_dim() {
        return Err(Error::Dimension {
            what: "principal angles ambient space",
            expected: u.ambient_dim(),
            got: v.ambient_dim(),
        });
    }
    if u.is_empty() || v.is_empty() {
        return Err(Error::InvalidArgument(
            "principal angles require nonempty subspaces".into(),
        ));
    }
    let prod = u.basis.transpose() * &v.basis;
    let mut angles: Vec<f64> = prod
        .svd(false, false)
        .singular_values
        .iter()
        .map(|&s| s.clamp(0.0, 1.0).acos())
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(angles)
}

pub fn min_principal_angle(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<f64> {
    Ok(principal_angles(u, v)?[0])
}

// ---------------------------------------------------------------------------
// Lie-derivative recursion for the stacked map
// ---------------------------------------------------------------------------

/// Value of the k-th stacked derivative `y^(k)` as a function of the state,
/// with frozen input `u` and frozen actuator fault vector `fa` (fault-signal
/// time derivatives are taken as zero).
fn lie_level(
    model: &SystemModel,
    u: &DVector<f64>,
    fa: &DVector<f64>,
    x: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    if k == 0 {
        return Ok(model.output(x));
    }
    let rhs = frozen_rhs(model, x, u, fa)?;
    if k == 1 && model.has_output_jacobian() {
        return Ok(model.output_jacobian(x) * rhs);
    }
    directional_derivative(&|xx| lie_level(model, u, fa, xx, k - 1), x, &rhs)
}

/// `f(x) + g(x) u + g^f(x) fa` with no disturbance.
fn frozen_rhs(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    fa: &DVector<f64>,
) -> Result<DVector<f64>> {
    crate::model::eval_dynamics(model, x, u, fa, &DVector::zeros(model.state_dim()))
}

/// Central-difference directional derivative `J phi(x) . v`.
fn directional_derivative<F>(phi: &F, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let vnorm = v.norm();
    if vnorm == 0.0 {
        let dim = phi(x)?.len();
        return Ok(DVector::zeros(dim));
    }
    let h = LIE_FD_STEP * (1.0 + x.norm());
    let dir = v / vnorm;
    let fp = phi(&(x + &dir * h))?;
    let fm = phi(&(x - &dir * h))?;
    let out = (fp - fm) * (vnorm / (2.0 * h));
    if !out.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("Lie derivative".into()));
    }
    Ok(out)
}

/// Per-output relative degrees and the stack order `R = max_l r_l`. The
/// nonzero test is `|L_g_k L_f^{r-1} h_l| > 1e-8 (1 + ||x*||)`.
pub fn relative_degrees(
    model: &SystemModel,
    x_star: &DVector<f64>,
    max_order: usize,
) -> Result<(Vec<usize>, usize)> {
    let p = model.output_dim();
    let tol = REL_DEGREE_TOL * (1.0 + x_star.norm());
    let zero_u = DVector::zeros(model.input_dim());
    let zero_fa = DVector::zeros(model.num_actuator_channels());
    let mut degrees = vec![0usize; p];

    for r in 1..=max_order {
        // L_g_k L_f^{r-1} h = directional derivative of the drift-only level
        // r-1 along g_k
        let level = |xx: &DVector<f64>| lie_level(model, &zero_u, &zero_fa, xx, r - 1);
        for k in 0..model.input_dim() {
            let g_k = model.control_field(k, x_star);
            let lg = directional_derivative(&level, x_star, &g_k)?;
            for l in 0..p {
                if degrees[l] == 0 && lg[l].abs() > tol {
                    degrees[l] = r;
                }
            }
        }
        if degrees.iter().all(|&d| d > 0) {
            break;
        }
    }

    if let Some(l) = degrees.iter().position(|&d| d == 0) {
        return Err(Error::RelativeDegreeNotFound {
            output: l,
            max_order,
        });
    }
    let r_max = *degrees.iter().max().unwrap();
    Ok((degrees, r_max))
}

/// Stacked Jacobians of the output differential map of the given order at
/// `(x*, u*)`, with fault signals frozen at zero.
pub fn diffmap_jacobians(
    model: &SystemModel,
    x_star: &DVector<f64>,
    u_star: &DVector<f64>,
    order: usize,
) -> Result<DiffMapJacobians> {
    let n = model.state_dim();
    let p = model.output_dim();
    let q_a = model.num_actuator_channels();
    let q_s = model.num_sensor_channels();
    let rows = p * (order + 1);
    let zero_fa = DVector::zeros(q_a);

    // C_R: stack the state Jacobian of each derivative level at fa = 0.
    let mut c_r = DMatrix::zeros(rows, n);
    for k in 0..=order {
        let block = jacobian_wrt_state(model, u_star, &zero_fa, x_star, k)?;
        c_r.view_mut((k * p, 0), (p, n)).copy_from(&block);
    }

    // F_a_i: central difference of each level in the fault signal. The levels
    // are polynomial in fa, so the central difference at zero is exact up to
    // the cubic terms.
    let fa_step = 1e-5;
    let mut actuator_signatures = Vec::with_capacity(q_a);
    for i in 0..q_a {
        let mut col = DVector::zeros(rows);
        let mut fa_p = zero_fa.clone();
        let mut fa_m = zero_fa.clone();
        fa_p[i] = fa_step;
        fa_m[i] = -fa_step;
        for k in 1..=order {
            let vp = lie_level(model, u_star, &fa_p, x_star, k)?;
            let vm = lie_level(model, u_star, &fa_m, x_star, k)?;
            let d = (vp - vm) / (2.0 * fa_step);
            col.rows_mut(k * p, p).copy_from(&d);
        }
        actuator_signatures.push(col);
    }

    // E_s_j: the fault enters the order-0 block only (frozen-constant
    // convention for the signal's time derivatives).
    let mut sensor_signatures = Vec::with_capacity(q_s);
    for j in 0..q_s {
        let mut col = DVector::zeros(rows);
        col.rows_mut(0, p).copy_from(&model.sensor_fault_dirs()[j]);
        sensor_signatures.push(col);
    }

    if !c_r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("diffmap state Jacobian".into()));
    }

    Ok(DiffMapJacobians {
        order,
        c_r,
        actuator_signatures,
        sensor_signatures,
        eval_state: x_star.clone(),
        eval_input: u_star.clone(),
    })
}

fn jacobian_wrt_state(
    model: &SystemModel,
    u: &DVector<f64>,
    fa: &DVector<f64>,
    x: &DVector<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let p = model.output_dim();
    if k == 0 {
        return Ok(model.output_jacobian(x));
    }
    let n = x.len();
    let h = LIE_FD_STEP * (1.0 + x.norm());
    let mut jac = DMatrix::zeros(p, n);
    let mut xp = x.clone();
    for c in 0..n {
        xp[c] = x[c] + h;
        let fp = lie_level(model, u, fa, &xp, k)?;
        xp[c] = x[c] - h;
        let fm = lie_level(model, u, fa, &xp, k)?;
        xp[c] = x[c];
        jac.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

// ---------------------------------------------------------------------------
// Residue subspaces and isolability
// ---------------------------------------------------------------------------

pub fn signature_subspace(jac: &DiffMapJacobians, channel: ChannelId) -> Result<SubspaceBasis> {
    let col = jac.signature(channel)?;
    let m = DMatrix::from_column_slice(col.len(), 1, col.as_slice());
    Ok(orthonormalize_labeled(&m, SubspaceLabel::Signature(channel)))
}

/// Residue subspace of a channel: the algebraic sum of every other channel's
/// signature subspace, implemented by concatenation then orthonormalization.
pub fn residue_subspace(jac: &DiffMapJacobians, target: ChannelId) -> Result<SubspaceBasis> {
    jac.signature(target)?; // validates the channel id
    let rows = jac.ambient_dim();
    let mut cols: Vec<&DVector<f64>> = Vec::new();
    for (i, f) in jac.actuator_signatures.iter().enumerate() {
        if target != ChannelId::Actuator(i) {
            cols.push(f);
        }
    }
    for (j, e) in jac.sensor_signatures.iter().enumerate() {
        if target != ChannelId::Sensor(j) {
            cols.push(e);
        }
    }
    let mut m = DMatrix::zeros(rows, cols.len());
    for (c, col) in cols.iter().enumerate() {
        m.set_column(c, *col);
    }
    Ok(orthonormalize_labeled(&m, SubspaceLabel::Residue(target)))
}

/// Isolability verdict for one channel.
#[derive(Debug, Clone)]
pub struct ChannelIsolability {
    pub channel: ChannelId,
    /// Minimal principal angle to the residue subspace. By convention, `0`
    /// for a numerically zero signature and `pi/2` for an empty residue.
    pub theta_min: f64,
    /// Full ascending principal-angle list (empty in the convention cases).
    pub angles: Vec<f64>,
    pub isolable: bool,
}

#[derive(Debug, Clone)]
pub struct IsolabilityReport {
    pub actuators: Vec<ChannelIsolability>,
    pub sensors: Vec<ChannelIsolability>,
    pub eval_state: DVector<f64>,
    pub eval_input: DVector<f64>,
    pub angle_floor: f64,
}

impl IsolabilityReport {
    pub fn channel(&self, id: ChannelId) -> Option<&ChannelIsolability> {
        match id {
            ChannelId::Actuator(i) => self.actuators.get(i),
            ChannelId::Sensor(j) => self.sensors.get(j),
        }
    }
}

/// Per-channel minimal principal angles against the residue subspaces and
/// the `theta_min > angle_floor` verdicts.
pub fn isolability_report(jac: &DiffMapJacobians, angle_floor: f64) -> IsolabilityReport {
    let zero_tol = signature_zero_tol(jac);
    let channel_report = |channel: ChannelId| -> ChannelIsolability {
        let col = jac.signature(channel).expect("channel enumerated from jac");
        if col.norm() <= zero_tol {
            return ChannelIsolability {
                channel,
                theta_min: 0.0,
                angles: Vec::new(),
                isolable: false,
            };
        }
        let sig = signature_subspace(jac, channel).expect("valid channel");
        let residue = residue_subspace(jac, channel).expect("valid channel");
        if residue.is_empty() {
            return ChannelIsolability {
                channel,
                theta_min: std::f64::consts::FRAC_PI_2,
                angles: Vec::new(),
                isolable: std::f64::consts::FRAC_PI_2 > angle_floor,
            };
        }
        let angles = principal_angles(&sig, &residue).expect("nonempty subspaces");
        let theta_min = angles[0];
        ChannelIsolability {
            channel,
            theta_min,
            angles,
            isolable: theta_min > angle_floor,
        }
    };

    IsolabilityReport {
        actuators: (0..jac.actuator_signatures.len())
            .map(|i| channel_report(ChannelId::Actuator(i)))
            .collect(),
        sensors: (0..jac.sensor_signatures.len())
            .map(|j| channel_report(ChannelId::Sensor(j)))
            .collect(),
        eval_state: jac.eval_state.clone(),
        eval_input: jac.eval_input.clone(),
        angle_floor,
    }
}

fn signature_zero_tol(jac: &DiffMapJacobians) -> f64 {
    let max_norm = jac
        .actuator_signatures
        .iter()
        .chain(jac.sensor_signatures.iter())
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    1e-10 * max_norm.max(1.0)
}

/// Projector onto the orthogonal complement of the target's residue subspace,
/// returned in restricted-row form: its rows are an orthonormal basis of the
/// complement, so `H v = 0` for every residue vector and `H` is injective on
/// the target signature whenever the channel is isolable.
pub fn isolating_projector(
    jac: &DiffMapJacobians,
    target: ChannelId,
    angle_floor: f64,
) -> Result<DMatrix<f64>> {
    let report = isolability_report(jac, angle_floor);
    let verdict = report
        .channel(target)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {target}")))?;
    if !verdict.isolable {
        return Err(Error::IsolabilityViolation(target));
    }
    let n = jac.ambient_dim();
    let residue = residue_subspace(jac, target)?;
    if residue.is_empty() {
        return Ok(DMatrix::identity(n, n));
    }
    // complement basis: null space of B^T, via full SVD of the residue basis
    let svd = residue.basis.clone().svd(true, false);
    let u = svd.u.expect("svd requested u");
    // u is n x r (thin); extend to the full orthogonal complement by
    // projecting the identity and re-orthonormalizing
    let proj = DMatrix::identity(n, n) - &u * u.transpose();
    let comp = orthonormalize(&proj);
    Ok(comp.basis.transpose())
}

// ---------------------------------------------------------------------------
// Angle profiles along trajectories
// ---------------------------------------------------------------------------

/// One trajectory sample for the angle profile sweep.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct AngleProfile {
    pub times: Vec<f64>,
    /// `actuator_theta_min[i][s]` is channel i's angle at sample s.
    pub actuator_theta_min: Vec<Vec<f64>>,
    pub sensor_theta_min: Vec<Vec<f64>>,
    /// Conservative per-channel lower bounds (minimum over samples).
    pub actuator_lower_bounds: Vec<f64>,
    pub sensor_lower_bounds: Vec<f64>,
    /// Sample indices skipped because the relative-degree test failed there.
    pub skipped: Vec<usize>,
}

/// Minimal principal angle per channel along a sampled trajectory, plus the
/// per-channel conservative lower bounds used to design the mirror-map
/// curvature.
pub fn angle_profile(
    model: &SystemModel,
    trajectory: &[TrajectorySample],
    order: usize,
    angle_floor: f64,
) -> Result<AngleProfile> {
    if trajectory.is_empty() {
        return Err(Error::InvalidArgument(
            "angle profile requires a nonempty trajectory".into(),
        ));
    }
    let q_a = model.num_actuator_channels();
    let q_s = model.num_sensor_channels();
    let mut profile = AngleProfile {
        times: Vec::new(),
        actuator_theta_min: vec![Vec::new(); q_a],
        sensor_theta_min: vec![Vec::new(); q_s],
        actuator_lower_bounds: vec![std::f64::consts::FRAC_PI_2; q_a],
        sensor_lower_bounds: vec![std::f64::consts::FRAC_PI_2; q_s],
        skipped: Vec::new(),
    };
    for (s, sample) in trajectory.iter().enumerate() {
        if relative_degrees(model, &sample.state, order.max(1)).is_err() {
            profile.skipped.push(s);
            continue;
        }
        let jac = diffmap_jacobians(model, &sample.state, &sample.input, order)?;
        let report = isolability_report(&jac, angle_floor);
        profile.times.push(sample.t);
        for (i, ch) in report.actuators.iter().enumerate() {
            profile.actuator_theta_min[i].push(ch.theta_min);
            profile.actuator_lower_bounds[i] = profile.actuator_lower_bounds[i].min(ch.theta_min);
        }
        for (j, ch) in report.sensors.iter().enumerate() {
            profile.sensor_theta_min[j].push(ch.theta_min);
            profile.sensor_lower_bounds[j] = profile.sensor_lower_bounds[j].min(ch.theta_min);
        }
    }
    if profile.times.is_empty() {
        return Err(Error::InvalidArgument(
            "every trajectory sample failed the relative-degree test".into(),
        ));
    }
    Ok(profile)
}
