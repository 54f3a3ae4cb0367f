//! Self-motion manifolds of kinematically redundant chains.
//!
//! The manifold of a target is the set of joint configurations whose tool
//! pose equals the target. With one degree of redundancy it is a union of
//! curves, which are traced here by predictor-corrector continuation:
//! step along the unit null-space direction of the task Jacobian, then
//! Newton-project back onto the manifold. Seeds come from random-restart
//! damped-least-squares IK, so the result is exhaustive up to seeding.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    pose_error, rotation_log, JointConfig, KinematicChain, KinematicsError, Pose, PoseRecord,
};

/// Smallest task-Jacobian singular value accepted along a trace.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-8;

/// Halvings of the continuation step tried before a trace direction ends.
const STEP_HALVINGS: usize = 4;

/// Which rows of the world-frame twist form the task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Full 6-DOF pose.
    #[default]
    Pose,
    /// Planar x/y position only (planar test chains).
    PlanarPosition,
}

impl TaskSpace {
    pub fn rows(&self) -> &'static [usize] {
        match self {
            TaskSpace::Pose => &[0, 1, 2, 3, 4, 5],
            TaskSpace::PlanarPosition => &[0, 1],
        }
    }

    pub fn dims(&self) -> usize {
        self.rows().len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmmParams {
    pub ik_restarts: usize,
    pub ik_max_iters: usize,
    pub ik_damping: f64,
    /// m
    pub pos_tol: f64,
    /// rad
    pub ori_tol: f64,
    /// rad, joint-space arc length per continuation step
    pub continuation_step: f64,
    pub max_samples_per_component: usize,
    /// rad, joint-space distance
    pub dedupe_radius: f64,
    #[serde(default)]
    pub task_space: TaskSpace,
}

impl Default for SmmParams {
    fn default() -> Self {
        Self {
            ik_restarts: 50,
            ik_max_iters: 200,
            ik_damping: 0.05,
            pos_tol: 1e-4,
            ori_tol: 1e-3,
            continuation_step: 0.02,
            max_samples_per_component: 2000,
            dedupe_radius: 0.05,
            task_space: TaskSpace::Pose,
        }
    }
}

impl SmmParams {
    pub fn validate(&self) -> Result<(), SmmError> {
        let positive = [
            ("pos_tol", self.pos_tol),
            ("ori_tol", self.ori_tol),
            ("continuation_step", self.continuation_step),
            ("dedupe_radius", self.dedupe_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SmmError::InvalidParams(format!("{name} must be > 0")));
            }
        }
        if !(self.ik_damping.is_finite() && self.ik_damping >= 0.0) {
            return Err(SmmError::InvalidParams("ik_damping must be >= 0".into()));
        }
        if self.ik_restarts == 0 || self.ik_max_iters == 0 || self.max_samples_per_component == 0 {
            return Err(SmmError::InvalidParams(
                "ik_restarts, ik_max_iters and max_samples_per_component must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Distance at which a trace is considered to have returned to its start.
    fn closure_radius(&self) -> f64 {
        let h = self.continuation_step;
        self.dedupe_radius.min(2.0 * h).max(h)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmmError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid manifold parameters: {0}")]
    InvalidParams(String),
    #[error("seed is not on the manifold (position error {position:e} m, orientation error {orientation:e} rad)")]
    SeedOffManifold { position: f64, orientation: f64 },
    #[error("seed is outside the joint limits")]
    SeedOutOfLimits,
    #[error("task Jacobian is rank deficient at {sample:?} (smallest singular value {sigma:e})")]
    Singular { sample: Vec<f64>, sigma: f64 },
    #[error("redundancy must be exactly one: {joints} joints for a {task_dims}-dimensional task")]
    Redundancy { joints: usize, task_dims: usize },
    #[error("malformed manifold file: {0}")]
    Format(String),
}

/// Why one direction of a trace ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStop {
    /// Returned to the start (or met the opposite end) of the curve.
    Closed,
    JointLimit,
    Singular,
    /// Newton projection did not reconverge; the trace is truncated.
    ProjectionFailed,
    SampleBudget,
}

/// One traced curve of the manifold, samples ordered along it.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldComponent {
    pub samples: Vec<JointConfig>,
    pub closed: bool,
    /// Stop reasons at the (start, end) of `samples`.
    pub ends: (TraceStop, TraceStop),
}

impl ManifoldComponent {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Joint-space polyline length, including the seam for closed curves.
    pub fn arc_length(&self) -> f64 {
        let open: f64 = self
            .samples
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum();
        match (self.closed, self.samples.first(), self.samples.last()) {
            (true, Some(a), Some(b)) if self.samples.len() > 2 => open + a.distance(b),
            _ => open,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfMotionManifold {
    pub target: Pose,
    pub chain_id: String,
    /// Dedupe radius the manifold was generated with (rad).
    pub dedupe_radius: f64,
    pub components: Vec<ManifoldComponent>,
}

impl SelfMotionManifold {
    pub fn empty(chain: &KinematicChain, target: Pose, params: &SmmParams) -> Self {
        Self {
            target,
            chain_id: chain.id().to_string(),
            dedupe_radius: params.dedupe_radius,
            components: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.components.iter().all(|c| c.is_empty())
    }

    pub fn sample_count(&self) -> usize {
        self.components.iter().map(|c| c.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &JointConfig> {
        self.components.iter().flat_map(|c| c.samples.iter())
    }

    /// Distance from `q` to the nearest sample, `∞` when empty.
    pub fn nearest_distance(&self, q: &JointConfig) -> f64 {
        self.samples()
            .map(|s| s.distance(q))
            .fold(f64::INFINITY, f64::min)
    }

    /// TOML text: target pose plus one sample matrix per component.
    pub fn to_text(&self) -> String {
        let file = ManifoldFile {
            chain_id: self.chain_id.clone(),
            dedupe_radius: self.dedupe_radius,
            target: PoseRecord::from(&self.target),
            components: self
                .components
                .iter()
                .map(|c| ComponentRecord {
                    closed: c.closed,
                    ends: [c.ends.0, c.ends.1],
                    samples: c.samples.iter().map(|s| s.as_slice().to_vec()).collect(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("manifold serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, SmmError> {
        let file: ManifoldFile = toml::from_str(text).map_err(|e| SmmError::Format(e.to_string()))?;
        let target = Pose::try_from(&file.target)?;
        let components = file
            .components
            .into_iter()
            .map(|c| {
                Ok(ManifoldComponent {
                    closed: c.closed,
                    ends: (c.ends[0], c.ends[1]),
                    samples: c
                        .samples
                        .iter()
                        .map(|s| JointConfig::from_slice(s))
                        .collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<_, KinematicsError>>()?;
        Ok(Self {
            target,
            chain_id: file.chain_id,
            dedupe_radius: file.dedupe_radius,
            components,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifoldFile {
    chain_id: String,
    dedupe_radius: f64,
    target: PoseRecord,
    components: Vec<ComponentRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    closed: bool,
    ends: [TraceStop; 2],
    samples: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Task residuals
// ---------------------------------------------------------------------------

struct Residual {
    /// Target minus current, task rows only.
    error: DVector<f64>,
    /// Task rows of the geometric Jacobian.
    jacobian: DMatrix<f64>,
    position: f64,
    orientation: f64,
}

impl Residual {
    fn within(&self, params: &SmmParams) -> bool {
        match params.task_space {
            TaskSpace::Pose => self.position <= params.pos_tol && self.orientation <= params.ori_tol,
            TaskSpace::PlanarPosition => self.position <= params.pos_tol,
        }
    }
}

fn residual(
    chain: &KinematicChain,
    target: &Pose,
    q: &JointConfig,
    space: TaskSpace,
) -> Result<Residual, KinematicsError> {
    let (pose, jac) = chain.kinematics(q)?;
    let dp = target.translation() - pose.translation();
    let rows = space.rows();
    let mut error = DVector::zeros(rows.len());
    let (position, orientation) = match space {
        TaskSpace::Pose => {
            let dw = rotation_log(&(target.rotation() * pose.rotation().transpose()));
            for k in 0..3 {
                error[k] = dp[k];
                error[k + 3] = dw[k];
            }
            let e = pose_error(&pose, target);
            (e.position, e.orientation)
        }
        TaskSpace::PlanarPosition => {
            error[0] = dp.x;
            error[1] = dp.y;
            (dp.xy().norm(), 0.0)
        }
    };
    let full = jac.matrix();
    let jacobian = DMatrix::from_fn(rows.len(), full.ncols(), |r, c| full[(rows[r], c)]);
    Ok(Residual {
        error,
        jacobian,
        position,
        orientation,
    })
}

/// Task-space membership test for a configuration.
pub fn on_manifold(
    chain: &KinematicChain,
    target: &Pose,
    q: &JointConfig,
    params: &SmmParams,
) -> Result<bool, KinematicsError> {
    Ok(residual(chain, target, q, params.task_space)?.within(params))
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ e`; `None` if the system cannot be factored.
fn damped_step(jacobian: &DMatrix<f64>, error: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let m = jacobian.nrows();
    let jjt = jacobian * jacobian.transpose() + DMatrix::identity(m, m) * (damping * damping);
    let y = jjt.cholesky()?.solve(error);
    Some(jacobian.transpose() * y)
}

fn cap_norm(mut v: DVector<f64>, max: f64) -> DVector<f64> {
    let n = v.norm();
    if n > max {
        v *= max / n;
    }
    v
}

fn clamp_to_limits(chain: &KinematicChain, v: &mut DVector<f64>) {
    for (x, j) in v.iter_mut().zip(chain.joints()) {
        *x = x.clamp(j.lower, j.upper);
    }
}

/// Minimum-norm Gauss-Newton projection of `start` onto the manifold.
/// Returns the projected point when it meets the task tolerance.
fn project(
    chain: &KinematicChain,
    target: &Pose,
    start: DVector<f64>,
    params: &SmmParams,
) -> Option<JointConfig> {
    let mut q = JointConfig::new(start).ok()?;
    let mut prev = f64::INFINITY;
    for _ in 0..params.ik_max_iters {
        let r = residual(chain, target, &q, params.task_space).ok()?;
        let norm = r.error.norm();
        if norm < 1e-12 || (r.within(params) && norm >= 0.5 * prev) {
            return r.within(params).then_some(q);
        }
        if norm > 4.0 * prev {
            return None;
        }
        prev = norm;
        let step = damped_step(&r.jacobian, &r.error, 1e-9)?;
        let next = q.into_vector() + cap_norm(step, 0.25);
        q = JointConfig::new(next).ok()?;
    }
    on_manifold(chain, target, &q, params)
        .ok()
        .filter(|ok| *ok)
        .map(|_| q)
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn target_out_of_reach(chain: &KinematicChain, target: &Pose, params: &SmmParams) -> bool {
    let d = target.translation() - chain.base().translation();
    d.norm() > chain.reach_bound() + params.pos_tol
}

/// One damped-least-squares run from `start`, with joint clamping.
fn dls_solve(
    chain: &KinematicChain,
    target: &Pose,
    start: DVector<f64>,
    params: &SmmParams,
) -> Option<JointConfig> {
    let mut q = JointConfig::new(start).ok()?;
    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    for _ in 0..params.ik_max_iters {
        let r = residual(chain, target, &q, params.task_space).ok()?;
        if r.within(params) {
            // Polish to near machine precision when the polished point stays valid.
            let polished = project(chain, target, q.vector().clone(), params)
                .filter(|p| chain.within_limits(p));
            return Some(polished.unwrap_or(q));
        }
        let norm = r.error.norm();
        if norm < 0.99 * best {
            best = norm;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 30 {
                return None;
            }
        }
        let step = damped_step(&r.jacobian, &r.error, params.ik_damping)?;
        let mut next = q.into_vector() + cap_norm(step, 0.5);
        clamp_to_limits(chain, &mut next);
        q = JointConfig::new(next).ok()?;
    }
    None
}

/// Random-restart IK: `ik_restarts` runs from uniform starts within the
/// joint limits. Every returned solution meets the task tolerance and the
/// limits. Each restart draws exactly `dof` uniforms from `rng`.
pub fn seed_ik<R: Rng + ?Sized>(
    chain: &KinematicChain,
    target: &Pose,
    params: &SmmParams,
    rng: &mut R,
) -> Vec<JointConfig> {
    let starts: Vec<DVector<f64>> = (0..params.ik_restarts)
        .map(|_| {
            DVector::from_iterator(
                chain.dof(),
                chain.joints().iter().map(|j| rng.random_range(j.lower..=j.upper)),
            )
        })
        .collect();
    if target_out_of_reach(chain, target, params) {
        return Vec::new();
    }
    starts
        .into_iter()
        .filter_map(|s| dls_solve(chain, target, s, params))
        .filter(|q| chain.within_limits(q))
        .collect()
}

// ---------------------------------------------------------------------------
// Continuation
// ---------------------------------------------------------------------------

/// Unit null vector of an m × (m+1) matrix via signed m × m minors
/// (the generalized cross product), with the smallest singular value.
fn null_direction(jacobian: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let n = jacobian.ncols();
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let minor = jacobian.clone().remove_column(i);
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        v[i] = sign * minor.determinant();
    }
    let sigma = jacobian
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    (v, sigma)
}

fn check_redundancy(chain: &KinematicChain, params: &SmmParams) -> Result<(), SmmError> {
    let dims = params.task_space.dims();
    if chain.dof() != dims + 1 {
        return Err(SmmError::Redundancy {
            joints: chain.dof(),
            task_dims: dims,
        });
    }
    Ok(())
}

struct Step {
    q: JointConfig,
    direction: DVector<f64>,
}

enum Attempt {
    Accepted(Step),
    Stop(TraceStop),
}

fn tangent_at(
    chain: &KinematicChain,
    target: &Pose,
    q: &JointConfig,
    params: &SmmParams,
) -> Result<(DVector<f64>, f64), KinematicsError> {
    let r = residual(chain, target, q, params.task_space)?;
    Ok(null_direction(&r.jacobian))
}

/// Predictor-corrector step with step halving. A trial is rejected when the
/// corrected point leaves the limits, jumps more than two nominal steps, or
/// reverses direction.
fn advance(
    chain: &KinematicChain,
    target: &Pose,
    from: &JointConfig,
    direction: &DVector<f64>,
    params: &SmmParams,
    domain: Domain,
) -> Attempt {
    let h0 = params.continuation_step;
    let mut h = h0;
    let mut reason = TraceStop::ProjectionFailed;
    for _ in 0..=STEP_HALVINGS {
        let predicted = from.vector() + direction * h;
        match project(chain, target, predicted, params) {
            None => reason = TraceStop::ProjectionFailed,
            Some(q) => {
                let delta = q.vector() - from.vector();
                if domain == Domain::Limited && !chain.within_limits(&q) {
                    reason = TraceStop::JointLimit;
                } else if delta.norm() > 2.0 * h0 || delta.dot(direction) <= 0.0 {
                    reason = TraceStop::ProjectionFailed;
                } else {
                    let Ok((mut n, sigma)) = tangent_at(chain, target, &q, params) else {
                        return Attempt::Stop(TraceStop::ProjectionFailed);
                    };
                    if sigma < SINGULAR_VALUE_FLOOR {
                        return Attempt::Stop(TraceStop::Singular);
                    }
                    if n.dot(direction) < 0.0 {
                        n = -n;
                    }
                    // Large tangent swings indicate a branch jump.
                    if n.dot(direction) > 0.5 {
                        return Attempt::Accepted(Step { q, direction: n });
                    }
                    reason = TraceStop::ProjectionFailed;
                }
            }
        }
        h *= 0.5;
    }
    Attempt::Stop(reason)
}

/// Follows the curve from `start` along `direction`. `anchors` are points
/// whose proximity (after leaving the start region) ends the trace as
/// closed: the start itself, and for the second half-trace the far end of
/// the first.
fn trace_direction(
    chain: &KinematicChain,
    target: &Pose,
    start: &JointConfig,
    direction: DVector<f64>,
    anchors: &[&JointConfig],
    budget: usize,
    params: &SmmParams,
    domain: Domain,
) -> (Vec<JointConfig>, TraceStop) {
    let close = params.closure_radius();
    let mut samples = Vec::new();
    let mut current = start.clone();
    let mut direction = direction;
    let mut farthest: f64 = 0.0;
    loop {
        if samples.len() >= budget {
            return (samples, TraceStop::SampleBudget);
        }
        match advance(chain, target, &current, &direction, params, domain) {
            Attempt::Stop(reason) => return (samples, reason),
            Attempt::Accepted(step) => {
                let d_start = domain.distance(&step.q, start);
                farthest = farthest.max(d_start);
                let returned = farthest > 2.0 * close
                    && anchors.iter().any(|a| domain.distance(&step.q, a) <= close);
                current = step.q.clone();
                direction = step.direction;
                samples.push(step.q);
                if returned {
                    return (samples, TraceStop::Closed);
                }
            }
        }
    }
}

/// Traces the manifold component through `seed` in both null-space
/// directions, stopping at joint limits. The seed must already satisfy the
/// task tolerance.
pub fn trace_component(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointConfig,
    params: &SmmParams,
) -> Result<ManifoldComponent, SmmError> {
    trace(chain, target, seed, params, Domain::Limited)
}

/// Where a trace may go: inside the joint limits, or anywhere on the torus
/// of joint angles, with closure taken modulo full turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Domain {
    Limited,
    Torus,
}

impl Domain {
    fn distance(&self, a: &JointConfig, b: &JointConfig) -> f64 {
        match self {
            Domain::Limited => a.distance(b),
            Domain::Torus => a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| {
                    let d = (x - y + PI).rem_euclid(TAU) - PI;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

fn trace(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointConfig,
    params: &SmmParams,
    domain: Domain,
) -> Result<ManifoldComponent, SmmError> {
    params.validate()?;
    check_redundancy(chain, params)?;
    let r = residual(chain, target, seed, params.task_space)?;
    if !r.within(params) {
        return Err(SmmError::SeedOffManifold {
            position: r.position,
            orientation: r.orientation,
        });
    }
    if !chain.within_limits(seed) {
        return Err(SmmError::SeedOutOfLimits);
    }
    let (direction, sigma) = null_direction(&r.jacobian);
    if sigma < SINGULAR_VALUE_FLOOR {
        return Err(SmmError::Singular {
            sample: seed.as_slice().to_vec(),
            sigma,
        });
    }

    let budget = params.max_samples_per_component.saturating_sub(1);
    let (forward, fwd_stop) =
        trace_direction(chain, target, seed, direction.clone(), &[seed], budget, params, domain);
    if fwd_stop == TraceStop::Closed {
        let mut samples = Vec::with_capacity(forward.len() + 1);
        samples.push(seed.clone());
        samples.extend(forward);
        return Ok(ManifoldComponent {
            samples,
            closed: true,
            ends: (TraceStop::Closed, TraceStop::Closed),
        });
    }

    let remaining = budget.saturating_sub(forward.len());
    let far_end = forward.last().cloned();
    let anchors: Vec<&JointConfig> = far_end.iter().collect();
    let (backward, bwd_stop) =
        trace_direction(chain, target, seed, -direction, &anchors, remaining, params, domain);

    let closed = bwd_stop == TraceStop::Closed;
    let mut samples: Vec<JointConfig> = backward.into_iter().rev().collect();
    samples.push(seed.clone());
    samples.extend(forward);
    let ends = if closed {
        (TraceStop::Closed, TraceStop::Closed)
    } else {
        (bwd_stop, fwd_stop)
    };
    Ok(ManifoldComponent {
        samples,
        closed,
        ends,
    })
}

/// Representative of `q` modulo full turns that lies within the limits.
fn canonical(chain: &KinematicChain, q: &JointConfig) -> Option<JointConfig> {
    let mut v = q.vector().clone();
    for (x, joint) in v.iter_mut().zip(chain.joints()) {
        if *x < joint.lower || *x > joint.upper {
            *x = joint.lower + (*x - joint.lower).rem_euclid(TAU);
            if *x > joint.upper {
                return None;
            }
        }
    }
    JointConfig::new(v).ok()
}

/// Continues a cut end inside the limits until the limit stops it, so the
/// component ends within a fraction of a step of the boundary.
fn extend_to_limit(
    chain: &KinematicChain,
    target: &Pose,
    end: &JointConfig,
    toward: &DVector<f64>,
    params: &SmmParams,
) -> Vec<JointConfig> {
    let Ok((mut n, sigma)) = tangent_at(chain, target, end, params) else {
        return Vec::new();
    };
    if sigma < SINGULAR_VALUE_FLOOR {
        return Vec::new();
    }
    if n.dot(toward) < 0.0 {
        n = -n;
    }
    trace_direction(chain, target, end, n, &[], LIMIT_EXTENSION_STEPS, params, Domain::Limited).0
}

const LIMIT_EXTENSION_STEPS: usize = 8;

/// Splits a torus trace into the maximal runs that stay within the limits
/// without wrapping a joint. Cut ends stop with `JointLimit`.
fn cut_at_limits(
    chain: &KinematicChain,
    target: &Pose,
    curve: &ManifoldComponent,
    params: &SmmParams,
) -> Vec<ManifoldComponent> {
    let raw = &curve.samples;
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    let canon: Vec<Option<JointConfig>> = raw.iter().map(|q| canonical(chain, q)).collect();
    let jump = 2.5 * params.continuation_step;
    let linked = |i: usize, j: usize| match (&canon[i], &canon[j]) {
        (Some(a), Some(b)) => a.distance(b) <= jump,
        _ => false,
    };
    // links[i]: sample i continues into its successor.
    let links: Vec<bool> = (0..n)
        .map(|i| if i + 1 < n { linked(i, i + 1) } else { curve.closed && n > 2 && linked(i, 0) })
        .collect();
    if curve.closed && links.iter().all(|l| *l) && canon.iter().all(Option::is_some) {
        return vec![ManifoldComponent {
            samples: canon.into_iter().flatten().collect(),
            closed: true,
            ends: (TraceStop::Closed, TraceStop::Closed),
        }];
    }
    // Visit order: for an open curve the natural one; for a closed curve
    // start just past a broken link so no run straddles the seam.
    let start = if curve.closed {
        (0..n).find(|&i| !links[i]).map_or(0, |i| (i + 1) % n)
    } else {
        0
    };
    let order: Vec<usize> = (0..n).map(|k| (start + k) % n).collect();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if canon[i].is_none() {
            if !run.is_empty() {
                runs.push(std::mem::take(&mut run));
            }
            continue;
        }
        run.push(i);
        let last = k + 1 == n;
        if last || !links[i] {
            runs.push(std::mem::take(&mut run));
        }
    }
    runs.into_iter()
        .map(|idx| {
            let (first, last) = (idx[0], idx[idx.len() - 1]);
            let open_start = !curve.closed && first == 0;
            let open_end = !curve.closed && last == n - 1;
            let mut samples: Vec<JointConfig> = idx.iter().map(|&i| canon[i].clone().unwrap()).collect();
            let start_stop = if open_start {
                curve.ends.0
            } else {
                let prev = (first + n - 1) % n;
                let toward = raw[prev].vector() - raw[first].vector();
                let mut head = extend_to_limit(chain, target, &samples[0], &toward, params);
                head.reverse();
                head.extend(samples);
                samples = head;
                TraceStop::JointLimit
            };
            let end_stop = if open_end {
                curve.ends.1
            } else {
                let next = (last + 1) % n;
                let toward = raw[next].vector() - raw[last].vector();
                let tail = extend_to_limit(chain, target, samples.last().unwrap(), &toward, params);
                samples.extend(tail);
                TraceStop::JointLimit
            };
            ManifoldComponent {
                samples,
                closed: false,
                ends: (start_stop, end_stop),
            }
        })
        .collect()
}

/// Generates the manifold: seeds by random-restart IK, then traces a
/// component from every seed not within `dedupe_radius` of a sample already
/// found. Each seed's curve is followed through the whole joint torus and
/// then cut at the joint limits, so one seed yields every piece of its
/// curve. Deterministic for a fixed rng state.
pub fn generate_smm<R: Rng + ?Sized>(
    chain: &KinematicChain,
    target: &Pose,
    params: &SmmParams,
    rng: &mut R,
) -> Result<SelfMotionManifold, SmmError> {
    params.validate()?;
    check_redundancy(chain, params)?;
    let mut manifold = SelfMotionManifold::empty(chain, *target, params);
    for seed in seed_ik(chain, target, params, rng) {
        if manifold.nearest_distance(&seed) <= params.dedupe_radius {
            continue;
        }
        match trace(chain, target, &seed, params, Domain::Torus) {
            Ok(curve) => manifold.components.extend(cut_at_limits(chain, target, &curve, params)),
            Err(SmmError::Singular { sigma, .. }) => {
                log::debug!("skipping singular seed (sigma = {sigma:e})");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(manifold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::robot::xarm7_approx;
    use crate::kinematics::test_chains::{planar, planar_unit};
    use crate::seed::stream;
    use std::f64::consts::PI;

    fn planar_params() -> SmmParams {
        SmmParams {
            task_space: TaskSpace::PlanarPosition,
            ..SmmParams::default()
        }
    }

    fn point(x: f64, y: f64) -> Pose {
        Pose::from_translation(x, y, 0.0)
    }

    #[test]
    fn two_link_ik_finds_both_elbows() {
        let chain = planar_unit(2);
        let (x, y) = (1.2f64, 0.7f64);
        // Closed form: q2 = ±acos((r² − 2) / 2), q1 = atan2(y, x) − atan2(sin q2, 1 + cos q2).
        let c2 = (x * x + y * y - 2.0) / 2.0;
        let analytic: Vec<[f64; 2]> = [1.0f64, -1.0]
            .iter()
            .map(|s| {
                let q2 = s * c2.acos();
                [y.atan2(x) - q2.sin().atan2(1.0 + q2.cos()), q2]
            })
            .collect();
        let params = SmmParams {
            ik_restarts: 40,
            ..planar_params()
        };
        let sols = seed_ik(&chain, &point(x, y), &params, &mut stream(3));
        assert!(!sols.is_empty());
        for a in &analytic {
            let hit = sols
                .iter()
                .any(|s| (s[0] - a[0]).abs() < 1e-3 && (s[1] - a[1]).abs() < 1e-3);
            assert!(hit, "analytic solution {a:?} not found");
        }
        for s in &sols {
            let near = analytic
                .iter()
                .any(|a| (s[0] - a[0]).abs() < 1e-3 && (s[1] - a[1]).abs() < 1e-3);
            assert!(near);
        }
    }

    #[test]
    fn unreachable_target_has_no_seeds() {
        let chain = xarm7_approx();
        let far = Pose::from_translation(100.0, 0.0, 0.0);
        assert!(seed_ik(&chain, &far, &SmmParams::default(), &mut stream(1)).is_empty());
        let m = generate_smm(&chain, &far, &SmmParams::default(), &mut stream(1)).unwrap();
        assert!(m.components.is_empty());
    }

    #[test]
    fn round_trip_target_is_solved() {
        let chain = xarm7_approx();
        let mut rng = stream(11);
        for _ in 0..5 {
            let q0: Vec<f64> = chain
                .joints()
                .iter()
                .map(|j| rng.random_range(j.lower..j.upper))
                .collect();
            let target = chain
                .forward_kinematics(&JointConfig::from_slice(&q0).unwrap())
                .unwrap();
            let sols = seed_ik(&chain, &target, &SmmParams::default(), &mut rng);
            assert!(!sols.is_empty());
        }
    }

    #[test]
    fn planar_loop_is_closed_and_on_manifold() {
        let chain = planar(&[1.0, 0.8, 0.6], &[(-PI, PI); 3]);
        let params = planar_params();
        let target = point(1.6, 0.0);
        let m = generate_smm(&chain, &target, &params, &mut stream(5)).unwrap();
        assert_eq!(m.components.len(), 1);
        let c = &m.components[0];
        assert!(c.closed);
        for s in &c.samples {
            assert!(on_manifold(&chain, &target, s, &params).unwrap());
        }
        for w in c.samples.windows(2) {
            assert!(w[0].distance(&w[1]) <= 2.0 * params.continuation_step);
        }
        let seam = c.samples[0].distance(c.samples.last().unwrap());
        assert!(seam <= 2.0 * params.continuation_step);
    }

    #[test]
    fn limit_clipped_trace() {
        // Third joint pinned to a narrow window ending at the seed.
        let chain = planar(&[1.0, 1.0, 1.0], &[(-PI, PI), (-PI, PI), (-0.3, 0.5)]);
        let params = planar_params();
        let seed = JointConfig::from_slice(&[0.2, -0.6, 0.5]).unwrap();
        let target = chain.forward_kinematics(&seed).unwrap();
        let c = trace_component(&chain, &target, &seed, &params).unwrap();
        assert!(!c.closed);
        assert!(c.samples.iter().all(|s| chain.within_limits(s)));
        assert_eq!(c.ends.0, TraceStop::JointLimit);
        assert_eq!(c.ends.1, TraceStop::JointLimit);
    }

    #[test]
    fn seed_at_limit_with_outward_null_space() {
        // q3 at its upper limit; q3 is a fold of the curve there, so both null
        // directions leave the box after the first step.
        let chain = planar(&[1.0, 1.0, 1.0], &[(-PI, PI), (-PI, PI), (-PI, 0.0)]);
        let params = planar_params();
        let seed = JointConfig::from_slice(&[0.4, 0.3, 0.0]).unwrap();
        let target = chain.forward_kinematics(&seed).unwrap();
        let c = trace_component(&chain, &target, &seed, &params).unwrap();
        assert!(!c.closed);
        assert!(c.samples.iter().all(|s| chain.within_limits(s)));
    }

    #[test]
    fn singular_seed_is_an_error() {
        let chain = planar_unit(3);
        let seed = JointConfig::from_slice(&[0.0, 0.0, 0.0]).unwrap();
        let target = chain.forward_kinematics(&seed).unwrap();
        let err = trace_component(&chain, &target, &seed, &planar_params()).unwrap_err();
        assert!(matches!(err, SmmError::Singular { .. }));
    }

    #[test]
    fn off_manifold_seed_is_rejected() {
        let chain = planar_unit(3);
        let seed = JointConfig::from_slice(&[0.1, 0.2, 0.3]).unwrap();
        let err = trace_component(&chain, &point(1.0, 1.0), &seed, &planar_params()).unwrap_err();
        assert!(matches!(err, SmmError::SeedOffManifold { .. }));
    }

    #[test]
    fn duplicate_seeds_are_suppressed() {
        let chain = planar(&[1.0, 0.8, 0.6], &[(-PI, PI); 3]);
        let params = SmmParams {
            ik_restarts: 30,
            ..planar_params()
        };
        let m = generate_smm(&chain, &point(1.6, 0.0), &params, &mut stream(8)).unwrap();
        // Thirty seeds land on one loop; only one component is traced.
        assert_eq!(m.components.len(), 1);
    }

    #[test]
    fn redundancy_must_be_one() {
        let chain = planar_unit(2);
        let err = generate_smm(&chain, &point(1.0, 1.0), &planar_params(), &mut stream(0));
        assert!(matches!(err, Err(SmmError::Redundancy { .. })));
    }

    #[test]
    fn text_round_trip() {
        let chain = planar(&[1.0, 0.8, 0.6], &[(-PI, PI); 3]);
        let m = generate_smm(&chain, &point(1.5, 0.3), &planar_params(), &mut stream(2)).unwrap();
        let back = SelfMotionManifold::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(SelfMotionManifold::from_text("chain_id = 3").is_err());
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let chain = xarm7_approx();
        let q0 = JointConfig::from_slice(&[0.3, 0.5, -0.2, 1.2, 0.4, 0.9, -0.5]).unwrap();
        let target = chain.forward_kinematics(&q0).unwrap();
        let params = SmmParams {
            ik_restarts: 8,
            ..SmmParams::default()
        };
        let a = generate_smm(&chain, &target, &params, &mut stream(99)).unwrap();
        let b = generate_smm(&chain, &target, &params, &mut stream(99)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_params() {
        let p = SmmParams {
            pos_tol: 0.0,
            ..SmmParams::default()
        };
        assert!(p.validate().is_err());
        let p = SmmParams {
            ik_restarts: 0,
            ..SmmParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn one_seed_recovers_every_piece_of_a_cut_loop() {
        // The loop crosses q1 = ±π, so the limits cut it into two pieces.
        let chain = planar(&[1.0, 0.8, 0.6], &[(-PI, PI); 3]);
        let target = point(1.5 * 2.5f64.cos(), 1.5 * 2.5f64.sin());
        let params = SmmParams {
            ik_restarts: 1,
            ..planar_params()
        };
        let m = generate_smm(&chain, &target, &params, &mut stream(11)).unwrap();
        assert_eq!(m.components.len(), 2);
        for c in &m.components {
            assert_eq!(c.ends, (TraceStop::JointLimit, TraceStop::JointLimit));
            for q in [c.samples.first().unwrap(), c.samples.last().unwrap()] {
                assert!(PI - q[0].abs() < 0.01, "end q1 = {}", q[0]);
            }
        }
    }
}
