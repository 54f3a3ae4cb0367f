//! Serial-chain kinematics for revolute manipulators.
//!
//! Poses are plain rotation-matrix / translation pairs so that values read
//! from disk survive a save/load cycle bit-for-bit. Everything in here is an
//! immutable value; the chain can be shared freely between threads.

mod pose;
pub mod robot;

pub use pose::{compose, pose_error, rotation_log, Pose, PoseError, PoseRecord};

use nalgebra::{DVector, Matrix6xX, Rotation3, Unit, Vector3, Vector6};
use thiserror::Error;

use crate::collision::Capsule;

/// Tolerance used when validating rotation matrices and unit axes.
pub const FRAME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint vector has {found} entries, chain has {expected} joints")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:e})")]
    NotARotation { deviation: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

/// A point of the joint configuration space, in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct JointConfig(DVector<f64>);

impl JointConfig {
    pub fn new(angles: DVector<f64>) -> Result<Self, KinematicsError> {
        if angles.iter().all(|a| a.is_finite()) {
            Ok(Self(angles))
        } else {
            Err(KinematicsError::NonFinite("joint configuration"))
        }
    }

    pub fn from_slice(angles: &[f64]) -> Result<Self, KinematicsError> {
        Self::new(DVector::from_column_slice(angles))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    /// Euclidean distance in joint space.
    pub fn distance(&self, other: &JointConfig) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

impl std::ops::Index<usize> for JointConfig {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One revolute joint: a fixed transform from the parent link frame followed
/// by a rotation about `axis`.
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub origin: Pose,
    axis: Unit<Vector3<f64>>,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    pub fn new(
        name: impl Into<String>,
        origin: Pose,
        axis: Vector3<f64>,
        lower: f64,
        upper: f64,
    ) -> Result<Self, KinematicsError> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite()) || !axis.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite("joint definition"));
        }
        if (axis.norm() - 1.0).abs() > FRAME_TOLERANCE {
            return Err(KinematicsError::InvalidChain(format!(
                "axis of joint `{name}` is not unit length"
            )));
        }
        if lower >= upper {
            return Err(KinematicsError::InvalidChain(format!(
                "joint `{name}` has lower limit {lower} >= upper limit {upper}"
            )));
        }
        Ok(Self {
            name,
            origin,
            axis: Unit::new_unchecked(axis),
            lower,
            upper,
        })
    }

    pub fn axis(&self) -> &Vector3<f64> {
        self.axis.as_ref()
    }

    fn motion(&self, angle: f64) -> Pose {
        Pose::from_rotation_unchecked(Rotation3::from_axis_angle(&self.axis, angle).into_inner())
    }
}

/// A capsule rigidly attached to a link frame. Link 0 is the (static) base
/// frame, link `i` is the frame after joint `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkCapsule {
    pub name: String,
    pub link: usize,
    pub capsule: Capsule,
    /// Static shoulder geometry; the only geometry the ridge constrains.
    pub shoulder: bool,
}

/// Ordered revolute chain with tool transform and collision geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    id: String,
    base: Pose,
    joints: Vec<Joint>,
    tool: Pose,
    capsules: Vec<LinkCapsule>,
    exempt_pairs: Vec<(usize, usize)>,
}

impl KinematicChain {
    pub fn new(id: impl Into<String>, joints: Vec<Joint>, tool: Pose) -> Self {
        Self {
            id: id.into(),
            base: Pose::identity(),
            joints,
            tool,
            capsules: Vec::new(),
            exempt_pairs: Vec::new(),
        }
    }

    /// Attaches collision capsules; `exempt_pairs` lists link pairs that are
    /// never checked against each other.
    pub fn with_geometry(
        mut self,
        capsules: Vec<LinkCapsule>,
        exempt_pairs: Vec<(usize, usize)>,
    ) -> Result<Self, KinematicsError> {
        let n = self.joints.len();
        for c in &capsules {
            if c.link > n {
                return Err(KinematicsError::InvalidChain(format!(
                    "capsule `{}` refers to link {} but the chain has {} links",
                    c.name,
                    c.link,
                    n + 1
                )));
            }
        }
        self.capsules = capsules;
        self.exempt_pairs = exempt_pairs
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        Ok(self)
    }

    /// Same chain mounted on `base`: every world-frame quantity is
    /// premultiplied by it.
    pub fn with_base(&self, base: Pose) -> Self {
        Self {
            base: base.compose(&self.base),
            ..self.clone()
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn tool(&self) -> &Pose {
        &self.tool
    }

    pub fn capsules(&self) -> &[LinkCapsule] {
        &self.capsules
    }

    pub fn is_exempt(&self, link_a: usize, link_b: usize) -> bool {
        let key = (link_a.min(link_b), link_a.max(link_b));
        link_a == link_b || self.exempt_pairs.contains(&key)
    }

    pub fn exempt_pairs(&self) -> &[(usize, usize)] {
        &self.exempt_pairs
    }

    pub fn lower_limits(&self) -> impl Iterator<Item = f64> + '_ {
        self.joints.iter().map(|j| j.lower)
    }

    pub fn upper_limits(&self) -> impl Iterator<Item = f64> + '_ {
        self.joints.iter().map(|j| j.upper)
    }

    /// Index of the first joint outside its limits, if any.
    pub fn limit_violation(&self, q: &JointConfig) -> Option<usize> {
        self.joints
            .iter()
            .zip(q.as_slice())
            .position(|(j, &a)| a < j.lower || a > j.upper)
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        self.limit_violation(q).is_none()
    }

    /// Upper bound on the distance between the base origin and the tool point.
    pub fn reach_bound(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation().norm())
            .sum::<f64>()
            + self.tool.translation().norm()
    }

    fn check_len(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() == self.joints.len() {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch {
                expected: self.joints.len(),
                found: q.len(),
            })
        }
    }

    /// World frames of links `0..=n`; entry `i` is the frame after joint `i`.
    pub fn link_frames(&self, q: &JointConfig) -> Result<Vec<Pose>, KinematicsError> {
        self.check_len(q)?;
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let mut current = self.base;
        frames.push(current);
        for (joint, &angle) in self.joints.iter().zip(q.as_slice()) {
            current = current.compose(&joint.origin).compose(&joint.motion(angle));
            frames.push(current);
        }
        Ok(frames)
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Pose, KinematicsError> {
        let frames = self.link_frames(q)?;
        Ok(frames[frames.len() - 1].compose(&self.tool))
    }

    /// World-frame geometric Jacobian at the tool point.
    pub fn geometric_jacobian(&self, q: &JointConfig) -> Result<Jacobian, KinematicsError> {
        Ok(self.kinematics(q)?.1)
    }

    /// Tool pose and Jacobian from a single pass over the chain.
    pub fn kinematics(&self, q: &JointConfig) -> Result<(Pose, Jacobian), KinematicsError> {
        let frames = self.link_frames(q)?;
        let ee = frames[frames.len() - 1].compose(&self.tool);
        let p_ee = ee.translation();
        let mut j = Matrix6xX::zeros(self.joints.len());
        for (i, joint) in self.joints.iter().enumerate() {
            let frame = &frames[i + 1];
            let z = frame.rotation() * joint.axis();
            let lin = z.cross(&(p_ee - frame.translation()));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        Ok((ee, Jacobian(j)))
    }
}

/// 6×n world-frame Jacobian; rows are (linear; angular) velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian(Matrix6xX<f64>);

impl Jacobian {
    pub fn from_matrix(m: Matrix6xX<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix6xX<f64> {
        &self.0
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, i: usize) -> Vector6<f64> {
        self.0.column(i).into_owned()
    }
}

pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<Pose, KinematicsError> {
    chain.forward_kinematics(q)
}

pub fn geometric_jacobian(
    chain: &KinematicChain,
    q: &JointConfig,
) -> Result<Jacobian, KinematicsError> {
    chain.geometric_jacobian(q)
}
