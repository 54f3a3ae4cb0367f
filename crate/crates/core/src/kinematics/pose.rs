use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::{KinematicsError, FRAME_TOLERANCE};

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor: `rotation` must be orthonormal with
    /// determinant +1 to within [`FRAME_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, KinematicsError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite("pose"));
        }
        let deviation = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max()
            .max((rotation.determinant() - 1.0).abs());
        if deviation > FRAME_TOLERANCE {
            return Err(KinematicsError::NotARotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_rotation_unchecked(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_translation_vector(t: Vector3<f64>) -> Self {
        Self::from_translation(t.x, t.y, t.z)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x_axis(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y_axis(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z_axis(), angle)
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        Self::from_rotation_unchecked(Rotation3::from_axis_angle(axis, angle).into_inner())
    }

    /// URDF convention: translate by `xyz`, then rotate by
    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self {
            rotation: r.into_inner(),
            translation: Vector3::from(xyz),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// File representation of a pose: translation plus row-major rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let r = p.rotation();
        Self {
            translation: [p.translation().x, p.translation().y, p.translation().z],
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        }
    }
}

impl TryFrom<&PoseRecord> for Pose {
    type Error = KinematicsError;

    fn try_from(rec: &PoseRecord) -> Result<Self, Self::Error> {
        let m = &rec.rotation;
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Pose::new(rotation, Vector3::from(rec.translation))
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Position (m) and orientation (rad) distance between two poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub position: f64,
    pub orientation: f64,
}

impl PoseError {
    pub fn within(&self, pos_tol: f64, ori_tol: f64) -> bool {
        self.position <= pos_tol && self.orientation <= ori_tol
    }
}

pub fn pose_error(a: &Pose, b: &Pose) -> PoseError {
    let rel = a.rotation.transpose() * b.rotation;
    PoseError {
        position: (a.translation - b.translation).norm(),
        orientation: rotation_angle(&rel),
    }
}

fn vee_skew(r: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

/// Angle of a rotation matrix; accurate near zero, unlike `acos`.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = vee_skew(r).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Axis-angle vector of a rotation matrix (the SO(3) logarithm).
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let s = vee_skew(r);
    let sn = s.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let angle = sn.atan2(c);
    if angle < 1e-6 {
        // sin(θ)/θ → 1
        s
    } else if angle < std::f64::consts::PI - 1e-6 {
        s * (angle / sn)
    } else {
        Rotation3::from_matrix_unchecked(*r).scaled_axis()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_is_neutral() {
        let p = Pose::from_translation(0.1, 0.2, 0.3).compose(&Pose::rot_y(0.4));
        assert_eq!(Pose::identity().compose(&p), p);
    }

    #[test]
    fn translations_add() {
        let p = Pose::from_translation(1.0, 0.0, 0.0) * Pose::from_translation(0.0, 2.0, 0.0);
        assert_eq!(*p.translation(), Vector3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn rx_then_ry_quarter_turns() {
        let p = Pose::rot_x(FRAC_PI_2) * Pose::rot_y(FRAC_PI_2);
        // Symbolic product: Rx(π/2)·Ry(π/2) = [[0,0,1],[1,0,0],[0,1,0]].
        let expected = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!((p.rotation() - expected).abs().max() < 1e-15);
        assert!((p.rotation().column(0) - Vector3::y()).norm() < 1e-15);
        assert!((p.rotation().column(1) - Vector3::z()).norm() < 1e-15);
        assert!((p.rotation().column(2) - Vector3::x()).norm() < 1e-15);
        assert_eq!(*p.translation(), Vector3::zeros());
    }

    #[test]
    fn pose_error_cases() {
        let p = Pose::from_translation(0.1, -0.4, 2.0) * Pose::rot_z(1.3);
        let e = pose_error(&p, &p);
        assert_eq!((e.position, e.orientation), (0.0, 0.0));

        let e = pose_error(&Pose::identity(), &Pose::from_translation(0.3, 0.4, 0.0));
        assert!((e.position - 0.5).abs() < 1e-15);
        assert_eq!(e.orientation, 0.0);

        let e = pose_error(&Pose::identity(), &Pose::rot_x(FRAC_PI_2));
        assert_eq!(e.position, 0.0);
        assert!((e.orientation - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_non_rotations() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(bad, Vector3::zeros()).is_err());
        let scaled = Matrix3::identity() * 1.001;
        assert!(Pose::new(scaled, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity(), Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn log_near_pi() {
        let r = Pose::rot_y(std::f64::consts::PI - 1e-9);
        let w = rotation_log(r.rotation());
        assert!((w.norm() - (std::f64::consts::PI - 1e-9)).abs() < 1e-6);
        assert!(w.x.abs() < 1e-6 && w.z.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            a in prop::array::uniform6(-3.0f64..3.0),
            b in prop::array::uniform6(-3.0f64..3.0),
            c in prop::array::uniform6(-3.0f64..3.0),
        ) {
            let mk = |v: [f64; 6]| Pose::from_xyz_rpy([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
            let (a, b, c) = (mk(a), mk(b), mk(c));
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!(pose_error(&l, &r).position < 1e-12);
            prop_assert!(pose_error(&l, &r).orientation < 1e-12);
            prop_assert!(Pose::new(*l.rotation(), *l.translation()).is_ok());
        }

        #[test]
        fn log_matches_axis_angle(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..3.1,
        ) {
            let v = Vector3::from(axis);
            prop_assume!(v.norm() > 1e-3);
            let u = Unit::new_normalize(v);
            let w = rotation_log(Pose::from_axis_angle(&u, angle).rotation());
            prop_assert!((w - u.into_inner() * angle).norm() < 1e-9);
        }
    }
}
