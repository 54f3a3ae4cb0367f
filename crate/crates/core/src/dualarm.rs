//! Mirrored dual-arm mount: base transforms from the design vector, the
//! shoulder feasibility check, and the min-combined dual-arm task metric.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{capsule_pair_distance, Capsule, ObstacleSet};
use crate::kinematics::{JointConfig, KinematicChain, KinematicsError, Pose};
use crate::metrics::{evaluate_target, Criterion, TargetScore};
use crate::scenario::Task;
use crate::seed::{derive, hash_bytes, stream};
use crate::smm::SmmParams;

/// Design vector: mount position (m), shared pitch `theta` about y and
/// mirrored camber `xi` (rad). `y` is half the shoulder separation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub xi: f64,
}

impl DesignParams {
    pub const DIMS: usize = 5;

    pub fn new(x: f64, y: f64, z: f64, theta: f64, xi: f64) -> Result<Self, KinematicsError> {
        let p = Self { x, y, z, theta, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite("design parameters"));
        }
        if self.y < 0.0 {
            return Err(KinematicsError::InvalidChain(format!(
                "half shoulder width must be >= 0, got {}",
                self.y
            )));
        }
        Ok(())
    }

    /// The hand-tuned reference mount.
    pub fn expert() -> Self {
        Self {
            x: 0.175,
            y: 0.35,
            z: 0.4,
            theta: 0.0,
            xi: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.theta, self.xi]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            theta: a[3],
            xi: a[4],
        }
    }

    /// Stable key from the bit patterns of the five values.
    pub fn key(&self) -> u64 {
        derive(&self.to_array().map(f64::to_bits))
    }
}

impl std::fmt::Display for DesignParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(x={:.4}, y={:.4}, z={:.4}, theta={:.2}deg, xi={:.2}deg)",
            self.x,
            self.y,
            self.z,
            self.theta.to_degrees(),
            self.xi.to_degrees()
        )
    }
}

/// `B₀ = T(x, y, z)·Ry(θ)·Rx(π/2)·Ry(π/2 − ξ)` and
/// `B₁ = T(x, −y, z)·Ry(θ)·Rx(π/2)·Ry(π/2 + ξ)`.
pub fn base_transforms(rho: &DesignParams) -> (Pose, Pose) {
    let tilt = Pose::rot_y(rho.theta) * Pose::rot_x(FRAC_PI_2);
    let b0 = Pose::from_translation(rho.x, rho.y, rho.z) * tilt * Pose::rot_y(FRAC_PI_2 - rho.xi);
    let b1 = Pose::from_translation(rho.x, -rho.y, rho.z) * tilt * Pose::rot_y(FRAC_PI_2 + rho.xi);
    (b0, b1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualArmDesign {
    pub params: DesignParams,
    pub base_0: Pose,
    pub base_1: Pose,
    /// World-frame static shoulder capsules of arm 0 and arm 1.
    pub shoulder_capsules: [Vec<Capsule>; 2],
}

impl DualArmDesign {
    pub fn new(params: DesignParams, chain: &KinematicChain) -> Self {
        let (base_0, base_1) = base_transforms(&params);
        let shoulders = |base: &Pose| -> Vec<Capsule> {
            chain
                .capsules()
                .iter()
                .filter(|c| c.shoulder)
                .map(|c| c.capsule.transformed(&base.compose(chain.base())))
                .collect()
        };
        let shoulder_capsules = [shoulders(&base_0), shoulders(&base_1)];
        Self {
            params,
            base_0,
            base_1,
            shoulder_capsules,
        }
    }

    pub fn bases(&self) -> [Pose; 2] {
        [self.base_0, self.base_1]
    }

    pub fn feasible(&self, obstacles: &ObstacleSet) -> bool {
        let [a, b] = &self.shoulder_capsules;
        let crossed = a
            .iter()
            .any(|ca| b.iter().any(|cb| capsule_pair_distance(ca, cb) < 0.0));
        let blocked = a
            .iter()
            .chain(b.iter())
            .any(|c| obstacles.capsule_violation(c, true).is_some());
        !crossed && !blocked
    }
}

/// Tool poses of both arms; arm `i` is mounted at `Bᵢ`.
pub fn dual_fk(
    q0: &JointConfig,
    q1: &JointConfig,
    rho: &DesignParams,
    chain: &KinematicChain,
) -> Result<(Pose, Pose), KinematicsError> {
    let (b0, b1) = base_transforms(rho);
    Ok((
        b0.compose(&chain.forward_kinematics(q0)?),
        b1.compose(&chain.forward_kinematics(q1)?),
    ))
}

/// Shoulders clear of each other, the ground and the ridge.
pub fn design_feasible(rho: &DesignParams, chain: &KinematicChain, obstacles: &ObstacleSet) -> bool {
    rho.validate().is_ok() && DualArmDesign::new(*rho, chain).feasible(obstacles)
}

/// Per-pair outcome: arm 0 reaching the pepper, arm 1 the peduncle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOutcome {
    pub arm_0: TargetScore,
    /// `None` when skipped because arm 0 scored 0.
    pub arm_1: Option<TargetScore>,
}

impl PairOutcome {
    pub fn combined(&self) -> f64 {
        match self.arm_1 {
            Some(a1) => self.arm_0.score.min(a1.score),
            None => 0.0,
        }
    }

    /// Both feasible sets were nonempty.
    pub fn reached(&self) -> bool {
        self.arm_0.reached && self.arm_1.is_some_and(|a| a.reached)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualEvaluation {
    pub feasible_design: bool,
    pub total: f64,
    pub pairs: Vec<PairOutcome>,
}

fn pose_hash(p: &Pose) -> u64 {
    let words: Vec<u64> = p
        .translation()
        .iter()
        .chain(p.rotation().iter())
        .map(|v| v.to_bits())
        .collect();
    derive(&words)
}

/// Seed for one arm's manifold: a function of the task, the design and the
/// target pose itself, so results are independent of pair order and of
/// evaluation scheduling.
pub fn target_seed(task: &Task, rho: &DesignParams, target: &Pose, arm: u64) -> u64 {
    derive(&[task.seed, hash_bytes(task.id.as_bytes()), rho.key(), arm, pose_hash(target)])
}

/// Evaluates every target pair; with `detail` the arm-1 manifold is computed
/// even when arm 0 already scored 0.
pub fn dual_task_evaluation(
    rho: &DesignParams,
    task: &Task,
    chain: &KinematicChain,
    criterion: Criterion,
    params: &SmmParams,
    detail: bool,
) -> DualEvaluation {
    let design_ok = design_feasible(rho, chain, &task.obstacles);
    if !design_ok {
        return DualEvaluation {
            feasible_design: false,
            total: 0.0,
            pairs: vec![
                PairOutcome {
                    arm_0: TargetScore::ZERO,
                    arm_1: Some(TargetScore::ZERO),
                };
                task.pairs.len()
            ],
        };
    }
    let (b0, b1) = base_transforms(rho);
    let pairs: Vec<PairOutcome> = task
        .pairs
        .par_iter()
        .map(|pair| {
            let score = |base: &Pose, target: &Pose, arm: u64| {
                let mut rng = stream(target_seed(task, rho, target, arm));
                evaluate_target(chain, base, target, &task.obstacles, criterion, params, &mut rng)
            };
            let arm_0 = score(&b0, &pair.pepper, 0);
            let arm_1 = (detail || arm_0.score > 0.0).then(|| score(&b1, &pair.peduncle, 1));
            PairOutcome { arm_0, arm_1 }
        })
        .collect();
    // Summed in sorted order so the total is exactly permutation invariant.
    let mut values: Vec<f64> = pairs.iter().map(PairOutcome::combined).collect();
    values.sort_by(f64::total_cmp);
    DualEvaluation {
        feasible_design: true,
        total: values.iter().sum(),
        pairs,
    }
}

/// Σ over pairs of `min(score(arm 0 → Pᵢ), score(arm 1 → Cᵢ))`; 0 for an
/// infeasible design.
pub fn dual_task_metric(
    rho: &DesignParams,
    task: &Task,
    chain: &KinematicChain,
    criterion: Criterion,
    params: &SmmParams,
) -> f64 {
    dual_task_evaluation(rho, task, chain, criterion, params, false).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{HalfSpace, SemiEllipticCylinder};
    use crate::kinematics::robot::xarm7_approx;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn rho(x: f64, y: f64, z: f64, theta: f64, xi: f64) -> DesignParams {
        DesignParams::new(x, y, z, theta, xi).unwrap()
    }

    fn environment() -> ObstacleSet {
        ObstacleSet::none()
            .with_ground(HalfSpace::ground(0.0))
            .with_ridge(SemiEllipticCylinder::new(Vector3::new(1.0, 0.0, 0.0), 0.8, 0.6, 0.6).unwrap())
    }

    #[test]
    fn zero_design_bases() {
        let (b0, b1) = base_transforms(&rho(0.0, 0.0, 0.0, 0.0, 0.0));
        let cols = Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]);
        for b in [b0, b1] {
            assert!((b.rotation() - cols).abs().max() < 1e-15);
            assert_eq!(*b.translation(), Vector3::zeros());
        }
    }

    #[test]
    fn expert_translations() {
        let (b0, b1) = base_transforms(&DesignParams::expert());
        assert_eq!(*b0.translation(), Vector3::new(0.175, 0.35, 0.4));
        assert_eq!(*b1.translation(), Vector3::new(0.175, -0.35, 0.4));
    }

    #[test]
    fn dual_fk_zero_design() {
        let chain = xarm7_approx();
        let r = rho(0.0, 0.3, 0.5, 0.0, 0.0);
        let q = JointConfig::zeros(7);
        let (p0, p1) = dual_fk(&q, &q, &r, &chain).unwrap();
        let (b0, b1) = base_transforms(&r);
        let tool = chain.forward_kinematics(&q).unwrap();
        assert_eq!(p0, b0 * tool);
        assert_eq!(p1, b1 * tool);
        assert!((p0.translation() - p1.translation() - Vector3::new(0.0, 0.6, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn dual_fk_translation_equivariance() {
        let chain = xarm7_approx();
        let q0 = JointConfig::from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        let q1 = JointConfig::from_slice(&[-0.1, 0.5, 0.0, 1.4, 0.0, 0.2, 0.0]).unwrap();
        let (a0, a1) = dual_fk(&q0, &q1, &rho(1.0, 0.3, 0.5, 0.0, 0.0), &chain).unwrap();
        let (b0, b1) = dual_fk(&q0, &q1, &rho(0.0, 0.3, 0.5, 0.0, 0.0), &chain).unwrap();
        assert!((a0.translation() - b0.translation() - Vector3::x()).norm() < 1e-12);
        assert!((a1.translation() - b1.translation() - Vector3::x()).norm() < 1e-12);
        assert_eq!(a0.rotation(), b0.rotation());
    }

    #[test]
    fn degenerate_mirror_swaps_outputs() {
        let chain = xarm7_approx();
        let q0 = JointConfig::from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        let q1 = JointConfig::from_slice(&[-0.1, 0.5, 0.0, 1.4, 0.0, 0.2, 0.0]).unwrap();
        let r = rho(0.3, 0.0, 0.5, 0.2, 0.0);
        let (a0, a1) = dual_fk(&q0, &q1, &r, &chain).unwrap();
        let (b0, b1) = dual_fk(&q1, &q0, &r, &chain).unwrap();
        assert_eq!((a0, a1), (b1, b0));
    }

    #[test]
    fn feasibility_cases() {
        let chain = xarm7_approx();
        let env = environment();
        assert!(design_feasible(&rho(0.0, 0.5, 0.5, 0.0, 0.0), &chain, &env));
        assert!(design_feasible(&DesignParams::expert(), &chain, &env));
        assert!(!design_feasible(&rho(0.0, 0.0, 0.5, 0.0, 0.0), &chain, &env));
        assert!(!design_feasible(&rho(0.0, 0.4, 0.02, 0.0, 0.0), &chain, &env));
        assert!(!design_feasible(&rho(0.9, 0.2, 0.4, 0.0, 0.0), &chain, &env));
    }

    #[test]
    fn equal_rotations_without_camber() {
        let (b0, b1) = base_transforms(&rho(0.2, 0.3, 0.4, 0.7, 0.0));
        assert_eq!(b0.rotation(), b1.rotation());
    }

    #[test]
    fn outcome_combination() {
        let s = |v: f64| TargetScore {
            score: v,
            reached: v > 0.0,
        };
        let p = PairOutcome {
            arm_0: s(0.4),
            arm_1: Some(s(0.2)),
        };
        assert_eq!(p.combined(), 0.2);
        assert!(p.reached());
        let skipped = PairOutcome {
            arm_0: s(0.0),
            arm_1: None,
        };
        assert_eq!(skipped.combined(), 0.0);
        assert!(!skipped.reached());
    }

    proptest! {
        #[test]
        fn mirror_symmetry(
            x in -0.5f64..1.0, y in 0.0f64..0.6, z in 0.0f64..1.0,
            theta in -1.6f64..1.6, xi in -1.6f64..1.6,
        ) {
            let (b0, b1) = base_transforms(&rho(x, y, z, theta, xi));
            prop_assert_eq!(b0.translation().y, y);
            prop_assert_eq!(b1.translation().y, -y);
            // Mirroring across y = 0 maps B₀ to B₁ followed by a half turn
            // about the local z axis: S·R₀·S = R₁·Rz(π).
            let s = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
            let mirrored = s * b0.rotation() * s;
            let expected = b1.rotation() * Pose::rot_z(std::f64::consts::PI).rotation();
            prop_assert!((mirrored - expected).abs().max() < 1e-12);
            prop_assert_eq!(s * b0.translation(), *b1.translation());
        }
    }
}
