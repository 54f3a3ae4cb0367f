//! Harvesting scenario: ridge canopy, pepper/peduncle target sampling and
//! task files.
//!
//! Task file (TOML, schema version 1):
//!
//! ```toml
//! schema_version = 1
//! id = "task-42"
//! seed = 42
//! peduncle_offset = 0.12          # m, pepper frame → cut point along local y
//!
//! [obstacles]
//! ridge_scope = "shoulders"       # or "all_links"
//!
//! [obstacles.ground]
//! normal = [0.0, 0.0, 1.0]
//! offset = 0.0
//!
//! [obstacles.ridge]
//! center = [1.0, 0.0, 0.0]        # m, base center on the ground
//! height = 0.8                    # m, vertical semi-axis
//! width = 0.6                     # m, full extent along x
//! length = 0.6                    # m, extent along y
//!
//! [[pairs]]
//! pepper = { translation = [x, y, z], rotation = [[..], [..], [..]] }   # row-major
//! peduncle = { translation = [...], rotation = [...] }
//! ```

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{ridge_contains, HalfSpace, ObstacleSet, SemiEllipticCylinder};
use crate::kinematics::{pose_error, KinematicsError, Pose, PoseRecord};
use crate::seed::{derive, stream};

pub const TASK_SCHEMA_VERSION: u32 = 1;

/// Peduncle/pepper frame consistency tolerance on load (m, rad).
pub const PEDUNCLE_TOLERANCE: f64 = 1e-9;

/// Number of held-out evaluation tasks.
pub const HELD_OUT_TASKS: u64 = 10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid canopy configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling region is empty: margin {margin} m leaves no interior")]
    EmptySamplingRegion { margin: f64 },
    #[error("cannot access task file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed task file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid task {path}: {message}")]
    Validation { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanopyConfig {
    pub ridge: SemiEllipticCylinder,
    /// m
    pub peduncle_offset: f64,
    /// rad
    pub delta1_std: f64,
    /// rad
    pub delta2_std: f64,
    pub n_targets: usize,
    /// m, keep-out from the ridge surface
    pub margin: f64,
}

impl Default for CanopyConfig {
    fn default() -> Self {
        Self {
            ridge: default_ridge(),
            peduncle_offset: 0.12,
            delta1_std: 0.35,
            delta2_std: 0.5,
            n_targets: 20,
            margin: 0.02,
        }
    }
}

pub fn default_ridge() -> SemiEllipticCylinder {
    SemiEllipticCylinder::new(Vector3::new(1.0, 0.0, 0.0), 0.8, 0.6, 0.6).expect("valid ridge")
}

impl CanopyConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let r = &self.ridge;
        if SemiEllipticCylinder::new(r.center, r.height, r.width, r.length).is_none() {
            return Err(ScenarioError::InvalidConfig("ridge dimensions must be positive".into()));
        }
        if !(self.peduncle_offset.is_finite() && self.peduncle_offset > 0.0) {
            return Err(ScenarioError::InvalidConfig("peduncle_offset must be > 0".into()));
        }
        for (name, v) in [("delta1_std", self.delta1_std), ("delta2_std", self.delta2_std)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(ScenarioError::InvalidConfig("margin must be >= 0".into()));
        }
        let smallest = (0.5 * r.width).min(r.height).min(0.5 * r.length);
        if self.margin >= smallest {
            return Err(ScenarioError::EmptySamplingRegion {
                margin: self.margin,
            });
        }
        Ok(())
    }

    /// Ground at z = 0 plus the ridge.
    pub fn obstacles(&self) -> ObstacleSet {
        ObstacleSet::none()
            .with_ground(HalfSpace::ground(0.0))
            .with_ridge(self.ridge)
    }
}

/// A pepper grasp frame and its peduncle cut frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetPair {
    pub pepper: Pose,
    pub peduncle: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: String,
    pub seed: u64,
    pub peduncle_offset: f64,
    pub pairs: Vec<TargetPair>,
    pub obstacles: ObstacleSet,
}

/// Pepper frame at `p` with orientation noise `(δ₁, δ₂)`.
pub fn pepper_frame(p: &Vector3<f64>, delta1: f64, delta2: f64) -> Pose {
    Pose::from_translation_vector(*p) * Pose::rot_x(FRAC_PI_2 + delta1) * Pose::rot_y(FRAC_PI_2 + delta2)
}

pub fn peduncle_frame(pepper: &Pose, d: f64) -> Pose {
    pepper.compose(&Pose::from_translation(0.0, d, 0.0))
}

/// Uniform point in the ridge shrunk by `margin`, by rejection from the
/// bounding box.
pub fn sample_in_ridge<R: Rng + ?Sized>(ridge: &SemiEllipticCylinder, margin: f64, rng: &mut R) -> Vector3<f64> {
    let c = ridge.center;
    let (hx, hy) = (0.5 * ridge.width - margin, 0.5 * ridge.length - margin);
    loop {
        let p = Vector3::new(
            c.x + rng.random_range(-hx..=hx),
            c.y + rng.random_range(-hy..=hy),
            c.z + rng.random_range(margin..=ridge.height - margin),
        );
        if ridge.contains_with_margin(&p, -margin) && ridge_contains(ridge, &p) {
            return p;
        }
    }
}

/// Draws one pepper/peduncle pair.
pub fn sample_pepper<R: Rng + ?Sized>(cfg: &CanopyConfig, rng: &mut R) -> Result<TargetPair, ScenarioError> {
    cfg.validate()?;
    let n1 = Normal::new(0.0, cfg.delta1_std).map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let n2 = Normal::new(0.0, cfg.delta2_std).map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let p = sample_in_ridge(&cfg.ridge, cfg.margin, rng);
    let d1 = n1.sample(rng);
    let d2 = n2.sample(rng);
    let pepper = pepper_frame(&p, d1, d2);
    Ok(TargetPair {
        pepper,
        peduncle: peduncle_frame(&pepper, cfg.peduncle_offset),
    })
}

pub fn generate_task(cfg: &CanopyConfig, seed: u64, id: impl Into<String>) -> Result<Task, ScenarioError> {
    cfg.validate()?;
    let mut rng = stream(derive(&[seed, 0x7a5c]));
    let pairs = (0..cfg.n_targets)
        .map(|_| sample_pepper(cfg, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok(Task {
        id: id.into(),
        seed,
        peduncle_offset: cfg.peduncle_offset,
        pairs,
        obstacles: cfg.obstacles(),
    })
}

/// Seeds of the held-out evaluation tasks for an optimization seed.
pub fn held_out_seeds(base_seed: u64) -> Vec<u64> {
    (1..=HELD_OUT_TASKS).map(|k| base_seed.wrapping_add(k)).collect()
}

pub fn task_id(seed: u64) -> String {
    format!("task-{seed}")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    schema_version: u32,
    id: String,
    seed: u64,
    peduncle_offset: f64,
    obstacles: ObstacleSet,
    #[serde(default)]
    pairs: Vec<PairRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    pepper: PoseRecord,
    peduncle: PoseRecord,
}

impl Task {
    pub fn to_text(&self) -> String {
        let file = TaskFile {
            schema_version: TASK_SCHEMA_VERSION,
            id: self.id.clone(),
            seed: self.seed,
            peduncle_offset: self.peduncle_offset,
            obstacles: self.obstacles.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| PairRecord {
                    pepper: PoseRecord::from(&p.pepper),
                    peduncle: PoseRecord::from(&p.peduncle),
                })
                .collect(),
        };
        toml::to_string(&file).expect("task serializes")
    }

    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn from_text(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let parse_err = |message: String| ScenarioError::Parse {
            path: origin.to_string(),
            message,
        };
        let invalid = |message: String| ScenarioError::Validation {
            path: origin.to_string(),
            message,
        };
        let file: TaskFile = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if file.schema_version != TASK_SCHEMA_VERSION {
            return Err(parse_err(format!(
                "unsupported schema_version {} (expected {TASK_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let pose = |r: &PoseRecord, what: &str, i: usize| {
            Pose::try_from(r).map_err(|e: KinematicsError| parse_err(format!("pairs[{i}].{what}: {e}")))
        };
        let mut pairs = Vec::with_capacity(file.pairs.len());
        for (i, rec) in file.pairs.iter().enumerate() {
            pairs.push(TargetPair {
                pepper: pose(&rec.pepper, "pepper", i)?,
                peduncle: pose(&rec.peduncle, "peduncle", i)?,
            });
        }
        let task = Task {
            id: file.id,
            seed: file.seed,
            peduncle_offset: file.peduncle_offset,
            pairs,
            obstacles: file.obstacles,
        };
        task.validate().map_err(invalid)?;
        Ok(task)
    }

    /// Checks that peppers lie in the ridge and peduncles sit at the offset.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.peduncle_offset.is_finite() && self.peduncle_offset > 0.0) {
            return Err("peduncle_offset must be > 0".into());
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            if let Some(ridge) = &self.obstacles.ridge {
                if !ridge_contains(ridge, pair.pepper.translation()) {
                    return Err(format!("pairs[{i}].pepper lies outside the ridge"));
                }
            }
            let e = pose_error(&peduncle_frame(&pair.pepper, self.peduncle_offset), &pair.peduncle);
            if !e.within(PEDUNCLE_TOLERANCE, PEDUNCLE_TOLERANCE) {
                return Err(format!(
                    "pairs[{i}].peduncle is not the pepper frame offset by {} m along its y axis",
                    self.peduncle_offset
                ));
            }
        }
        Ok(())
    }
}

pub fn save_task(task: &Task, path: &Path) -> Result<(), ScenarioError> {
    std::fs::write(path, task.to_text()).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_task(path: &Path) -> Result<Task, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Task::from_text(&text, &path.display().to_string())
}
