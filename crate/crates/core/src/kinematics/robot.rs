//! Robot description file.
//!
//! TOML document, schema version 1:
//!
//! ```toml
//! schema_version = 1
//! name = "..."
//! self_collision_exempt = [[0, 1], ...]   # link index pairs
//!
//! [[joints]]                 # ordered base → tip
//! name = "joint1"
//! xyz = [x, y, z]            # m, origin offset in the parent link frame
//! rpy = [r, p, y]            # rad, URDF roll/pitch/yaw
//! axis = [ax, ay, az]        # unit rotation axis in the joint frame
//! lower = -3.14              # rad
//! upper = 3.14               # rad
//!
//! [tool]
//! xyz = [...]
//! rpy = [...]
//!
//! [[capsules]]
//! name = "upper_arm"
//! link = 2                   # 0 = base, i = frame after joint i
//! a = [...]                  # m, endpoint in the link frame
//! b = [...]
//! radius = 0.05              # m
//! shoulder = false           # static shoulder geometry (ridge-checked)
//! ```

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Joint, KinematicChain, KinematicsError, LinkCapsule, Pose};
use crate::collision::Capsule;

pub const ROBOT_SCHEMA_VERSION: u32 = 1;

/// The shipped approximate xArm7 description.
pub const XARM7_APPROX: &str = include_str!("../../robots/xarm7_approx.toml");

#[derive(Debug, Error)]
pub enum RobotConfigError {
    #[error("cannot read robot description {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed robot description: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported robot schema version {found} (expected {ROBOT_SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("invalid robot description: {0}")]
    Invalid(#[from] KinematicsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    pub name: String,
    pub link: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
    #[serde(default)]
    pub shoulder: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub self_collision_exempt: Vec<[usize; 2]>,
    pub joints: Vec<JointSpec>,
    pub tool: FrameSpec,
    #[serde(default)]
    pub capsules: Vec<CapsuleSpec>,
}

impl RobotDescription {
    pub fn parse(text: &str) -> Result<Self, RobotConfigError> {
        let desc: RobotDescription = toml::from_str(text)?;
        if desc.schema_version != ROBOT_SCHEMA_VERSION {
            return Err(RobotConfigError::SchemaVersion {
                found: desc.schema_version,
            });
        }
        Ok(desc)
    }

    pub fn load(path: &Path) -> Result<Self, RobotConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RobotConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_chain(&self) -> Result<KinematicChain, RobotConfigError> {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                Joint::new(
                    j.name.clone(),
                    Pose::from_xyz_rpy(j.xyz, j.rpy),
                    Vector3::from(j.axis),
                    j.lower,
                    j.upper,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let capsules = self
            .capsules
            .iter()
            .map(|c| {
                let capsule = Capsule::new(Vector3::from(c.a), Vector3::from(c.b), c.radius)
                    .ok_or_else(|| {
                        KinematicsError::InvalidChain(format!(
                            "capsule `{}` must have a positive finite radius",
                            c.name
                        ))
                    })?;
                Ok(LinkCapsule {
                    name: c.name.clone(),
                    link: c.link,
                    capsule,
                    shoulder: c.shoulder,
                })
            })
            .collect::<Result<Vec<_>, KinematicsError>>()?;
        let exempt = self
            .self_collision_exempt
            .iter()
            .map(|p| (p[0], p[1]))
            .collect();
        let tool = Pose::from_xyz_rpy(self.tool.xyz, self.tool.rpy);
        Ok(KinematicChain::new(self.name.clone(), joints, tool).with_geometry(capsules, exempt)?)
    }
}

pub fn load_chain(path: &Path) -> Result<KinematicChain, RobotConfigError> {
    RobotDescription::load(path)?.to_chain()
}

/// The shipped approximate xArm7 chain.
pub fn xarm7_approx() -> KinematicChain {
    RobotDescription::parse(XARM7_APPROX)
        .and_then(|d| d.to_chain())
        .expect("shipped robot description is valid")
}
