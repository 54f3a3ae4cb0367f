//! Collision primitives and the configuration filter: joint limits,
//! self-collision, the ground plane and the ridge canopy.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointConfig, KinematicChain, KinematicsError, Pose};

/// Axis sampling resolution for capsule-ridge tests (m).
pub const RIDGE_SAMPLE_SPACING: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    /// `None` unless the radius is positive and all coordinates are finite.
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Option<Self> {
        let finite = a.iter().chain(b.iter()).all(|v| v.is_finite()) && radius.is_finite();
        (finite && radius > 0.0).then_some(Self { a, b, radius })
    }

    pub fn transformed(&self, pose: &Pose) -> Capsule {
        Capsule {
            a: pose.transform_point(&self.a),
            b: pose.transform_point(&self.b),
            radius: self.radius,
        }
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Capsule {
        Capsule {
            a: self.a + t,
            b: self.b + t,
            radius: self.radius,
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Closest distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

/// Signed clearance between two capsules; negative means penetration.
pub fn capsule_pair_distance(a: &Capsule, b: &Capsule) -> f64 {
    segment_distance(&a.a, &a.b, &b.a, &b.b) - a.radius - b.radius
}

/// Plane `normal · p = offset`; the forbidden side is `normal · p < offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Option<Self> {
        ((normal.norm() - 1.0).abs() <= 1e-9 && offset.is_finite())
            .then_some(Self { normal, offset })
    }

    /// Horizontal ground plane at height `z`.
    pub fn ground(z: f64) -> Self {
        Self {
            normal: Vector3::z(),
            offset: z,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn capsule_penetrates(&self, c: &Capsule) -> bool {
        self.signed_distance(&c.a).min(self.signed_distance(&c.b)) - c.radius < 0.0
    }
}

/// Ridge canopy: a half elliptic cylinder standing on the ground with its
/// length along world y. `width` is the full horizontal extent, `height`
/// the vertical semi-axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiEllipticCylinder {
    pub center: Vector3<f64>,
    pub height: f64,
    pub width: f64,
    pub length: f64,
}

impl SemiEllipticCylinder {
    pub fn new(center: Vector3<f64>, height: f64, width: f64, length: f64) -> Option<Self> {
        let ok = center.iter().all(|v| v.is_finite())
            && [height, width, length].iter().all(|v| v.is_finite() && *v > 0.0);
        ok.then_some(Self {
            center,
            height,
            width,
            length,
        })
    }

    /// Membership in the ridge grown by `margin` on every face (a negative
    /// margin shrinks it). Points below the base but within the margin are
    /// tested against the base cross-section.
    pub fn contains_with_margin(&self, p: &Vector3<f64>, margin: f64) -> bool {
        let d = p - self.center;
        if d.y.abs() > 0.5 * self.length + margin || d.z < -margin {
            return false;
        }
        let u = d.x / (0.5 * self.width + margin);
        let v = d.z.max(0.0) / (self.height + margin);
        u * u + v * v <= 1.0
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        ridge_contains(self, p)
    }
}

pub fn ridge_contains(ridge: &SemiEllipticCylinder, p: &Vector3<f64>) -> bool {
    let d = p - ridge.center;
    if d.y.abs() > 0.5 * ridge.length || d.z < 0.0 {
        return false;
    }
    let u = d.x / (0.5 * ridge.width);
    let v = d.z / ridge.height;
    u * u + v * v <= 1.0
}

/// Conservative capsule-ridge test: ridge grown by the capsule radius, axis
/// sampled at [`RIDGE_SAMPLE_SPACING`].
pub fn capsule_intersects_ridge(ridge: &SemiEllipticCylinder, c: &Capsule) -> bool {
    let steps = (c.length() / RIDGE_SAMPLE_SPACING).ceil().max(1.0) as usize;
    (0..=steps).any(|k| {
        let t = k as f64 / steps as f64;
        ridge.contains_with_margin(&(c.a + (c.b - c.a) * t), c.radius)
    })
}

/// Which capsules the ridge constrains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeScope {
    /// Only static shoulder capsules; moving links may enter the canopy.
    #[default]
    Shoulders,
    AllLinks,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub ground: Option<HalfSpace>,
    pub ridge: Option<SemiEllipticCylinder>,
    #[serde(default)]
    pub ridge_scope: RidgeScope,
}

impl ObstacleSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_ground(mut self, ground: HalfSpace) -> Self {
        self.ground = Some(ground);
        self
    }

    pub fn with_ridge(mut self, ridge: SemiEllipticCylinder) -> Self {
        self.ridge = Some(ridge);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ground.is_none() && self.ridge.is_none()
    }

    /// Capsule (with its shoulder flag) collides with the environment.
    pub fn capsule_violation(&self, c: &Capsule, shoulder: bool) -> Option<ObstacleKind> {
        if let Some(g) = &self.ground {
            if g.capsule_penetrates(c) {
                return Some(ObstacleKind::Ground);
            }
        }
        if let Some(r) = &self.ridge {
            let scoped = shoulder || self.ridge_scope == RidgeScope::AllLinks;
            if scoped && capsule_intersects_ridge(r, c) {
                return Some(ObstacleKind::Ridge);
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObstacleKind {
    Ground,
    Ridge,
}

/// First violated constraint category of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    JointLimit { joint: usize },
    SelfCollision { link_a: usize, link_b: usize },
    Ground { link: usize },
    Ridge { link: usize },
}

/// World-frame capsules of a chain at `q`, with link index and shoulder flag.
pub fn world_capsules(
    chain: &KinematicChain,
    q: &JointConfig,
) -> Result<Vec<(usize, Capsule, bool)>, KinematicsError> {
    let frames = chain.link_frames(q)?;
    Ok(chain
        .capsules()
        .iter()
        .map(|c| (c.link, c.capsule.transformed(&frames[c.link]), c.shoulder))
        .collect())
}

/// Returns the first violated constraint, checked in the order joint limits,
/// self-collision, ground, ridge; `None` when the configuration is free.
pub fn config_in_collision(
    chain: &KinematicChain,
    q: &JointConfig,
    obstacles: &ObstacleSet,
) -> Result<Option<Violation>, KinematicsError> {
    if q.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            found: q.len(),
        });
    }
    if let Some(joint) = chain.limit_violation(q) {
        return Ok(Some(Violation::JointLimit { joint }));
    }
    let caps = world_capsules(chain, q)?;
    for (i, (la, ca, _)) in caps.iter().enumerate() {
        for (lb, cb, _) in &caps[i + 1..] {
            if !chain.is_exempt(*la, *lb) && capsule_pair_distance(ca, cb) < 0.0 {
                return Ok(Some(Violation::SelfCollision {
                    link_a: *la,
                    link_b: *lb,
                }));
            }
        }
    }
    let mut ridge_hit = None;
    for (link, c, shoulder) in &caps {
        match obstacles.capsule_violation(c, *shoulder) {
            Some(ObstacleKind::Ground) => return Ok(Some(Violation::Ground { link: *link })),
            Some(ObstacleKind::Ridge) if ridge_hit.is_none() => {
                ridge_hit = Some(Violation::Ridge { link: *link })
            }
            _ => {}
        }
    }
    Ok(ridge_hit)
}
