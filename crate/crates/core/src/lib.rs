//! Base placement optimization for mirrored redundant dual-arm robots.
//!
//! The pipeline scores a candidate mounting design by computing, for every
//! target pose of a task, the full self-motion manifold of a 7-DOF arm,
//! filtering it against joint limits and obstacles, and reducing the
//! feasible configurations to a manipulability score. A particle swarm then
//! searches a discretized design grid with a memoized objective.
//!
//! Modules, bottom-up:
//!
//! - [`kinematics`]: poses, serial chains, Jacobians, robot description files
//! - [`collision`]: capsules, ground plane, ridge canopy, configuration filter
//! - [`smm`]: self-motion manifold generation by null-space continuation
//! - [`metrics`]: Yoshikawa manipulability, feasible sets, density
//! - [`dualarm`]: mirrored base transforms and the dual-arm task metric
//! - [`scenario`]: ridge environment, pepper sampling, task files
//! - [`optimizer`]: design grid, memoization, PSO, evaluation reports

pub mod collision;
pub mod dualarm;
pub mod kinematics;
pub mod metrics;
pub mod optimizer;
pub mod scenario;
pub mod seed;
pub mod smm;
