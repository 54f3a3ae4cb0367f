//! Design search: the discretized design grid, a memoized objective, global
//! best particle swarm optimization, sample-average objectives and design
//! evaluation reports.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dualarm::{dual_task_evaluation, DesignParams, PairOutcome};
use crate::kinematics::KinematicChain;
use crate::metrics::Criterion;
use crate::scenario::Task;
use crate::seed::stream;
use crate::smm::SmmParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid grid axis `{axis}`: {reason}")]
    Grid { axis: &'static str, reason: String },
    #[error("invalid swarm parameters: {0}")]
    Pso(String),
}

/// One discretized design coordinate, `min, min + step, …, max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub step: f64,
    pub max: f64,
}

impl Axis {
    pub fn new(min: f64, step: f64, max: f64) -> Self {
        Self { min, step, max }
    }

    fn validate(&self, axis: &'static str) -> Result<(), OptimizerError> {
        let err = |reason: &str| OptimizerError::Grid {
            axis,
            reason: reason.to_string(),
        };
        if ![self.min, self.step, self.max].iter().all(|v| v.is_finite()) {
            return Err(err("values must be finite"));
        }
        if self.step <= 0.0 {
            return Err(err("step must be > 0"));
        }
        if self.min > self.max {
            return Err(err("min must be <= max"));
        }
        let t = (self.max - self.min) / self.step;
        if (t - t.round()).abs() > 1e-9 * t.max(1.0) {
            return Err(err("max - min must be a whole number of steps"));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Nearest grid index; exact half-step ties go to the lower index.
    pub fn index_of(&self, v: f64) -> usize {
        let t = (v - self.min) / self.step;
        if t.is_nan() {
            return 0;
        }
        let i = (t - 0.5).ceil();
        i.clamp(0.0, (self.count() - 1) as f64) as usize
    }

    pub fn value(&self, index: usize) -> f64 {
        if index + 1 >= self.count() {
            self.max
        } else {
            self.min + index as f64 * self.step
        }
    }

    fn to_degrees(self) -> Self {
        Self::new(self.min.to_degrees(), self.step.to_degrees(), self.max.to_degrees())
    }

    fn to_radians(self) -> Self {
        Self::new(self.min.to_radians(), self.step.to_radians(), self.max.to_radians())
    }
}

/// Grid point as per-axis indices in (x, y, z, θ, ξ) order.
pub type GridIndex = [usize; 5];

/// Design grid. Linear axes in meters; angular axes stored in radians and
/// written in degrees in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct GridSpec {
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
    pub theta: Axis,
    pub xi: Axis,
}

/// File form of [`GridSpec`]: angles in degrees.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    x: Axis,
    y: Axis,
    z: Axis,
    theta_deg: Axis,
    xi_deg: Axis,
}

impl TryFrom<GridFile> for GridSpec {
    type Error = OptimizerError;

    fn try_from(f: GridFile) -> Result<Self, Self::Error> {
        f.theta_deg.validate("theta_deg")?;
        f.xi_deg.validate("xi_deg")?;
        GridSpec::new(f.x, f.y, f.z, f.theta_deg.to_radians(), f.xi_deg.to_radians())
    }
}

impl From<GridSpec> for GridFile {
    fn from(g: GridSpec) -> Self {
        Self {
            x: g.x,
            y: g.y,
            z: g.z,
            theta_deg: g.theta.to_degrees(),
            xi_deg: g.xi.to_degrees(),
        }
    }
}

impl Default for GridSpec {
    /// x ∈ [−5, 70] cm, y ∈ [20, 50] cm, z ∈ [20, 100] cm in 2.5 cm steps;
    /// θ, ξ ∈ [−90°, 90°] in 5° steps.
    fn default() -> Self {
        let angle = Axis::new(-90.0, 5.0, 90.0).to_radians();
        Self {
            x: Axis::new(-0.05, 0.025, 0.70),
            y: Axis::new(0.20, 0.025, 0.50),
            z: Axis::new(0.20, 0.025, 1.00),
            theta: angle,
            xi: angle,
        }
    }
}

impl GridSpec {
    pub fn new(x: Axis, y: Axis, z: Axis, theta: Axis, xi: Axis) -> Result<Self, OptimizerError> {
        let g = Self { x, y, z, theta, xi };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        for (name, a) in self.named_axes() {
            a.validate(name)?;
        }
        Ok(())
    }

    fn named_axes(&self) -> [(&'static str, &Axis); 5] {
        [
            ("x", &self.x),
            ("y", &self.y),
            ("z", &self.z),
            ("theta", &self.theta),
            ("xi", &self.xi),
        ]
    }

    pub fn axes(&self) -> [&Axis; 5] {
        [&self.x, &self.y, &self.z, &self.theta, &self.xi]
    }

    pub fn point_count(&self) -> usize {
        self.axes().iter().map(|a| a.count()).product()
    }

    pub fn index_of(&self, rho: &DesignParams) -> GridIndex {
        let v = rho.to_array();
        let a = self.axes();
        [0, 1, 2, 3, 4].map(|i| a[i].index_of(v[i]))
    }

    pub fn design_at(&self, index: &GridIndex) -> DesignParams {
        let a = self.axes();
        DesignParams::from_array([0, 1, 2, 3, 4].map(|i| a[i].value(index[i])))
    }

    /// Lower and upper corners of the continuous search box.
    pub fn bounds(&self) -> ([f64; 5], [f64; 5]) {
        let a = self.axes();
        ([0, 1, 2, 3, 4].map(|i| a[i].min), [0, 1, 2, 3, 4].map(|i| a[i].max))
    }

    /// All grid points in lexicographic index order.
    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        let counts = self.axes().map(|a| a.count());
        let total = self.point_count();
        (0..total).map(move |mut k| {
            let mut idx = [0usize; 5];
            for d in (0..5).rev() {
                idx[d] = k % counts[d];
                k /= counts[d];
            }
            idx
        })
    }
}

pub fn snap_to_grid(rho: &DesignParams, grid: &GridSpec) -> DesignParams {
    grid.design_at(&grid.index_of(rho))
}

/// Objective result: a score, or a failure message (scored as 0).
pub type ObjectiveResult = Result<f64, String>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoEntry {
    pub value: f64,
    /// Queries answered from the cache for this point.
    pub hits: usize,
    /// Order in which the point was first computed.
    pub order: usize,
}

/// Grid-keyed cache in front of an objective. Each query is snapped; the
/// first query of a grid point computes it, later ones are hits.
pub struct MemoizedObjective<F> {
    objective: F,
    grid: GridSpec,
    cache: Mutex<HashMap<GridIndex, MemoEntry>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<F> MemoizedObjective<F>
where
    F: Fn(&DesignParams) -> ObjectiveResult + Sync,
{
    pub fn new(objective: F, grid: GridSpec) -> Self {
        Self {
            objective,
            grid,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    fn compute(&self, index: &GridIndex) -> f64 {
        let design = self.grid.design_at(index);
        match (self.objective)(&design) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                log::warn!("objective returned {v} at {design}; scoring 0");
                0.0
            }
            Err(e) => {
                log::warn!("objective failed at {design}: {e}; scoring 0");
                0.0
            }
        }
    }

    pub fn evaluate(&self, rho: &DesignParams) -> f64 {
        self.evaluate_batch(std::slice::from_ref(rho))[0]
    }

    /// Evaluates a batch; points not yet cached are computed in parallel,
    /// and hit/miss accounting follows the batch order.
    pub fn evaluate_batch(&self, designs: &[DesignParams]) -> Vec<f64> {
        let keys: Vec<GridIndex> = designs.iter().map(|d| self.grid.index_of(d)).collect();
        let mut fresh: Vec<GridIndex> = Vec::new();
        {
            let cache = self.cache.lock().expect("memo lock");
            for k in &keys {
                if !cache.contains_key(k) && !fresh.contains(k) {
                    fresh.push(*k);
                }
            }
        }
        let computed: Vec<(GridIndex, f64)> =
            fresh.par_iter().map(|k| (*k, self.compute(k))).collect();
        let mut cache = self.cache.lock().expect("memo lock");
        for (k, v) in computed {
            let order = cache.len();
            cache.insert(
                k,
                MemoEntry {
                    value: v,
                    hits: 0,
                    order,
                },
            );
        }
        let mut seen_fresh: Vec<GridIndex> = Vec::new();
        keys.iter()
            .map(|k| {
                let entry = cache.get_mut(k).expect("computed above");
                if fresh.contains(k) && !seen_fresh.contains(k) {
                    seen_fresh.push(*k);
                    self.misses.fetch_add(1, Ordering::SeqCst);
                } else {
                    entry.hits += 1;
                    self.hits.fetch_add(1, Ordering::SeqCst);
                }
                entry.value
            })
            .collect()
    }

    /// Cached points in first-computed order.
    pub fn entries(&self) -> Vec<(GridIndex, MemoEntry)> {
        let cache = self.cache.lock().expect("memo lock");
        let mut v: Vec<_> = cache.iter().map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|(_, e)| e.order);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoParams {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia_weight: f64,
    pub cognitive_coeff: f64,
    pub social_coeff: f64,
    pub seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            iterations: 10,
            inertia_weight: 0.5,
            cognitive_coeff: 2.0,
            social_coeff: 2.0,
            seed: 0,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.swarm_size < 2 {
            return Err(OptimizerError::Pso("swarm_size must be >= 2".into()));
        }
        if self.iterations < 1 {
            return Err(OptimizerError::Pso("iterations must be >= 1".into()));
        }
        let coeffs = [self.inertia_weight, self.cognitive_coeff, self.social_coeff];
        if !coeffs.iter().all(|c| c.is_finite() && *c >= 0.0) {
            return Err(OptimizerError::Pso("coefficients must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoResult {
    pub best: DesignParams,
    pub best_index: GridIndex,
    pub score: f64,
    /// Global best score after initialization and after each iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

/// Global-best PSO, maximizing. Positions move in the continuous box and
/// are snapped to the grid for evaluation; velocities are clamped to half
/// the axis range. All randomness comes from one stream seeded by
/// `params.seed`, so results do not depend on evaluation parallelism.
pub fn pso_optimize<F>(objective: &MemoizedObjective<F>, params: &PsoParams) -> Result<PsoResult, OptimizerError>
where
    F: Fn(&DesignParams) -> ObjectiveResult + Sync,
{
    params.validate()?;
    let grid = objective.grid();
    grid.validate()?;
    let (lo, hi) = grid.bounds();
    let vmax: [f64; 5] = [0, 1, 2, 3, 4].map(|d| 0.5 * (hi[d] - lo[d]));
    let mut rng = stream(params.seed);

    let n = params.swarm_size;
    let mut pos: Vec<[f64; 5]> = (0..n)
        .map(|_| [0, 1, 2, 3, 4].map(|d| uniform(&mut rng, lo[d], hi[d])))
        .collect();
    let mut vel: Vec<[f64; 5]> = (0..n)
        .map(|_| [0, 1, 2, 3, 4].map(|d| uniform(&mut rng, -vmax[d], vmax[d])))
        .collect();

    let evaluate = |pos: &[[f64; 5]]| -> Vec<f64> {
        let designs: Vec<DesignParams> = pos.iter().map(|p| DesignParams::from_array(*p)).collect();
        objective.evaluate_batch(&designs)
    };

    let mut scores = evaluate(&pos);
    let mut pbest = pos.clone();
    let mut pbest_score = scores.clone();
    let mut g = 0;
    for i in 1..n {
        if pbest_score[i] > pbest_score[g] {
            g = i;
        }
    }
    let mut gbest = pbest[g];
    let mut gbest_score = pbest_score[g];
    let mut trace = vec![gbest_score];

    for _ in 0..params.iterations {
        for i in 0..n {
            for d in 0..5 {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = params.inertia_weight * vel[i][d]
                    + params.cognitive_coeff * r1 * (pbest[i][d] - pos[i][d])
                    + params.social_coeff * r2 * (gbest[d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                let x = pos[i][d] + vel[i][d];
                if x < lo[d] || x > hi[d] {
                    pos[i][d] = x.clamp(lo[d], hi[d]);
                    vel[i][d] = 0.0;
                } else {
                    pos[i][d] = x;
                }
            }
        }
        scores = evaluate(&pos);
        for i in 0..n {
            if scores[i] > pbest_score[i] {
                pbest_score[i] = scores[i];
                pbest[i] = pos[i];
            }
            if scores[i] > gbest_score {
                gbest_score = scores[i];
                gbest = pos[i];
            }
        }
        trace.push(gbest_score);
    }

    let best_index = grid.index_of(&DesignParams::from_array(gbest));
    Ok(PsoResult {
        best: grid.design_at(&best_index),
        best_index,
        score: gbest_score,
        trace,
        evaluations: objective.misses(),
        cache_hits: objective.hits(),
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Sample-average objective: the mean of `per_task` over the seeds. Values
/// are summed in sorted order, so the result is independent of seed order.
pub fn expected_objective<F>(seeds: &[u64], per_task: F) -> f64
where
    F: Fn(u64) -> f64 + Sync,
{
    if seeds.is_empty() {
        return 0.0;
    }
    let mut values: Vec<f64> = seeds.par_iter().map(|s| per_task(*s)).collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / seeds.len() as f64
}

/// Success rate and mean score of one design on one task.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub task_id: String,
    pub design: DesignParams,
    /// Percent of pairs with both feasible sets nonempty.
    pub success_rate: f64,
    /// Mean min-combined score over reached pairs.
    pub mean_density: f64,
    pub pairs: Option<Vec<PairOutcome>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignEvaluation {
    pub design: DesignParams,
    pub per_task: Vec<EvaluationReport>,
    /// Means over all tasks; `None` for an empty task list.
    pub aggregate: Option<(f64, f64)>,
}

impl DesignEvaluation {
    /// (mean density, success rate) averaged over `per_task[from..]`.
    pub fn mean_over(&self, from: usize) -> Option<(f64, f64)> {
        let rest = self.per_task.get(from..).filter(|r| !r.is_empty())?;
        let n = rest.len() as f64;
        Some((
            rest.iter().map(|r| r.mean_density).sum::<f64>() / n,
            rest.iter().map(|r| r.success_rate).sum::<f64>() / n,
        ))
    }
}

pub fn report_from_pairs(task_id: &str, design: DesignParams, pairs: Vec<PairOutcome>, keep_pairs: bool) -> EvaluationReport {
    let reached: Vec<f64> = pairs.iter().filter(|p| p.reached()).map(|p| p.combined()).collect();
    let success_rate = if pairs.is_empty() {
        0.0
    } else {
        100.0 * reached.len() as f64 / pairs.len() as f64
    };
    let mean_density = if reached.is_empty() {
        0.0
    } else {
        let mut sorted = reached.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.iter().sum::<f64>() / reached.len() as f64
    };
    EvaluationReport {
        task_id: task_id.to_string(),
        design,
        success_rate,
        mean_density,
        pairs: keep_pairs.then_some(pairs),
    }
}

/// Per-task and aggregate success rate and mean score of a design.
pub fn evaluate_design(
    rho: &DesignParams,
    tasks: &[Task],
    chain: &KinematicChain,
    criterion: Criterion,
    params: &SmmParams,
    keep_pairs: bool,
) -> DesignEvaluation {
    let per_task: Vec<EvaluationReport> = tasks
        .iter()
        .map(|t| {
            let e = dual_task_evaluation(rho, t, chain, criterion, params, true);
            report_from_pairs(&t.id, *rho, e.pairs, keep_pairs)
        })
        .collect();
    let mut out = DesignEvaluation {
        design: *rho,
        per_task,
        aggregate: None,
    };
    out.aggregate = out.mean_over(0);
    out
}

/// Named parameter bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reduced budget for a single workstation.
    #[default]
    Desk,
    /// Full-scale study settings.
    Paper,
}

impl Preset {
    pub fn n_targets(&self) -> usize {
        match self {
            Preset::Desk => 10,
            Preset::Paper => 20,
        }
    }

    pub fn pso(&self, seed: u64) -> PsoParams {
        let (swarm_size, iterations) = match self {
            Preset::Desk => (12, 6),
            Preset::Paper => (30, 10),
        };
        PsoParams {
            swarm_size,
            iterations,
            seed,
            ..PsoParams::default()
        }
    }

    pub fn smm(&self) -> SmmParams {
        match self {
            Preset::Desk => SmmParams {
                ik_restarts: 20,
                continuation_step: 0.05,
                ..SmmParams::default()
            },
            Preset::Paper => SmmParams::default(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset `{other}` (expected `desk` or `paper`)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic(c: [f64; 5]) -> impl Fn(&DesignParams) -> ObjectiveResult + Sync {
        move |d: &DesignParams| {
            let v = d.to_array();
            Ok(-(0..5).map(|i| (v[i] - c[i]).powi(2)).sum::<f64>())
        }
    }

    #[test]
    fn table_grid_shape() {
        let g = GridSpec::default();
        let counts = g.axes().map(|a| a.count());
        assert_eq!(counts, [31, 13, 33, 37, 37]);
        assert!((g.theta.step - 5f64.to_radians()).abs() < 1e-15);
        assert_eq!(g.point_count(), 31 * 13 * 33 * 37 * 37);
    }

    #[test]
    fn snapping_examples() {
        let g = GridSpec::default();
        let s = |x: f64| snap_to_grid(&DesignParams::from_array([x, 0.3, 0.5, 0.0, 0.0]), &g).x;
        assert!((s(0.31) - 0.30).abs() < 1e-12);
        assert_eq!(s(0.30), g.x.value(14));
        assert_eq!(s(5.0), 0.70);
        assert_eq!(s(-5.0), -0.05);
        // Exact half-step ties go to the lower index.
        let a = Axis::new(0.0, 0.25, 1.0);
        assert_eq!(a.index_of(0.125), 0);
        assert_eq!(a.index_of(0.375), 1);
        assert_eq!(a.index_of(0.3751), 2);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(
            Axis::new(0.0, 0.3, 1.0),
            Axis::new(0.0, 0.1, 1.0),
            Axis::new(0.0, 0.1, 1.0),
            Axis::new(0.0, 0.1, 1.0),
            Axis::new(0.0, 0.1, 1.0),
        )
        .is_err());
        assert!(Axis::new(0.0, 0.0, 1.0).validate("x").is_err());
        assert!(Axis::new(1.0, 0.1, 0.0).validate("x").is_err());
    }

    #[test]
    fn grid_file_uses_degrees() {
        let text = toml::to_string(&GridSpec::default()).unwrap();
        assert!(text.contains("theta_deg"));
        let back: GridSpec = toml::from_str(&text).unwrap();
        for (a, b) in back.axes().iter().zip(GridSpec::default().axes()) {
            assert!((a.min - b.min).abs() < 1e-12 && (a.step - b.step).abs() < 1e-12);
        }
    }

    #[test]
    fn memo_counts() {
        let g = GridSpec::default();
        let memo = MemoizedObjective::new(quadratic([0.3, 0.3, 0.5, 0.0, 0.0]), g.clone());
        let a = DesignParams::from_array([0.3, 0.3, 0.5, 0.0, 0.0]);
        let v1 = memo.evaluate(&a);
        let v2 = memo.evaluate(&a);
        assert_eq!((memo.misses(), memo.hits()), (1, 1));
        assert_eq!(v1, v2);
        memo.evaluate(&DesignParams::from_array([0.325, 0.3, 0.5, 0.0, 0.0]));
        assert_eq!(memo.misses(), 2);

        let memo = MemoizedObjective::new(quadratic([0.0; 5]), g.clone());
        let points: Vec<DesignParams> = (0..100)
            .map(|i| DesignParams::from_array([g.x.value(i % 7) + 0.001, 0.3, 0.5, 0.0, 0.0]))
            .collect();
        memo.evaluate_batch(&points[..50]);
        memo.evaluate_batch(&points[50..]);
        assert_eq!(memo.misses(), 7);
        assert_eq!(memo.hits(), 93);
        assert_eq!(memo.entries().len(), 7);
    }

    #[test]
    fn failed_objective_scores_zero() {
        let f = |d: &DesignParams| -> ObjectiveResult {
            if d.x > 0.3 {
                Err("boom".into())
            } else {
                Ok(f64::NAN)
            }
        };
        let memo = MemoizedObjective::new(f, GridSpec::default());
        assert_eq!(memo.evaluate(&DesignParams::from_array([0.5, 0.3, 0.5, 0.0, 0.0])), 0.0);
        assert_eq!(memo.evaluate(&DesignParams::from_array([0.0, 0.3, 0.5, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn constant_objective() {
        let memo = MemoizedObjective::new(|_: &DesignParams| Ok(1.5), GridSpec::default());
        let r = pso_optimize(&memo, &PsoParams::default()).unwrap();
        assert!(r.trace.iter().all(|v| *v == 1.5));
        assert_eq!(r.trace.len(), 11);
        assert_eq!(snap_to_grid(&r.best, memo.grid()), r.best);
    }

    #[test]
    fn minimal_swarm() {
        let memo = MemoizedObjective::new(quadratic([0.3, 0.3, 0.5, 0.0, 0.0]), GridSpec::default());
        let p = PsoParams {
            swarm_size: 2,
            iterations: 1,
            ..PsoParams::default()
        };
        let r = pso_optimize(&memo, &p).unwrap();
        assert_eq!(r.trace.len(), 2);
        assert!(r.evaluations <= 4);
        assert!(pso_optimize(&memo, &PsoParams { swarm_size: 1, ..p.clone() }).is_err());
        assert!(pso_optimize(&memo, &PsoParams { iterations: 0, ..p }).is_err());
    }

    #[test]
    fn sample_average() {
        assert_eq!(expected_objective(&[5], |s| s as f64 * 0.1), 0.5);
        let v = |s: u64| if s == 1 { 0.2 } else { 0.4 };
        assert!((expected_objective(&[1, 2], v) - 0.3).abs() < 1e-15);
        assert_eq!(expected_objective(&[1, 2, 3], |s| s as f64 / 7.0), expected_objective(&[3, 1, 2], |s| s as f64 / 7.0));
        assert_eq!(expected_objective(&[], |_| 1.0), 0.0);
    }

    #[test]
    fn report_arithmetic() {
        use crate::metrics::TargetScore;
        let s = |v: f64, reached: bool| TargetScore { score: v, reached };
        let pairs = vec![
            PairOutcome { arm_0: s(0.4, true), arm_1: Some(s(0.2, true)) },
            PairOutcome { arm_0: s(0.1, true), arm_1: Some(s(0.3, true)) },
            PairOutcome { arm_0: s(0.0, false), arm_1: Some(s(0.3, true)) },
            PairOutcome { arm_0: s(0.5, true), arm_1: Some(s(0.0, false)) },
        ];
        let r = report_from_pairs("t", DesignParams::expert(), pairs.clone(), false);
        assert_eq!(r.success_rate, 50.0);
        assert!((r.mean_density - 0.15).abs() < 1e-15);
        let mut rev = pairs;
        rev.reverse();
        let r2 = report_from_pairs("t", DesignParams::expert(), rev, false);
        assert_eq!(r.success_rate, r2.success_rate);
        assert_eq!(r.mean_density, r2.mean_density);
        let empty = report_from_pairs("t", DesignParams::expert(), vec![], false);
        assert_eq!((empty.success_rate, empty.mean_density), (0.0, 0.0));
    }

    #[test]
    fn presets() {
        let d = Preset::Desk;
        assert_eq!((d.n_targets(), d.pso(1).swarm_size, d.pso(1).iterations), (10, 12, 6));
        assert_eq!((d.smm().ik_restarts, d.smm().continuation_step), (20, 0.05));
        assert_eq!(Preset::Paper.pso(1).swarm_size, 30);
        assert_eq!("paper".parse::<Preset>().unwrap(), Preset::Paper);
    }

    proptest! {
        #[test]
        fn snapping_is_idempotent_and_bounded(v in prop::array::uniform5(-3.0f64..3.0)) {
            let g = GridSpec::default();
            let s = snap_to_grid(&DesignParams::from_array(v), &g);
            prop_assert_eq!(snap_to_grid(&s, &g), s);
            let (lo, hi) = g.bounds();
            let a = s.to_array();
            for d in 0..5 {
                prop_assert!(a[d] >= lo[d] && a[d] <= hi[d]);
            }
        }

        #[test]
        fn snapping_picks_nearest(x in -0.05f64..0.70) {
            let a = GridSpec::default().x;
            let s = a.value(a.index_of(x));
            for k in 0..a.count() {
                prop_assert!((s - x).abs() <= (a.value(k) - x).abs() + 1e-12);
            }
        }

        #[test]
        fn trace_is_monotone(seed in any::<u64>()) {
            let memo = MemoizedObjective::new(quadratic([0.2, 0.4, 0.6, 0.3, -0.2]), GridSpec::default());
            let p = PsoParams { swarm_size: 6, iterations: 4, seed, ..PsoParams::default() };
            let r = pso_optimize(&memo, &p).unwrap();
            prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(r.evaluations <= 6 * 5);
            prop_assert_eq!(*r.trace.last().unwrap(), r.score);
        }
    }
}
