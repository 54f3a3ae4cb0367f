//! Manipulability, manifold filtering, and the single-arm task metric
//! (generate, filter, reduce).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{config_in_collision, ObstacleSet};
use crate::kinematics::{Jacobian, JointConfig, KinematicChain, Pose};
use crate::smm::{generate_smm, SelfMotionManifold, SmmParams};

/// Products of singular values below this are reported as exactly 0.
pub const MANIPULABILITY_FLOOR: f64 = 1e-12;

/// How a feasible set is reduced to a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Arc-length mean of manipulability over the feasible set.
    Density,
    /// Largest manipulability over the feasible set.
    Max,
}

impl Criterion {
    /// Short label: `md` or `m`.
    pub fn label(&self) -> &'static str {
        match self {
            Criterion::Density => "md",
            Criterion::Max => "m",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "density" => Ok(Criterion::Density),
            "m" | "max" | "manipulability" => Ok(Criterion::Max),
            other => Err(format!("unknown criterion `{other}` (expected `m` or `md`)")),
        }
    }
}

/// Yoshikawa measure `√det(J Jᵀ)`, computed as the product of the six
/// singular values.
pub fn manipulability(jacobian: &Jacobian) -> f64 {
    let m = jacobian.matrix();
    if m.ncols() < m.nrows() {
        return 0.0;
    }
    let sv = m.transpose().singular_values();
    let mu: f64 = sv.iter().product();
    if mu.is_finite() && mu >= MANIPULABILITY_FLOOR {
        mu
    } else {
        0.0
    }
}

pub fn manipulability_at(chain: &KinematicChain, q: &JointConfig) -> f64 {
    chain
        .geometric_jacobian(q)
        .map(|j| manipulability(&j))
        .unwrap_or(0.0)
}

/// A maximal run of consecutive feasible samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleArc {
    pub samples: Vec<JointConfig>,
    /// The whole source component survived; the seam segment counts.
    pub closed: bool,
}

impl FeasibleArc {
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

    fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.samples.len();
        let seam = (self.closed && n > 2).then_some((n - 1, 0));
        (1..n).map(|i| (i - 1, i)).chain(seam)
    }
}

/// Manifold samples that pass every filter constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleSet {
    pub components: Vec<FeasibleArc>,
    pub total_arc_length: f64,
    /// Weight of an isolated feasible sample (joint-space rad).
    pub point_weight: f64,
}

impl FeasibleSet {
    pub fn empty(point_weight: f64) -> Self {
        Self {
            components: Vec::new(),
            total_arc_length: 0.0,
            point_weight,
        }
    }

    /// Unfiltered view of a manifold.
    pub fn from_manifold(smm: &SelfMotionManifold) -> Self {
        Self::from_arcs(
            smm.components
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| FeasibleArc {
                    samples: c.samples.clone(),
                    closed: c.closed,
                })
                .collect(),
            smm.dedupe_radius,
        )
    }

    pub fn from_arcs(components: Vec<FeasibleArc>, point_weight: f64) -> Self {
        let total_arc_length = components.iter().map(|a| a.arc_length()).sum();
        Self {
            components,
            total_arc_length,
            point_weight,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.components.iter().all(|a| a.samples.is_empty())
    }

    pub fn sample_count(&self) -> usize {
        self.components.iter().map(|a| a.samples.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &JointConfig> {
        self.components.iter().flat_map(|a| a.samples.iter())
    }
}

/// Keeps the collision-free samples of `smm`, split into maximal runs. For a
/// closed component the runs on either side of the seam are joined.
/// Evaluation errors count as infeasible.
pub fn filter_manifold(
    smm: &SelfMotionManifold,
    chain: &KinematicChain,
    obstacles: &ObstacleSet,
) -> FeasibleSet {
    let mut arcs = Vec::new();
    for component in &smm.components {
        let keep: Vec<bool> = component
            .samples
            .iter()
            .map(|q| matches!(config_in_collision(chain, q, obstacles), Ok(None)))
            .collect();
        arcs.extend(split_runs(&component.samples, &keep, component.closed));
    }
    FeasibleSet::from_arcs(arcs, smm.dedupe_radius)
}

fn split_runs(samples: &[JointConfig], keep: &[bool], closed: bool) -> Vec<FeasibleArc> {
    let n = samples.len();
    if keep.iter().all(|k| *k) {
        return if n == 0 {
            Vec::new()
        } else {
            vec![FeasibleArc {
                samples: samples.to_vec(),
                closed,
            }]
        };
    }
    // Open runs start after a rejected sample; on a closed curve start the
    // scan just past one so the seam is never a run boundary.
    let start = if closed {
        (0..n).find(|&i| !keep[i]).map_or(0, |i| i + 1)
    } else {
        0
    };
    let order: Vec<usize> = if closed {
        (0..n).map(|k| (start + k) % n).collect()
    } else {
        (0..n).collect()
    };
    let mut arcs = Vec::new();
    let mut run: Vec<JointConfig> = Vec::new();
    for i in order {
        if keep[i] {
            run.push(samples[i].clone());
        } else if !run.is_empty() {
            arcs.push(FeasibleArc {
                samples: std::mem::take(&mut run),
                closed: false,
            });
        }
    }
    if !run.is_empty() {
        arcs.push(FeasibleArc {
            samples: run,
            closed: false,
        });
    }
    arcs
}

/// Arc-length mean of manipulability by the trapezoid rule; isolated samples
/// count with weight `point_weight`. Empty sets score 0.
pub fn manipulability_density(feasible: &FeasibleSet, chain: &KinematicChain) -> f64 {
    let mut integral = 0.0;
    let mut measure = 0.0;
    for arc in &feasible.components {
        let mu: Vec<f64> = arc.samples.iter().map(|q| manipulability_at(chain, q)).collect();
        match mu.len() {
            0 => {}
            1 => {
                integral += feasible.point_weight * mu[0];
                measure += feasible.point_weight;
            }
            _ => {
                for (a, b) in arc.segments() {
                    let len = arc.samples[a].distance(&arc.samples[b]);
                    integral += 0.5 * len * (mu[a] + mu[b]);
                    measure += len;
                }
            }
        }
    }
    if measure > 0.0 {
        integral / measure
    } else {
        0.0
    }
}

pub fn max_manipulability(feasible: &FeasibleSet, chain: &KinematicChain) -> f64 {
    feasible
        .samples()
        .map(|q| manipulability_at(chain, q))
        .fold(0.0, f64::max)
}

pub fn criterion_score(feasible: &FeasibleSet, chain: &KinematicChain, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Density => manipulability_density(feasible, chain),
        Criterion::Max => max_manipulability(feasible, chain),
    }
}

/// Outcome of the single-arm pipeline for one target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetScore {
    pub score: f64,
    /// The feasible set was nonempty.
    pub reached: bool,
}

impl TargetScore {
    pub const ZERO: TargetScore = TargetScore {
        score: 0.0,
        reached: false,
    };
}

/// Generate, filter and reduce for one target, with `chain` mounted at
/// `base`. All degenerate outcomes map to a zero score.
pub fn evaluate_target<R: Rng + ?Sized>(
    chain: &KinematicChain,
    base: &Pose,
    target: &Pose,
    obstacles: &ObstacleSet,
    criterion: Criterion,
    params: &SmmParams,
    rng: &mut R,
) -> TargetScore {
    let mounted = chain.with_base(*base);
    let smm = match generate_smm(&mounted, target, params, rng) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("manifold generation failed: {e}");
            return TargetScore::ZERO;
        }
    };
    if smm.is_empty() {
        return TargetScore::ZERO;
    }
    let feasible = filter_manifold(&smm, &mounted, obstacles);
    if feasible.is_empty() {
        return TargetScore::ZERO;
    }
    let score = criterion_score(&feasible, &mounted, criterion);
    TargetScore {
        score: if score.is_finite() { score } else { 0.0 },
        reached: true,
    }
}

pub fn single_target_metric<R: Rng + ?Sized>(
    chain: &KinematicChain,
    base: &Pose,
    target: &Pose,
    obstacles: &ObstacleSet,
    criterion: Criterion,
    params: &SmmParams,
    rng: &mut R,
) -> f64 {
    evaluate_target(chain, base, target, obstacles, criterion, params, rng).score
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::HalfSpace;
    use crate::kinematics::robot::xarm7_approx;
    use crate::seed::stream;
    use crate::smm::ManifoldComponent;
    use crate::smm::TraceStop;
    use nalgebra::{DMatrix, Matrix6xX, SVD};
    use proptest::prelude::*;

    fn jac(m: DMatrix<f64>) -> Jacobian {
        Jacobian::from_matrix(Matrix6xX::from_fn(m.ncols(), |r, c| m[(r, c)]))
    }

    fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = stream(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    #[test]
    fn orthonormal_rows_score_one() {
        let q = random_orthogonal(7, 4);
        let rows = q.rows(0, 6).into_owned();
        assert!((manipulability(&jac(rows)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_row_scores_zero() {
        let mut m = DMatrix::from_fn(6, 7, |r, c| ((r * 7 + c) as f64).sin());
        let row = m.row(0).into_owned();
        m.set_row(3, &row);
        assert_eq!(manipulability(&jac(m)), 0.0);
    }

    #[test]
    fn chosen_singular_values() {
        // U diag(2, 1, 1, 1, 1, 0.5) Vᵀ with random orthogonal U (6×6), V (7×7).
        let u = random_orthogonal(6, 1);
        let v = random_orthogonal(7, 2);
        let mut s = DMatrix::zeros(6, 7);
        for (i, x) in [2.0, 1.0, 1.0, 1.0, 1.0, 0.5].iter().enumerate() {
            s[(i, i)] = *x;
        }
        let m = &u * s * v.transpose();
        let svd = SVD::new(m.clone(), false, false);
        assert!((svd.singular_values.iter().product::<f64>() - 1.0).abs() < 1e-12);
        assert!((manipulability(&jac(m)) - 1.0).abs() < 1e-12);
    }

    fn cfg(x: f64) -> JointConfig {
        JointConfig::from_slice(&[x, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn manifold(n: usize, closed: bool) -> SelfMotionManifold {
        SelfMotionManifold {
            target: Pose::identity(),
            chain_id: "t".into(),
            dedupe_radius: 0.05,
            components: vec![ManifoldComponent {
                samples: (0..n).map(|i| cfg(i as f64 * 0.01)).collect(),
                closed,
                ends: (TraceStop::Closed, TraceStop::Closed),
            }],
        }
    }

    #[test]
    fn closed_seam_merge() {
        let samples = manifold(100, true).components[0].samples.clone();
        let keep: Vec<bool> = (0..100).map(|i| !(10..20).contains(&i)).collect();
        let arcs = split_runs(&samples, &keep, true);
        // Oracle: survivors in cyclic order starting after the gap.
        let expected: Vec<JointConfig> = (20..100).chain(0..10).map(|i| samples[i].clone()).collect();
        assert_eq!(arcs.len(), 1);
        assert_eq!(arcs[0].samples, expected);
        assert!(!arcs[0].closed);
    }

    #[test]
    fn open_runs_split() {
        let samples = manifold(10, false).components[0].samples.clone();
        let keep = [true, true, false, true, false, false, true, true, true, false];
        let arcs = split_runs(&samples, &keep, false);
        let lens: Vec<usize> = arcs.iter().map(|a| a.samples.len()).collect();
        assert_eq!(lens, vec![2, 1, 3]);
        let arcs = split_runs(&samples, &keep, true);
        let lens: Vec<usize> = arcs.iter().map(|a| a.samples.len()).collect();
        assert_eq!(lens, vec![1, 3, 2]);
    }

    #[test]
    fn filter_pass_through_and_block_all() {
        let chain = xarm7_approx().with_base(Pose::from_translation(0.0, 0.0, 0.5));
        let q0 = JointConfig::from_slice(&[0.2, 0.4, 0.0, 1.0, 0.0, 0.6, 0.0]).unwrap();
        let target = chain.forward_kinematics(&q0).unwrap();
        let smm = generate_smm(&chain, &target, &SmmParams::default(), &mut stream(3)).unwrap();
        assert!(!smm.is_empty());
        let free = filter_manifold(&smm, &chain, &ObstacleSet::none());
        let all_free = smm
            .samples()
            .all(|q| config_in_collision(&chain, q, &ObstacleSet::none()).unwrap().is_none());
        if all_free {
            assert_eq!(free, FeasibleSet::from_manifold(&smm));
        }
        let sky = ObstacleSet::none().with_ground(HalfSpace::ground(10.0));
        assert!(filter_manifold(&smm, &chain, &sky).is_empty());
    }

    #[test]
    fn density_of_constant_and_two_arcs() {
        let chain = xarm7_approx();
        let q = JointConfig::from_slice(&[0.1, 0.5, 0.2, 1.1, 0.3, 0.8, 0.0]).unwrap();
        let c = manipulability_at(&chain, &q);
        let arc = FeasibleArc {
            samples: vec![q.clone(), q.clone()],
            closed: false,
        };
        // Zero-length arc of a repeated sample: no measure, so 0.
        assert_eq!(manipulability_density(&FeasibleSet::from_arcs(vec![arc], 0.05), &chain), 0.0);
        let single = FeasibleArc {
            samples: vec![q],
            closed: false,
        };
        let d = manipulability_density(&FeasibleSet::from_arcs(vec![single], 0.05), &chain);
        assert!((d - c).abs() < 1e-15);
        assert_eq!(manipulability_density(&FeasibleSet::empty(0.05), &chain), 0.0);
        assert_eq!(max_manipulability(&FeasibleSet::empty(0.05), &chain), 0.0);
    }

    /// Chain whose manipulability is a known function of q: a zero-length
    /// scaling cannot be injected, so use physical arcs with measured μ.
    #[test]
    fn density_matches_hand_trapezoid() {
        let chain = xarm7_approx();
        let arc = |q4: &[f64]| FeasibleArc {
            samples: q4
                .iter()
                .map(|x| JointConfig::from_slice(&[0.0, 0.3, 0.0, *x, 0.0, 0.5, 0.0]).unwrap())
                .collect(),
            closed: false,
        };
        let a = arc(&[0.8, 0.9, 1.0]);
        let b = arc(&[1.5, 1.6]);
        let mu = |x: f64| {
            manipulability_at(&chain, &JointConfig::from_slice(&[0.0, 0.3, 0.0, x, 0.0, 0.5, 0.0]).unwrap())
        };
        let integral = 0.1 * (mu(0.8) + mu(0.9)) / 2.0
            + 0.1 * (mu(0.9) + mu(1.0)) / 2.0
            + 0.1 * (mu(1.5) + mu(1.6)) / 2.0;
        let expected = integral / 0.3;
        let set = FeasibleSet::from_arcs(vec![a, b], 0.05);
        assert!((set.total_arc_length - 0.3).abs() < 1e-12);
        assert!((manipulability_density(&set, &chain) - expected).abs() < 1e-12);
    }

    #[test]
    fn max_is_finite_max() {
        let chain = xarm7_approx();
        let qs: Vec<JointConfig> = [0.3, 1.0, 2.0]
            .iter()
            .map(|x| JointConfig::from_slice(&[0.0, 0.3, 0.0, *x, 0.0, 0.5, 0.0]).unwrap())
            .collect();
        let expected = qs.iter().map(|q| manipulability_at(&chain, q)).fold(0.0, f64::max);
        let set = FeasibleSet::from_arcs(
            vec![FeasibleArc {
                samples: qs,
                closed: false,
            }],
            0.05,
        );
        assert_eq!(max_manipulability(&set, &chain), expected);
    }

    #[test]
    fn unreachable_target_scores_zero() {
        let chain = xarm7_approx();
        let s = single_target_metric(
            &chain,
            &Pose::identity(),
            &Pose::from_translation(50.0, 0.0, 0.0),
            &ObstacleSet::none(),
            Criterion::Density,
            &SmmParams::default(),
            &mut stream(0),
        );
        assert_eq!(s, 0.0);
    }

    #[test]
    fn max_criterion_without_obstacles_is_unfiltered_max() {
        let chain = xarm7_approx();
        let base = Pose::from_translation(0.0, 0.0, 0.4);
        let mounted = chain.with_base(base);
        let q0 = JointConfig::from_slice(&[0.4, 0.6, 0.1, 1.2, -0.3, 0.7, 0.2]).unwrap();
        let target = mounted.forward_kinematics(&q0).unwrap();
        let params = SmmParams::default();
        let smm = generate_smm(&mounted, &target, &params, &mut stream(9)).unwrap();
        let filtered = filter_manifold(&smm, &mounted, &ObstacleSet::none());
        let expected = max_manipulability(&filtered, &mounted);
        let got = single_target_metric(
            &chain,
            &base,
            &target,
            &ObstacleSet::none(),
            Criterion::Max,
            &params,
            &mut stream(9),
        );
        assert_eq!(got, expected);
        assert!(got > 0.0);
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("md".parse::<Criterion>().unwrap(), Criterion::Density);
        assert_eq!("m".parse::<Criterion>().unwrap(), Criterion::Max);
        assert!("x".parse::<Criterion>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn density_between_zero_and_max(
            q4 in prop::collection::vec(-0.1f64..3.8, 1..12),
            extra in prop::collection::vec(-0.1f64..3.8, 0..4),
        ) {
            let chain = xarm7_approx();
            let mk = |v: &[f64]| FeasibleArc {
                samples: v.iter()
                    .map(|x| JointConfig::from_slice(&[0.1, 0.4, 0.0, *x, 0.2, 0.5, 0.0]).unwrap())
                    .collect(),
                closed: false,
            };
            let set = FeasibleSet::from_arcs(vec![mk(&q4), mk(&extra)], 0.05);
            let d = manipulability_density(&set, &chain);
            let m = max_manipulability(&set, &chain);
            prop_assert!(d >= 0.0);
            prop_assert!(d <= m + 1e-15);
        }

        #[test]
        fn filtering_only_removes_samples(z in 0.0f64..1.2) {
            let chain = xarm7_approx().with_base(Pose::from_translation(0.0, 0.0, 0.6));
            let q0 = JointConfig::from_slice(&[0.2, 0.9, 0.0, 1.4, 0.0, 0.8, 0.0]).unwrap();
            let target = chain.forward_kinematics(&q0).unwrap();
            let params = SmmParams { ik_restarts: 6, ..SmmParams::default() };
            let smm = generate_smm(&chain, &target, &params, &mut stream(5)).unwrap();
            let base = filter_manifold(&smm, &chain, &ObstacleSet::none());
            let more = filter_manifold(&smm, &chain, &ObstacleSet::none().with_ground(HalfSpace::ground(z)));
            prop_assert!(more.sample_count() <= base.sample_count());
            for s in more.samples() {
                prop_assert!(base.samples().any(|b| b == s));
            }
            prop_assert!(max_manipulability(&more, &chain) <= max_manipulability(&base, &chain));
        }
    }
}
