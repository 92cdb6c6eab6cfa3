//! Property checks shared by the `properties` test target and the
//! acceptance harness. Each check runs a deterministic proptest runner and
//! returns the first counterexample as an error string.

use chainbound::bounds::{step_one_margin, theorem1_bound};
use chainbound::chaining::{
    build_chain, chain_sum_x, default_gamma, geometric_grid, k_profile, ChainOptions, Strategy as ChainStrategy,
    DEFAULT_RHOS,
};
use chainbound::metric::{numbered, CoveringCache, FiniteMetricSpace};
use chainbound::phi::{
    bphi_norm_mgf, fenchel_transform, gpsi_norm, LambdaGrid, MgfOptions, PhiFunction, PsiMomentScale,
};
use chainbound::sim::{FieldSampler, SamplerKind};
use chainbound::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

#[allow(dead_code)]
pub type Check = fn() -> Result<(), String>;

#[allow(dead_code)]
pub const ALL: [(&str, Check); 6] = [
    ("norm homogeneity", norm_homogeneity),
    ("triangle repair", triangle_repair),
    ("projection optimality", projection_optimality),
    ("X(u) monotonicity", x_monotonicity),
    ("report internal consistency", report_consistency),
    ("step-one convexity inequality", step_one_convexity),
];

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

/// Euclidean distances of random planar points, scaled to diameter ≤ 1.
fn planar_space(max_points: usize) -> impl Strategy<Value = FiniteMetricSpace> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..=max_points).prop_map(|pts| {
        let d = |i: usize, j: usize| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
        let n = pts.len();
        let diam = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| d(i, j)).fold(0.0, f64::max);
        let s = diam.max(1.0);
        FiniteMetricSpace::from_fn(numbered(n, 0), |i, j| d(i, j) / s).expect("planar distances are a metric")
    })
}

/// Points on a line with gaps spanning several scales, diameter ≤ 1.
fn clustered_line(max_points: usize) -> impl Strategy<Value = FiniteMetricSpace> {
    prop::collection::vec(-7.0..-0.5f64, 3..=max_points).prop_map(|log_gaps| {
        let mut x = vec![0.0];
        for g in &log_gaps {
            x.push(x.last().unwrap() + g.exp());
        }
        let s = x.last().unwrap().max(1.0);
        FiniteMetricSpace::from_fn(numbered(x.len(), 0), |i, j| (x[i] - x[j]).abs() / s)
            .expect("line distances are a metric")
    })
}

pub fn norm_homogeneity() -> Result<(), String> {
    let strategy = (any::<u64>(), prop_oneof![-5.0..-0.05f64, 0.05..5.0f64]);
    let psi = PsiMomentScale::new(PhiFunction::subgaussian());
    let phi = PhiFunction::subgaussian();
    run(24, strategy, |(seed, c)| {
        let x = FieldSampler::new(SamplerKind::Laplace(1), seed).map_err(fail)?.sample(2000).column(0);
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let g = gpsi_norm(&x, &psi, 8.0).map_err(fail)?.value;
        let gc = gpsi_norm(&cx, &psi, 8.0).map_err(fail)?.value;
        prop_assert!((gc - c.abs() * g).abs() <= 1e-12 * gc, "gpsi: {gc} vs {}", c.abs() * g);
        let grid = LambdaGrid::default_standardized();
        let b = bphi_norm_mgf(&x, &phi, &grid, MgfOptions::default()).map_err(fail)?.value;
        let bc = bphi_norm_mgf(&cx, &phi, &grid, MgfOptions::default()).map_err(fail)?.value;
        prop_assert!((bc - c.abs() * b).abs() <= 1e-9 * bc, "bphi: {bc} vs {}", c.abs() * b);
        Ok(())
    })
}

pub fn triangle_repair() -> Result<(), String> {
    let strategy = (planar_space(9), prop::collection::vec(0.0..4e-4f64, 81));
    run(64, strategy, |(space, noise)| {
        let n = space.len();
        let mut clean = space.clone();
        prop_assert_eq!(clean.repair_triangle(1e-3).map_err(fail)?, 0.0);
        prop_assert_eq!(&clean, &space);

        let labels = space.labels().to_vec();
        let noisy = FiniteMetricSpace::from_fn(labels, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            space.d(i, j) * (1.0 + noise[a * 9 + b])
        })
        .map_err(fail)?;
        let mut repaired = noisy.clone();
        repaired.repair_triangle(1e-3).map_err(fail)?;
        prop_assert!(repaired.triangle_defect() <= 1e-12, "defect {}", repaired.triangle_defect());
        for i in 0..n {
            for j in 0..n {
                prop_assert!(repaired.d(i, j) >= noisy.d(i, j));
                prop_assert!(repaired.d(i, j) <= noisy.d(i, j) * (1.0 + 1e-3) + 1e-12);
            }
        }

        if n >= 3 && space.d(0, 1) > 0.0 {
            let broken = FiniteMetricSpace::from_fn(space.labels().to_vec(), |i, j| {
                if (i, j) == (0, 1) || (i, j) == (1, 0) {
                    space.d(0, 2) + space.d(2, 1) + 0.5
                } else {
                    space.d(i, j)
                }
            })
            .map_err(fail)?;
            let mut b = broken.clone();
            prop_assert!(matches!(b.repair_triangle(1e-3), Err(Error::TriangleViolation(_))));
            prop_assert_eq!(b, broken);
        }
        Ok(())
    })
}

fn chain_case() -> impl Strategy<Value = (FiniteMetricSpace, usize, f64, bool)> {
    (prop_oneof![planar_space(12), clustered_line(12)], any::<prop::sample::Index>(), 0.05..1.0f64, any::<bool>())
        .prop_map(|(s, t, d, refine)| {
            let t0 = t.index(s.len());
            (s, t0, d, refine)
        })
}

fn strategy_of(refine: bool) -> ChainStrategy {
    if refine {
        ChainStrategy::GreedyRefine
    } else {
        ChainStrategy::DyadicNets
    }
}

pub fn projection_optimality() -> Result<(), String> {
    run(128, chain_case(), |(space, t0, delta, refine)| {
        let chain = build_chain(&space, t0, delta, strategy_of(refine)).map_err(fail)?;
        for (m, level) in chain.levels.iter().enumerate() {
            for (k, &t) in chain.ball.iter().enumerate() {
                let p = chain.projections[m][k];
                prop_assert!(level.contains(&p));
                for &s in level {
                    let (dp, ds) = (space.d(t, p), space.d(t, s));
                    prop_assert!(dp <= ds, "level {m}: d({t},{p}) = {dp} > d({t},{s}) = {ds}");
                    prop_assert!(dp < ds || p <= s, "tie at level {m} not broken to the lowest index");
                }
            }
        }
        for (k, &t) in chain.ball.iter().enumerate() {
            let last = chain.projections[chain.depth()][k];
            let path: f64 =
                (1..=chain.depth()).map(|m| space.d(chain.projections[m][k], chain.projections[m - 1][k])).sum();
            prop_assert!(space.d(t0, last) <= path + 1e-12);
            prop_assert_eq!(space.d(t, last), 0.0);
        }
        Ok(())
    })
}

pub fn x_monotonicity() -> Result<(), String> {
    let conj =
        fenchel_transform(&PhiFunction::subgaussian(), &geometric_grid(0.01, 20.0, 200)).map_err(|e| e.to_string())?;
    run(96, (chain_case(), 0.70..0.95f64), |((space, t0, delta, refine), rho)| {
        let chain = build_chain(&space, t0, delta, strategy_of(refine)).map_err(fail)?;
        let gamma = default_gamma(chain.depth(), rho).map_err(fail)?;
        let sizes = chain.level_sizes();
        let expect: f64 = (1..sizes.len()).map(|n| (sizes[n] * sizes[n - 1]) as f64).sum();
        prop_assert_eq!(chain_sum_x(&chain, &gamma, &conj, 0.0).map_err(fail)?, expect);
        let mut prev = expect;
        for i in 1..=40 {
            let x = chain_sum_x(&chain, &gamma, &conj, 0.5 * i as f64).map_err(fail)?;
            if chain.depth() > 0 {
                prop_assert!(x < prev, "X not decreasing at u = {}", 0.5 * i as f64);
            } else {
                prop_assert_eq!(x, 0.0);
            }
            prev = x;
        }
        Ok(())
    })
}

fn bound_case() -> impl Strategy<Value = (FiniteMetricSpace, f64, f64)> {
    (prop_oneof![planar_space(10), clustered_line(10)], 0.05..4.0f64, 0.5..8.0f64)
}

pub fn report_consistency() -> Result<(), String> {
    let conj =
        fenchel_transform(&PhiFunction::subgaussian(), &geometric_grid(0.01, 20.0, 200)).map_err(|e| e.to_string())?;
    let deltas = geometric_grid(0.01, 1.0, 16);
    run(48, bound_case(), |(space, c, u)| {
        let profile = k_profile(&space, &deltas, &[ChainStrategy::DyadicNets], &DEFAULT_RHOS, ChainOptions::default())
            .map_err(fail)?;
        let cover = CoveringCache::new(&space);
        let r = theorem1_bound(&cover, &profile, &conj, c, u).map_err(fail)?;
        prop_assert_eq!(r.bound.to_bits(), r.recompute().to_bits());
        prop_assert!(r.bound > 0.0 && r.bound.is_finite());
        prop_assert_eq!(r.two_sided(), 2.0 * r.bound);
        let inflated = theorem1_bound(&cover, &profile.inflated(1.2), &conj, c, u).map_err(fail)?;
        prop_assert!(inflated.bound >= r.bound, "inflating K lowered the bound: {} < {}", inflated.bound, r.bound);
        Ok(())
    })
}

/// φ*(αu) ≥ φ*(u) − C with α = 1 − CΔ̂(u), at every evaluated u ≥ u₀(C).
pub fn step_one_convexity() -> Result<(), String> {
    let conj =
        fenchel_transform(&PhiFunction::subgaussian(), &geometric_grid(0.01, 40.0, 300)).map_err(|e| e.to_string())?;
    let deltas = geometric_grid(0.001, 1.0, 24);
    run(48, (clustered_line(10), 0.05..4.0f64), |(space, c)| {
        let profile = k_profile(&space, &deltas, &[ChainStrategy::DyadicNets], &DEFAULT_RHOS, ChainOptions::default())
            .map_err(fail)?;
        let cover = CoveringCache::new(&space);
        for i in 1..=60 {
            let u = 0.5 * i as f64;
            let r = theorem1_bound(&cover, &profile, &conj, c, u).map_err(fail)?;
            let Some(u0) = r.u0 else { break };
            if u < u0 {
                continue;
            }
            let margin = step_one_margin(&r, &conj).map_err(fail)?;
            prop_assert!(margin >= -1e-9, "C = {c}, u = {u} (u0 = {u0:.3}), Δ = {}: margin {margin}", r.delta_used);
        }
        Ok(())
    })
}
