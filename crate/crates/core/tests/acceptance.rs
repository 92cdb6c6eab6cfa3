//! Acceptance criteria, one PASS/FAIL line each. Pass criterion ids (e.g.
//! `cargo test --test acceptance -- 3 5`) to run a subset.

#[path = "support/props.rs"]
mod props;

use std::time::{Duration, Instant};

use chainbound::bounds::{
    martingale_block_bound, optimize_c, sum_phi, theorem1_bound, theorem2_bound, BlockPartition, MartingaleModel,
    SumMode, TailBoundReport,
};
use chainbound::chaining::{geometric_grid, k_profile, ChainOptions, KProfile, Strategy, DEFAULT_RHOS};
use chainbound::metric::{covering_number, numbered, CoverMode, CoveringCache, FiniteMetricSpace};
use chainbound::phi::{conjugate_residual, fenchel_transform, natural_phi, ConjugateTable, MgfOptions, PhiFunction};
use chainbound::sim::{
    example_a_phi, example_a_space, example_a_suprema, limsup_statistic_stream, normalized_sups,
    sample_poly_martingale, squared_exponential_cov, tail_window_start, EmpiricalTail, FieldSampler, SamplerKind,
    DEFAULT_CONFIDENCE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// At 0.2 the nearest-neighbour distance (0.079) exceeds 0.5 K0 and no
/// onset exists; 0.3 is the smallest tested lengthscale with one.
const SE_LENGTHSCALE: f64 = 0.3;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, summary: String::new(), details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("[{}] {line}", if ok { "ok" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("      {line}"));
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, Criterion, Duration); 8] = [
        ("1", "conjugate correctness", c1_conjugates, Duration::from_secs(5)),
        ("2", "covering-number oracle", c2_covering, Duration::from_secs(60)),
        ("3", "chaining oracle", c3_chaining, Duration::from_secs(600)),
        ("4", "covering bound dominance, Gaussian field", c4_gaussian, Duration::from_secs(900)),
        ("5", "subgaussian sequence tightness", c5_sequence, Duration::from_secs(1800)),
        ("6", "polynomial martingale identities and LIL", c6_martingale, Duration::from_secs(2700)),
        ("7", "normalized-sum bound consistency", c7_sums, Duration::from_secs(60)),
        ("8", "property suites", c8_properties, Duration::from_secs(300)),
    ];
    let mut failed = Vec::new();
    for (id, name, run, limit) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let mut out = run();
        let elapsed = start.elapsed();
        out.check(elapsed <= limit, format!("runtime {:.1} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()));
        println!(
            "criterion {id} ({name}): {} [{:.1} s] {}",
            if out.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            out.summary
        );
        for d in &out.details {
            println!("    {d}");
        }
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn conj_grid(hi: f64, step: f64) -> Vec<f64> {
    (0..=(hi / step).round() as usize).map(|i| i as f64 * step).collect()
}

fn c1_conjugates() -> Outcome {
    let mut o = Outcome::new();
    let sub = PhiFunction::subgaussian();
    let xs = conj_grid(10.0, 0.01);
    let table = fenchel_transform(&sub, &xs).unwrap();
    let err = xs.iter().map(|&x| (table.value(x).unwrap() - 0.5 * x * x).abs()).fold(0.0, f64::max);
    o.check(err <= 1e-6, format!("max |phi*(x) - x^2/2| on [0, 10] = {err:.2e}"));

    let lambdas: Vec<f64> = (1..100).map(|i| 0.05 * i as f64).collect();
    let mut cases: Vec<(String, PhiFunction, Vec<f64>)> = vec![("subgaussian".into(), sub, lambdas.clone())];
    for r in [1.5, 2.0, 3.0] {
        cases.push((format!("power-type r = {r}"), PhiFunction::power_type(r).unwrap(), lambdas.clone()));
    }
    let normals = FieldSampler::new(SamplerKind::GaussianCov(nalgebra_identity()), 101).unwrap().sample(100_000);
    let grid: Vec<f64> = (1..=60).map(|i| 0.05 * i as f64).collect();
    let natural = natural_phi(&normals, &grid, MgfOptions::default()).unwrap();
    let (g, _) = natural.table().unwrap();
    let interior = g[1..g.len() - 1].to_vec();
    o.note(format!("natural phi from 1e5 normals: lambda0 = {}", natural.lambda0()));
    cases.push(("natural (1e5 normals)".into(), natural, interior));
    for (name, phi, ls) in cases {
        let res = conjugate_residual(&phi, &ls).unwrap();
        o.check(res <= 1e-6, format!("Fenchel-Moreau residual, {name}: {res:.2e}"));
    }
    o
}

fn nalgebra_identity() -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(1, 1)
}

fn random_planar(rng: &mut ChaCha8Rng, n: usize) -> FiniteMetricSpace {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let d = |i: usize, j: usize| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
    let diam = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| d(i, j)).fold(0.0, f64::max);
    FiniteMetricSpace::from_fn(numbered(n, 0), |i, j| d(i, j) / diam.max(1.0)).unwrap()
}

/// Smallest number of closed balls, by trying every center set in order of size.
fn exhaustive_cover(space: &FiniteMetricSpace, eps: f64) -> usize {
    let n = space.len();
    let reach: Vec<u32> =
        (0..n).map(|c| (0..n).filter(|&t| space.d(c, t) <= eps).fold(0u32, |m, t| m | 1 << t)).collect();
    let full = (1u32 << n) - 1;
    (1..=n)
        .find(|&k| {
            (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == k)
                .any(|m| (0..n).filter(|c| m >> c & 1 == 1).fold(0, |acc, c| acc | reach[c]) == full)
        })
        .unwrap()
}

fn c2_covering() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut exact_ok, mut greedy_ok, mut cases) = (0, 0, 0);
    let ratio_cap = 1.0 + 12f64.ln();
    for _ in 0..200 {
        let space = random_planar(&mut rng, 12);
        let all = space.all();
        let mut dists: Vec<f64> =
            (0..12).flat_map(|i| (i + 1..12).map(move |j| (i, j))).map(|(i, j)| space.d(i, j)).collect();
        dists.sort_by(f64::total_cmp);
        for q in [0.1, 0.3, 0.5] {
            let eps = dists[(q * dists.len() as f64) as usize];
            let oracle = exhaustive_cover(&space, eps);
            let (exact, _) = covering_number(&space, &all, eps, CoverMode::Exact).unwrap();
            let (greedy, _) = covering_number(&space, &all, eps, CoverMode::Greedy).unwrap();
            cases += 1;
            exact_ok += (exact == oracle) as usize;
            greedy_ok += (greedy >= exact && greedy as f64 <= exact as f64 * ratio_cap) as usize;
        }
    }
    o.check(exact_ok == cases, format!("exact branch-and-bound = exhaustive on {exact_ok}/{cases} cases"));
    o.check(greedy_ok == cases, format!("greedy in [exact, exact (1 + ln 12)] on {greedy_ok}/{cases} cases"));
    o
}

/// `min_ρ max_{t₀} min_chain L` over every nested family of depth 1..=3
/// whose last level is the whole ball, with lowest-index projection ties.
fn exact_k(space: &FiniteMetricSpace, delta: f64) -> f64 {
    let n = space.len();
    let gammas: Vec<Vec<f64>> =
        DEFAULT_RHOS.iter().map(|&r| (1..=3).map(|m| 1.0 / (r.powi(m - 1) * (1.0 - r))).collect()).collect();
    let project = |t: usize, level: &[usize]| {
        let mut best = level[0];
        for &s in level {
            if space.d(t, s) < space.d(t, best) || (space.d(t, s) == space.d(t, best) && s < best) {
                best = s;
            }
        }
        best
    };
    let mut per_rho = Vec::new();
    for g in &gammas {
        let mut worst = 0.0f64;
        for t0 in 0..n {
            let ball: Vec<usize> = (0..n).filter(|&t| space.d(t0, t) <= delta).collect();
            let others: Vec<usize> = ball.iter().copied().filter(|&t| t != t0).collect();
            if others.is_empty() {
                continue;
            }
            let mut best = f64::INFINITY;
            for depth in 1..=3usize {
                let combos = depth.pow(others.len() as u32);
                for code in 0..combos {
                    let mut c = code;
                    let entry: Vec<usize> = others
                        .iter()
                        .map(|_| {
                            let e = c % depth + 1;
                            c /= depth;
                            e
                        })
                        .collect();
                    let levels: Vec<Vec<usize>> = (0..=depth)
                        .map(|m| {
                            let mut l = vec![t0];
                            l.extend(others.iter().zip(&entry).filter(|(_, &e)| e <= m).map(|(&t, _)| t));
                            l.sort_unstable();
                            l
                        })
                        .collect();
                    let l = ball
                        .iter()
                        .map(|&t| {
                            (1..=depth)
                                .map(|m| space.d(project(t, &levels[m]), project(t, &levels[m - 1])) / g[m - 1])
                                .sum::<f64>()
                        })
                        .fold(0.0, f64::max);
                    best = best.min(l);
                }
            }
            worst = worst.max(best);
        }
        per_rho.push(worst);
    }
    per_rho.into_iter().fold(f64::INFINITY, f64::min)
}

fn c3_chaining() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let deltas = geometric_grid(0.05, 1.0, 12);
    let opts = ChainOptions { max_depth: Some(3), ..ChainOptions::default() };
    let (mut below, mut ratios) = (0usize, Vec::new());
    for _ in 0..100 {
        let space = random_planar(&mut rng, 5);
        let profile =
            k_profile(&space, &deltas, &[Strategy::DyadicNets, Strategy::GreedyRefine], &DEFAULT_RHOS, opts).unwrap();
        for (i, &delta) in deltas.iter().enumerate() {
            let exact = exact_k(&space, delta);
            if profile.k_values[i] < exact || profile.raw_values[i] < exact - 1e-15 {
                below += 1;
            }
            if exact > 0.0 {
                ratios.push(profile.raw_values[i] / exact);
            }
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    o.check(below == 0, format!("K-hat >= exact inf at every grid delta ({below} violations in 1200)"));
    o.check(mean <= 2.0, format!("mean gap ratio {mean:.3} over {} (space, delta) pairs", ratios.len()));
    o.check(max <= 3.0, format!("max gap ratio {max:.3}"));
    o
}

struct BoundSetup<'a> {
    cover: CoveringCache<'a>,
    profile: KProfile,
    conj: ConjugateTable,
}

fn setup<'a>(space: &'a FiniteMetricSpace, phi: &PhiFunction, deltas: &[f64]) -> BoundSetup<'a> {
    BoundSetup {
        cover: CoveringCache::new(space),
        profile: k_profile(
            space,
            deltas,
            &[Strategy::DyadicNets, Strategy::GreedyRefine],
            &DEFAULT_RHOS,
            ChainOptions::default(),
        )
        .unwrap(),
        conj: fenchel_transform(phi, &conj_grid(12.0, 0.01)).unwrap(),
    }
}

fn c_grid() -> Vec<f64> {
    geometric_grid(0.02, 5.0, 40)
}

/// Checks the bound against the CI upper limit at every u ≥ u₀(C); rows
/// outside that range are reported but not scored.
fn dominance(o: &mut Outcome, reports: &[TailBoundReport], tail: &EmpiricalTail) {
    let mut scored = 0;
    for (r, row) in reports.iter().zip(&tail.rows) {
        let holds = r.bound >= row.ci_hi;
        let line = format!(
            "u = {}: bound {:.4e} (C = {:.3}, N = {}, u0 = {}) vs 99% CI upper {:.4e} (count {})",
            r.u,
            r.bound,
            r.c,
            r.covering_count,
            r.u0.map_or("none".into(), |v| format!("{v:.3}")),
            row.ci_hi,
            row.count
        );
        if r.u0.is_some_and(|u0| r.u >= u0) {
            scored += 1;
            o.check(holds, line);
        } else {
            o.note(format!("{line} [below onset, {}]", if holds { "dominates" } else { "does not dominate" }));
        }
    }
    o.check(scored > 0, format!("{scored} of {} u values at or above the onset", reports.len()));
}

fn c4_gaussian() -> Outcome {
    let mut o = Outcome::new();
    let cov = squared_exponential_cov(64, SE_LENGTHSCALE, 1.0);
    let space = FiniteMetricSpace::gaussian(&cov, 1.0).unwrap();
    let s = setup(&space, &PhiFunction::subgaussian(), &geometric_grid(0.01, 1.0, 40));
    let us = [2.5, 3.0, 3.5, 4.0];
    let reports: Vec<TailBoundReport> =
        us.iter().map(|&u| optimize_c(&s.cover, &s.profile, &s.conj, u, &c_grid()).unwrap()).collect();
    let sups = FieldSampler::new(SamplerKind::GaussianCov(cov), 4).unwrap().suprema(1_000_000);
    let tail = EmpiricalTail::from_suprema(&sups, &us).unwrap();
    o.note(format!("K0 = {:.4}, 1e6 replicates", s.profile.k0()));
    dominance(&mut o, &reports, &tail);
    o
}

fn c5_sequence() -> Outcome {
    let mut o = Outcome::new();
    let n_max = 4096;
    let space = example_a_space(n_max).unwrap();
    let t = Instant::now();
    let s = setup(&space, &example_a_phi(), &geometric_grid(0.05, 1.0, 24));
    o.note(format!("profile and conjugate built in {:.1} s; K0 = {:.4}", t.elapsed().as_secs_f64(), s.profile.k0()));
    let us = [3.0, 3.5, 4.0, 4.5, 5.0];
    let reports: Vec<TailBoundReport> =
        us.iter().map(|&u| optimize_c(&s.cover, &s.profile, &s.conj, u, &c_grid()).unwrap()).collect();
    let sups = example_a_suprema(n_max, 10_000_000, 5, us[0]).unwrap();
    let tail = EmpiricalTail::from_suprema(&sups, &us).unwrap();

    let mut a = Outcome::new();
    dominance(&mut a, &reports, &tail);
    let r5 = reports.last().unwrap();
    let ratio = -r5.bound.ln() / (0.5 * 25.0);
    let b_ok = (0.95..=1.5).contains(&ratio);
    let mut c = Outcome::new();
    for row in tail.rows.iter().filter(|r| r.count >= 100) {
        let e = -row.p_hat.ln() / (0.5 * row.u * row.u);
        c.check(e >= 0.9, format!("u = {}: -log(p_hat)/(u^2/2) = {e:.4} (count {})", row.u, row.count));
    }
    o.summary = format!(
        "5a {} / 5b {} / 5c {}",
        if a.pass { "pass" } else { "FAIL" },
        if b_ok { "pass" } else { "FAIL" },
        if c.pass { "pass" } else { "FAIL" }
    );
    o.note("5a dominance, 1e7 replicates:".into());
    for d in a.details {
        o.details.push(d);
    }
    o.pass &= a.pass;
    o.check(
        b_ok,
        format!(
            "5b: -log(bound)/(u^2/2) at u = 5 is {ratio:.4} (band [0.95, 1.5]); bound {:.4e} = (e^C + 1) N exp(-phi*(5)), C = {:.3}, N = {}, phi*(5) = {:.4}",
            r5.bound, r5.c, r5.covering_count, r5.conj_value
        ),
    );
    let lb = reports[2].bound.ln();
    o.note(format!("log bound at u = 4: {lb:.3} (band -8 +- 5)"));
    o.note("5c empirical exponent where count >= 100:".into());
    for d in c.details {
        o.details.push(d);
    }
    o.pass &= c.pass;
    o
}

fn c6_martingale() -> Outcome {
    let mut o = Outcome::new();
    // (a) 2 xi_2(n) = S_n^2 - n, same sign stream for both degrees
    let walk = sample_poly_martingale(1, 10_000, 1000, 61).unwrap();
    let xi2 = sample_poly_martingale(2, 10_000, 1000, 61).unwrap();
    let mismatches = (0..1000)
        .flat_map(|r| (0..10_000).map(move |i| (r, i)))
        .filter(|&(r, i)| {
            let s = walk.get(r, i);
            2.0 * xi2.get(r, i) != s * s - (i + 1) as f64
        })
        .count();
    drop((walk, xi2));
    o.check(mismatches == 0, format!("6a: 2 xi_2(n) = S_n^2 - n on 1e3 x 1e4 values ({mismatches} mismatches)"));

    // (b) Var xi_2(20) = 190
    let p = sample_poly_martingale(2, 20, 100_000, 62).unwrap();
    let col = p.column(19);
    let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
    o.check((var / 190.0 - 1.0).abs() <= 0.05, format!("6b: Var xi_2(20) = {var:.2} (190 +- 5%)"));

    // (c) pooled limsup statistic, sup over n <= n_max
    let n_max = 1 << 20;
    let plain = limsup_statistic_stream(2, n_max, 200, 63, 1).unwrap();
    o.check(
        (0.5..=1.1).contains(&plain.median),
        format!(
            "6c: median of sup_(n <= 2^20) xi_2(n)/(n ln ln(n+3)) over 200 trajectories = {:.4} (band [0.5, 1.1], target {})",
            plain.median, plain.target
        ),
    );
    let window = tail_window_start(n_max);
    let tail = limsup_statistic_stream(2, n_max, 200, 63, window).unwrap();
    o.note(format!(
        "same trajectories over {window} <= n <= 2^20: median {:.4}, q10 {:.4}, q90 {:.4}",
        tail.median, tail.q10, tail.q90
    ));

    // (d) block bound vs normalized-sup tail
    let model = MartingaleModel::polynomial(2).unwrap();
    let n_max = 1usize << 16;
    let partition = BlockPartition::geometric(2, 2, n_max as u64).unwrap();
    let weights: Vec<f64> = (1..=n_max as u64).map(|n| if n < 2 { 0.0 } else { 1.0 / model.normalizer(n) }).collect();
    let sups = normalized_sups(2, &weights, partition.start() as usize, 100_000, 64).unwrap();
    let us = [2.5, 3.0];
    let emp = EmpiricalTail::from_values(&sups, None, &us, DEFAULT_CONFIDENCE).unwrap();
    for (u, row) in us.iter().zip(&emp.rows) {
        let b = martingale_block_bound(&model, &partition, *u).unwrap();
        o.check(
            b.total.is_finite() && b.total >= row.ci_hi,
            format!(
                "6d: u = {u}: block bound total {:.4} over {} blocks vs 99% CI upper {:.4e} (count {})",
                b.total,
                b.blocks.len(),
                row.ci_hi,
                row.count
            ),
        );
    }
    o
}

fn c7_sums() -> Outcome {
    let mut o = Outcome::new();
    let cov = squared_exponential_cov(64, SE_LENGTHSCALE, 1.0);
    let phi = PhiFunction::subgaussian();
    let deltas = geometric_grid(0.01, 1.0, 40);
    let space = FiniteMetricSpace::gaussian(&cov, 1.0).unwrap();
    let base = setup(&space, &phi, &deltas);
    let us = [2.5, 3.0, 3.5, 4.0, 6.0];
    for n in [1u64, 10, 100] {
        let phi_n = sum_phi(&phi, SumMode::FixedN(n)).unwrap();
        let space_n = FiniteMetricSpace::gaussian(&cov, phi_n.quadratic_variance().unwrap()).unwrap();
        let s = setup(&space_n, &phi_n, &deltas);
        let mut same = 0;
        let mut total = 0;
        for &u in &us {
            for &c in &c_grid() {
                let a = theorem1_bound(&base.cover, &base.profile, &base.conj, c, u).unwrap();
                let b = theorem2_bound(&s.cover, &s.profile, &s.conj, c, u).unwrap();
                total += 1;
                same += (a == b && a.bound.to_bits() == b.bound.to_bits()) as usize;
            }
        }
        o.check(same == total, format!("n = {n}: {same}/{total} (u, C) reports bit-identical"));
    }
    o
}

fn c8_properties() -> Outcome {
    let mut o = Outcome::new();
    for (name, check) in props::ALL {
        let t = Instant::now();
        match check() {
            Ok(()) => o.check(true, format!("{name} ({:.1} s)", t.elapsed().as_secs_f64())),
            Err(e) => {
                let first = e.lines().next().unwrap_or_default().to_string();
                o.check(false, format!("{name}: {first}"));
            }
        }
    }
    o
}
