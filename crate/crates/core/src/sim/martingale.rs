use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream, FieldSampler, SamplerKind, SignStream, BLOCK};
use crate::error::{invalid, Result};
use crate::paths::SamplePaths;

/// ξ_d(n), n = 1..=signs.len(), by e_k(n) = e_k(n−1) + ε(n) e_{k−1}(n−1).
pub fn poly_martingale_trajectory(d: u32, signs: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; d as usize + 1];
    e[0] = 1.0;
    signs
        .iter()
        .map(|&eps| {
            for j in (1..e.len()).rev() {
                e[j] += eps * e[j - 1];
            }
            e[d as usize]
        })
        .collect()
}

/// Replicates × n_max trajectories. The sign stream of a replicate does not
/// depend on `d`, so degree-1 output with the same seed is the walk S_n.
pub fn sample_poly_martingale(d: u32, n_max: usize, replicates: usize, seed: u64) -> Result<SamplePaths> {
    Ok(FieldSampler::new(SamplerKind::PolyMartingale { d, n_max }, seed)?.sample(replicates))
}

/// Per replicate, max over `start ≤ n ≤ n_max` of ξ_d(n)·weights[n−1],
/// without storing trajectories.
pub fn normalized_sups(d: u32, weights: &[f64], start: usize, replicates: usize, seed: u64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("degree must be at least 1"));
    }
    let n_max = weights.len();
    if start == 0 || start > n_max {
        return Err(invalid(format!("window start {start} outside [1, {n_max}]")));
    }
    let blocks: Vec<Vec<f64>> = (0..replicates.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(replicates);
            let mut e = vec![0.0; d as usize + 1];
            (lo..hi)
                .map(|r| {
                    let mut rng = stream(seed, r as u64);
                    let mut signs = SignStream::default();
                    e.fill(0.0);
                    e[0] = 1.0;
                    let mut best = f64::NEG_INFINITY;
                    for (i, w) in weights.iter().enumerate() {
                        let eps = signs.next(&mut rng);
                        for j in (1..e.len()).rev() {
                            e[j] += eps * e[j - 1];
                        }
                        if i + 1 >= start {
                            best = best.max(e[d as usize] * w);
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    Ok(blocks.concat())
}

/// 2^{d/2}/d!.
pub fn limsup_target(d: u32) -> f64 {
    let fact: f64 = (1..=d).map(f64::from).product();
    2f64.powf(f64::from(d) / 2.0) / fact
}

/// ⌈√n_max⌉, a start for a tail window `√n_max ≤ n ≤ n_max`. The plain
/// statistic (start 1) is dominated by the first few n, where ln ln(n+3) is
/// small; a tail window tracks the limsup instead.
pub fn tail_window_start(n_max: usize) -> usize {
    ((n_max as f64).sqrt().ceil() as usize).max(1)
}

fn lil_weights(d: u32, n_max: usize) -> Vec<f64> {
    (1..=n_max)
        .map(|n| {
            let n = n as f64;
            (n * (n + 3.0).ln().ln()).powf(-f64::from(d) / 2.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimsupSummary {
    pub d: u32,
    pub burn_in: usize,
    pub per_replicate: Vec<f64>,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub target: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

impl LimsupSummary {
    fn new(d: u32, burn_in: usize, per_replicate: Vec<f64>) -> Result<Self> {
        if per_replicate.is_empty() {
            return Err(invalid("no trajectories"));
        }
        let mut s = per_replicate.clone();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            d,
            burn_in,
            median: quantile(&s, 0.5),
            q10: quantile(&s, 0.1),
            q90: quantile(&s, 0.9),
            target: limsup_target(d),
            per_replicate,
        })
    }
}

/// Per trajectory, max over `burn_in ≤ n ≤ n_max` of ξ_d(n)/(n ln ln(n+3))^{d/2};
/// `burn_in = 1` gives the plain sup over n ≤ n_max.
pub fn limsup_statistic(trajectories: &SamplePaths, d: u32, burn_in: usize) -> Result<LimsupSummary> {
    let n_max = trajectories.indices();
    if burn_in == 0 || burn_in > n_max {
        return Err(invalid(format!("burn-in {burn_in} outside [1, {n_max}]")));
    }
    let w = lil_weights(d, n_max);
    let per = (0..trajectories.replicates())
        .map(|r| {
            let row = trajectories.row(r);
            (burn_in - 1..n_max).map(|i| row[i] * w[i]).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    LimsupSummary::new(d, burn_in, per)
}

/// Same statistic as [`limsup_statistic`] on freshly sampled trajectories, streamed.
pub fn limsup_statistic_stream(
    d: u32,
    n_max: usize,
    replicates: usize,
    seed: u64,
    burn_in: usize,
) -> Result<LimsupSummary> {
    let per = normalized_sups(d, &lil_weights(d, n_max), burn_in, replicates, seed)?;
    LimsupSummary::new(d, burn_in, per)
}
