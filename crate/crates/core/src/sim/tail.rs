use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::Suprema;
use crate::error::{domain, invalid, Result};
use crate::paths::SamplePaths;

pub const DEFAULT_CONFIDENCE: f64 = 0.99;

/// x with I_x(a, b) = p, by bisection on ln x. `statrs::function::beta::inv_beta_reg`
/// does not terminate for the very unbalanced (a, b) of rare-event counts.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid.exp()) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Two-sided Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> (f64, f64) {
    assert!(k <= n && n > 0, "clopper_pearson: need 0 <= k <= n, n > 0");
    let half = 0.5 * (1.0 - confidence);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else if k == n {
        half.powf(1.0 / nf)
    } else {
        beta_quantile(kf, nf - kf + 1.0, half)
    };
    let hi = if k == n {
        1.0
    } else if k == 0 {
        1.0 - half.powf(1.0 / nf)
    } else {
        beta_quantile(kf + 1.0, nf - kf, 1.0 - half)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub u: f64,
    pub count: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Exceedance counts of the per-replicate supremum on a u grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTail {
    pub replicates: u64,
    pub confidence: f64,
    /// Rows for sup ξ.
    pub rows: Vec<TailRow>,
    /// Rows for sup |ξ|, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_rows: Option<Vec<TailRow>>,
}

fn check_grid(u_grid: &[f64]) -> Result<()> {
    if u_grid.is_empty() {
        return Err(invalid("u grid is empty"));
    }
    if u_grid.iter().any(|u| !u.is_finite()) || u_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("u grid must be finite and strictly increasing"));
    }
    Ok(())
}

fn rows(values: &[f64], u_grid: &[f64], confidence: f64) -> Vec<TailRow> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u64;
    u_grid
        .iter()
        .map(|&u| {
            let count = (sorted.len() - sorted.partition_point(|v| *v <= u)) as u64;
            let (ci_lo, ci_hi) = clopper_pearson(count, n, confidence);
            TailRow { u, count, p_hat: count as f64 / n as f64, ci_lo, ci_hi }
        })
        .collect()
}

impl EmpiricalTail {
    pub fn from_values(sups: &[f64], abs: Option<&[f64]>, u_grid: &[f64], confidence: f64) -> Result<Self> {
        check_grid(u_grid)?;
        if sups.is_empty() {
            return Err(invalid("no replicates"));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(invalid("confidence must lie in (0, 1)"));
        }
        if abs.is_some_and(|a| a.len() != sups.len()) {
            return Err(invalid("sup and sup-abs lengths differ"));
        }
        Ok(Self {
            replicates: sups.len() as u64,
            confidence,
            rows: rows(sups, u_grid, confidence),
            abs_rows: abs.map(|a| rows(a, u_grid, confidence)),
        })
    }

    /// Censored suprema only support thresholds at or above the floor.
    pub fn from_suprema(s: &Suprema, u_grid: &[f64]) -> Result<Self> {
        if let (Some(f), Some(u)) = (s.floor, u_grid.first()) {
            if *u < f {
                return Err(domain(format!("u = {u} lies below the censoring floor {f}")));
            }
        }
        Self::from_values(&s.sup, Some(&s.sup_abs), u_grid, DEFAULT_CONFIDENCE)
    }

    pub fn u_grid(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u).collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| invalid(e.to_string()))?).expect("csv output is utf-8"))
    }

    /// Reads rows written by `to_csv_string`; the replicate count is recovered from p_hat.
    pub fn from_csv_str(text: &str, confidence: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<TailRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        check_grid(&rows.iter().map(|r| r.u).collect::<Vec<_>>())?;
        let replicates =
            rows.iter().find(|r| r.count > 0).map(|r| (r.count as f64 / r.p_hat).round() as u64).unwrap_or(0);
        Ok(Self { replicates, confidence, rows, abs_rows: None })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Tail of the per-replicate sup of x(t)/norm(t); `None` means no normalization.
pub fn empirical_tail(paths: &SamplePaths, u_grid: &[f64], normalization: Option<&[f64]>) -> Result<EmpiricalTail> {
    if let Some(n) = normalization {
        if n.len() != paths.indices() {
            return Err(invalid("normalization length differs from the index count"));
        }
        if n.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("normalization must be positive"));
        }
    }
    let (mut sup, mut sup_abs) = (Vec::with_capacity(paths.replicates()), Vec::with_capacity(paths.replicates()));
    for r in 0..paths.replicates() {
        let row = paths.row(r);
        let (mut s, mut a) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (t, v) in row.iter().enumerate() {
            let x = normalization.map_or(*v, |n| v / n[t]);
            s = s.max(x);
            a = a.max(x.abs());
        }
        sup.push(s);
        sup_abs.push(a);
    }
    EmpiricalTail::from_values(&sup, Some(&sup_abs), u_grid, DEFAULT_CONFIDENCE)
}

/// 8-byte little-endian count followed by little-endian f64 values.
pub fn write_sup_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * values.len());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_sup_file(path: &Path) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8 {
        return Err(invalid("sup file is missing its header"));
    }
    let n = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes")) as usize;
    if buf.len() != 8 + 8 * n {
        return Err(invalid(format!("sup file declares {n} values but holds {} bytes", buf.len() - 8)));
    }
    Ok(buf[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
