use std::path::{Path, PathBuf};

use chainbound::bounds::SumMode;
use chainbound::chaining::{geometric_grid, Strategy, DEFAULT_RHOS};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// One experiment: where the space and φ come from, how to chain, which
/// bounds to compute and how to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub phi: PhiSpec,
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub chaining: ChainingSpec,
    pub bound: Option<BoundSpec>,
    pub sim: Option<SimSpec>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    #[default]
    Subgaussian,
    Gaussian {
        variance: f64,
    },
    PowerType {
        r: f64,
    },
    /// `ln E cosh(λ|ε|)` for the sequence preset.
    ExampleA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "singleton")]
    Singleton,
    #[serde(rename = "two-point")]
    TwoPoint,
    #[serde(rename = "exampleA")]
    ExampleA,
    #[serde(rename = "gaussian-se")]
    GaussianSe,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "singleton" => Self::Singleton,
            "two-point" => Self::TwoPoint,
            "exampleA" => Self::ExampleA,
            "gaussian-se" => Self::GaussianSe,
            _ => return None,
        })
    }
}

/// Exactly one of `preset` and `file`; the size fields apply to presets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub preset: Option<Preset>,
    pub file: Option<PathBuf>,
    /// exampleA: number of coordinates.
    pub n_max: Option<usize>,
    /// gaussian-se: number of grid points on [0, 1].
    pub points: Option<usize>,
    pub lengthscale: Option<f64>,
}

pub const DEFAULT_N_MAX: usize = 4096;
pub const DEFAULT_POINTS: usize = 64;
pub const DEFAULT_LENGTHSCALE: f64 = 0.3;

impl SpaceSpec {
    /// A preset name or a path to a CSV/JSON distance matrix.
    pub fn from_arg(arg: &str) -> Self {
        match Preset::parse(arg) {
            Some(p) => Self { preset: Some(p), ..Self::default() },
            None => Self { file: Some(PathBuf::from(arg)), ..Self::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl DeltaGrid {
    pub fn values(&self) -> Vec<f64> {
        geometric_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainingSpec {
    pub strategies: Vec<Strategy>,
    pub rhos: Vec<f64>,
    pub delta_grid: DeltaGrid,
    pub max_depth: Option<usize>,
}

impl Default for ChainingSpec {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::DyadicNets, Strategy::GreedyRefine],
            rhos: DEFAULT_RHOS.to_vec(),
            delta_grid: DeltaGrid { lo: 0.01, hi: 1.0, points: 40 },
            max_depth: None,
        }
    }
}

pub fn default_c_grid() -> Vec<f64> {
    geometric_grid(0.02, 5.0, 40)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub u_grid: Vec<f64>,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    /// Normalized sums instead of a single field.
    pub sum_mode: Option<SumMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub replicates: usize,
    pub seed: u64,
    /// `rademacher:K` or `laplace:K`; otherwise the field behind the space preset.
    pub sampler: Option<String>,
    pub u_grid: Vec<f64>,
}

fn sorted(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(usage(format!("{name}: grid is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(usage(format!("{name}: grid has a non-finite entry")));
    }
    if v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(usage(format!("{name}: grid must be strictly increasing")));
    }
    Ok(())
}

impl RunConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            phi: PhiSpec::default(),
            space: None,
            chaining: ChainingSpec::default(),
            bound: None,
            sim: None,
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.phi {
            PhiSpec::Gaussian { variance } if !(*variance > 0.0) => {
                return Err(usage(format!("phi.variance: must be positive, got {variance}")))
            }
            PhiSpec::PowerType { r } if !(*r >= 1.0 && r.is_finite()) => {
                return Err(usage(format!("phi.r: must be at least 1, got {r}")))
            }
            _ => {}
        }
        if let Some(s) = &self.space {
            match (s.preset, &s.file) {
                (None, None) => return Err(usage("space: set either preset or file")),
                (Some(_), Some(_)) => return Err(usage("space: preset and file are exclusive")),
                _ => {}
            }
            if s.points == Some(0) || s.n_max == Some(0) {
                return Err(usage("space: sizes must be positive"));
            }
            if s.lengthscale.is_some_and(|l| !(l > 0.0)) {
                return Err(usage("space.lengthscale: must be positive"));
            }
        }
        let c = &self.chaining;
        if c.strategies.is_empty() {
            return Err(usage("chaining.strategies: list is empty"));
        }
        sorted("chaining.rhos", &c.rhos)?;
        if c.rhos.iter().any(|r| !(*r > 2.0 / 3.0 && *r < 1.0)) {
            return Err(usage("chaining.rhos: every rho must lie in (2/3, 1)"));
        }
        let g = &c.delta_grid;
        if !(g.lo > 0.0 && g.lo < g.hi && g.hi <= 1.0) || g.points < 2 {
            return Err(usage("chaining.delta_grid: need 0 < lo < hi <= 1 and at least 2 points"));
        }
        if let Some(b) = &self.bound {
            sorted("bound.u_grid", &b.u_grid)?;
            sorted("bound.c_grid", &b.c_grid)?;
            if b.c_grid[0] <= 0.0 {
                return Err(usage("bound.c_grid: C must be positive"));
            }
            if let Some(SumMode::FixedN(0) | SumMode::UniformInN(0)) = b.sum_mode {
                return Err(usage("bound.sum_mode: n must be at least 1"));
            }
        }
        if let Some(s) = &self.sim {
            if s.replicates == 0 {
                return Err(usage("sim.replicates: must be positive"));
            }
            sorted("sim.u_grid", &s.u_grid)?;
        }
        Ok(())
    }
}
