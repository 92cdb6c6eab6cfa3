use std::fs;
use std::path::{Path, PathBuf};

use chainbound::bounds::{optimize_c, sum_phi, TailBoundReport};
use chainbound::chaining::{
    admissibility_check, build_chain_with, chain_l, default_gamma, k_profile, ChainOptions, Strategy,
};
use chainbound::metric::{CoveringCache, FiniteMetricSpace};
use chainbound::paths::SamplePaths;
use chainbound::phi::{
    bphi_norm_mgf, fenchel_transform, natural_phi, ConjugateTable, LambdaGrid, MgfOptions, PhiFunction,
};
use chainbound::sim::{
    example_a_phi, example_a_space, example_a_suprema, squared_exponential_cov, write_sup_file, EmpiricalTail,
    FieldSampler, SamplerKind, DEFAULT_CONFIDENCE,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{PhiSpec, Preset, RunConfig, SpaceSpec, DEFAULT_LENGTHSCALE, DEFAULT_N_MAX, DEFAULT_POINTS};
use crate::error::{usage, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// What a subcommand prints, plus the files it should leave behind.
pub struct Output {
    pub text: String,
    pub files: Vec<(PathBuf, String)>,
    /// Exit code 1 when a verification fails.
    pub failed: bool,
}

impl Output {
    fn text(text: String) -> Self {
        Self { text, files: Vec::new(), failed: false }
    }
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn unix_time() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Tags numeric failures with the threshold that caused them.
fn at_u(u: f64) -> impl FnOnce(chainbound::Error) -> CliError {
    move |e| {
        let e = CliError::Core(e);
        if e.exit_code() == 3 {
            CliError::Numeric(format!("u = {u}: {e}"))
        } else {
            e
        }
    }
}

pub fn build_phi(spec: &PhiSpec) -> Result<PhiFunction> {
    Ok(match spec {
        PhiSpec::Subgaussian => PhiFunction::subgaussian(),
        PhiSpec::Gaussian { variance } => PhiFunction::gaussian(*variance),
        PhiSpec::PowerType { r } => PhiFunction::power_type(*r)?,
        PhiSpec::ExampleA => example_a_phi(),
    })
}

/// A space together with the field that generates it, when known.
pub struct Resolved {
    pub space: FiniteMetricSpace,
    pub cov: Option<DMatrix<f64>>,
    pub preset: Option<Preset>,
    pub n_max: usize,
}

/// Gaussian presets use the distance `√Var(ξ(t) − ξ(s))` scaled by the
/// quadratic coefficient of φ (1 when φ is not quadratic).
pub fn resolve_space(spec: &SpaceSpec, phi: &PhiFunction) -> Result<Resolved> {
    let var = phi.quadratic_variance().unwrap_or(1.0);
    let gaussian = |cov: DMatrix<f64>, preset| -> Result<Resolved> {
        Ok(Resolved {
            space: FiniteMetricSpace::gaussian(&cov, var)?,
            n_max: cov.nrows(),
            cov: Some(cov),
            preset: Some(preset),
        })
    };
    match (spec.preset, &spec.file) {
        (Some(Preset::Singleton), _) => gaussian(DMatrix::identity(1, 1), Preset::Singleton),
        (Some(Preset::TwoPoint), _) => gaussian(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), Preset::TwoPoint),
        (Some(Preset::GaussianSe), _) => gaussian(
            squared_exponential_cov(
                spec.points.unwrap_or(DEFAULT_POINTS),
                spec.lengthscale.unwrap_or(DEFAULT_LENGTHSCALE),
                1.0,
            ),
            Preset::GaussianSe,
        ),
        (Some(Preset::ExampleA), _) => {
            let n_max = spec.n_max.unwrap_or(DEFAULT_N_MAX);
            Ok(Resolved { space: example_a_space(n_max)?, cov: None, preset: Some(Preset::ExampleA), n_max })
        }
        (None, Some(path)) => {
            let space =
                FiniteMetricSpace::load(path).map_err(|e| usage(format!("space file {}: {e}", path.display())))?;
            Ok(Resolved { n_max: space.len(), space, cov: None, preset: None })
        }
        (None, None) => Err(usage("missing --space")),
    }
}

fn conjugate_for(phi: &PhiFunction, u_max: f64) -> Result<ConjugateTable> {
    let hi = (1.5 * u_max).max(12.0);
    let grid: Vec<f64> = (0..=(hi / 0.01).ceil() as usize).map(|i| i as f64 * 0.01).collect();
    Ok(fenchel_transform(phi, &grid)?)
}

fn chain_options(cfg: &RunConfig) -> ChainOptions {
    ChainOptions { max_depth: cfg.chaining.max_depth, ..ChainOptions::default() }
}

#[derive(Serialize, Deserialize)]
struct BoundDoc {
    name: String,
    mode: String,
    generated_unix: u64,
    reports: Vec<TailBoundReport>,
}

pub fn run_bound(cfg: &RunConfig, format: Format) -> Result<Output> {
    let bound = cfg.bound.as_ref().ok_or_else(|| usage("missing bound section (or --u)"))?;
    let space_spec = cfg.space.as_ref().ok_or_else(|| usage("missing --space"))?;
    let phi = build_phi(&cfg.phi)?;
    let resolved = resolve_space(space_spec, &phi)?;
    let (phi, space) = match bound.sum_mode {
        None => (phi, resolved.space),
        Some(mode) => {
            let phi_n = sum_phi(&phi, mode)?;
            let (Some(cov), Some(var)) = (&resolved.cov, phi_n.quadratic_variance()) else {
                return Err(usage("bound.sum_mode needs a Gaussian preset space and a quadratic phi"));
            };
            (phi_n, FiniteMetricSpace::gaussian(cov, var)?)
        }
    };
    let u_max = bound.u_grid.last().copied().unwrap_or(1.0);
    let conj = conjugate_for(&phi, u_max)?;
    log::info!("building K profile on {} points", space.len());
    let profile = k_profile(
        &space,
        &cfg.chaining.delta_grid.values(),
        &cfg.chaining.strategies,
        &cfg.chaining.rhos,
        chain_options(cfg),
    )?;
    let cover = CoveringCache::new(&space);
    let reports = bound
        .u_grid
        .iter()
        .map(|&u| optimize_c(&cover, &profile, &conj, u, &bound.c_grid).map_err(at_u(u)))
        .collect::<Result<Vec<_>>>()?;

    let csv = csv_rows(&reports)?;
    let doc = BoundDoc {
        name: cfg.name.clone(),
        mode: bound.sum_mode.map_or("theorem1".into(), |m| m.to_string()),
        generated_unix: unix_time(),
        reports,
    };
    let json = serde_json::to_string_pretty(&doc)?;
    let mut out = Output::text(match format {
        Format::Csv => csv.clone(),
        Format::Json => json.clone(),
    });
    if let Some(dir) = &cfg.output_dir {
        out.files.push((dir.join(format!("{}.bound.csv", cfg.name)), csv));
        out.files.push((dir.join(format!("{}.bound.json", cfg.name)), json));
        out.files.push((dir.join(format!("{}.bound.toml", cfg.name)), cfg.to_toml()?));
    }
    Ok(out)
}

/// Bound reports from a CSV file or the JSON document written by `bound`.
pub fn read_bound_reports(path: &Path) -> Result<Vec<TailBoundReport>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    if is_json(path) {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let reports = v.get("reports").cloned().unwrap_or(v);
        Ok(serde_json::from_value(reports)?)
    } else {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}

pub fn read_tail(path: &Path) -> Result<EmpiricalTail> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(if is_json(path) {
        EmpiricalTail::from_json(&text)?
    } else {
        EmpiricalTail::from_csv_str(&text, DEFAULT_CONFIDENCE)?
    })
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// `rademacher:K`, `laplace:K`, or the field behind a preset space.
pub fn sampler_kind(sampler: Option<&str>, resolved: Option<&Resolved>) -> Result<SamplerKind> {
    if let Some(s) = sampler {
        let (name, k) = s.split_once(':').ok_or_else(|| usage(format!("sampler {s:?}: expected NAME:K")))?;
        let k: usize = k.parse().map_err(|_| usage(format!("sampler {s:?}: K must be a positive integer")))?;
        if k == 0 {
            return Err(usage(format!("sampler {s:?}: K must be positive")));
        }
        return match name {
            "rademacher" => Ok(SamplerKind::Rademacher(k)),
            "laplace" => Ok(SamplerKind::Laplace(k)),
            _ => Err(usage(format!("unknown sampler {name:?}"))),
        };
    }
    match resolved {
        Some(Resolved { cov: Some(cov), .. }) => Ok(SamplerKind::GaussianCov(cov.clone())),
        Some(Resolved { preset: Some(Preset::ExampleA), n_max, .. }) => Ok(SamplerKind::SubgaussianSeqA(*n_max)),
        Some(_) => Err(usage("a space file has no generating field; pass --sampler")),
        None => Err(usage("missing --space or --sampler")),
    }
}

pub fn run_simulate(cfg: &RunConfig, format: Format, sups_path: Option<&Path>) -> Result<Output> {
    let sim = cfg.sim.as_ref().ok_or_else(|| usage("missing sim section (or --replicates/--seed/--u)"))?;
    let resolved = match &cfg.space {
        Some(s) if sim.sampler.is_none() => Some(resolve_space(s, &build_phi(&cfg.phi)?)?),
        _ => None,
    };
    let kind = sampler_kind(sim.sampler.as_deref(), resolved.as_ref())?;
    log::info!("simulating {} replicates of {} coordinates", sim.replicates, kind.indices());
    let sups = match kind {
        // the sequence sampler is censored below the smallest threshold
        SamplerKind::SubgaussianSeqA(n_max) => example_a_suprema(n_max, sim.replicates, sim.seed, sim.u_grid[0])?,
        kind => FieldSampler::new(kind, sim.seed)?.suprema(sim.replicates),
    };
    if let Some(p) = sups_path {
        write_sup_file(p, &sups.sup)?;
    }
    let tail = EmpiricalTail::from_suprema(&sups, &sim.u_grid)?;
    let csv = tail.to_csv_string()?;
    let json = tail.to_json()?;
    let mut out = Output::text(match format {
        Format::Csv => csv.clone(),
        Format::Json => json.clone(),
    });
    if let Some(dir) = &cfg.output_dir {
        out.files.push((dir.join(format!("{}.tail.csv", cfg.name)), csv));
        out.files.push((dir.join(format!("{}.tail.json", cfg.name)), json));
        out.files.push((dir.join(format!("{}.tail.toml", cfg.name)), cfg.to_toml()?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub u: f64,
    pub u0: Option<f64>,
    /// At or above the validity onset; only these rows decide the outcome.
    pub in_scope: bool,
    pub bound: f64,
    pub ci_hi: f64,
    pub dominated: bool,
    pub log_ratio: f64,
}

pub fn verify(reports: &[TailBoundReport], tail: &EmpiricalTail) -> Result<(Vec<Verdict>, bool)> {
    let bu: Vec<u64> = reports.iter().map(|r| r.u.to_bits()).collect();
    let tu: Vec<u64> = tail.rows.iter().map(|r| r.u.to_bits()).collect();
    if bu != tu {
        return Err(usage(format!(
            "u grids differ: bound {:?} vs tail {:?}",
            reports.iter().map(|r| r.u).collect::<Vec<_>>(),
            tail.u_grid()
        )));
    }
    let verdicts: Vec<Verdict> = reports
        .iter()
        .zip(&tail.rows)
        .map(|(r, row)| Verdict {
            u: r.u,
            u0: r.u0,
            in_scope: r.u0.is_some_and(|u0| r.u >= u0),
            bound: r.bound,
            ci_hi: row.ci_hi,
            dominated: r.bound >= row.ci_hi,
            log_ratio: (r.bound / row.ci_hi).ln(),
        })
        .collect();
    if !verdicts.iter().any(|v| v.in_scope) {
        return Err(usage("no u at or above the validity onset u0: nothing to verify"));
    }
    let pass = verdicts.iter().filter(|v| v.in_scope).all(|v| v.dominated);
    Ok((verdicts, pass))
}

pub fn run_verify(bound: &Path, tail: &Path, format: Format, out: Option<&Path>) -> Result<Output> {
    let (verdicts, pass) = verify(&read_bound_reports(bound)?, &read_tail(tail)?)?;
    let text = match format {
        Format::Csv => csv_rows(&verdicts)?,
        Format::Json => serde_json::to_string_pretty(&serde_json::json!({ "pass": pass, "verdicts": verdicts }))?,
    };
    let mut o = Output::text(text.clone());
    if let Some(p) = out {
        o.files.push((p.to_path_buf(), text));
    }
    o.failed = !pass;
    Ok(o)
}

#[derive(Serialize)]
struct ProfileRow {
    delta: f64,
    k: f64,
    raw: f64,
    strategy: Strategy,
    rho: f64,
    depth: usize,
    center: String,
}

#[derive(Serialize)]
struct LevelRow {
    level: usize,
    size: usize,
    members: String,
}

pub struct ChainQuery {
    pub center: Option<String>,
    pub delta: Option<f64>,
    pub strategy: Strategy,
    pub rho: f64,
    pub u_grid: Option<Vec<f64>>,
}

/// Without a center: the K profile. With one: the chain on `S(t₀, δ)`.
pub fn run_chain_inspect(cfg: &RunConfig, q: &ChainQuery, format: Format) -> Result<Output> {
    let space_spec = cfg.space.as_ref().ok_or_else(|| usage("missing --space"))?;
    let phi = build_phi(&cfg.phi)?;
    let space = resolve_space(space_spec, &phi)?.space;
    let Some(center) = &q.center else {
        let p = k_profile(
            &space,
            &cfg.chaining.delta_grid.values(),
            &cfg.chaining.strategies,
            &cfg.chaining.rhos,
            chain_options(cfg),
        )?;
        let rows: Vec<ProfileRow> = p
            .delta_grid
            .iter()
            .enumerate()
            .map(|(i, &delta)| {
                let w = &p.witnesses[i];
                ProfileRow {
                    delta,
                    k: p.k_values[i],
                    raw: p.raw_values[i],
                    strategy: w.strategy,
                    rho: w.gamma.rho,
                    depth: w.chain.depth(),
                    center: space.labels()[w.chain.ball_center].clone(),
                }
            })
            .collect();
        return Ok(Output::text(match format {
            Format::Csv => csv_rows(&rows)?,
            Format::Json => serde_json::to_string_pretty(&rows)?,
        }));
    };
    let t0 = space.index_of(center).ok_or_else(|| usage(format!("unknown center label {center:?}")))?;
    let delta = q.delta.ok_or_else(|| usage("--center needs --delta"))?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(usage(format!("--delta must lie in (0, 1], got {delta}")));
    }
    let gamma = default_gamma(0, q.rho).map_err(|e| usage(e.to_string()))?;
    let chain = build_chain_with(&space, t0, delta, q.strategy, &gamma, chain_options(cfg))?;
    let gamma = gamma.with_depth(chain.depth());
    Ok(Output::text(match format {
        Format::Csv => {
            let rows: Vec<LevelRow> = chain
                .levels
                .iter()
                .enumerate()
                .map(|(level, l)| LevelRow {
                    level,
                    size: l.len(),
                    members: l.iter().map(|&t| space.labels()[t].as_str()).collect::<Vec<_>>().join(";"),
                })
                .collect();
            csv_rows(&rows)?
        }
        Format::Json => {
            let admissibility = match &q.u_grid {
                Some(us) => Some(admissibility_check(&chain, &gamma, &conjugate_for(&phi, *us.last().unwrap())?, us)?),
                None => None,
            };
            let chain_doc: serde_json::Value = serde_json::from_str(&chain.to_json(&space, &gamma)?)?;
            serde_json::to_string_pretty(&serde_json::json!({
                "chain": chain_doc,
                "L": chain_l(&space, &chain, &gamma),
                "admissibility": admissibility,
            }))?
        }
    }))
}

/// Sample matrix from CSV: a header of labels, then one row per replicate.
pub fn read_samples(path: &Path) -> Result<(Vec<String>, SamplePaths)> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let labels: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        for field in rec?.iter() {
            data.push(field.trim().parse::<f64>().map_err(|_| usage(format!("non-numeric sample {field:?}")))?);
        }
        rows += 1;
    }
    Ok((labels.clone(), SamplePaths::new(rows, labels.len(), data)?))
}

#[derive(Serialize)]
struct PhiRow {
    lambda: f64,
    phi: f64,
}

#[derive(Serialize)]
struct NormRow {
    label: String,
    norm: f64,
    grid: String,
}

/// The natural φ of the samples, or with `norm_under`, each column's
/// B(φ) norm under the given φ.
pub fn run_phi_fit(
    samples: &Path,
    lambda_max: f64,
    lambda_points: usize,
    norm_under: Option<&PhiSpec>,
    format: Format,
) -> Result<Output> {
    if !(lambda_max > 0.0) || lambda_points == 0 {
        return Err(usage("lambda grid needs a positive maximum and at least one point"));
    }
    let (labels, paths) = read_samples(samples)?;
    let emit = |csv: String, json: String| Output::text(if format == Format::Csv { csv } else { json });
    if let Some(spec) = norm_under {
        let phi = build_phi(spec)?;
        let grid = LambdaGrid::default_standardized();
        let rows = labels
            .iter()
            .enumerate()
            .map(|(t, label)| {
                let est = bphi_norm_mgf(&paths.column(t), &phi, &grid, MgfOptions::default())?;
                Ok(NormRow { label: label.clone(), norm: est.value, grid: est.grid_used })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(emit(csv_rows(&rows)?, serde_json::to_string_pretty(&rows)?));
    }
    let grid: Vec<f64> = (1..=lambda_points).map(|i| lambda_max * i as f64 / lambda_points as f64).collect();
    let phi = natural_phi(&paths, &grid, MgfOptions::default())?;
    let (ls, vs) = phi.table().expect("natural phi is tabulated");
    let rows: Vec<PhiRow> = ls.iter().zip(vs).map(|(&lambda, &phi)| PhiRow { lambda, phi }).collect();
    let json = serde_json::to_string_pretty(&serde_json::json!({ "lambda0": phi.lambda0(), "table": rows }))?;
    Ok(emit(csv_rows(&rows)?, json))
}
