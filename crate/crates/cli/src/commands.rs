//! The four subcommands. Every output carries `schema_version`; all
//! parallel work is collected in replicate order before any reduction, so
//! outputs do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gmf_heat::asymptotics::{asymptotic_ci, plugin_sigmas, CltTables, EstimateReport, ParamEstimate, Target};
use gmf_heat::error::{Error, Result};
use gmf_heat::estimators::{estimate_h1, estimate_sigmas, Flag, MomentStats};
use gmf_heat::grid::SamplingGrid;
use gmf_heat::io::{self, OutputFormat, SCHEMA_VERSION};
use gmf_heat::model::{ModelParams, QuadratureSettings, TimePair};
use gmf_heat::moments::temporal_cov;
use gmf_heat::sim::{FieldSample, FieldSampler, SimMethod, SimWarning};
use gmf_heat::spatial::spatial_cov;
use gmf_heat::stats::{mean, pairwise_sum, std_dev};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Keeps plug-in Ĥ₁ away from H₂ and the interval ends, where the plug-in
/// model degenerates.
const PLUGIN_H_MARGIN: f64 = 0.01;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub replicate_id: u64,
    pub seed: u64,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub method: SimMethod,
    #[serde(default)]
    pub warnings: Vec<SimWarning>,
    pub files: Vec<ManifestEntry>,
}

fn sampler(cfg: &ExperimentConfig, grid: &SamplingGrid) -> Result<FieldSampler> {
    FieldSampler::new(&cfg.model, grid, &cfg.sim_config(), &cfg.quadrature)
}

/// One file per replicate plus `manifest.json`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Manifest> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let s = sampler(cfg, &cfg.grid)?;
    let ext = cfg.output.format.extension();
    let files = (0..cfg.replicates)
        .into_par_iter()
        .map(|id| {
            let name = PathBuf::from(format!("replicate_{id:06}.{ext}"));
            io::save(&s.sample(id), &dir.join(&name))?;
            Ok(ManifestEntry {
                replicate_id: id,
                seed: cfg.seed,
                file: name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        method: s.method(),
        warnings: s.warnings().to_vec(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Parameters whose lag covariances feed the asymptotic variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub params: ModelParams,
    /// `plugin` when built from the estimates, `config` when taken from the
    /// configured model.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub schema_version: u32,
    pub input: PathBuf,
    pub seed: u64,
    pub replicate_id: u64,
    pub grid: SamplingGrid,
    pub quadrature: QuadratureSettings,
    pub variance_model: VarianceModel,
    pub report: EstimateReport,
}

fn plugin_model(cfg: &ExperimentConfig, stats: &MomentStats) -> Result<VarianceModel> {
    let config = || VarianceModel {
        params: cfg.model,
        source: "config".into(),
    };
    let p = &cfg.model;
    let h1 = match cfg.estimation {
        Target::H1 { h2 } => {
            let est = estimate_h1(stats, h2)?;
            let h = est.h1_hat;
            if est.flags.contains(&Flag::RatioOutOfRange)
                || (h - h2.value()).abs() < PLUGIN_H_MARGIN
                || !(PLUGIN_H_MARGIN..=1.0 - PLUGIN_H_MARGIN).contains(&h)
            {
                return Ok(config());
            }
            h
        }
        Target::Sigmas { h1, .. } => h1.value(),
    };
    let first_two = MomentStats {
        times: stats.times[..2].to_vec(),
        v_stat: stats.v_stat[..2].to_vec(),
        j_stat: stats.j_stat[..2].to_vec(),
        n_space: stats.n_space,
    };
    let probe = ModelParams::new(h1, p.h2().value(), 1.0, 1.0)?;
    let s = estimate_sigmas(&first_two, probe.h1(), probe.h2())?;
    let (s1, s2) = plugin_sigmas(s.sigma1_sq, s.sigma2_sq);
    Ok(VarianceModel {
        params: probe.with_sigmas(s1, s2)?,
        source: "plugin".into(),
    })
}

fn check_grid(cfg: &ExperimentConfig, sample: &FieldSample) -> Result<()> {
    let (a, b) = (&cfg.grid, &sample.grid);
    if a.times() != b.times() || a.n_space() != b.n_space() || (a.delta() - b.delta()).abs() > 1e-12 * a.delta() {
        return Err(Error::domain(format!(
            "input grid (times {:?}, δ {}, N {}) does not match the config grid (times {:?}, δ {}, N {})",
            b.times(),
            b.delta(),
            b.n_space(),
            a.times(),
            a.delta(),
            a.n_space()
        )));
    }
    Ok(())
}

/// Estimates from one sample file with plug-in asymptotic variances; writes
/// `estimate.json`.
pub fn cmd_estimate(cfg: &ExperimentConfig, input: &Path) -> Result<EstimateFile> {
    let sample = io::load(input)?;
    check_grid(cfg, &sample)?;
    let stats = MomentStats::from_sample(&sample);
    let vm = plugin_model(cfg, &stats)?;
    let tables = CltTables::compute(&vm.params, sample.grid.times(), sample.grid.delta(), &cfg.lag_options())?;
    let report = asymptotic_ci(&stats, &cfg.estimation, &tables, cfg.alpha)?;
    let out = EstimateFile {
        schema_version: SCHEMA_VERSION,
        input: input.to_path_buf(),
        seed: sample.seed,
        replicate_id: sample.replicate_id,
        grid: sample.grid,
        quadrature: cfg.quadrature,
        variance_model: vm,
        report,
    };
    ensure_dir(&cfg.output.dir)?;
    write_json(&cfg.output.dir.join("estimate.json"), &out)?;
    Ok(out)
}

/// Aggregate of one parameter over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub truth: f64,
    pub n_estimates: usize,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    /// Sample standard deviation (denominator M − 1); null for M = 1.
    pub sd: Option<f64>,
    /// √(bias² + sd²).
    pub rmse: Option<f64>,
    /// N · sd², to compare with the asymptotic variance.
    pub scaled_variance: Option<f64>,
    /// Mean over replicates of the asymptotic variance used for the CIs.
    pub asymptotic_variance: Option<f64>,
    pub coverage: Option<f64>,
}

impl ParamSummary {
    fn from_estimates(truth: f64, n_space: usize, ests: &[&ParamEstimate]) -> Self {
        let values: Vec<f64> = ests.iter().map(|e| e.estimate).collect();
        let n = values.len();
        let m = (n > 0).then(|| mean(&values));
        let bias = m.map(|m| m - truth);
        let sd = std_dev(&values);
        let covered: Vec<f64> = ests.iter().map(|e| f64::from(u8::from(e.ci.contains(truth)))).collect();
        let avar: Vec<f64> = ests.iter().map(|e| e.asymptotic_variance).collect();
        ParamSummary {
            truth,
            n_estimates: n,
            mean: m,
            bias,
            sd,
            rmse: match (bias, sd) {
                (Some(b), Some(s)) => Some((b * b + s * s).sqrt()),
                _ => None,
            },
            scaled_variance: sd.map(|s| n_space as f64 * s * s),
            asymptotic_variance: (n > 0).then(|| mean(&avar)),
            coverage: (n > 0).then(|| pairwise_sum(&covered) / n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub n_space: usize,
    pub replicates: u64,
    /// Replicates whose estimation raised an error (e.g. degenerate ratio).
    pub failures: u64,
    pub method: SimMethod,
    #[serde(default)]
    pub sampler_warnings: Vec<SimWarning>,
    pub params: BTreeMap<String, ParamSummary>,
    pub flag_counts: BTreeMap<Flag, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// `truth` for Ĥ₁ (lag tables at the configured model); `plugin` for
    /// the σ estimators (tables rescaled to each replicate's σ̂).
    pub variance_source: String,
    pub identifiable: bool,
    pub rows: Vec<McRow>,
}

/// Per-replicate estimates named by parameter.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate_id: u64,
    pub estimates: Vec<(String, ParamEstimate)>,
    pub flags: Vec<Flag>,
}

fn named_estimates(report: &EstimateReport) -> Vec<(String, ParamEstimate)> {
    [
        ("h1", &report.h1),
        ("sigma1_sq", &report.sigma1_sq),
        ("sigma2_sq", &report.sigma2_sq),
        ("sigma1_sq_moment4", &report.sigma1_sq_moment4),
        ("sigma2_sq_moment4", &report.sigma2_sq_moment4),
    ]
    .into_iter()
    .filter_map(|(name, e)| e.clone().map(|e| (name.to_string(), e)))
    .collect()
}

fn truth_of(p: &ModelParams, name: &str) -> f64 {
    match name {
        "h1" => p.h1().value(),
        "sigma1_sq" | "sigma1_sq_moment4" => p.sigma1_sq(),
        _ => p.sigma2_sq(),
    }
}

/// `None` when the sample is uninformative (degenerate ratio or a numeric
/// failure of the variance computation).
fn estimate_replicate(
    cfg: &ExperimentConfig,
    truth_tables: &CltTables,
    sample: &FieldSample,
) -> Result<Option<ReplicateOutcome>> {
    let stats = MomentStats::from_sample(sample);
    let report = match cfg.estimation {
        Target::H1 { .. } => asymptotic_ci(&stats, &cfg.estimation, truth_tables, cfg.alpha),
        Target::Sigmas { h1, h2 } => estimate_sigmas(&stats, h1, h2).and_then(|s| {
            let (s1, s2) = plugin_sigmas(s.sigma1_sq, s.sigma2_sq);
            asymptotic_ci(&stats, &cfg.estimation, &truth_tables.rescaled(s1, s2)?, cfg.alpha)
        }),
    };
    match report {
        Ok(report) => Ok(Some(ReplicateOutcome {
            replicate_id: sample.replicate_id,
            estimates: named_estimates(&report),
            flags: report.flags.into_iter().collect(),
        })),
        Err(Error::DegenerateRatio { .. } | Error::Numeric { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the replicates for one spatial size, in replicate order.
pub fn mc_replicates(
    cfg: &ExperimentConfig,
    truth_tables: &CltTables,
    n_space: usize,
) -> Result<(FieldSampler, Vec<Option<ReplicateOutcome>>)> {
    let grid = cfg.grid.with_n_space(n_space)?;
    let s = sampler(cfg, &grid)?;
    let outcomes = (0..cfg.replicates)
        .into_par_iter()
        .map(|id| estimate_replicate(cfg, truth_tables, &s.sample(id)))
        .collect::<Result<_>>()?;
    Ok((s, outcomes))
}

fn summarize(cfg: &ExperimentConfig, n_space: usize, s: &FieldSampler, outcomes: &[Option<ReplicateOutcome>]) -> McRow {
    let mut failures = 0;
    let mut flag_counts = BTreeMap::new();
    let mut by_param: BTreeMap<String, Vec<&ParamEstimate>> = BTreeMap::new();
    for o in outcomes {
        match o {
            Some(o) => {
                for f in &o.flags {
                    *flag_counts.entry(*f).or_insert(0) += 1;
                }
                for (name, e) in &o.estimates {
                    by_param.entry(name.clone()).or_default().push(e);
                }
            }
            None => failures += 1,
        }
    }
    let params = by_param
        .into_iter()
        .map(|(name, ests)| {
            let summary = ParamSummary::from_estimates(truth_of(&cfg.model, &name), n_space, &ests);
            (name, summary)
        })
        .collect();
    McRow {
        n_space,
        replicates: cfg.replicates,
        failures,
        method: s.method(),
        sampler_warnings: s.warnings().to_vec(),
        params,
        flag_counts,
    }
}

fn write_mc_csv(dir: &Path, report: &McReport, per_n: &[(usize, Vec<Option<ReplicateOutcome>>)]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut f = fs::File::create(dir.join("mc_summary.csv"))?;
    writeln!(f, "# gmf-heat schema_version={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record([
        "n_space",
        "param",
        "truth",
        "n_estimates",
        "mean",
        "bias",
        "sd",
        "rmse",
        "scaled_variance",
        "asymptotic_variance",
        "coverage",
    ])?;
    for row in &report.rows {
        for (name, p) in &row.params {
            w.write_record([
                row.n_space.to_string(),
                name.clone(),
                p.truth.to_string(),
                p.n_estimates.to_string(),
                opt(p.mean),
                opt(p.bias),
                opt(p.sd),
                opt(p.rmse),
                opt(p.scaled_variance),
                opt(p.asymptotic_variance),
                opt(p.coverage),
            ])?;
        }
    }
    w.flush()?;

    let mut f = fs::File::create(dir.join("mc_estimates.csv"))?;
    writeln!(f, "# gmf-heat schema_version={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record([
        "n_space",
        "replicate_id",
        "param",
        "estimate",
        "lower",
        "upper",
        "flags",
    ])?;
    for (n, outcomes) in per_n {
        for o in outcomes.iter().flatten() {
            let flags: Vec<String> = o.flags.iter().map(|f| format!("{f:?}")).collect();
            for (name, e) in &o.estimates {
                w.write_record([
                    n.to_string(),
                    o.replicate_id.to_string(),
                    name.clone(),
                    e.estimate.to_string(),
                    e.ci.lower.to_string(),
                    e.ci.upper.to_string(),
                    flags.join(";"),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo over the N-sweep; writes `mc_report.json` (and CSV tables
/// when the output format is csv).
pub fn cmd_mc(cfg: &ExperimentConfig) -> Result<McReport> {
    let truth_tables = CltTables::compute(&cfg.model, cfg.grid.times(), cfg.grid.delta(), &cfg.lag_options())?;
    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    for n in cfg.sweep_sizes() {
        let (s, outcomes) = mc_replicates(cfg, &truth_tables, n)?;
        rows.push(summarize(cfg, n, &s, &outcomes));
        per_n.push((n, outcomes));
    }
    let report = McReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        variance_source: match cfg.estimation {
            Target::H1 { .. } => "truth".into(),
            Target::Sigmas { .. } => "plugin".into(),
        },
        identifiable: cfg.model.identifiable(),
        rows,
    };
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    write_json(&dir.join("mc_report.json"), &report)?;
    if cfg.output.format == OutputFormat::Csv {
        write_mc_csv(dir, &report, &per_n)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovRow {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub cov: f64,
    pub method: String,
}

/// Covariances Cov(u(t,0), u(s,x)) for x = kδ, k = 0..=lags (x ≥ 0 only;
/// the covariance is even in x). Rows at x = 0 appear twice, from the
/// closed form and from quadrature.
pub fn covtable_rows(cfg: &ExperimentConfig) -> Result<Vec<CovRow>> {
    let times = cfg.grid.times();
    let mut pairs = Vec::new();
    for i in 0..times.len() {
        if cfg.covtable.include_time_zero {
            pairs.push(TimePair::new(times[i], 0.0)?);
        }
        for &s in &times[i..] {
            pairs.push(TimePair::new(times[i], s)?);
        }
    }
    let delta = cfg.grid.delta();
    let jobs: Vec<(TimePair, usize)> = pairs
        .iter()
        .flat_map(|&p| (0..=cfg.covtable.lags).map(move |k| (p, k)))
        .collect();
    let quad = jobs
        .par_iter()
        .map(|&(pair, k)| {
            let x = k as f64 * delta;
            Ok(CovRow {
                t: pair.t,
                s: pair.s,
                x,
                cov: spatial_cov(&cfg.model, pair, x, &cfg.quadrature)?,
                method: "quadrature".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(quad.len() + pairs.len());
    for row in quad {
        if row.x == 0.0 {
            let pair = TimePair { t: row.t, s: row.s };
            rows.push(CovRow {
                cov: temporal_cov(&cfg.model, pair),
                method: "closed_form".into(),
                ..row.clone()
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `covtable.csv`.
pub fn cmd_covtable(cfg: &ExperimentConfig) -> Result<Vec<CovRow>> {
    let rows = covtable_rows(cfg)?;
    ensure_dir(&cfg.output.dir)?;
    let mut f = fs::File::create(cfg.output.dir.join("covtable.csv"))?;
    writeln!(
        f,
        "# gmf-heat schema_version={SCHEMA_VERSION} (x >= 0 only; covariance is even in x)"
    )?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["t", "s", "x", "cov", "method"])?;
    for r in &rows {
        w.write_record([
            r.t.to_string(),
            r.s.to_string(),
            r.x.to_string(),
            r.cov.to_string(),
            r.method.clone(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
