use std::path::{Path, PathBuf};

use gmf_heat::asymptotics::Target;
use gmf_heat::covmatrix::DEFAULT_JITTER_CAP;
use gmf_heat::error::{Error, Result};
use gmf_heat::grid::SamplingGrid;
use gmf_heat::io::OutputFormat;
use gmf_heat::lags::LagTableOptions;
use gmf_heat::model::{ModelParams, QuadratureSettings};
use gmf_heat::sim::{MethodChoice, SimConfig};
use serde::{Deserialize, Serialize};

/// One experiment: truth, grid, what to estimate and how to report it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub grid: SamplingGrid,
    pub estimation: Target,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub lags: LagSettings,
    /// Spatial sizes N for `mc`; empty means the grid's own N.
    #[serde(default)]
    pub sweep: Vec<usize>,
    #[serde(default)]
    pub covtable: CovtableSettings,
}

fn default_replicates() -> u64 {
    1
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            format: OutputFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub method: MethodChoice,
    pub jitter_cap: f64,
    pub embedding_pad_factor: usize,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            method: MethodChoice::Auto,
            jitter_cap: DEFAULT_JITTER_CAP,
            embedding_pad_factor: 8,
        }
    }
}

/// Truncation of the lag series behind the asymptotic variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagSettings {
    pub rel_tol: f64,
    pub min_lag: usize,
    pub max_lag: usize,
}

impl Default for LagSettings {
    fn default() -> Self {
        let d = LagTableOptions::default();
        LagSettings {
            rel_tol: d.rel_tol,
            min_lag: d.min_lag,
            max_lag: d.max_lag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovtableSettings {
    /// Largest lag k emitted (x = kδ for k = 0..=lags).
    pub lags: usize,
    /// Also emit rows with s = 0.
    pub include_time_zero: bool,
}

impl Default for CovtableSettings {
    fn default() -> Self {
        CovtableSettings {
            lags: 16,
            include_time_zero: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::domain(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::domain("replicates must be ≥ 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let need = self.estimation.n_times();
        if self.grid.n_times() != need {
            return Err(Error::domain(format!(
                "{} estimation needs exactly {need} observation times, grid has {}",
                self.target_name(),
                self.grid.n_times()
            )));
        }
        match self.estimation {
            Target::H1 { h2 } => {
                if h2 != self.model.h2() {
                    return Err(Error::domain("known H2 differs from the model's H2"));
                }
            }
            Target::Sigmas { h1, h2 } => {
                if h1 != self.model.h1() || h2 != self.model.h2() {
                    return Err(Error::domain("known Hurst indices differ from the model's"));
                }
                if h1 == h2 {
                    return Err(Error::domain("σ estimation needs H1 ≠ H2"));
                }
            }
        }
        if self.sweep.contains(&0) {
            return Err(Error::domain("sweep sizes must be ≥ 1"));
        }
        self.quadrature.validate()?;
        self.sim_config().validate()?;
        let lags = self.lag_options();
        if !(lags.rel_tol > 0.0 && lags.rel_tol < 1.0) || lags.min_lag > lags.max_lag {
            return Err(Error::domain("lag settings need 0 < rel_tol < 1 and min_lag ≤ max_lag"));
        }
        Ok(())
    }

    pub fn target_name(&self) -> &'static str {
        match self.estimation {
            Target::H1 { .. } => "h1",
            Target::Sigmas { .. } => "sigmas",
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            method: self.simulation.method,
            jitter_cap: self.simulation.jitter_cap,
            embedding_pad_factor: self.simulation.embedding_pad_factor,
            seed: self.seed,
        }
    }

    pub fn lag_options(&self) -> LagTableOptions {
        LagTableOptions {
            rel_tol: self.lags.rel_tol,
            quadrature: self.quadrature,
            min_lag: self.lags.min_lag,
            max_lag: self.lags.max_lag,
        }
    }

    pub fn sweep_sizes(&self) -> Vec<usize> {
        if self.sweep.is_empty() {
            vec![self.grid.n_space()]
        } else {
            self.sweep.clone()
        }
    }
}
