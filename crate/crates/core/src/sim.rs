//! Exact Gaussian sampling of the field on a grid.
//!
//! Two paths share the lag cache. The dense path multiplies a Cholesky factor
//! by i.i.d. normals drawn row-major over (time, site). The circulant path
//! embeds the n×n-block Toeplitz covariance in a block-circulant matrix of
//! size m = 2^p ≥ 2(N−1), diagonalizes it per frequency and synthesizes the
//! sample with one inverse FFT per time; its normals are drawn frequency-major,
//! then time, then real/imaginary part.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::covmatrix::{CovarianceMatrix, LagCache, DEFAULT_JITTER_CAP, DEFAULT_MAX_DIM};
use crate::error::{Error, Result};
use crate::grid::SamplingGrid;
use crate::model::{ModelParams, QuadratureSettings};
use crate::rng::derive_stream;

/// Largest n·N for which `Auto` picks the dense path.
pub const AUTO_DENSE_MAX_DIM: usize = 4096;

/// Relative negativity of embedding eigenvalues treated as quadrature noise.
const EIGEN_CLIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMethod {
    Dense,
    Circulant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MethodChoice {
    Dense,
    Circulant,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub method: MethodChoice,
    pub jitter_cap: f64,
    /// Largest embedding length as a multiple of the minimal one.
    pub embedding_pad_factor: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            method: MethodChoice::Auto,
            jitter_cap: DEFAULT_JITTER_CAP,
            embedding_pad_factor: 8,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_cap >= 0.0 && self.jitter_cap.is_finite()) {
            return Err(Error::domain(format!(
                "jitter cap must be finite and ≥ 0, got {}",
                self.jitter_cap
            )));
        }
        if self.embedding_pad_factor < 2 || !self.embedding_pad_factor.is_power_of_two() {
            return Err(Error::domain(format!(
                "embedding pad factor must be a power of two ≥ 2, got {}",
                self.embedding_pad_factor
            )));
        }
        Ok(())
    }
}

/// Non-fatal events while preparing a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimWarning {
    /// Dense factorization needed a diagonal shift.
    JitterApplied { jitter: f64 },
    /// Circulant spectrum stayed indefinite up to the pad cap.
    CirculantFallback {
        min_eigenvalue_ratio: f64,
        embedding_len: usize,
    },
}

/// Simulated field values[i][k] = u(t_i, (k+1)δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub grid: SamplingGrid,
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
    pub replicate_id: u64,
    pub method: SimMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<SimWarning>,
}

impl FieldSample {
    pub fn new(
        grid: SamplingGrid,
        values: Vec<Vec<f64>>,
        seed: u64,
        replicate_id: u64,
        method: SimMethod,
    ) -> Result<Self> {
        let sample = FieldSample {
            grid,
            values,
            seed,
            replicate_id,
            method,
            warnings: Vec::new(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.grid.n_times() || self.values.iter().any(|row| row.len() != self.grid.n_space()) {
            return Err(Error::Format(format!(
                "sample values must be {}×{}",
                self.grid.n_times(),
                self.grid.n_space()
            )));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("sample values must be finite".into()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }
}

enum Engine {
    Dense {
        lower: DMatrix<f64>,
    },
    Circulant {
        len: usize,
        /// Λ(ω)^{1/2} for ω = 0..len.
        roots: Vec<DMatrix<f64>>,
        ifft: Arc<dyn Fft<f64>>,
    },
}

/// Prepared sampler; the factor or spectral roots are shared across replicates.
pub struct FieldSampler {
    grid: SamplingGrid,
    seed: u64,
    engine: Engine,
    warnings: Vec<SimWarning>,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSampler")
            .field("grid", &self.grid)
            .field("seed", &self.seed)
            .field("method", &self.method())
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl FieldSampler {
    pub fn new(p: &ModelParams, grid: &SamplingGrid, config: &SimConfig, q: &QuadratureSettings) -> Result<Self> {
        config.validate()?;
        q.validate()?;
        let method = match config.method {
            MethodChoice::Dense => SimMethod::Dense,
            MethodChoice::Circulant => SimMethod::Circulant,
            MethodChoice::Auto if grid.dim() <= AUTO_DENSE_MAX_DIM => SimMethod::Dense,
            MethodChoice::Auto => SimMethod::Circulant,
        };
        match method {
            SimMethod::Dense => Self::dense(p, grid, config, q, Vec::new()),
            SimMethod::Circulant => Self::circulant(p, grid, config, q),
        }
    }

    fn dense(
        p: &ModelParams,
        grid: &SamplingGrid,
        config: &SimConfig,
        q: &QuadratureSettings,
        mut warnings: Vec<SimWarning>,
    ) -> Result<Self> {
        if grid.dim() > DEFAULT_MAX_DIM {
            return Err(Error::Resource(format!(
                "dense covariance of dimension {} exceeds the cap {DEFAULT_MAX_DIM}",
                grid.dim()
            )));
        }
        let cache = LagCache::build(p, grid, grid.n_space(), q)?;
        let factor = CovarianceMatrix::from_cache(grid, &cache).factor(config.jitter_cap)?;
        if factor.jitter_applied > 0.0 {
            warnings.push(SimWarning::JitterApplied {
                jitter: factor.jitter_applied,
            });
        }
        Ok(FieldSampler {
            grid: grid.clone(),
            seed: config.seed,
            engine: Engine::Dense { lower: factor.lower },
            warnings,
        })
    }

    fn circulant(p: &ModelParams, grid: &SamplingGrid, config: &SimConfig, q: &QuadratureSettings) -> Result<Self> {
        let min_len = minimal_embedding_len(grid.n_space());
        let max_len = min_len * config.embedding_pad_factor;
        let mut len = min_len;
        let mut worst = 0.0;
        let mut cache: Option<LagCache> = None;
        while len <= max_len {
            let need = len / 2 + 1;
            if !cache.as_ref().is_some_and(|c| c.n_lags() >= need) {
                cache = Some(LagCache::build(p, grid, need, q)?);
            }
            let spectrum = block_spectrum(cache.as_ref().unwrap(), len);
            match spectral_roots(&spectrum) {
                Ok(roots) => {
                    let ifft = FftPlanner::new().plan_fft_inverse(len);
                    return Ok(FieldSampler {
                        grid: grid.clone(),
                        seed: config.seed,
                        engine: Engine::Circulant { len, roots, ifft },
                        warnings: Vec::new(),
                    });
                }
                Err(ratio) => worst = ratio,
            }
            len *= 2;
        }
        let warning = SimWarning::CirculantFallback {
            min_eigenvalue_ratio: worst,
            embedding_len: max_len,
        };
        Self::dense(p, grid, config, q, vec![warning])
    }

    pub fn method(&self) -> SimMethod {
        match self.engine {
            Engine::Dense { .. } => SimMethod::Dense,
            Engine::Circulant { .. } => SimMethod::Circulant,
        }
    }

    pub fn warnings(&self) -> &[SimWarning] {
        &self.warnings
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Embedding length m of the circulant path.
    pub fn embedding_len(&self) -> Option<usize> {
        match self.engine {
            Engine::Circulant { len, .. } => Some(len),
            Engine::Dense { .. } => None,
        }
    }

    pub fn sample(&self, replicate_id: u64) -> FieldSample {
        let n = self.grid.n_times();
        let big_n = self.grid.n_space();
        let mut stream = derive_stream(self.seed, replicate_id);
        let values = match &self.engine {
            Engine::Dense { lower } => {
                let z = nalgebra::DVector::from_vec(stream.take(self.grid.dim()));
                let x = lower * z;
                (0..n)
                    .map(|i| x.as_slice()[i * big_n..(i + 1) * big_n].to_vec())
                    .collect()
            }
            Engine::Circulant { len, roots, ifft } => {
                let len = *len;
                let mut spectra = vec![vec![Complex::new(0.0, 0.0); len]; n];
                let mut re = nalgebra::DVector::zeros(n);
                let mut im = nalgebra::DVector::zeros(n);
                for (w, root) in roots.iter().enumerate() {
                    for i in 0..n {
                        re[i] = stream.next_normal();
                        im[i] = stream.next_normal();
                    }
                    let yr = root * &re;
                    let yi = root * &im;
                    for i in 0..n {
                        spectra[i][w] = Complex::new(yr[i], yi[i]);
                    }
                }
                let scale = 1.0 / (len as f64).sqrt();
                spectra
                    .into_iter()
                    .map(|mut s| {
                        ifft.process(&mut s);
                        s[..big_n].iter().map(|c| c.re * scale).collect()
                    })
                    .collect()
            }
        };
        FieldSample {
            grid: self.grid.clone(),
            values,
            seed: self.seed,
            replicate_id,
            method: self.method(),
            warnings: self.warnings.clone(),
        }
    }

    /// Replicates `ids` in parallel, returned in order.
    pub fn sample_many(&self, ids: std::ops::Range<u64>) -> Vec<FieldSample> {
        ids.into_par_iter().map(|r| self.sample(r)).collect()
    }
}

/// Smallest power of two ≥ 2(N−1) (and ≥ 2).
pub fn minimal_embedding_len(n_space: usize) -> usize {
    (2 * n_space.saturating_sub(1)).max(2).next_power_of_two()
}

/// Λ(ω) = Σ_l c(l) e^{−2πilω/m} with c(l) = C(min(l, m−l)); real symmetric.
fn block_spectrum(cache: &LagCache, len: usize) -> Vec<DMatrix<f64>> {
    let n = cache.n_times();
    let fft = FftPlanner::new().plan_fft_forward(len);
    let mut out = vec![DMatrix::zeros(n, n); len];
    for i in 0..n {
        for j in i..n {
            let mut buf: Vec<Complex<f64>> = (0..len)
                .map(|l| Complex::new(cache.cov(i, j, l.min(len - l) as i64), 0.0))
                .collect();
            fft.process(&mut buf);
            for (w, c) in buf.iter().enumerate() {
                out[w][(i, j)] = c.re;
                out[w][(j, i)] = c.re;
            }
        }
    }
    out
}

/// Symmetric square roots of every block, or the worst eigenvalue ratio when
/// some block is negative beyond the clipping tolerance.
fn spectral_roots(spectrum: &[DMatrix<f64>]) -> std::result::Result<Vec<DMatrix<f64>>, f64> {
    let eigs: Vec<SymmetricEigen<f64, nalgebra::Dyn>> =
        spectrum.iter().map(|b| SymmetricEigen::new(b.clone())).collect();
    let max = eigs
        .iter()
        .flat_map(|e| e.eigenvalues.iter().cloned())
        .fold(0.0, f64::max);
    let min = eigs
        .iter()
        .flat_map(|e| e.eigenvalues.iter().cloned())
        .fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min < -EIGEN_CLIP_TOL * max {
        return Err(if max > 0.0 { min / max } else { f64::NEG_INFINITY });
    }
    Ok(eigs
        .into_iter()
        .map(|e| {
            let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &e.eigenvectors * d * e.eigenvectors.transpose()
        })
        .collect())
}

pub fn sample_field_dense(p: &ModelParams, grid: &SamplingGrid, seed: u64, replicate_id: u64) -> Result<FieldSample> {
    let config = SimConfig {
        method: MethodChoice::Dense,
        seed,
        ..SimConfig::default()
    };
    Ok(FieldSampler::new(p, grid, &config, &QuadratureSettings::default())?.sample(replicate_id))
}

/// Circulant sample for replicate 0 of `config.seed`; falls back to the dense
/// path (flagged in `warnings`) when the embedding stays indefinite.
pub fn sample_field_circulant(p: &ModelParams, grid: &SamplingGrid, config: &SimConfig) -> Result<FieldSample> {
    let config = SimConfig {
        method: MethodChoice::Circulant,
        ..config.clone()
    };
    Ok(FieldSampler::new(p, grid, &config, &QuadratureSettings::default())?.sample(0))
}
