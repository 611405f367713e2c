//! Dense covariance of the stacked field vector and its Cholesky factor.
//!
//! Entries are indexed by (i, k) ↦ i·N + k, i.e. row-major over
//! (time, site). Only n(n+1)/2 · N distinct values exist: the matrix is
//! block-Toeplitz in the site index and symmetric.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::grid::SamplingGrid;
use crate::lags::LagCovarianceTable;
use crate::model::{ModelParams, QuadratureSettings};

/// Largest n·N assembled densely (≈ 512 MiB of f64 at the cap).
pub const DEFAULT_MAX_DIM: usize = 8192;

/// Initial relative jitter tried after a failed factorization.
const JITTER_START: f64 = 1e-15;

/// Default upper bound on the relative jitter.
pub const DEFAULT_JITTER_CAP: f64 = 1e-8;

/// Lag tables ρ_{t_i,t_j}(0..N) for every i ≤ j, the shared cache behind both
/// dense assembly and circulant embedding.
#[derive(Debug, Clone)]
pub struct LagCache {
    n_times: usize,
    tables: Vec<LagCovarianceTable>,
}

impl LagCache {
    pub fn build(p: &ModelParams, grid: &SamplingGrid, n_lags: usize, q: &QuadratureSettings) -> Result<Self> {
        let tables = grid
            .upper_pairs()
            .into_iter()
            .map(|(_, _, pair)| LagCovarianceTable::compute(p, pair, grid.delta(), n_lags, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(LagCache {
            n_times: grid.n_times(),
            tables,
        })
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // offset of row i in the packed upper triangle
        i * self.n_times - i * (i + 1) / 2 + j
    }

    pub fn table(&self, i: usize, j: usize) -> &LagCovarianceTable {
        &self.tables[self.slot(i, j)]
    }

    /// Cov(u(t_i, kδ), u(t_j, lδ)) for lag = k − l.
    pub fn cov(&self, i: usize, j: usize, lag: i64) -> f64 {
        self.table(i, j).get(lag).expect("lag within the cached range")
    }

    pub fn n_lags(&self) -> usize {
        self.tables[0].values.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub grid: SamplingGrid,
    pub entries: DMatrix<f64>,
    pub jitter_applied: f64,
}

/// Lower-triangular factor L with L Lᵀ = Σ + jitter·I.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    pub jitter_applied: f64,
}

pub fn cov_matrix(p: &ModelParams, grid: &SamplingGrid, q: &QuadratureSettings) -> Result<CovarianceMatrix> {
    cov_matrix_capped(p, grid, q, DEFAULT_MAX_DIM)
}

pub fn cov_matrix_capped(
    p: &ModelParams,
    grid: &SamplingGrid,
    q: &QuadratureSettings,
    max_dim: usize,
) -> Result<CovarianceMatrix> {
    check_dim(grid, max_dim)?;
    let cache = LagCache::build(p, grid, grid.n_space(), q)?;
    Ok(CovarianceMatrix::from_cache(grid, &cache))
}

fn check_dim(grid: &SamplingGrid, max_dim: usize) -> Result<()> {
    if grid.dim() > max_dim {
        return Err(Error::Resource(format!(
            "dense covariance of dimension {} exceeds the cap {max_dim}; use the circulant sampler",
            grid.dim()
        )));
    }
    Ok(())
}

impl CovarianceMatrix {
    pub fn from_cache(grid: &SamplingGrid, cache: &LagCache) -> Self {
        let n = grid.n_space();
        let dim = grid.dim();
        let entries = DMatrix::from_fn(dim, dim, |r, c| {
            let (i, k) = (r / n, r % n);
            let (j, l) = (c / n, c % n);
            cache.cov(i, j, k as i64 - l as i64)
        });
        CovarianceMatrix {
            grid: grid.clone(),
            entries,
            jitter_applied: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Entry ((i,k),(j,l)).
    pub fn get(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        let n = self.grid.n_space();
        self.entries[(i * n + k, j * n + l)]
    }

    pub fn max_diagonal(&self) -> f64 {
        self.entries.diagonal().iter().cloned().fold(0.0, f64::max)
    }

    /// Cholesky factor, adding ε·max-diagonal to the diagonal on failure with
    /// ε doubling from 1e-15 up to `jitter_cap`.
    pub fn factor(&self, jitter_cap: f64) -> Result<CholeskyFactor> {
        let scale = self.max_diagonal();
        let mut eps = 0.0;
        loop {
            let mut m = self.entries.clone();
            if eps > 0.0 {
                for d in 0..m.nrows() {
                    m[(d, d)] += eps * scale;
                }
            }
            if let Some(ch) = Cholesky::<f64, Dyn>::new(m) {
                return Ok(CholeskyFactor {
                    lower: ch.unpack(),
                    jitter_applied: eps * scale,
                });
            }
            eps = if eps == 0.0 { JITTER_START } else { 2.0 * eps };
            if eps > jitter_cap {
                return Err(Error::numeric(
                    format!("covariance not positive definite within jitter cap {jitter_cap:e}"),
                    eps / 2.0,
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimePair;
    use crate::moments::model_mu;
    use crate::spatial::spatial_cov;

    fn params() -> ModelParams {
        ModelParams::new(0.3, 0.6, 1.0, 2.0).unwrap()
    }

    #[test]
    fn single_point_is_variance() {
        let g = SamplingGrid::new(vec![1.0], 1.0, 1).unwrap();
        let m = cov_matrix(&params(), &g, &QuadratureSettings::default()).unwrap();
        assert_eq!(m.dim(), 1);
        let mu = model_mu(&params(), 1.0).unwrap();
        assert!((m.entries[(0, 0)] - mu).abs() < 1e-8);
    }

    #[test]
    fn entries_match_direct_covariances() {
        let q = QuadratureSettings::default();
        let g = SamplingGrid::new(vec![1.0, 2.0], 1.0, 3).unwrap();
        let m = cov_matrix(&params(), &g, &q).unwrap();
        assert_eq!(m.dim(), 6);
        for i in 0..2 {
            for k in 0..3 {
                for j in 0..2 {
                    for l in 0..3 {
                        let pair = TimePair::new(g.times()[j], g.times()[i]).unwrap();
                        let x = g.site(k) - g.site(l);
                        let direct = spatial_cov(&params(), pair, x, &q).unwrap();
                        assert!((m.get(i, k, j, l) - direct).abs() <= 1e-12, "({i},{k}),({j},{l})");
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_and_block_toeplitz() {
        let g = SamplingGrid::new(vec![0.5, 1.0, 3.0], 0.7, 5).unwrap();
        let m = cov_matrix(&params(), &g, &QuadratureSettings::default()).unwrap();
        assert_eq!(m.entries, m.entries.transpose());
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..4 {
                        assert_eq!(m.get(i, k, j, l), m.get(i, k + 1, j, l + 1));
                    }
                }
            }
        }
        let f = m.factor(DEFAULT_JITTER_CAP).unwrap();
        assert!(f.jitter_applied <= 1e-10 * m.max_diagonal());
        let rebuilt = &f.lower * f.lower.transpose();
        assert!((rebuilt - &m.entries).amax() < 1e-10);
    }

    #[test]
    fn memory_cap_is_enforced() {
        let g = SamplingGrid::new(vec![1.0, 2.0], 1.0, 100).unwrap();
        let err = cov_matrix_capped(&params(), &g, &QuadratureSettings::default(), 150).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn indefinite_matrix_fails_after_cap() {
        let g = SamplingGrid::new(vec![1.0], 1.0, 2).unwrap();
        let m = CovarianceMatrix {
            grid: g,
            entries: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            jitter_applied: 0.0,
        };
        assert!(matches!(m.factor(1e-8), Err(Error::Numeric { .. })));
    }
}
