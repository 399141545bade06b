use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};

pub const MIN_REPLICATIONS: usize = 99;
pub const DEFAULT_REPLICATIONS: usize = 1000;
/// Redrawn resamples may not exceed this fraction of the replications.
pub const MAX_REDRAW_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64) -> Result<Self> {
        if replications < MIN_REPLICATIONS {
            return Err(Error::invalid(format!(
                "bootstrap needs at least {MIN_REPLICATIONS} replications, got {replications}"
            )));
        }
        Ok(BootstrapConfig { replications, seed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    /// One vector of statistics per replication, in replication order.
    pub draws: Vec<Vec<f64>>,
    pub redraws: usize,
}

impl BootstrapDraws {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

/// Independent generator for replication `rep`.
pub fn substream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draw `n` cluster indices with replacement.
pub fn resample_clusters<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// `(1 + #{draw >= observed}) / (B + 1)`.
pub fn bootstrap_p_value(observed: f64, draws: &[f64]) -> f64 {
    let exceed = draws.iter().filter(|&&d| d >= observed).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}

/// Pairs-cluster bootstrap. `statistic` receives the drawn cluster indices of
/// one resample. Resamples on which it fails numerically are redrawn from the
/// same substream.
pub fn cluster_bootstrap<F>(n_clusters: usize, config: BootstrapConfig, statistic: F) -> Result<BootstrapDraws>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let b = config.replications;
    if b < MIN_REPLICATIONS {
        return Err(Error::invalid(format!("bootstrap needs at least {MIN_REPLICATIONS} replications")));
    }
    if n_clusters < 2 {
        return Err(Error::invalid("bootstrap needs at least two clusters"));
    }
    let allowed = (MAX_REDRAW_FRACTION * b as f64).floor() as usize;
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(config.seed, rep as u64);
            let mut redraws = 0;
            loop {
                let draw = resample_clusters(n_clusters, &mut rng);
                match statistic(&draw) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(e) if e.kind() == ErrorKind::Numerical => {
                        redraws += 1;
                        if redraws > allowed {
                            return Err(Error::TooManyRedraws { redraws, replications: b });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut redraws = 0;
    for r in results {
        let (v, k) = r?;
        draws.push(v);
        redraws += k;
    }
    if redraws > allowed {
        return Err(Error::TooManyRedraws { redraws, replications: b });
    }
    if redraws > 0 {
        log::info!("bootstrap: {redraws} of {b} resamples redrawn");
    }
    Ok(BootstrapDraws { draws, redraws })
}

/// Row indices and fresh cluster labels for a resample of whole clusters.
#[derive(Debug, Clone)]
pub struct ClusterRows {
    rows: Vec<Vec<usize>>,
}

impl ClusterRows {
    pub fn new(clusters: &[usize]) -> Self {
        let g = clusters.iter().max().map_or(0, |&m| m + 1);
        let mut rows = vec![Vec::new(); g];
        for (i, &c) in clusters.iter().enumerate() {
            rows[c].push(i);
        }
        ClusterRows { rows }
    }

    pub fn n_clusters(&self) -> usize {
        self.rows.len()
    }

    /// Each draw becomes its own cluster, so repeated households stay distinct.
    pub fn expand(&self, draw: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (new, &c) in draw.iter().enumerate() {
            for &r in &self.rows[c] {
                rows.push(r);
                labels.push(new);
            }
        }
        (rows, labels)
    }
}
