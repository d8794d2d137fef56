//! Seeded synthetic corpora with known structure.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::SeriesCorpus;
use crate::error::Result;
use crate::nn::{rng_from_seed, Rng};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// AR(1) path with unit stationary variance.
pub fn ar1_path(t: usize, phi: f64, rng: &mut Rng) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut x = normal(rng);
    (0..t)
        .map(|_| {
            let out = x;
            x = phi * x + innovation * normal(rng);
            out
        })
        .collect()
}

pub fn ar1_corpus(n: usize, t: usize, phi: f64, seed: u64) -> Result<SeriesCorpus> {
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| ar1_path(t, phi, &mut rng)).collect();
    SeriesCorpus::from_rows(&rows)
}

/// Two factor clusters with different persistence plus a ring of
/// phase-shifted sinusoids whose phases cover half a turn, so that under
/// `1 − |ρ|` the ring closes into a loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub cluster_size: usize,
    pub ring_size: usize,
    pub t: usize,
    pub phi_fast: f64,
    pub phi_slow: f64,
    /// Loading on the cluster factor; within-cluster correlation is its square.
    pub factor_loading: f64,
    pub ring_period: f64,
    pub ring_noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            cluster_size: 20,
            ring_size: 20,
            t: 120,
            phi_fast: 0.3,
            phi_slow: 0.97,
            factor_loading: 0.8,
            ring_period: 12.0,
            ring_noise: 0.2,
        }
    }
}

pub const CLUSTER_FAST: &str = "cluster-fast";
pub const CLUSTER_SLOW: &str = "cluster-slow";
pub const RING: &str = "ring";

fn factor_cluster(size: usize, t: usize, phi: f64, loading: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let factor = ar1_path(t, phi, rng);
    let idio = (1.0 - loading * loading).sqrt();
    (0..size)
        .map(|_| {
            let own = ar1_path(t, phi, rng);
            factor.iter().zip(&own).map(|(f, e)| loading * f + idio * e).collect()
        })
        .collect()
}

pub fn planted_topology(cfg: &PlantedConfig, seed: u64) -> Result<SeriesCorpus> {
    let mut rng = rng_from_seed(seed);
    let mut rows = factor_cluster(cfg.cluster_size, cfg.t, cfg.phi_fast, cfg.factor_loading, &mut rng);
    rows.extend(factor_cluster(cfg.cluster_size, cfg.t, cfg.phi_slow, cfg.factor_loading, &mut rng));
    let mut groups = vec![CLUSTER_FAST.to_string(); cfg.cluster_size];
    groups.extend(vec![CLUSTER_SLOW.to_string(); cfg.cluster_size]);
    for i in 0..cfg.ring_size {
        let phase = PI * i as f64 / cfg.ring_size as f64;
        let row = (0..cfg.t)
            .map(|s| {
                2f64.sqrt() * (2.0 * PI * s as f64 / cfg.ring_period + phase).sin()
                    + cfg.ring_noise * normal(&mut rng)
            })
            .collect();
        rows.push(row);
        groups.push(RING.to_string());
    }
    SeriesCorpus::from_rows(&rows)?.with_groups(groups)
}

/// Clusters whose level is set by membership; each has its own factor
/// loading so the per-cluster correlation manifolds differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartConfig {
    pub levels: Vec<f64>,
    pub loadings: Vec<f64>,
    pub cluster_size: usize,
    pub t: usize,
    pub phi: f64,
    pub level_jitter: f64,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        Self {
            levels: vec![2.0, 6.0, 10.0],
            loadings: vec![0.9, 0.6, 0.3],
            cluster_size: 16,
            t: 40,
            phi: 0.7,
            level_jitter: 0.3,
        }
    }
}

pub fn cold_start_population(cfg: &ColdStartConfig, seed: u64) -> Result<SeriesCorpus> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for (c, (&level, &loading)) in cfg.levels.iter().zip(&cfg.loadings).enumerate() {
        for path in factor_cluster(cfg.cluster_size, cfg.t, cfg.phi, loading, &mut rng) {
            let offset = level + cfg.level_jitter * normal(&mut rng);
            rows.push(path.into_iter().map(|v| offset + v).collect());
            groups.push(format!("cluster-{c}"));
        }
    }
    SeriesCorpus::from_rows(&rows)?.with_groups(groups)
}

/// Uniform pick of `k` distinct indices from `0..n`, sorted.
pub fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k.min(n)].to_vec();
    out.sort_unstable();
    out
}
