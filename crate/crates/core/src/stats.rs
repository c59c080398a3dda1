//! Per-location channel statistics.
//!
//! All accumulation happens in `f64`. Spatial reductions run sequentially in
//! row-major order so results are reproducible bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, SpatialMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    /// Norms and σ sums below this are treated as zero.
    pub epsilon_norm: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            epsilon_norm: 1e-12,
        }
    }
}

impl StatsConfig {
    pub fn new(epsilon_norm: f64) -> Result<Self> {
        let cfg = Self { epsilon_norm };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_norm.is_finite() && self.epsilon_norm > 0.0) {
            return Err(Error::invalid(
                "epsilon_norm",
                format!("must be positive and finite, got {}", self.epsilon_norm),
            ));
        }
        Ok(())
    }
}

/// Population standard deviation of a channel vector.
pub fn channel_std<I>(values: I) -> f64
where
    I: IntoIterator<Item = f32>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let (mut n, mut sum) = (0usize, 0.0f64);
    for v in iter.clone() {
        n += 1;
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let var = iter
        .map(|v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

/// σ map: population std over channels at every location.
pub fn channel_std_map(f: &FeatureMap) -> SpatialMap {
    let data = (0..f.plane_len())
        .map(|p| channel_std(f.channel_iter(p)))
        .collect();
    SpatialMap::new(f.height(), f.width(), data).expect("std of finite values is finite")
}

/// Divides a σ map by its spatial sum; a sum below epsilon yields the uniform map.
pub fn normalize_std(sigma: &SpatialMap, cfg: &StatsConfig) -> SpatialMap {
    let total = sigma.sum();
    let n = sigma.len() as f64;
    let data = if total < cfg.epsilon_norm {
        vec![1.0 / n; sigma.len()]
    } else {
        sigma.as_slice().iter().map(|s| s / total).collect()
    };
    SpatialMap::new(sigma.height(), sigma.width(), data).expect("finite ratios")
}

/// σ̂ map: σ normalized to sum to one across all spatial locations.
pub fn normalized_std_map(f: &FeatureMap, cfg: &StatsConfig) -> SpatialMap {
    normalize_std(&channel_std_map(f), cfg)
}

/// Cosine similarity of two channel vectors, clamped to `[-1, 1]`.
///
/// Returns 0 when either norm is below `epsilon_norm`.
pub fn cosine<A, B>(a: A, b: B, cfg: &StatsConfig) -> f64
where
    A: IntoIterator<Item = f32>,
    B: IntoIterator<Item = f32>,
{
    let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.into_iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na < cfg.epsilon_norm || nb < cfg.epsilon_norm {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// ρ map: per-location cosine correlation between two branches.
pub fn correlation_map(f1: &FeatureMap, f2: &FeatureMap, cfg: &StatsConfig) -> Result<SpatialMap> {
    f1.ensure_same_shape(f2)?;
    let data = (0..f1.plane_len())
        .map(|p| cosine(f1.channel_iter(p), f2.channel_iter(p), cfg))
        .collect();
    SpatialMap::new(f1.height(), f1.width(), data)
}
