use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SpatialMap;

/// Linear-beta DDPM schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule.steps", "must be at least 1"));
        }
        let in_range = |b: f64| b.is_finite() && b > 0.0 && b < 1.0;
        if !in_range(beta_start) || !in_range(beta_end) {
            return Err(Error::invalid(
                "schedule.beta",
                format!("betas must lie in (0, 1), got {beta_start}..{beta_end}"),
            ));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps).map(|t| beta_start + step * t as f64).collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// Cumulative product of alphas up to and including `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// Mean and variance of the prior diffused to step `t`.
    pub fn marginal(&self, t: usize, prior: &Prior) -> Result<(f64, f64)> {
        self.check(t)?;
        let ab = self.alpha_bar(t);
        Ok((
            ab.sqrt() * prior.mean,
            ab * prior.std * prior.std + 1.0 - ab,
        ))
    }
}

/// Per-pixel i.i.d. Gaussian data distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prior {
    pub mean: f64,
    pub std: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

pub(crate) fn score_into(x: &[f64], mean: f64, var: f64, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = -(v - mean) / var;
    }
}

/// Exact score `∇ log p_t(x)` of the diffused Gaussian prior.
pub fn analytic_score(
    x: &SpatialMap,
    t: usize,
    schedule: &NoiseSchedule,
    prior: &Prior,
) -> Result<SpatialMap> {
    let (mean, var) = schedule.marginal(t, prior)?;
    let mut out = vec![0.0; x.len()];
    score_into(x.as_slice(), mean, var, &mut out);
    SpatialMap::new(x.height(), x.width(), out)
}
