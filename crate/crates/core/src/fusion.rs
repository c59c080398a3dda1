//! Merge and unmerge operators for combining branch features.
//!
//! At each spatial location two branches are either averaged, when their
//! channel vectors are correlated at or above `delta`, or the branch with the
//! larger spatially normalized std wins the location outright. Unmerging then
//! updates each branch for the next fusion site: averaged locations take the
//! fused vector, the winner keeps its own vector, and the loser is replaced by
//! the winner's vector rescaled to the loser's original std.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{channel_std_map, correlation_map, normalized_std_map, StatsConfig};
use crate::tensor::{shape_string, FeatureMap, Selection, SelectionMask, SpatialMap};

/// Rule applied when both branches have exactly equal σ̂.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Correlation threshold; locations with `rho >= delta` are averaged.
    pub delta: f64,
    /// Rescale losing branches during unmerge. `false` keeps them unchanged.
    pub renormalize: bool,
    pub tie_break: TieBreak,
    #[serde(flatten)]
    pub stats: StatsConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            delta: 0.7,
            renormalize: true,
            tie_break: TieBreak::LowestIndex,
            stats: StatsConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() {
            return Err(Error::invalid("delta", "must be finite"));
        }
        self.stats.validate()
    }
}

#[derive(Clone, Copy, Debug)]
enum Gate {
    Threshold(f64),
    Never,
}

impl Gate {
    fn averages(self, rho: f64) -> bool {
        match self {
            Gate::Threshold(delta) => rho >= delta,
            Gate::Never => false,
        }
    }
}

/// Output of a two-branch merge.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFusion {
    pub f_eff: FeatureMap,
    pub selection: SelectionMask,
    pub rho: SpatialMap,
    /// One σ̂ map per input branch.
    pub sigma_hat: Vec<SpatialMap>,
}

fn mean_of<I: IntoIterator<Item = f32>>(values: I) -> f32 {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for v in values {
        sum += v as f64;
        n += 1;
    }
    (sum / n as f64) as f32
}

/// Elementwise mean across branches.
pub fn naive_average(branches: &[FeatureMap]) -> Result<FeatureMap> {
    let first = branches.first().ok_or(Error::TooFewBranches {
        required: 1,
        got: 0,
    })?;
    for b in &branches[1..] {
        first.ensure_same_shape(b)?;
    }
    let data = (0..first.as_slice().len())
        .map(|i| mean_of(branches.iter().map(|b| b.as_slice()[i])))
        .collect();
    let (c, h, w) = first.shape();
    FeatureMap::new(c, h, w, data)
}

fn pick_winner(s1: f64, s2: f64, tie: TieBreak) -> usize {
    match tie {
        TieBreak::LowestIndex => {
            if s2 > s1 {
                1
            } else {
                0
            }
        }
    }
}

fn merge_with_gate(
    f1: &FeatureMap,
    f2: &FeatureMap,
    cfg: &FusionConfig,
    gate: Gate,
) -> Result<PairFusion> {
    let rho = correlation_map(f1, f2, &cfg.stats)?;
    let sigma_hat = vec![
        normalized_std_map(f1, &cfg.stats),
        normalized_std_map(f2, &cfg.stats),
    ];
    let (c, h, w) = f1.shape();
    let plane = h * w;
    let (a, b) = (f1.as_slice(), f2.as_slice());

    let mut data = vec![0.0f32; c * plane];
    let mut entries = Vec::with_capacity(plane);
    for p in 0..plane {
        let sel = if gate.averages(rho.as_slice()[p]) {
            Selection::Averaged
        } else {
            Selection::Winner(pick_winner(
                sigma_hat[0].as_slice()[p],
                sigma_hat[1].as_slice()[p],
                cfg.tie_break,
            ))
        };
        for ch in 0..c {
            let i = ch * plane + p;
            data[i] = match sel {
                Selection::Averaged => mean_of([a[i], b[i]]),
                Selection::Winner(0) => a[i],
                Selection::Winner(_) => b[i],
            };
        }
        entries.push(sel);
    }

    Ok(PairFusion {
        f_eff: FeatureMap::new(c, h, w, data)?,
        selection: SelectionMask::new(h, w, 2, entries)?,
        rho,
        sigma_hat,
    })
}

/// Fuses two branches: correlation-gated averaging, otherwise σ̂ winner-take-all.
pub fn merge_pair(f1: &FeatureMap, f2: &FeatureMap, cfg: &FusionConfig) -> Result<PairFusion> {
    merge_with_gate(f1, f2, cfg, Gate::Threshold(cfg.delta))
}

/// Winner-take-all at every location, ignoring correlation.
pub fn pure_max_select(f1: &FeatureMap, f2: &FeatureMap, cfg: &FusionConfig) -> Result<PairFusion> {
    merge_with_gate(f1, f2, cfg, Gate::Never)
}

/// Updates both branches after a merge.
///
/// `f1`, `f2` and `result` must be the inputs and output of the same merge.
pub fn unmerge_pair(
    f1: &FeatureMap,
    f2: &FeatureMap,
    result: &PairFusion,
    cfg: &FusionConfig,
) -> Result<(FeatureMap, FeatureMap)> {
    f1.ensure_same_shape(f2)?;
    f1.ensure_same_shape(&result.f_eff)?;
    let (c, h, w) = f1.shape();
    let sel = &result.selection;
    if (sel.height(), sel.width()) != (h, w) {
        return Err(Error::Shape {
            left: shape_string((c, h, w)),
            right: format!("selection {}x{}", sel.height(), sel.width()),
        });
    }

    let plane = h * w;
    let inputs = [f1.as_slice(), f2.as_slice()];
    let fused = result.f_eff.as_slice();
    let sigma = [channel_std_map(f1), channel_std_map(f2)];
    let mut out = [inputs[0].to_vec(), inputs[1].to_vec()];

    for (p, s) in sel.entries().iter().enumerate() {
        match *s {
            Selection::Averaged => {
                for ch in 0..c {
                    let i = ch * plane + p;
                    out[0][i] = fused[i];
                    out[1][i] = fused[i];
                }
            }
            Selection::Winner(winner) => {
                if winner > 1 {
                    return Err(Error::invalid(
                        "selection",
                        format!("winner {winner} in a two-branch merge"),
                    ));
                }
                if !cfg.renormalize {
                    continue;
                }
                let loser = 1 - winner;
                let sigma_max = sigma[winner].as_slice()[p];
                if sigma_max < cfg.stats.epsilon_norm {
                    continue;
                }
                let factor = sigma[loser].as_slice()[p] / sigma_max;
                for ch in 0..c {
                    let i = ch * plane + p;
                    out[loser][i] = if factor == 0.0 {
                        0.0
                    } else {
                        (factor * inputs[winner][i] as f64) as f32
                    };
                }
            }
        }
    }

    let [o1, o2] = out;
    Ok((FeatureMap::new(c, h, w, o1)?, FeatureMap::new(c, h, w, o2)?))
}

/// Result of folding `N` branches pairwise.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub f_eff: FeatureMap,
    /// Post-unmerge feature per input branch.
    pub updated: Vec<FeatureMap>,
    /// Pair merges in fold order; step `i` merges the running result with branch `i + 1`.
    pub steps: Vec<PairFusion>,
}

impl FoldResult {
    /// Averaged locations over all pair steps, as a fraction of all entries.
    pub fn averaged_fraction(&self) -> f64 {
        averaged_fraction(self.steps.iter().map(|s| &s.selection))
    }

    /// For each branch, the fraction of locations it won in the step where it
    /// entered the fold (branch 0 enters as the running side of step 0).
    pub fn win_fractions(&self) -> Vec<f64> {
        win_fractions(
            &self
                .steps
                .iter()
                .map(|s| s.selection.clone())
                .collect::<Vec<_>>(),
        )
    }
}

pub(crate) fn averaged_fraction<'a, I>(masks: I) -> f64
where
    I: IntoIterator<Item = &'a SelectionMask>,
{
    let (mut averaged, mut total) = (0usize, 0usize);
    for m in masks {
        averaged += m.averaged_count();
        total += m.entries().len();
    }
    if total == 0 {
        0.0
    } else {
        averaged as f64 / total as f64
    }
}

pub(crate) fn win_fractions(masks: &[SelectionMask]) -> Vec<f64> {
    if masks.is_empty() {
        return Vec::new();
    }
    let mut out = vec![masks[0].win_fraction(0)];
    out.extend(masks.iter().map(|m| m.win_fraction(1)));
    out
}

fn fold_with_gate(branches: &[FeatureMap], cfg: &FusionConfig, gate: Gate) -> Result<FoldResult> {
    if branches.len() < 2 {
        return Err(Error::TooFewBranches {
            required: 2,
            got: branches.len(),
        });
    }
    let mut running = branches[0].clone();
    let mut updated = branches.to_vec();
    let mut steps = Vec::with_capacity(branches.len() - 1);
    for (b, next) in branches.iter().enumerate().skip(1) {
        let pair = merge_with_gate(&running, next, cfg, gate)?;
        let (chain, branch) = unmerge_pair(&running, next, &pair, cfg)?;
        updated[0] = chain;
        updated[b] = branch;
        running = pair.f_eff.clone();
        steps.push(pair);
    }
    Ok(FoldResult {
        f_eff: running,
        updated,
        steps,
    })
}

/// Left fold of [`merge_pair`] and [`unmerge_pair`] over `N >= 2` branches.
///
/// The running fused feature seeds each next step. `updated[0]` carries the
/// running chain's latest unmerge output and `updated[b]` the output for
/// branch `b` from the step where it was merged in.
pub fn maxfusion_fold(branches: &[FeatureMap], cfg: &FusionConfig) -> Result<FoldResult> {
    fold_with_gate(branches, cfg, Gate::Threshold(cfg.delta))
}

/// [`maxfusion_fold`] with [`pure_max_select`] at every step.
pub fn max_select_fold(branches: &[FeatureMap], cfg: &FusionConfig) -> Result<FoldResult> {
    fold_with_gate(branches, cfg, Gate::Never)
}
