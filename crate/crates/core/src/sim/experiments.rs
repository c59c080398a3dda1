//! Threshold sweeps and strategy comparisons over one scenario.

use crate::error::{Error, Result};
use crate::sim::sampler::{sample, RunReport};
use crate::sim::scenario::{Scenario, Strategy};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub delta: f64,
    pub mse: Vec<f64>,
    pub averaged_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// Whether `averaged_fraction` is non-increasing as delta increases.
    pub monotone: bool,
}

/// Runs the maxfusion strategy once per threshold with the scenario's seed.
pub fn run_ablation(scenario: &Scenario, deltas: &[f64]) -> Result<Ablation> {
    if deltas.is_empty() {
        return Err(Error::invalid("deltas", "at least one threshold required"));
    }
    let rows = deltas
        .iter()
        .map(|&delta| {
            let mut s = scenario.clone();
            s.strategy = Strategy::Maxfusion;
            s.fusion.delta = delta;
            let report = sample(&s)?;
            Ok(AblationRow {
                delta,
                averaged_fraction: report.averaged_fraction(),
                mse: report.mse,
                seed: s.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_delta: Vec<&AblationRow> = rows.iter().collect();
    by_delta.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let monotone = by_delta
        .windows(2)
        .all(|w| w[1].averaged_fraction <= w[0].averaged_fraction);
    Ok(Ablation { rows, monotone })
}

/// One strategy arm of a comparison.
#[derive(Clone, Debug)]
pub struct Arm {
    pub label: String,
    /// Threshold in effect, for the fusion arms only.
    pub delta: Option<f64>,
    pub report: RunReport,
}

/// The strategy arms compared on identical noise: naive averaging, pure max
/// selection, maxfusion with and without renormalization, each single
/// branch, and the unconditional sampler.
pub fn comparison_arms(scenario: &Scenario) -> Vec<(String, Scenario)> {
    let with = |strategy: Strategy, renormalize: bool| {
        let mut s = scenario.clone();
        s.strategy = strategy;
        s.fusion.renormalize = renormalize;
        s
    };
    let renorm = scenario.fusion.renormalize;
    let mut arms = vec![
        ("naive".to_string(), with(Strategy::Naive, renorm)),
        ("max_select".to_string(), with(Strategy::MaxSelect, renorm)),
        ("maxfusion".to_string(), with(Strategy::Maxfusion, true)),
        (
            "maxfusion-no-renorm".to_string(),
            with(Strategy::Maxfusion, false),
        ),
    ];
    for b in 0..scenario.branches.len() {
        let s = with(Strategy::Single(b), renorm);
        arms.push((s.strategy.to_string(), s));
    }
    arms.push((
        "unconditional".to_string(),
        with(Strategy::Unconditional, renorm),
    ));
    arms
}

pub fn compare_strategies(scenario: &Scenario) -> Result<Vec<Arm>> {
    comparison_arms(scenario)
        .into_iter()
        .map(|(label, s)| {
            let delta = matches!(s.strategy, Strategy::Maxfusion).then_some(s.fusion.delta);
            Ok(Arm {
                label,
                delta,
                report: sample(&s)?,
            })
        })
        .collect()
}
