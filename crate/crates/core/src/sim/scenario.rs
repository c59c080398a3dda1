//! Scenario configuration, validation, and the named presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::sim::schedule::{NoiseSchedule, Prior};
use crate::tensor::SpatialMap;

pub const PRESETS: [&str; 3] = ["contradictory", "complementary", "three_way"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Spatial support of a condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    /// 1 inside the rectangle, 0 elsewhere.
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Row-major `H*W` values in `[0, 1]`.
    Field(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Constant(f64),
    Field(Vec<f64>),
}

/// Branch embedding direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpec {
    /// `w[c] = 1 + amplitude * sqrt(2) * cos(2πc/C + phase)`, which has channel
    /// mean 1 and channel std `amplitude` for `C >= 2`.
    Cosine {
        phase: f64,
        amplitude: f64,
    },
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub mask: MaskSpec,
    pub target: TargetSpec,
    pub embedding: EmbeddingSpec,
    #[serde(default = "default_strength")]
    pub strength: f64,
}

fn default_strength() -> f64 {
    1.0
}

/// A condition resolved onto the scenario grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub mask: SpatialMap,
    pub target: SpatialMap,
    pub embedding: Vec<f64>,
    pub strength: f64,
}

/// How branch encodings are combined at every step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Maxfusion,
    Naive,
    MaxSelect,
    Single(usize),
    Unconditional,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Maxfusion => f.write_str("maxfusion"),
            Strategy::Naive => f.write_str("naive"),
            Strategy::MaxSelect => f.write_str("max_select"),
            Strategy::Single(b) => write!(f, "single({b})"),
            Strategy::Unconditional => f.write_str("unconditional"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "strategy",
                format!(
                    "unknown strategy {s:?}; expected maxfusion, naive, max_select, \
                     single(<b>) or unconditional"
                ),
            )
        };
        Ok(match s {
            "maxfusion" => Strategy::Maxfusion,
            "naive" => Strategy::Naive,
            "max_select" => Strategy::MaxSelect,
            "unconditional" => Strategy::Unconditional,
            _ => {
                let index = s
                    .strip_prefix("single(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(bad)?;
                Strategy::Single(index.parse().map_err(|_| bad())?)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub schedule: ScheduleConfig,
    pub branches: Vec<BranchSpec>,
    pub guidance_weight: f64,
    pub prior: Prior,
    pub seed: u64,
    pub fusion: FusionConfig,
    pub strategy: Strategy,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 8,
            schedule: ScheduleConfig::default(),
            branches: Vec::new(),
            guidance_weight: 1.5,
            prior: Prior::default(),
            seed: 42,
            fusion: FusionConfig::default(),
            strategy: Strategy::Maxfusion,
        }
    }
}

fn rect(top: usize, left: usize, height: usize, width: usize) -> MaskSpec {
    MaskSpec::Rect {
        top,
        left,
        height,
        width,
    }
}

fn cosine(phase: f64) -> EmbeddingSpec {
    EmbeddingSpec::Cosine {
        phase,
        amplitude: 0.5,
    }
}

fn branch(mask: MaskSpec, target: f64, phase: f64) -> BranchSpec {
    BranchSpec {
        mask,
        target: TargetSpec::Constant(target),
        embedding: cosine(phase),
        strength: 1.0,
    }
}

impl Scenario {
    /// Looks up a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let branches = match name {
            // Disjoint supports, opposing targets.
            "contradictory" => vec![
                branch(rect(2, 1, 12, 6), 1.5, 0.0),
                branch(rect(2, 9, 12, 6), -1.5, PI / 2.0),
            ],
            // Overlapping supports, one target; embeddings have cosine 0.9.
            "complementary" => vec![
                branch(rect(2, 2, 9, 9), 1.5, 0.0),
                branch(rect(5, 5, 9, 9), 1.5, PI / 3.0),
            ],
            "three_way" => vec![
                branch(rect(1, 1, 6, 14), 1.5, 0.0),
                branch(rect(9, 1, 6, 6), -1.5, 2.0 * PI / 3.0),
                branch(rect(9, 9, 6, 6), 2.5, 4.0 * PI / 3.0),
            ],
            _ => {
                return Err(Error::invalid(
                    "preset",
                    format!(
                        "unknown preset {name:?}; valid presets: {}",
                        PRESETS.join(", ")
                    ),
                ))
            }
        };
        Ok(Self {
            branches,
            ..Self::default()
        })
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Uniform channel read-out with `⟨u, w_b⟩ = 1` for every valid embedding.
    pub fn readout(&self) -> Vec<f64> {
        vec![1.0 / self.channels as f64; self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Validates every field and resolves branch conditions onto the grid.
    pub fn resolve(&self) -> Result<Vec<Branch>> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("height/width", "grid must be non-empty"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels", "must be at least 1"));
        }
        self.schedule.build()?;
        if !(self.guidance_weight.is_finite() && self.guidance_weight >= 0.0) {
            return Err(Error::invalid(
                "guidance_weight",
                format!(
                    "must be finite and non-negative, got {}",
                    self.guidance_weight
                ),
            ));
        }
        if !self.prior.mean.is_finite() {
            return Err(Error::invalid("prior.mean", "must be finite"));
        }
        if !(self.prior.std.is_finite() && self.prior.std >= 0.0) {
            return Err(Error::invalid(
                "prior.std",
                "must be finite and non-negative",
            ));
        }
        self.fusion
            .validate()
            .map_err(|e| Error::invalid("fusion", e.to_string()))?;
        if let Strategy::Single(b) = self.strategy {
            if b >= self.branches.len() {
                return Err(Error::invalid(
                    "strategy",
                    format!("single({b}) with {} branches", self.branches.len()),
                ));
            }
        }
        let u = self.readout();
        self.branches
            .iter()
            .enumerate()
            .map(|(i, spec)| self.resolve_branch(i, spec, &u))
            .collect()
    }

    fn resolve_branch(&self, i: usize, spec: &BranchSpec, readout: &[f64]) -> Result<Branch> {
        let field = |name: &str| format!("branches[{i}].{name}");
        let (h, w, c) = (self.height, self.width, self.channels);

        let mask = match &spec.mask {
            MaskSpec::Rect {
                top,
                left,
                height,
                width,
            } => {
                if top + height > h || left + width > w {
                    return Err(Error::invalid(
                        field("mask"),
                        format!("rectangle exceeds the {h}x{w} grid"),
                    ));
                }
                SpatialMap::from_fn(h, w, |j, k| {
                    let inside =
                        (*top..top + height).contains(&j) && (*left..left + width).contains(&k);
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                })?
            }
            MaskSpec::Field(values) => SpatialMap::new(h, w, values.clone())
                .map_err(|e| Error::invalid(field("mask"), e.to_string()))?,
        };
        if mask.as_slice().iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid(field("mask"), "values must lie in [0, 1]"));
        }

        let target = match &spec.target {
            TargetSpec::Constant(v) => SpatialMap::filled(h, w, *v),
            TargetSpec::Field(values) => SpatialMap::new(h, w, values.clone()),
        }
        .map_err(|e| Error::invalid(field("target"), e.to_string()))?;

        let embedding = match &spec.embedding {
            EmbeddingSpec::Cosine { phase, amplitude } => {
                if c == 1 {
                    vec![1.0]
                } else {
                    (0..c)
                        .map(|ch| {
                            let angle = 2.0 * PI * ch as f64 / c as f64 + phase;
                            1.0 + amplitude * 2f64.sqrt() * angle.cos()
                        })
                        .collect()
                }
            }
            EmbeddingSpec::Vector(v) => v.clone(),
        };
        if embedding.len() != c {
            return Err(Error::invalid(
                field("embedding"),
                format!("expected {c} values, got {}", embedding.len()),
            ));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(field("embedding"), "must be finite"));
        }
        let read: f64 = readout.iter().zip(&embedding).map(|(u, w)| u * w).sum();
        if (read - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                field("embedding"),
                format!("read-out of the embedding must be 1, got {read}"),
            ));
        }

        if !(spec.strength.is_finite() && spec.strength > 0.0) {
            return Err(Error::invalid(field("strength"), "must be positive"));
        }

        Ok(Branch {
            mask,
            target,
            embedding,
            strength: spec.strength,
        })
    }
}
