//! Ancestral sampling with fused branch guidance.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fusion::{self, max_select_fold, maxfusion_fold, naive_average, FusionConfig};
use crate::sim::scenario::{Branch, Scenario, Strategy};
use crate::sim::schedule::score_into;
use crate::stats::channel_std_map;
use crate::tensor::{FeatureMap, Selection, SelectionMask, SpatialMap};

/// Encodes a branch's condition residual as a `C`-channel feature.
///
/// `g[:, j, k] = strength * mask[j, k] * (target[j, k] - x0_hat[j, k]) * w`, so
/// its channel std is proportional to the local condition violation and is
/// exactly zero outside the mask.
pub fn branch_encode(branch: &Branch, x0_hat: &SpatialMap) -> Result<FeatureMap> {
    let (h, w) = (x0_hat.height(), x0_hat.width());
    if (branch.mask.height(), branch.mask.width()) != (h, w) {
        return Err(Error::Shape {
            left: format!("mask {}x{}", branch.mask.height(), branch.mask.width()),
            right: format!("field {h}x{w}"),
        });
    }
    let plane = h * w;
    let (mask, target, x) = (
        branch.mask.as_slice(),
        branch.target.as_slice(),
        x0_hat.as_slice(),
    );
    let signal: Vec<f64> = (0..plane)
        .map(|p| branch.strength * mask[p] * (target[p] - x[p]))
        .collect();
    let mut data = Vec::with_capacity(branch.embedding.len() * plane);
    for wc in &branch.embedding {
        data.extend(signal.iter().map(|s| (s * wc) as f32));
    }
    FeatureMap::new(branch.embedding.len(), h, w, data)
}

/// Projects a fused feature onto the read-out vector: `d[j, k] = ⟨u, f[:, j, k]⟩`.
pub fn decode_guidance(f_eff: &FeatureMap, readout: &[f64]) -> Result<SpatialMap> {
    if readout.len() != f_eff.channels() {
        return Err(Error::Shape {
            left: format!("{} channels", f_eff.channels()),
            right: format!("read-out of length {}", readout.len()),
        });
    }
    let plane = f_eff.plane_len();
    let data = f_eff.as_slice();
    let mut out = vec![0.0f64; plane];
    for (c, u) in readout.iter().enumerate() {
        for (p, o) in out.iter_mut().enumerate() {
            *o += u * data[c * plane + p] as f64;
        }
    }
    SpatialMap::new(f_eff.height(), f_eff.width(), out)
}

/// Masked mean squared error of `sample` against each branch target.
pub fn condition_error(sample: &SpatialMap, branches: &[Branch]) -> Result<Vec<f64>> {
    branches
        .iter()
        .map(|b| {
            if b.mask.len() != sample.len() || b.mask.width() != sample.width() {
                return Err(Error::Shape {
                    left: format!("sample {}x{}", sample.height(), sample.width()),
                    right: format!("mask {}x{}", b.mask.height(), b.mask.width()),
                });
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for ((m, t), x) in b
                .mask
                .as_slice()
                .iter()
                .zip(b.target.as_slice())
                .zip(sample.as_slice())
            {
                num += m * (x - t) * (x - t);
                den += m;
            }
            Ok(if den == 0.0 { 0.0 } else { num / den })
        })
        .collect()
}

/// Fusion bookkeeping for one denoising step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Selection masks of every pair merge at this step, in fold order.
    pub selections: Vec<SelectionMask>,
    pub averaged_fraction: f64,
    pub win_fraction: Vec<f64>,
    /// Mean channel std of each branch's post-unmerge feature.
    pub unmerged_mean_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub sample: SpatialMap,
    pub mse: Vec<f64>,
    /// One record per step, from `t = T - 1` down to 0.
    pub steps: Vec<StepRecord>,
    pub elapsed: Duration,
}

impl RunReport {
    /// Averaged entries over every recorded selection mask.
    pub fn averaged_fraction(&self) -> f64 {
        fusion::averaged_fraction(self.steps.iter().flat_map(|s| &s.selections))
    }

    /// Largest per-branch masked MSE, or 0 without branches.
    pub fn max_mse(&self) -> f64 {
        self.mse.iter().copied().fold(0.0, f64::max)
    }
}

/// Equality ignores `elapsed` and the strategy tag: two reports are equal
/// when the runs produced the same outcome.
impl PartialEq for RunReport {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.sample == other.sample
            && self.mse == other.mse
            && self.steps == other.steps
    }
}

struct Fused {
    f_eff: Option<FeatureMap>,
    selections: Vec<SelectionMask>,
    win_fraction: Vec<f64>,
    unmerged: Vec<FeatureMap>,
}

fn all_averaged(h: usize, w: usize) -> Result<SelectionMask> {
    SelectionMask::new(h, w, 2, vec![Selection::Averaged; h * w])
}

fn fuse(strategy: Strategy, encodings: Vec<FeatureMap>, cfg: &FusionConfig) -> Result<Fused> {
    let n = encodings.len();
    let passthrough = |f_eff: Option<FeatureMap>, win_fraction: Vec<f64>| Fused {
        f_eff,
        selections: Vec::new(),
        win_fraction,
        unmerged: Vec::new(),
    };
    Ok(match strategy {
        Strategy::Unconditional => passthrough(None, vec![0.0; n]),
        Strategy::Single(b) => {
            let mut wins = vec![0.0; n];
            wins[b] = 1.0;
            passthrough(encodings.into_iter().nth(b), wins)
        }
        _ if n == 0 => passthrough(None, Vec::new()),
        _ if n == 1 => passthrough(encodings.into_iter().next(), vec![1.0]),
        Strategy::Naive => {
            // Every location is averaged, so unmerging hands f_eff to all branches.
            let f_eff = naive_average(&encodings)?;
            let (_, h, w) = f_eff.shape();
            let mask = all_averaged(h, w)?;
            Fused {
                selections: vec![mask; n - 1],
                win_fraction: vec![0.0; n],
                unmerged: vec![f_eff.clone(); n],
                f_eff: Some(f_eff),
            }
        }
        Strategy::Maxfusion | Strategy::MaxSelect => {
            let fold = if strategy == Strategy::Maxfusion {
                maxfusion_fold(&encodings, cfg)?
            } else {
                max_select_fold(&encodings, cfg)?
            };
            let win_fraction = fold.win_fractions();
            Fused {
                selections: fold.steps.into_iter().map(|s| s.selection).collect(),
                win_fraction,
                unmerged: fold.updated,
                f_eff: Some(fold.f_eff),
            }
        }
    })
}

fn field(h: usize, w: usize, data: Vec<f64>) -> Result<SpatialMap> {
    SpatialMap::new(h, w, data)
}

/// Runs the ancestral sampler for `scenario`.
///
/// The generator is seeded from `scenario.seed` and consumed in a fixed order
/// (the initial state row-major, then one field per step with `t > 0`), so
/// runs that differ only in strategy see the same noise.
pub fn sample(scenario: &Scenario) -> Result<RunReport> {
    let start = Instant::now();
    let branches = scenario.resolve()?;
    let schedule = scenario.schedule.build()?;
    let readout = scenario.readout();
    let (h, w) = (scenario.height, scenario.width);
    let plane = h * w;
    let prior = scenario.prior;
    let lambda = scenario.guidance_weight;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let last = schedule.steps() - 1;
    let (mean_t, var_t) = schedule.marginal(last, &prior)?;
    let sd_t = var_t.sqrt();
    let mut x: Vec<f64> = (0..plane).map(|_| mean_t + sd_t * normal()).collect();

    let mut score = vec![0.0; plane];
    let mut steps = Vec::with_capacity(schedule.steps());
    for t in (0..=last).rev() {
        let (mean, var) = schedule.marginal(t, &prior)?;
        score_into(&x, mean, var, &mut score);

        let ab = schedule.alpha_bar(t);
        let x0_hat: Vec<f64> = x
            .iter()
            .zip(&score)
            .map(|(xi, si)| (xi + (1.0 - ab) * si) / ab.sqrt())
            .collect();
        let x0_hat = field(h, w, x0_hat)?;

        let encodings = match scenario.strategy {
            Strategy::Unconditional => Vec::new(),
            _ => branches
                .iter()
                .map(|b| branch_encode(b, &x0_hat))
                .collect::<Result<Vec<_>>>()?,
        };
        let fused = fuse(scenario.strategy, encodings, &scenario.fusion)?;

        if let Some(f_eff) = &fused.f_eff {
            let guidance = decode_guidance(f_eff, &readout)?;
            for (s, g) in score.iter_mut().zip(guidance.as_slice()) {
                *s += lambda * g;
            }
        }

        let (beta, alpha) = (schedule.beta(t), schedule.alpha(t));
        let sqrt_alpha = alpha.sqrt();
        for (xi, si) in x.iter_mut().zip(&score) {
            *xi = (*xi + beta * si) / sqrt_alpha;
        }
        if t > 0 {
            let noise_sd = beta.sqrt();
            for xi in x.iter_mut() {
                *xi += noise_sd * normal();
            }
        }

        steps.push(StepRecord {
            t,
            averaged_fraction: fusion::averaged_fraction(&fused.selections),
            selections: fused.selections,
            win_fraction: fused.win_fraction,
            unmerged_mean_std: fused
                .unmerged
                .iter()
                .map(|f| channel_std_map(f).mean())
                .collect(),
        });
    }

    let sample = field(h, w, x)?;
    let mse = condition_error(&sample, &branches)?;
    Ok(RunReport {
        strategy: scenario.strategy,
        seed: scenario.seed,
        sample,
        mse,
        steps,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{BranchSpec, EmbeddingSpec, MaskSpec, TargetSpec};

    fn unit_branch(embedding: Vec<f64>, mask: f64, target: f64) -> Branch {
        Branch {
            mask: SpatialMap::filled(1, 1, mask).unwrap(),
            target: SpatialMap::filled(1, 1, target).unwrap(),
            embedding,
            strength: 1.0,
        }
    }

    #[test]
    fn encode_outside_mask_is_zero() {
        let b = unit_branch(vec![1.6, 0.4], 0.0, 3.0);
        let x = SpatialMap::filled(1, 1, -1.0).unwrap();
        let g = branch_encode(&b, &x).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        assert_eq!(channel_std_map(&g).as_slice(), &[0.0]);
    }

    #[test]
    fn encode_satisfied_condition_is_zero() {
        let b = unit_branch(vec![1.6, 0.4], 1.0, 0.25);
        let x = SpatialMap::filled(1, 1, 0.25).unwrap();
        assert_eq!(branch_encode(&b, &x).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn encode_hand_computed() {
        // residual 2 with w = (1.6, 0.4): vector (3.2, 0.8), σ = 1.2.
        let b = unit_branch(vec![1.6, 0.4], 1.0, 2.0);
        let x = SpatialMap::filled(1, 1, 0.0).unwrap();
        let g = branch_encode(&b, &x).unwrap();
        assert_eq!(g.as_slice(), &[3.2, 0.8]);
        assert!((channel_std_map(&g).as_slice()[0] - 1.2).abs() < 1e-6);

        let flat = unit_branch(vec![1.0, 1.0], 1.0, 2.0);
        let g = branch_encode(&flat, &x).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 2.0]);
        assert_eq!(channel_std_map(&g).as_slice(), &[0.0]);
    }

    fn two_branch_grid() -> (Scenario, Vec<Branch>) {
        let mut s = Scenario::preset("complementary").unwrap();
        s.height = 3;
        s.width = 4;
        s.branches = vec![
            BranchSpec {
                mask: MaskSpec::Field((0..12).map(|i| (i % 3) as f64 / 2.0).collect()),
                target: TargetSpec::Field((0..12).map(|i| i as f64 * 0.3 - 1.0).collect()),
                embedding: EmbeddingSpec::Cosine {
                    phase: 0.3,
                    amplitude: 0.7,
                },
                strength: 1.3,
            },
            BranchSpec {
                mask: MaskSpec::Rect {
                    top: 1,
                    left: 1,
                    height: 2,
                    width: 2,
                },
                target: TargetSpec::Constant(-0.8),
                embedding: EmbeddingSpec::Cosine {
                    phase: 2.0,
                    amplitude: 0.4,
                },
                strength: 0.6,
            },
        ];
        let b = s.resolve().unwrap();
        (s, b)
    }

    #[test]
    fn decode_recovers_scaled_residual() {
        let (s, branches) = two_branch_grid();
        let x = SpatialMap::from_fn(3, 4, |j, k| (j as f64 - k as f64) * 0.4).unwrap();
        let u = s.readout();
        for b in &branches {
            let d = decode_guidance(&branch_encode(b, &x).unwrap(), &u).unwrap();
            for p in 0..12 {
                let want =
                    b.strength * b.mask.as_slice()[p] * (b.target.as_slice()[p] - x.as_slice()[p]);
                assert!((d.as_slice()[p] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn decode_is_linear() {
        let (s, branches) = two_branch_grid();
        let x = SpatialMap::from_fn(3, 4, |j, k| (j * k) as f64 * 0.1).unwrap();
        let u = s.readout();
        let g: Vec<_> = branches
            .iter()
            .map(|b| branch_encode(b, &x).unwrap())
            .collect();
        let avg = naive_average(&g).unwrap();
        let d_avg = decode_guidance(&avg, &u).unwrap();
        let d0 = decode_guidance(&g[0], &u).unwrap();
        let d1 = decode_guidance(&g[1], &u).unwrap();
        for p in 0..12 {
            let want = (d0.as_slice()[p] + d1.as_slice()[p]) / 2.0;
            assert!((d_avg.as_slice()[p] - want).abs() < 1e-6);
        }
        let zero = FeatureMap::zeros(8, 3, 4).unwrap();
        assert!(decode_guidance(&zero, &u)
            .unwrap()
            .as_slice()
            .iter()
            .all(|v| *v == 0.0));
        assert!(decode_guidance(&zero, &u[..7]).is_err());
    }

    #[test]
    fn condition_error_cases() {
        let b = Branch {
            mask: SpatialMap::new(1, 3, vec![1.0, 1.0, 0.0]).unwrap(),
            target: SpatialMap::new(1, 3, vec![2.0, -1.0, 5.0]).unwrap(),
            embedding: vec![1.0],
            strength: 1.0,
        };
        let exact = SpatialMap::new(1, 3, vec![2.0, -1.0, 100.0]).unwrap();
        assert_eq!(
            condition_error(&exact, std::slice::from_ref(&b)).unwrap(),
            vec![0.0]
        );
        let offset = SpatialMap::new(1, 3, vec![3.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            condition_error(&offset, std::slice::from_ref(&b)).unwrap(),
            vec![1.0]
        );
        let empty = Branch {
            mask: SpatialMap::filled(1, 3, 0.0).unwrap(),
            ..b
        };
        assert_eq!(condition_error(&offset, &[empty]).unwrap(), vec![0.0]);
    }

    #[test]
    fn same_seed_same_report() {
        let s = Scenario::preset("three_way").unwrap();
        let a = sample(&s).unwrap();
        let b = sample(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample.as_slice(), b.sample.as_slice());
        assert_eq!(a.steps.len(), 50);
        assert_eq!(a.mse.len(), 3);
        assert_eq!(a.steps[0].selections.len(), 2);
    }

    #[test]
    fn zero_guidance_matches_unconditional() {
        let mut s = Scenario::preset("contradictory").unwrap();
        s.guidance_weight = 0.0;
        s.strategy = Strategy::Unconditional;
        let base = sample(&s).unwrap();
        for strategy in [
            Strategy::Maxfusion,
            Strategy::Naive,
            Strategy::MaxSelect,
            Strategy::Single(1),
        ] {
            s.strategy = strategy;
            let r = sample(&s).unwrap();
            assert_eq!(r.sample, base.sample);
            assert_eq!(r.mse, base.mse);
        }
    }

    #[test]
    fn naive_equals_lowest_delta() {
        let mut s = Scenario::preset("complementary").unwrap();
        s.strategy = Strategy::Naive;
        let naive = sample(&s).unwrap();
        s.strategy = Strategy::Maxfusion;
        s.fusion.delta = -1.0;
        assert_eq!(sample(&s).unwrap(), naive);
    }

    #[test]
    fn max_select_equals_high_delta() {
        let mut s = Scenario::preset("three_way").unwrap();
        s.strategy = Strategy::MaxSelect;
        let ms = sample(&s).unwrap();
        s.strategy = Strategy::Maxfusion;
        s.fusion.delta = 2.0;
        assert_eq!(sample(&s).unwrap(), ms);
    }
}
