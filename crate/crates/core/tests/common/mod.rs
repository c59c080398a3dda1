//! Shared test support: random instance generators and an independent
//! per-location scalar-loop implementation of merge, unmerge and the fold.
//!
//! The oracle indexes tensors element by element through `FeatureMap::get`
//! and recomputes every statistic with its own loops; it shares no code with
//! the library's fusion path.

#![allow(dead_code)]

use maxfusion::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DELTAS: [f64; 6] = [-1.0, 0.0, 0.5, 0.7, 1.0, 2.0];
pub const EPS: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=16),
        rng.random_range(1..=16),
        rng.random_range(1..=16),
    )
}

pub fn uniform_map(rng: &mut ChaCha8Rng, (c, h, w): (usize, usize, usize)) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0f32..2.0)).unwrap()
}

/// A pair of same-shape maps drawn from one of several regimes so that both
/// the averaging and the selection branches of the gate fire.
pub fn random_pair(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> (FeatureMap, FeatureMap) {
    let (c, h, w) = shape;
    let a = uniform_map(rng, shape);
    let regime = rng.random_range(0..4);
    let b = match regime {
        0 => uniform_map(rng, shape),
        1 => {
            // Correlated: b = s * a + noise with a per-location mixing weight.
            let mix: Vec<f32> = (0..h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
            let scale = rng.random_range(0.2f32..3.0);
            FeatureMap::from_fn(c, h, w, |ch, j, k| {
                let m = mix[j * w + k];
                m * scale * a.get(ch, j, k) + (1.0 - m) * rng.random_range(-2.0f32..2.0)
            })
            .unwrap()
        }
        2 => {
            // Sparse supports: each branch is zero on a random subset of locations.
            let b = uniform_map(rng, shape);
            let keep_a: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.6)).collect();
            let keep_b: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.6)).collect();
            let a2 = FeatureMap::from_fn(c, h, w, |ch, j, k| {
                if keep_a[j * w + k] {
                    a.get(ch, j, k)
                } else {
                    0.0
                }
            })
            .unwrap();
            let b2 = FeatureMap::from_fn(c, h, w, |ch, j, k| {
                if keep_b[j * w + k] {
                    b.get(ch, j, k)
                } else {
                    0.0
                }
            })
            .unwrap();
            return (a2, b2);
        }
        _ => {
            // Different magnitudes per branch.
            let s = rng.random_range(0.01f32..50.0);
            uniform_map(rng, shape).scale(s).unwrap()
        }
    };
    (a, b)
}

pub fn random_branches(
    rng: &mut ChaCha8Rng,
    n: usize,
    shape: (usize, usize, usize),
) -> Vec<FeatureMap> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, b) = random_pair(rng, shape);
        out.push(a);
        if out.len() < n {
            out.push(b);
        }
    }
    out
}

fn vec_at(f: &FeatureMap, j: usize, k: usize) -> Vec<f64> {
    (0..f.channels()).map(|c| f.get(c, j, k) as f64).collect()
}

pub fn std_of(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    (var / n).sqrt()
}

pub fn std_of_f32(v: &[f32]) -> f64 {
    std_of(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
}

fn cos_of(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na < EPS || nb < EPS {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `None` for averaged, `Some(b)` for a winner.
pub type OracleSel = Option<usize>;

pub struct OraclePair {
    pub f_eff: Vec<f64>,
    pub selection: Vec<OracleSel>,
    pub out1: Vec<f64>,
    pub out2: Vec<f64>,
}

fn sigma_grid(f: &FeatureMap) -> Vec<f64> {
    let mut s = Vec::new();
    for j in 0..f.height() {
        for k in 0..f.width() {
            s.push(std_of(&vec_at(f, j, k)));
        }
    }
    s
}

fn sigma_hat_grid(sigma: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    for s in sigma {
        total += s;
    }
    if total < EPS {
        vec![1.0 / sigma.len() as f64; sigma.len()]
    } else {
        sigma.iter().map(|s| s / total).collect()
    }
}

/// Flat `(c, j, k)` index.
fn idx(c: usize, j: usize, k: usize, h: usize, w: usize) -> usize {
    (c * h + j) * w + k
}

pub fn oracle_pair(f1: &FeatureMap, f2: &FeatureMap, delta: f64, renormalize: bool) -> OraclePair {
    let (c, h, w) = f1.shape();
    let sig1 = sigma_grid(f1);
    let sig2 = sigma_grid(f2);
    let hat1 = sigma_hat_grid(&sig1);
    let hat2 = sigma_hat_grid(&sig2);
    let n = c * h * w;
    let mut f_eff = vec![0.0; n];
    let mut out1 = vec![0.0; n];
    let mut out2 = vec![0.0; n];
    let mut selection = Vec::new();

    for j in 0..h {
        for k in 0..w {
            let p = j * w + k;
            let v1 = vec_at(f1, j, k);
            let v2 = vec_at(f2, j, k);
            let rho = cos_of(&v1, &v2);
            let sel = if rho >= delta {
                None
            } else if hat2[p] > hat1[p] {
                Some(1)
            } else {
                Some(0)
            };
            selection.push(sel);
            for ch in 0..c {
                let i = idx(ch, j, k, h, w);
                let fused = match sel {
                    None => ((v1[ch] + v2[ch]) / 2.0) as f32 as f64,
                    Some(0) => v1[ch],
                    Some(_) => v2[ch],
                };
                f_eff[i] = fused;
                let (mut o1, mut o2) = (v1[ch], v2[ch]);
                match sel {
                    None => {
                        o1 = fused;
                        o2 = fused;
                    }
                    Some(win) if renormalize => {
                        let (sig_w, sig_l, winner_vec) = if win == 0 {
                            (sig1[p], sig2[p], &v1)
                        } else {
                            (sig2[p], sig1[p], &v2)
                        };
                        if sig_w >= EPS {
                            let r = (sig_l / sig_w * winner_vec[ch]) as f32 as f64;
                            if win == 0 {
                                o2 = r;
                            } else {
                                o1 = r;
                            }
                        }
                    }
                    Some(_) => {}
                }
                out1[i] = o1;
                out2[i] = o2;
            }
        }
    }
    OraclePair {
        f_eff,
        selection,
        out1,
        out2,
    }
}

pub fn to_map(shape: (usize, usize, usize), data: &[f64]) -> FeatureMap {
    FeatureMap::new(
        shape.0,
        shape.1,
        shape.2,
        data.iter().map(|&v| v as f32).collect(),
    )
    .unwrap()
}

pub struct OracleFold {
    pub f_eff: Vec<f64>,
    pub updated: Vec<Vec<f64>>,
    pub selections: Vec<Vec<OracleSel>>,
}

/// Running result merged with each next branch; slot 0 tracks the running
/// chain's unmerge output, slot `b` the output for branch `b`.
pub fn oracle_fold(branches: &[FeatureMap], delta: f64, renormalize: bool) -> OracleFold {
    let shape = branches[0].shape();
    let mut running = branches[0].clone();
    let mut updated: Vec<Vec<f64>> = branches
        .iter()
        .map(|b| b.as_slice().iter().map(|&v| v as f64).collect())
        .collect();
    let mut selections = Vec::new();
    for b in 1..branches.len() {
        let r = oracle_pair(&running, &branches[b], delta, renormalize);
        updated[0] = r.out1;
        updated[b] = r.out2;
        selections.push(r.selection);
        running = to_map(shape, &r.f_eff);
    }
    OracleFold {
        f_eff: running.as_slice().iter().map(|&v| v as f64).collect(),
        updated,
        selections,
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - y).abs())
        .fold(0.0, f64::max)
}

pub fn lib_selection(mask: &maxfusion::SelectionMask) -> Vec<OracleSel> {
    mask.entries()
        .iter()
        .map(|s| match s {
            maxfusion::Selection::Averaged => None,
            maxfusion::Selection::Winner(b) => Some(*b),
        })
        .collect()
}
