#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::Vector3;
use omot::assign::ScoreMatrix;
use omot::bifuse::{cluster_trajectories, find_common_boxes, plan_cluster, SelectionProblem};
use omot::{Box3D, DetKey, Observation, Trajectory, TrajectorySet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Best total over every one-to-one partial assignment avoiding forbidden
/// cells, rows visited in order.
pub fn brute_force_assignment(m: &ScoreMatrix) -> f64 {
    fn go(m: &ScoreMatrix, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if r == m.rows() {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        go(m, r + 1, used, acc, best);
        for c in 0..m.cols() {
            if !used[c] && !m.is_forbidden(r, c) {
                used[c] = true;
                go(m, r + 1, used, acc + m.get(r, c), best);
                used[c] = false;
            }
        }
    }
    let mut best = 0.0;
    go(m, 0, &mut vec![false; m.cols()], 0.0, &mut best);
    best
}

/// NCD by enumerating all 64 cross-box vertex pairs.
pub fn ncd_oracle(a: &Box3D, b: &Box3D) -> f64 {
    let (va, vb) = (a.vertices(), b.vertices());
    let mut max = 0.0f64;
    for p in &va {
        for q in &vb {
            max = max.max((p - q).norm());
        }
    }
    1.0 - (a.center() - b.center()).norm() / max
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> Box3D {
    Box3D::new(
        Vector3::new(
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
            rng.random_range(-2.0..2.0),
        ),
        Vector3::new(rng.random_range(0.3..6.0), rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)),
        rng.random_range(-4.0..4.0),
        rng.random_range(0.0..1.0),
    )
    .unwrap()
}

fn unit_box(frame: u32, lane: u32) -> Box3D {
    Box3D::new(
        Vector3::new(frame as f64, 4.0 * lane as f64, 0.0),
        Vector3::new(4.0, 1.8, 1.5),
        0.0,
        0.9,
    )
    .unwrap()
}

/// Cuts one run of keys into the trajectory pieces a tracker might emit:
/// random tail swaps between objects (identity switches), random breaks and
/// random lost detections.
fn tracker_like_run(rng: &mut ChaCha8Rng, objects: &[Vec<DetKey>]) -> Vec<Vec<DetKey>> {
    let mut runs: Vec<Vec<DetKey>> = objects
        .iter()
        .map(|keys| keys.iter().copied().filter(|_| rng.random::<f64>() > 0.05).collect())
        .collect();
    let switches = rng.random_range(0..=2);
    for _ in 0..switches {
        if runs.len() < 2 {
            break;
        }
        let i = rng.random_range(0..runs.len());
        let j = rng.random_range(0..runs.len());
        if i == j {
            continue;
        }
        let f = rng.random_range(0..30u32);
        let ti: Vec<DetKey> = runs[i].iter().copied().filter(|k| k.frame > f).collect();
        let tj: Vec<DetKey> = runs[j].iter().copied().filter(|k| k.frame > f).collect();
        runs[i].retain(|k| k.frame <= f);
        runs[j].retain(|k| k.frame <= f);
        runs[i].extend(tj);
        runs[j].extend(ti);
    }
    let mut out = Vec::new();
    for r in runs {
        if r.len() > 3 && rng.random::<f64>() < 0.3 {
            let cut = rng.random_range(1..r.len());
            out.push(r[..cut].to_vec());
            out.push(r[cut..].to_vec());
        } else {
            out.push(r);
        }
    }
    out.retain(|r| !r.is_empty());
    out
}

fn to_set(runs: Vec<Vec<DetKey>>) -> TrajectorySet {
    TrajectorySet::new(
        runs.into_iter()
            .enumerate()
            .map(|(i, keys)| {
                Trajectory::new(
                    i as u32 + 1,
                    keys.into_iter()
                        .map(|k| Observation::detected(k, unit_box(k.frame, k.index)))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// A forward and a backward trajectory set over 2 to 4 objects whose
/// detections overlap in time, each set independently corrupted.
pub fn random_run_pair(rng: &mut ChaCha8Rng) -> (TrajectorySet, TrajectorySet) {
    let n = rng.random_range(2..=4u32);
    let objects: Vec<Vec<DetKey>> = (0..n)
        .map(|k| {
            let start = rng.random_range(0..10u32);
            let end = rng.random_range(start + 8..start + 25);
            (start..end).filter(|_| rng.random::<f64>() > 0.1).map(|f| DetKey::new(f, k)).collect()
        })
        .collect();
    let fa = tracker_like_run(rng, &objects);
    let fb = tracker_like_run(rng, &objects);
    (to_set(fa), to_set(fb))
}

/// Selection problems from split clusters with 1 to `max_candidates`
/// candidates and pairwise distinct priorities.
pub fn random_selection_problems(rng: &mut ChaCha8Rng, count: usize, max_candidates: usize) -> Vec<SelectionProblem> {
    let mut out = Vec::new();
    while out.len() < count {
        let (ta, tb) = random_run_pair(rng);
        let z = (ta.observation_count() + tb.observation_count() + 1) as u64;
        let shared = find_common_boxes(&ta, &tb);
        for c in cluster_trajectories(&ta, &tb, &shared) {
            let frames: BTreeSet<u32> = c.shared.iter().map(|k| k.frame).collect();
            if c.len() < 2 || frames.len() == c.shared.len() {
                continue;
            }
            let fw: Vec<&Trajectory> = c.forward.iter().map(|id| ta.get(*id).unwrap()).collect();
            let bw: Vec<&Trajectory> = c.backward.iter().map(|id| tb.get(*id).unwrap()).collect();
            let p = plan_cluster(&fw, &bw, z).problem;
            let prios: BTreeSet<u64> = p.candidates.iter().map(|c| c.priority).collect();
            if !p.candidates.is_empty() && p.candidates.len() <= max_candidates && prios.len() == p.candidates.len() {
                out.push(p);
                if out.len() == count {
                    break;
                }
            }
        }
    }
    out
}

/// A subset is feasible when no identity receives the same frame twice.
pub fn feasible(p: &SelectionProblem, chosen: &[usize]) -> bool {
    let mut frames = p.identities.clone();
    for &c in chosen {
        let cand = &p.candidates[c];
        for f in &cand.frames {
            if !frames[cand.identity].insert(*f) {
                return false;
            }
        }
    }
    true
}

/// Maximum total priority over all feasible candidate subsets.
pub fn exhaustive_best(p: &SelectionProblem) -> u64 {
    let n = p.candidates.len();
    assert!(n <= 20);
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if feasible(p, &chosen) {
            best = best.max(p.total_priority(&chosen));
        }
    }
    best
}
