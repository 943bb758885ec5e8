//! CLEAR-MOT counts (FP, FN, IDSW) and MOTA.
//!
//! Ground truth and predictions are matched per frame on NCD between boxes.
//! A ground-truth object first keeps the prediction it was last matched to
//! if that prediction is present and still scores at least the threshold;
//! the rest are matched by maximum total NCD with sub-threshold pairs
//! forbidden. A matched object whose prediction id differs from its last
//! matched id counts one identity switch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{solve_max_assignment, ScoreMatrix};
use crate::error::{Error, Result};
use crate::geom3d::Box3D;
use crate::tracker::ncd;
use crate::trajectory::{check_frame_exclusivity, TrajectorySet};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt: u64,
    pub matches: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
}

impl MotCounts {
    /// `1 - (FP + FN + IDSW) / GT`, undefined without ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| 1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt as f64)
    }

    fn add(&mut self, o: &MotCounts) {
        self.gt += o.gt;
        self.matches += o.matches;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub frame: u32,
    pub gt_id: u32,
    pub pred_id: u32,
    pub gt: Box3D,
    pub pred: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub sequence: String,
    pub counts: MotCounts,
    pub pairs: Vec<MatchedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub sequence: String,
    pub counts: MotCounts,
    pub mota: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub threshold: f64,
    pub sequences: Vec<SequenceRow>,
    pub aggregate: MotCounts,
    pub mota: Option<f64>,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold.is_finite() && threshold <= 1.0) {
        return Err(Error::Config(format!("match threshold {threshold} must be finite and at most 1")));
    }
    Ok(())
}

fn boxes_by_frame(set: &TrajectorySet) -> BTreeMap<u32, Vec<(u32, Box3D)>> {
    let mut out: BTreeMap<u32, Vec<(u32, Box3D)>> = BTreeMap::new();
    for t in &set.trajectories {
        for o in &t.observations {
            out.entry(o.frame).or_default().push((t.id, o.bbox));
        }
    }
    out
}

/// Evaluates one sequence and keeps the matched pairs.
pub fn evaluate_sequence(sequence: &str, pred: &TrajectorySet, gt: &TrajectorySet, threshold: f64) -> Result<SequenceEval> {
    check_threshold(threshold)?;
    check_frame_exclusivity(pred)?;
    check_frame_exclusivity(gt)?;

    let gt_frames = boxes_by_frame(gt);
    let pred_frames = boxes_by_frame(pred);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();

    let mut counts = MotCounts::default();
    let mut pairs = Vec::new();
    let mut last: HashMap<u32, u32> = HashMap::new();
    let empty = Vec::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        counts.gt += g.len() as u64;

        let mut g_match: Vec<Option<usize>> = vec![None; g.len()];
        let mut p_taken = vec![false; p.len()];
        for (gi, (gid, gbox)) in g.iter().enumerate() {
            let Some(prev) = last.get(gid) else { continue };
            if let Some(pi) = p.iter().position(|(pid, _)| pid == prev) {
                if !p_taken[pi] && ncd(gbox, &p[pi].1) >= threshold {
                    g_match[gi] = Some(pi);
                    p_taken[pi] = true;
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let free_p: Vec<usize> = (0..p.len()).filter(|&i| !p_taken[i]).collect();
        let mut m = ScoreMatrix::new(free_g.len(), free_p.len());
        for (r, &gi) in free_g.iter().enumerate() {
            for (c, &pi) in free_p.iter().enumerate() {
                let s = ncd(&g[gi].1, &p[pi].1);
                if s >= threshold && s >= 0.0 {
                    m.set(r, c, s);
                } else {
                    m.forbid(r, c);
                }
            }
        }
        for (r, c) in solve_max_assignment(&m)?.pairs {
            g_match[free_g[r]] = Some(free_p[c]);
        }

        for (gi, pi) in g_match.iter().enumerate() {
            let (gid, gbox) = g[gi];
            match *pi {
                Some(pi) => {
                    let (pid, pbox) = p[pi];
                    counts.matches += 1;
                    if last.insert(gid, pid).is_some_and(|prev| prev != pid) {
                        counts.idsw += 1;
                    }
                    pairs.push(MatchedPair {
                        frame: f,
                        gt_id: gid,
                        pred_id: pid,
                        gt: gbox,
                        pred: pbox,
                    });
                }
                None => counts.fn_ += 1,
            }
        }
        counts.fp += (p.len() as u64) - g_match.iter().flatten().count() as u64;
    }

    Ok(SequenceEval {
        sequence: sequence.to_string(),
        counts,
        pairs,
    })
}

/// Evaluates a single prediction set against its ground truth.
pub fn evaluate(pred: &TrajectorySet, gt: &TrajectorySet, threshold: f64) -> Result<MotReport> {
    let e = evaluate_sequence("", pred, gt, threshold)?;
    Ok(report(threshold, vec![e]))
}

/// One prediction/ground-truth pair per sequence.
pub struct SuiteEntry<'a> {
    pub sequence: &'a str,
    pub pred: &'a TrajectorySet,
    pub gt: &'a TrajectorySet,
}

/// Evaluates sequences in parallel and aggregates in input order.
pub fn evaluate_suite(entries: &[SuiteEntry<'_>], threshold: f64) -> Result<(MotReport, Vec<SequenceEval>)> {
    let evals: Vec<SequenceEval> = entries
        .par_iter()
        .map(|e| evaluate_sequence(e.sequence, e.pred, e.gt, threshold))
        .collect::<Result<_>>()?;
    Ok((report(threshold, evals.clone()), evals))
}

fn report(threshold: f64, evals: Vec<SequenceEval>) -> MotReport {
    let mut aggregate = MotCounts::default();
    let sequences = evals
        .into_iter()
        .map(|e| {
            aggregate.add(&e.counts);
            SequenceRow {
                mota: e.counts.mota(),
                sequence: e.sequence,
                counts: e.counts,
            }
        })
        .collect();
    MotReport {
        threshold,
        sequences,
        mota: aggregate.mota(),
        aggregate,
    }
}

fn fmt_mota(m: Option<f64>) -> String {
    m.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v))
}

impl MotReport {
    pub fn to_table(&self) -> String {
        let width = self
            .sequences
            .iter()
            .map(|s| s.sequence.len())
            .chain(["sequence".len(), "all".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "match threshold: {}", self.threshold);
        let _ = writeln!(out, "{:<width$} {:>8} {:>8} {:>8} {:>8} {:>8}", "sequence", "GT", "FP", "FN", "IDSW", "MOTA");
        let mut line = |name: &str, c: &MotCounts, m: Option<f64>| {
            let _ = writeln!(out, "{:<width$} {:>8} {:>8} {:>8} {:>8} {:>8}", name, c.gt, c.fp, c.fn_, c.idsw, fmt_mota(m));
        };
        for s in &self.sequences {
            line(&s.sequence, &s.counts, s.mota);
        }
        line("all", &self.aggregate, self.mota);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,gt,fp,fn,idsw,mota\n");
        let rows = self
            .sequences
            .iter()
            .map(|s| (s.sequence.as_str(), &s.counts, s.mota))
            .chain(std::iter::once(("all", &self.aggregate, self.mota)));
        for (name, c, m) in rows {
            let m = m.map_or_else(String::new, |v| format!("{v:.6}"));
            let _ = writeln!(out, "{name},{},{},{},{},{m}", c.gt, c.fp, c.fn_, c.idsw);
        }
        out
    }
}
