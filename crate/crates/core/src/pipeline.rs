//! The full chain: detection fusion, forward and backward tracking,
//! bidirectional fusion, refinement and, when ground truth is present,
//! evaluation of every intermediate result.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bifuse;
use crate::config::PipelineConfig;
use crate::error::Error;
use crate::eval::{evaluate_sequence, MotCounts, MotReport, SequenceEval, SequenceRow};
use crate::fusion2d3d::fuse_bundle;
use crate::refine::{refine, RefineConfig, RefineWarning};
use crate::scenario::ScenarioBundle;
use crate::tracker::{run_sequence, Direction};
use crate::trajectory::{check_frame_exclusivity, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    FuseDet,
    Track,
    Bifuse,
    Refine,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::FuseDet => "fuse-det",
            Stage::Track => "track",
            Stage::Bifuse => "bifuse",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed on sequence {sequence:?}: {source}")]
pub struct StageError {
    pub stage: Stage,
    pub sequence: String,
    #[source]
    pub source: Error,
}

fn at<T>(stage: Stage, sequence: &str, r: crate::Result<T>) -> Result<T, StageError> {
    r.map_err(|source| StageError {
        stage,
        sequence: sequence.to_string(),
        source,
    })
}

/// Refinement settings for the cumulative ablation rows: size averaging,
/// then interpolation, then GP smoothing, each only if enabled in `cfg`.
pub fn refine_ablation(cfg: &RefineConfig) -> Vec<(&'static str, RefineConfig)> {
    let mut cur = RefineConfig {
        interpolate: false,
        size_average: false,
        gp: false,
        ..*cfg
    };
    let mut out = Vec::new();
    if cfg.size_average {
        cur.size_average = true;
        out.push(("+size", cur));
    }
    if cfg.interpolate {
        cur.interpolate = true;
        out.push(("+interp", cur));
    }
    if cfg.gp {
        cur.gp = true;
        out.push(("+gp", cur));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    pub fused: ScenarioBundle,
    pub forward: TrajectorySet,
    pub backward: TrajectorySet,
    pub bifused: TrajectorySet,
    pub refined: TrajectorySet,
    pub warnings: Vec<RefineWarning>,
    /// `(stage label, evaluation)` for every intermediate result, empty
    /// without ground truth.
    pub stages: Vec<(String, SequenceEval)>,
}

impl SequenceOutput {
    pub fn sequence(&self) -> &str {
        &self.fused.sequence
    }
}

/// Runs every stage on one sequence.
pub fn run_sequence_pipeline(bundle: &ScenarioBundle, cfg: &PipelineConfig) -> Result<SequenceOutput, StageError> {
    let seq = bundle.sequence.as_str();
    let fused = at(Stage::FuseDet, seq, fuse_bundle(bundle, &cfg.fusion))?;
    let (forward, backward) = rayon::join(
        || run_sequence(&fused, &cfg.tracker.with_direction(Direction::Forward)),
        || run_sequence(&fused, &cfg.tracker.with_direction(Direction::Backward)),
    );
    let forward = at(Stage::Track, seq, forward)?;
    let backward = at(Stage::Track, seq, backward)?;
    let bifused = at(Stage::Bifuse, seq, bifuse::fuse_checked(&forward, &backward, &fused))?;

    let mut ablation = Vec::new();
    for (label, rc) in refine_ablation(&cfg.refine) {
        let (set, warnings) = at(Stage::Refine, seq, refine(&bifused, &rc))?;
        ablation.push((label, set, warnings));
    }
    let (refined, warnings) = match ablation.last() {
        Some((_, set, w)) => (set.clone(), w.clone()),
        None => at(Stage::Refine, seq, refine(&bifused, &cfg.refine))?,
    };
    at(Stage::Refine, seq, check_frame_exclusivity(&refined))?;

    let mut stages = Vec::new();
    if let Some(gt) = &bundle.ground_truth {
        let thr = cfg.eval.threshold;
        let mut rows: Vec<(String, &TrajectorySet)> = vec![
            ("forward".into(), &forward),
            ("backward".into(), &backward),
            ("bifuse".into(), &bifused),
        ];
        rows.extend(ablation.iter().map(|(l, s, _)| (l.to_string(), s)));
        for (label, set) in rows {
            stages.push((label, at(Stage::Eval, seq, evaluate_sequence(seq, set, gt, thr))?));
        }
    }

    Ok(SequenceOutput {
        fused,
        forward,
        backward,
        bifused,
        refined,
        warnings,
        stages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: String,
    pub counts: MotCounts,
    pub mota: Option<f64>,
    /// Change against the better single direction for `bifuse`, against the
    /// previous row for refinement rows.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub threshold: f64,
    pub rows: Vec<StageRow>,
}

impl StageReport {
    pub fn row(&self, stage: &str) -> Option<&StageRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}", "stage", "GT", "FP", "FN", "IDSW", "MOTA", "delta");
        for r in &self.rows {
            let m = r.mota.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
            let d = r.delta.map_or_else(String::new, |v| format!("{v:+.4}"));
            let c = &r.counts;
            let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}", r.stage, c.gt, c.fp, c.fn_, c.idsw, m, d);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,gt,fp,fn,idsw,mota,delta\n");
        for r in &self.rows {
            let c = &r.counts;
            let m = r.mota.map_or_else(String::new, |v| format!("{v:.6}"));
            let d = r.delta.map_or_else(String::new, |v| format!("{v:.6}"));
            let _ = writeln!(out, "{},{},{},{},{},{m},{d}", r.stage, c.gt, c.fp, c.fn_, c.idsw);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    pub sequences: Vec<SequenceOutput>,
    /// Final refined output against ground truth, when every sequence has it.
    pub report: Option<MotReport>,
    pub stages: Option<StageReport>,
}

fn stage_report(threshold: f64, outs: &[SequenceOutput]) -> StageReport {
    let labels: Vec<String> = outs[0].stages.iter().map(|(l, _)| l.clone()).collect();
    let mut rows: Vec<StageRow> = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let mut counts = MotCounts::default();
        for o in outs {
            let c = &o.stages[k].1.counts;
            counts.gt += c.gt;
            counts.matches += c.matches;
            counts.fp += c.fp;
            counts.fn_ += c.fn_;
            counts.idsw += c.idsw;
        }
        let mota = counts.mota();
        let base = match label.as_str() {
            "forward" | "backward" => None,
            "bifuse" => rows.iter().filter_map(|r| r.mota).reduce(f64::max),
            _ => rows.last().and_then(|r| r.mota),
        };
        rows.push(StageRow {
            stage: label.clone(),
            counts,
            mota,
            delta: mota.zip(base).map(|(m, b)| m - b),
        });
    }
    StageReport { threshold, rows }
}

/// Runs the pipeline on every sequence in parallel; results keep input order.
pub fn run_suite(bundles: &[ScenarioBundle], cfg: &PipelineConfig) -> Result<SuiteOutput, StageError> {
    at(Stage::FuseDet, "", cfg.validate())?;
    let sequences: Vec<SequenceOutput> = bundles
        .par_iter()
        .map(|b| run_sequence_pipeline(b, cfg))
        .collect::<Result<_, _>>()?;
    let all_gt = !sequences.is_empty() && bundles.iter().all(|b| b.ground_truth.is_some());
    let (report, stages) = if all_gt {
        let thr = cfg.eval.threshold;
        let evals: Vec<&SequenceEval> = sequences.iter().map(|o| &o.stages.last().expect("stages present").1).collect();
        let mut aggregate = MotCounts::default();
        let rows = evals
            .iter()
            .map(|e| {
                aggregate.gt += e.counts.gt;
                aggregate.matches += e.counts.matches;
                aggregate.fp += e.counts.fp;
                aggregate.fn_ += e.counts.fn_;
                aggregate.idsw += e.counts.idsw;
                SequenceRow {
                    sequence: e.sequence.clone(),
                    counts: e.counts,
                    mota: e.counts.mota(),
                }
            })
            .collect();
        let report = MotReport {
            threshold: thr,
            sequences: rows,
            mota: aggregate.mota(),
            aggregate,
        };
        (Some(report), Some(stage_report(thr, &sequences)))
    } else {
        (None, None)
    };
    Ok(SuiteOutput {
        sequences,
        report,
        stages,
    })
}
