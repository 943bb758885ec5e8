//! Tightening the evaluation match threshold should never lower FN.
//!
//! Continuity-first matching lets a ground-truth object keep a weak match
//! from the previous frame at a loose threshold, which can take the only
//! prediction another object would match. Both tests below reach that case.

use std::fs;
use std::path::Path;
use std::process::Command;

use omot::eval::evaluate_sequence;
use omot::kittio::{write_scenario_json, write_trajectories_json};
use omot::synth::{generate, SynthConfig};
use omot::tracker::{run_sequence, TrackerConfig};
use proptest::prelude::*;
use tempfile::TempDir;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        num_objects: 5,
        num_frames: 60,
        lifetime: [15, 60],
        seed,
        ..SynthConfig::default()
    }
}

fn cli_fn(pred: &Path, gt: &Path, threshold: f64) -> u64 {
    let out = Command::new(env!("CARGO_BIN_EXE_omot"))
        .args(["eval", "--from", "forward", "--match-threshold", &threshold.to_string()])
        .args(["--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap(), "--output"])
        .arg(pred.join("eval"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(pred.join("eval/report.json")).unwrap()).unwrap();
    report["aggregate"]["fn"].as_u64().unwrap()
}

#[test]
fn eval_command_fn_does_not_drop_when_threshold_tightens() {
    let tmp = TempDir::new().unwrap();
    let b = generate(&SynthConfig { sequence: "s924".into(), ..small(924) }).unwrap();
    write_scenario_json(&b, &tmp.path().join("s924.scenario.json")).unwrap();
    let pred = run_sequence(&b, &TrackerConfig::default()).unwrap();
    write_trajectories_json("s924", &pred, &tmp.path().join("s924.forward.json")).unwrap();
    let loose = cli_fn(tmp.path(), tmp.path(), 0.455);
    let strict = cli_fn(tmp.path(), tmp.path(), 0.622);
    assert!(strict >= loose, "FN {strict} at 0.622 vs {loose} at 0.455");
}

proptest! {
    #[test]
    fn tighter_threshold_never_lowers_fn(seed in 0u64..1000, t1 in 0.0..0.95f64, t2 in 0.0..0.95f64) {
        let b = generate(&small(seed)).unwrap();
        let gt = b.ground_truth.as_ref().unwrap();
        let pred = run_sequence(&b, &TrackerConfig::default()).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let fn_lo = evaluate_sequence("s", &pred, gt, lo).unwrap().counts.fn_;
        let fn_hi = evaluate_sequence("s", &pred, gt, hi).unwrap().counts.fn_;
        prop_assert!(fn_hi >= fn_lo, "{} at {} vs {} at {}", fn_hi, hi, fn_lo, lo);
    }
}
