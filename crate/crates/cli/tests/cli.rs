use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use omot::kittio::{parse_labels, read_scenario_json, read_trajectories_json, write_scenario_json};
use omot::pipeline::StageReport;
use omot::synth::{generate, SynthConfig};
use omot::tracker::{run_sequence, TrackerConfig};
use omot::{ScenarioBundle, TrajectorySet};
use tempfile::TempDir;

fn omot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omot")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = omot(args);
    assert!(
        out.status.success(),
        "omot {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_bundles(dir: &Path, bundles: &[ScenarioBundle]) {
    fs::create_dir_all(dir).unwrap();
    for b in bundles {
        write_scenario_json(b, &dir.join(format!("{}.scenario.json", b.sequence))).unwrap();
    }
}

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        sequence: format!("s{seed}"),
        num_frames: 80,
        num_objects: 5,
        seed,
        ..SynthConfig::default()
    }
}

fn traj(dir: &Path, seq: &str, tag: &str) -> TrajectorySet {
    read_trajectories_json(&dir.join(format!("{seq}.{tag}.json"))).unwrap().set
}

fn stages(dir: &Path) -> StageReport {
    serde_json::from_str(&fs::read_to_string(dir.join("stages.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fuse_det_without_masks_filters_by_confidence() {
    let tmp = TempDir::new().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    let noisy = generate(&small(1)).unwrap();
    let clean = generate(&SynthConfig { sequence: "clean".into(), ..small(2).noiseless() }).unwrap();
    write_bundles(&input, &[noisy.clone(), clean.clone()]);
    ok(&["fuse-det", "--input", p(&input), "--output", p(&output)]);

    for b in [&noisy, &clean] {
        let fused = read_scenario_json(&output.join(format!("{}.scenario.json", b.sequence))).unwrap();
        for (orig, out) in b.frames.iter().zip(&fused.frames) {
            let expect: Vec<_> = orig.detections.iter().filter(|d| d.bbox.confidence() >= 0.85).map(|d| (d.index, d.bbox)).collect();
            let got: Vec<_> = out.detections.iter().map(|d| (d.index, d.bbox)).collect();
            assert_eq!(got, expect);
        }
    }
    let fused_clean = read_scenario_json(&output.join("clean.scenario.json")).unwrap();
    assert_eq!(fused_clean.detection_count(), clean.detection_count());
}

#[test]
fn fuse_det_with_zero_threshold_keeps_everything() {
    let tmp = TempDir::new().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    let b = generate(&small(3)).unwrap();
    write_bundles(&input, std::slice::from_ref(&b));
    ok(&["fuse-det", "--input", p(&input), "--output", p(&output), "--theta-det", "0"]);
    let fused = read_scenario_json(&output.join("s3.scenario.json")).unwrap();
    assert_eq!(fused.detection_count(), b.detection_count());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    let b = generate(&small(4)).unwrap();
    write_bundles(&input, std::slice::from_ref(&b));
    let cfg = tmp.path().join("omot.toml");
    fs::write(&cfg, "[fusion]\ndet_confidence_threshold = 0.0\n").unwrap();

    let from_file = tmp.path().join("a");
    ok(&["fuse-det", "--config", p(&cfg), "--input", p(&input), "--output", p(&from_file)]);
    assert_eq!(read_scenario_json(&from_file.join("s4.scenario.json")).unwrap().detection_count(), b.detection_count());

    let overridden = tmp.path().join("b");
    ok(&["fuse-det", "--config", p(&cfg), "--theta-det", "0.85", "--input", p(&input), "--output", p(&overridden)]);
    let n = read_scenario_json(&overridden.join("s4.scenario.json")).unwrap().detection_count();
    assert!(n < b.detection_count());
}

#[test]
fn track_forward_matches_the_tracker_module() {
    let tmp = TempDir::new().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    let b = generate(&small(5)).unwrap();
    write_bundles(&input, std::slice::from_ref(&b));
    ok(&["track", "--direction", "forward", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(traj(&output, "s5", "forward"), run_sequence(&b, &TrackerConfig::default()).unwrap());
    assert!(!output.join("s5.backward.json").exists());
}

#[test]
fn track_both_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    write_bundles(&input, &[generate(&small(6)).unwrap(), generate(&small(7)).unwrap()]);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            ok(&["track", "--input", p(&input), "--output", p(&out)]);
            files(&out)
        })
        .collect();
    assert_eq!(runs[0].len(), 4);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn track_runs_21_sequences_within_budget() {
    let tmp = TempDir::new().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    ok(&["synth", "--output", p(&input), "--count", "21"]);
    let start = Instant::now();
    ok(&["track", "--input", p(&input), "--output", p(&output)]);
    let elapsed = start.elapsed();
    assert_eq!(fs::read_dir(&output).unwrap().count(), 42);
    assert!(elapsed.as_secs_f64() < 10.0, "{elapsed:?}");
}

#[test]
fn pipeline_on_noiseless_input_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    let bundles: Vec<_> = (0..3)
        .map(|s| generate(&SynthConfig { sequence: format!("n{s}"), ..small(s).noiseless() }).unwrap())
        .collect();
    write_bundles(&input, &bundles);
    ok(&["pipeline", "--input", p(&input), "--output", p(&output)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(output.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mota"].as_f64(), Some(1.0));
    for row in stages(&output).rows {
        assert_eq!(row.mota, Some(1.0), "{}", row.stage);
    }
}

#[test]
fn disabled_refinement_reproduces_bifuse() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&["pipeline", "--count", "2", "--output", p(&out), "--no-interp", "--no-size-avg", "--no-gp"]);
    for seq in ["synth-0000", "synth-0001"] {
        assert_eq!(traj(&out, seq, "refined"), traj(&out, seq, "bifused"));
    }
    let s = stages(&out);
    let names: Vec<&str> = s.rows.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(names, ["forward", "backward", "bifuse"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mota"].as_f64(), s.row("bifuse").unwrap().mota);
}

#[test]
fn manual_stage_chain_equals_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = |n: &str| tmp.path().join(n);
    ok(&["synth", "--output", p(&d("raw")), "--seed", "3", "--count", "2"]);
    ok(&["pipeline", "--input", p(&d("raw")), "--output", p(&d("auto"))]);

    ok(&["fuse-det", "--input", p(&d("raw")), "--output", p(&d("fused"))]);
    ok(&["track", "--input", p(&d("fused")), "--output", p(&d("tracks"))]);
    ok(&["bifuse", "--input", p(&d("tracks")), "--scenarios", p(&d("fused")), "--output", p(&d("bifused"))]);
    ok(&["refine", "--input", p(&d("bifused")), "--output", p(&d("refined"))]);
    ok(&["eval", "--pred", p(&d("refined")), "--gt", p(&d("fused")), "--output", p(&d("eval"))]);

    let auto = d("auto");
    for seq in ["synth-0003", "synth-0004"] {
        let same = |tag: &str, dir: &Path| {
            let name = format!("{seq}.{tag}.json");
            assert_eq!(fs::read(auto.join(&name)).unwrap(), fs::read(dir.join(&name)).unwrap(), "{name}");
        };
        same("scenario", &d("fused"));
        same("forward", &d("tracks"));
        same("backward", &d("tracks"));
        same("bifused", &d("bifused"));
        same("refined", &d("refined"));
    }
    for name in ["report.json", "report.csv", "report.txt"] {
        assert_eq!(fs::read(auto.join(name)).unwrap(), fs::read(d("eval").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["fuse-det", "--input", p(&missing), "--output", "x"], "fuse-det"),
        (vec!["track", "--input", p(&missing), "--output", "x"], "track"),
        (vec!["bifuse", "--input", p(&missing), "--output", "x"], "bifuse"),
        (vec!["refine", "--input", p(&missing), "--output", "x"], "refine"),
        (vec!["eval", "--pred", p(&missing), "--gt", p(&missing)], "eval"),
        (vec!["synth", "--output", "x", "--beta", "2"], "config"),
    ];
    for (args, stage) in cases {
        let out = omot(&args);
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(!out.status.success(), "{args:?}");
        assert!(err.contains(&format!("stage {stage} failed")), "{args:?}: {err}");
    }

    let tracks = tmp.path().join("tracks");
    let input = tmp.path().join("in");
    write_bundles(&input, &[generate(&small(8)).unwrap()]);
    ok(&["track", "--direction", "forward", "--input", p(&input), "--output", p(&tracks)]);
    let out = omot(&["bifuse", "--input", p(&tracks), "--output", p(&tmp.path().join("b"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success());
    assert!(err.contains("stage bifuse failed") && err.contains("backward"), "{err}");

    fs::write(input.join("bad.scenario.json"), "{\"schema\": \"omot.scenario/1\", \"sequence\": 3}").unwrap();
    let out = omot(&["pipeline", "--input", p(&input), "--output", p(&tmp.path().join("p"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success());
    assert!(err.contains("bad.scenario.json"), "{err}");
}

#[test]
fn stage_mota_is_monotone_on_the_standard_suite() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&["pipeline", "--count", "20", "--output", p(&out)]);
    let s = stages(&out);
    let chain = ["forward", "bifuse", "+size", "+interp", "+gp"];
    let motas: Vec<f64> = chain.iter().map(|st| s.row(st).unwrap().mota.unwrap()).collect();
    for (w, names) in motas.windows(2).zip(chain.windows(2)) {
        assert!(w[1] >= w[0], "{} {} -> {} {}", names[0], w[0], names[1], w[1]);
    }
}

#[test]
fn kitti_format_writes_one_row_per_observation() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&["pipeline", "--count", "1", "--seed", "9", "--output", p(&out), "--format", "kitti"]);
    let text = fs::read_to_string(out.join("kitti/refined/synth-0009.txt")).unwrap();
    let rows = parse_labels(&text, Path::new("synth-0009.txt")).unwrap();
    assert_eq!(rows.len(), traj(&out, "synth-0009", "refined").observation_count());
    assert!(rows.windows(2).all(|w| w[0].frame <= w[1].frame));
    assert!(rows.iter().all(|r| r.kind == "Car" && r.score.is_some()));
}
