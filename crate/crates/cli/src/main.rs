use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use omot::bifuse;
use omot::config::PipelineConfig;
use omot::eval::{evaluate_suite, SuiteEntry};
use omot::fusion2d3d::fuse_bundle;
use omot::kittio::{
    read_kitti_sequence, read_scenario_json, read_trajectories_json, write_kitti_tracking, write_scenario_json,
    write_trajectories_json, KittiPaths,
};
use omot::pipeline::run_suite;
use omot::refine::refine;
use omot::synth::generate_suite;
use omot::tracker::{run_sequence, Direction};
use omot::{ScenarioBundle, TrajectorySet};

const SCENARIO_TAG: &str = "scenario";

#[derive(Parser)]
#[command(name = "omot", version, about = "Offline bidirectional 3D multi-object tracking")]
struct Cli {
    /// TOML (or .json) file with stage parameters; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Confidence at or above which detections are kept without a mask.
    #[arg(long, global = true)]
    theta_det: Option<f64>,
    /// Mask overlap, in pixels, that a kept low-confidence box must exceed.
    #[arg(long, global = true)]
    alpha: Option<u32>,
    /// Minimum NCD for a detection to match a track.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    theta_hit: Option<u32>,
    #[arg(long, global = true)]
    theta_miss_cand: Option<u32>,
    #[arg(long, global = true)]
    theta_miss_conf: Option<u32>,
    /// Longest gap, in frames, that interpolation fills.
    #[arg(long, global = true)]
    theta_inter: Option<u32>,
    /// NCD above which an interpolated box is too close to another object.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// GP smoothness hyperparameter.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Evaluation match threshold on NCD.
    #[arg(long, global = true)]
    match_threshold: Option<f64>,
    #[arg(long, global = true)]
    no_interp: bool,
    #[arg(long, global = true)]
    no_size_avg: bool,
    #[arg(long, global = true)]
    no_gp: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    /// JSON plus KITTI tracking text files under `<output>/kitti/<stage>/`.
    Kitti,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences with ground truth.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value = "synth")]
        prefix: String,
    },
    /// Convert one KITTI tracking sequence into a scenario file.
    ImportKitti {
        /// Directory with calib/, label_02/, velodyne/ and instances/.
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        sequence: String,
        /// 3D detections in KITTI tracking label format.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Object classes to keep.
        #[arg(long, value_delimiter = ',', default_value = "Car")]
        classes: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Select detections by confidence and mask-point overlap.
    FuseDet {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build trajectories forward and/or backward in time.
    Track {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Fuse forward and backward trajectories.
    Bifuse {
        /// Directory with `<seq>.forward.json` and `<seq>.backward.json`.
        #[arg(long)]
        input: PathBuf,
        /// Scenario files used to check detection keys and for KITTI output.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Interpolate, average sizes and smooth each trajectory.
    Refine {
        #[arg(long)]
        input: PathBuf,
        /// Which trajectory files to read: `<seq>.<from>.json`.
        #[arg(long, default_value = "bifused")]
        from: String,
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// CLEAR-MOT evaluation against ground truth in scenario files.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "refined")]
        from: String,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for report.txt, report.csv and report.json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every stage and evaluate each intermediate result.
    Pipeline {
        /// Scenario files; when absent, synthetic sequences are generated.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.theta_det {
        cfg.fusion.det_confidence_threshold = v;
    }
    if let Some(v) = o.alpha {
        cfg.fusion.overlap_threshold = v;
    }
    if let Some(v) = o.beta {
        cfg.tracker.beta = v;
    }
    if let Some(v) = o.theta_hit {
        cfg.tracker.theta_hit = v;
    }
    if let Some(v) = o.theta_miss_cand {
        cfg.tracker.theta_miss_candidate = v;
    }
    if let Some(v) = o.theta_miss_conf {
        cfg.tracker.theta_miss_confirmed = v;
    }
    if let Some(v) = o.theta_inter {
        cfg.refine.interp_window = v;
    }
    if let Some(v) = o.gamma {
        cfg.refine.ncd_gate = v;
    }
    if let Some(v) = o.tau {
        cfg.refine.gp_tau = v;
    }
    if let Some(v) = o.match_threshold {
        cfg.eval.threshold = v;
    }
    cfg.refine.interpolate &= !o.no_interp;
    cfg.refine.size_average &= !o.no_size_avg;
    cfg.refine.gp &= !o.no_gp;
    cfg.validate()?;
    Ok(cfg)
}

/// `(sequence, path)` for every `<seq>.<tag>.json` in `input`, sorted by
/// sequence. A file path is accepted as is.
fn discover(input: &Path, tag: &str) -> Result<Vec<(String, PathBuf)>> {
    let suffix = format!(".{tag}.json");
    if input.is_file() {
        let name = input.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let seq = name.strip_suffix(&suffix).unwrap_or(name).to_string();
        return Ok(vec![(seq, input.to_path_buf())]);
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(input).with_context(|| format!("cannot read directory {}", input.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(seq) = name.strip_suffix(&suffix) {
            out.push((seq.to_string(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no *{suffix} files in {}", input.display());
    }
    Ok(out)
}

fn file_for(dir: &Path, seq: &str, tag: &str) -> PathBuf {
    dir.join(format!("{seq}.{tag}.json"))
}

fn read_scenarios(input: &Path) -> Result<Vec<ScenarioBundle>> {
    discover(input, SCENARIO_TAG)?
        .par_iter()
        .map(|(_, p)| read_scenario_json(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn scenario_map(dir: Option<&Path>) -> Result<BTreeMap<String, ScenarioBundle>> {
    match dir {
        Some(d) => Ok(read_scenarios(d)?.into_iter().map(|b| (b.sequence.clone(), b)).collect()),
        None => Ok(BTreeMap::new()),
    }
}

fn write_scenarios(dir: &Path, bundles: &[ScenarioBundle]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    bundles
        .par_iter()
        .try_for_each(|b| write_scenario_json(b, &file_for(dir, &b.sequence, SCENARIO_TAG)).map_err(anyhow::Error::from))
}

fn write_sets(
    dir: &Path,
    tag: &str,
    sets: &[(String, TrajectorySet)],
    format: Format,
    scenarios: &BTreeMap<String, ScenarioBundle>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (seq, set) in sets {
        write_trajectories_json(seq, set, &file_for(dir, seq, tag))?;
    }
    if format == Format::Kitti {
        let kdir = dir.join("kitti").join(tag);
        fs::create_dir_all(&kdir)?;
        for (seq, set) in sets {
            let bundle = scenarios
                .get(seq)
                .ok_or_else(|| anyhow!("KITTI output for {seq} needs its scenario file for the camera (pass --scenarios)"))?;
            write_kitti_tracking(set, &bundle.camera, "Car", &kdir.join(format!("{seq}.txt")))?;
        }
    }
    Ok(())
}

fn read_sets(input: &Path, tag: &str) -> Result<Vec<(String, TrajectorySet)>> {
    discover(input, tag)?
        .par_iter()
        .map(|(_, p)| {
            let f = read_trajectories_json(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((f.sequence, f.set))
        })
        .collect()
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn cmd_synth(cfg: &PipelineConfig, output: &Path, seed: u64, count: u64, prefix: &str) -> Result<()> {
    let bundles = generate_suite(&cfg.synth, prefix, seed..seed + count)?;
    write_scenarios(output, &bundles)
}

fn cmd_track(cfg: &PipelineConfig, input: &Path, output: &Path, direction: DirectionArg, format: Format) -> Result<()> {
    let bundles = read_scenarios(input)?;
    let dirs: &[Direction] = match direction {
        DirectionArg::Forward => &[Direction::Forward],
        DirectionArg::Backward => &[Direction::Backward],
        DirectionArg::Both => &[Direction::Forward, Direction::Backward],
    };
    let scen: BTreeMap<String, ScenarioBundle> = bundles.iter().map(|b| (b.sequence.clone(), b.clone())).collect();
    for &d in dirs {
        let tc = cfg.tracker.with_direction(d);
        let sets: Vec<(String, TrajectorySet)> = bundles
            .par_iter()
            .map(|b| Ok((b.sequence.clone(), run_sequence(b, &tc).with_context(|| format!("sequence {}", b.sequence))?)))
            .collect::<Result<_>>()?;
        write_sets(output, &d.to_string(), &sets, format, &scen)?;
    }
    Ok(())
}

fn cmd_bifuse(input: &Path, scenarios: Option<&Path>, output: &Path, format: Format) -> Result<()> {
    let fwd = read_sets(input, "forward")?;
    let bwd: BTreeMap<String, TrajectorySet> = read_sets(input, "backward")?.into_iter().collect();
    let scen = scenario_map(scenarios)?;
    let sets: Vec<(String, TrajectorySet)> = fwd
        .par_iter()
        .map(|(seq, ta)| {
            let tb = bwd.get(seq).ok_or_else(|| anyhow!("no backward trajectories for sequence {seq}"))?;
            let fused = match scen.get(seq) {
                Some(b) => bifuse::fuse_checked(ta, tb, b)?,
                None => bifuse::fuse(ta, tb)?,
            };
            Ok((seq.clone(), fused))
        })
        .collect::<Result<_>>()?;
    write_sets(output, "bifused", &sets, format, &scen)
}

fn cmd_refine(cfg: &PipelineConfig, input: &Path, from: &str, scenarios: Option<&Path>, output: &Path, format: Format) -> Result<()> {
    let scen = scenario_map(scenarios)?;
    let sets: Vec<(String, TrajectorySet)> = read_sets(input, from)?
        .into_par_iter()
        .map(|(seq, set)| {
            let (refined, warnings) = refine(&set, &cfg.refine)?;
            for w in warnings {
                eprintln!("warning: {seq}: trajectory {}: {}", w.trajectory, w.message);
            }
            Ok((seq, refined))
        })
        .collect::<Result<_>>()?;
    write_sets(output, "refined", &sets, format, &scen)
}

fn cmd_eval(cfg: &PipelineConfig, pred: &Path, from: &str, gt: &Path, output: Option<&Path>) -> Result<()> {
    let preds = read_sets(pred, from)?;
    let scen = scenario_map(Some(gt))?;
    let mut entries = Vec::new();
    for (seq, set) in &preds {
        let b = scen.get(seq).ok_or_else(|| anyhow!("no scenario file for sequence {seq}"))?;
        let g = b
            .ground_truth
            .as_ref()
            .ok_or_else(|| anyhow!("scenario {seq} has no ground truth"))?;
        entries.push(SuiteEntry {
            sequence: seq,
            pred: set,
            gt: g,
        });
    }
    let (report, _) = evaluate_suite(&entries, cfg.eval.threshold)?;
    print!("{}", report.to_table());
    if let Some(dir) = output {
        write_text(dir, "report.txt", &report.to_table())?;
        write_text(dir, "report.csv", &report.to_csv())?;
        write_text(dir, "report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn cmd_pipeline(cfg: &PipelineConfig, input: Option<&Path>, output: &Path, seed: u64, count: u64, format: Format) -> Result<()> {
    let bundles = match input {
        Some(dir) => read_scenarios(dir)?,
        None => generate_suite(&cfg.synth, &cfg.synth.sequence, seed..seed + count)?,
    };
    let out = run_suite(&bundles, cfg)?;
    let fused: Vec<ScenarioBundle> = out.sequences.iter().map(|o| o.fused.clone()).collect();
    write_scenarios(output, &fused)?;
    let scen: BTreeMap<String, ScenarioBundle> = fused.into_iter().map(|b| (b.sequence.clone(), b)).collect();
    type Pick = fn(&omot::pipeline::SequenceOutput) -> &TrajectorySet;
    let stages: [(&str, Pick); 4] = [
        ("forward", |o| &o.forward),
        ("backward", |o| &o.backward),
        ("bifused", |o| &o.bifused),
        ("refined", |o| &o.refined),
    ];
    for (tag, pick) in stages {
        let sets: Vec<(String, TrajectorySet)> =
            out.sequences.iter().map(|o| (o.sequence().to_string(), pick(o).clone())).collect();
        let fmt = if tag == "refined" { format } else { Format::Json };
        write_sets(output, tag, &sets, fmt, &scen)?;
    }
    for o in &out.sequences {
        for w in &o.warnings {
            eprintln!("warning: {}: trajectory {}: {}", o.sequence(), w.trajectory, w.message);
        }
    }
    if let (Some(report), Some(stages)) = (&out.report, &out.stages) {
        print!("{}", stages.to_table());
        write_text(output, "report.txt", &report.to_table())?;
        write_text(output, "report.csv", &report.to_csv())?;
        write_text(output, "report.json", &(serde_json::to_string_pretty(report)? + "\n"))?;
        write_text(output, "stages.txt", &stages.to_table())?;
        write_text(output, "stages.csv", &stages.to_csv())?;
        write_text(output, "stages.json", &(serde_json::to_string_pretty(stages)? + "\n"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli).context("stage config failed")?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Synth {
            output,
            seed,
            count,
            prefix,
        } => cmd_synth(&cfg, output, *seed, *count, prefix).context("stage synth failed"),
        Command::ImportKitti {
            root,
            sequence,
            detections,
            classes,
            output,
        } => {
            let mut paths = KittiPaths::standard(root, sequence, detections.clone());
            paths.classes = classes.clone();
            let bundle = read_kitti_sequence(sequence, &paths).context("stage import-kitti failed")?;
            write_scenarios(output, &[bundle]).context("stage import-kitti failed")
        }
        Command::FuseDet { input, output } => (|| {
            let bundles = read_scenarios(input)?;
            let fused: Vec<ScenarioBundle> = bundles
                .par_iter()
                .map(|b| fuse_bundle(b, &cfg.fusion).with_context(|| format!("sequence {}", b.sequence)))
                .collect::<Result<_>>()?;
            write_scenarios(output, &fused)
        })()
        .context("stage fuse-det failed"),
        Command::Track {
            input,
            output,
            direction,
            format,
        } => cmd_track(&cfg, input, output, *direction, *format).context("stage track failed"),
        Command::Bifuse {
            input,
            scenarios,
            output,
            format,
        } => cmd_bifuse(input, scenarios.as_deref(), output, *format).context("stage bifuse failed"),
        Command::Refine {
            input,
            from,
            scenarios,
            output,
            format,
        } => cmd_refine(&cfg, input, from, scenarios.as_deref(), output, *format).context("stage refine failed"),
        Command::Eval { pred, from, gt, output } => {
            cmd_eval(&cfg, pred, from, gt, output.as_deref()).context("stage eval failed")
        }
        Command::Pipeline {
            input,
            output,
            seed,
            count,
            format,
        } => cmd_pipeline(&cfg, input.as_deref(), output, *seed, *count, *format).context("pipeline failed"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
