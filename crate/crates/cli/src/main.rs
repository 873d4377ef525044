use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sthrn::config::{RunConfig, KEYS};
use sthrn::evaluation::{mae, zero_velocity, EvalReport, HorizonGrid};
use sthrn::plot::render_svg;
use sthrn::skeleton::{
    normalize_lengths, resample_fps, synth_motion, MotionFormat, MotionSequence, SkeletonError, SkeletonTopology,
    SynthKind,
};
use sthrn::training::{Checkpoint, TrainError, Trainer};

/// Skeletal motion prediction with a spatio-temporal hierarchical recurrent network.
#[derive(Debug, Parser)]
#[command(name = "sthrn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert joint positions to per-bone rotation vectors at a fixed frame rate.
    Preprocess {
        /// Input csv-joints file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Topology file, or a built-in name (human, mouse, single_chain, tiny).
        #[arg(long)]
        topology: String,
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
        /// Output csv-lie file; the length-normalized topology is written next to it
        /// with a `.topo` extension appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on csv-lie sequences.
    #[command(after_help = config_help())]
    Train {
        /// One or more csv-lie files.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "human")]
        topology: String,
        /// `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a configuration key, e.g. `--set hidden=6` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-iteration loss CSV; defaults to the checkpoint path with `.metrics.csv` appended.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write 0 in the wallclock column so reruns produce identical files.
        #[arg(long)]
        zero_wallclock: bool,
    },
    /// Predict the frames following a csv-lie clip.
    Predict {
        /// Trained checkpoint; not needed with `--baseline zero-velocity`.
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<Baseline>,
        /// csv-lie file whose final frames are the observed clip.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Observed frames to use; defaults to the checkpoint's training window.
        #[arg(long)]
        observed: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted frames against ground truth at the standard horizons.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth continuation, frame-aligned with `--pred`.
        #[arg(long)]
        target: PathBuf,
        /// Frame rate for the horizon grid; defaults to the target file's.
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long, default_value = "all")]
        activity: String,
        #[arg(long, default_value = "model")]
        method: String,
        /// Report CSV to write (or extend, with `--append`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        append: bool,
    },
    /// Generate a synthetic csv-lie sequence.
    Synth {
        #[arg(long, default_value = "human")]
        topology: String,
        #[arg(long, value_enum, default_value = "sinusoid")]
        kind: SynthChoice,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render selected frames as an SVG strip of stick figures.
    Plot {
        /// csv-joints or csv-lie file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "human")]
        topology: String,
        /// Frame indices: `0,4,8` or a half-open range `0..16`.
        #[arg(long)]
        frames: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    ZeroVelocity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthChoice {
    Constant,
    Sweep,
    Sinusoid,
}

fn config_help() -> String {
    let mut s = String::from("Configuration keys (default):\n");
    for (key, default, doc) in KEYS {
        s.push_str(&format!("  {key:<24} {default:<11} {doc}\n"));
    }
    s.push_str("\nSettings apply in order: STHRN_SEED, --config, --set, then --seed and --iterations.");
    s
}

/// Failure with its exit status: 1 for runtime or numeric problems, 2 for bad input.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn runtime(message: impl fmt::Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

impl From<SkeletonError> for CliError {
    fn from(e: SkeletonError) -> Self {
        Self::usage(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::runtime(e),
            _ => Self::usage(e),
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn topology(spec: &str) -> Result<SkeletonTopology, CliError> {
    if !Path::new(spec).exists() {
        match spec {
            "human" => return Ok(SkeletonTopology::human()),
            "mouse" => return Ok(SkeletonTopology::mouse()),
            "single_chain" => return Ok(SkeletonTopology::single_chain()),
            "tiny" => return Ok(SkeletonTopology::tiny()),
            _ => {}
        }
    }
    Ok(SkeletonTopology::load(spec)?)
}

fn read_motion(
    path: &Path,
    format: Option<MotionFormat>,
    topo: Option<&SkeletonTopology>,
) -> Result<MotionSequence, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let format = format.unwrap_or_else(|| {
        let header = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if header.split(',').any(|f| f.trim().starts_with("k=")) {
            MotionFormat::CsvLie
        } else {
            MotionFormat::CsvJoints
        }
    });
    MotionSequence::parse(&text, format, topo).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parse_frames(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::usage(format!("invalid frame selection `{spec}`"));
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn preprocess(input: &Path, topo: &str, fps: f64, out: &Path) -> Result<(), CliError> {
    let topo = topology(topo)?;
    let seq = read_motion(input, Some(MotionFormat::CsvJoints), Some(&topo))?;
    let seq = resample_fps(&seq, fps)?;
    let normalized = normalize_lengths(std::slice::from_ref(&seq), &topo)?;
    let lie = seq.to_lie(&normalized)?;
    write_file(out, lie.to_csv())?;
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".topo");
    write_file(Path::new(&sidecar), normalized.to_text())
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &[PathBuf],
    topo: &str,
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    iterations: Option<u64>,
    out: &Path,
    metrics: Option<&Path>,
    zero_wallclock: bool,
) -> Result<(), CliError> {
    let topo = topology(topo)?;
    let mut run = RunConfig::default();
    if let Ok(s) = std::env::var("STHRN_SEED") {
        run.set("seed", &s).map_err(|e| CliError::usage(format!("STHRN_SEED: {e}")))?;
    }
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        run.apply_text(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        run.set(k.trim(), v.trim()).map_err(CliError::usage)?;
    }
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(n) = iterations {
        run.train.iterations = n;
    }
    let seqs =
        data.iter().map(|p| read_motion(p, Some(MotionFormat::CsvLie), Some(&topo))).collect::<Result<Vec<_>, _>>()?;
    let model_config = run.model_config(topo.layout());
    let mut trainer = Trainer::new(model_config, run.train.clone(), topo.entry_lengths(), &seqs)?;

    let metrics_path = metrics.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".metrics.csv");
        PathBuf::from(p)
    });
    let mut log = String::from("iteration,loss,wallclock_ms\n");
    let start = Instant::now();
    let every = run.train.checkpoint_every;
    for _ in 0..run.train.iterations {
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e) => {
                write_file(&metrics_path, &log)?;
                return Err(e.into());
            }
        };
        let ms = if zero_wallclock { 0 } else { start.elapsed().as_millis() };
        log.push_str(&format!("{},{loss},{ms}\n", trainer.iteration));
        if every > 0 && trainer.iteration % every == 0 {
            trainer.checkpoint().save(out)?;
            write_file(&metrics_path, &log)?;
        }
    }
    trainer.checkpoint().save(out)?;
    write_file(&metrics_path, &log)
}

fn predict(
    checkpoint: Option<&Path>,
    baseline: Option<Baseline>,
    data: &Path,
    horizon: usize,
    observed: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    if horizon == 0 {
        return Err(CliError::usage("--horizon must be at least 1"));
    }
    let seq = read_motion(data, Some(MotionFormat::CsvLie), None)?;
    let frames = seq.lie_frames()?;
    let pred = match (baseline, checkpoint) {
        (Some(Baseline::ZeroVelocity), _) => zero_velocity(frames, horizon).map_err(CliError::usage)?,
        (None, Some(path)) => {
            let ck = Checkpoint::load(path)?;
            let k = ck.model.config.entry_count();
            if frames[0].len() != k {
                return Err(CliError::usage(format!(
                    "{} has {} entries per frame, checkpoint expects {k}",
                    data.display(),
                    frames[0].len()
                )));
            }
            let t = observed.unwrap_or(ck.train.observed).min(frames.len());
            if t < 2 {
                return Err(CliError::usage("need at least 2 observed frames"));
            }
            ck.model.predict(&frames[frames.len() - t..], horizon).map_err(CliError::usage)?
        }
        (None, None) => return Err(CliError::usage("either --checkpoint or --baseline is required")),
    };
    if pred.iter().any(|f| f.flatten().iter().any(|x| !x.is_finite())) {
        return Err(CliError::runtime("prediction is not finite"));
    }
    let mut result = MotionSequence::from_lie(seq.fps, pred);
    result.subject = seq.subject.clone();
    result.activity = seq.activity.clone();
    write_file(out, result.to_csv())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    pred: &Path,
    target: &Path,
    fps: Option<f64>,
    activity: &str,
    method: &str,
    out: &Path,
    append: bool,
) -> Result<(), CliError> {
    let p = read_motion(pred, Some(MotionFormat::CsvLie), None)?;
    let t = read_motion(target, Some(MotionFormat::CsvLie), None)?;
    let (pf, tf) = (p.lie_frames()?, t.lie_frames()?);
    if pf.len() != tf.len() {
        return Err(CliError::usage(format!(
            "length mismatch: {} predicted frames, {} target frames",
            pf.len(),
            tf.len()
        )));
    }
    if pf[0].len() != tf[0].len() {
        return Err(CliError::usage(format!("entry mismatch: {} vs {} per frame", pf[0].len(), tf[0].len())));
    }
    let grid = HorizonGrid::standard(fps.unwrap_or(t.fps)).map_err(CliError::usage)?;
    let reachable = grid.truncated(pf.len()).ok_or_else(|| {
        CliError::usage(format!("{} frames do not reach the first horizon (frame {})", pf.len(), grid.frames()[0]))
    })?;
    let values = mae(pf, tf, &reachable).map_err(CliError::usage)?;
    let mut report = if append && out.exists() {
        let text = std::fs::read_to_string(out).map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?;
        EvalReport::from_csv(&text).map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?
    } else {
        EvalReport::standard()
    };
    report.insert(activity, method, reachable.millis(), &values).map_err(CliError::usage)?;
    write_file(out, report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn plot(data: &Path, topo: &str, frames: &str, out: &Path) -> Result<(), CliError> {
    let topo = topology(topo)?;
    let seq = read_motion(data, None, Some(&topo))?;
    let svg = render_svg(&seq, &topo, &parse_frames(frames)?).map_err(CliError::usage)?;
    write_file(out, svg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess { input, topology, fps, out } => preprocess(&input, &topology, fps, &out),
        Command::Train {
            data,
            topology,
            config,
            overrides,
            seed,
            iterations,
            out_checkpoint,
            metrics,
            zero_wallclock,
        } => train(
            &data,
            &topology,
            config.as_deref(),
            &overrides,
            seed,
            iterations,
            &out_checkpoint,
            metrics.as_deref(),
            zero_wallclock,
        ),
        Command::Predict { checkpoint, baseline, data, horizon, observed, out } => {
            predict(checkpoint.as_deref(), baseline, &data, horizon, observed, &out)
        }
        Command::Eval { pred, target, fps, activity, method, out, append } => {
            eval(&pred, &target, fps, &activity, &method, &out, append)
        }
        Command::Synth { topology: topo, kind, frames, seed, out } => {
            let kind = match kind {
                SynthChoice::Constant => SynthKind::Constant,
                SynthChoice::Sweep => SynthKind::linear_sweep(),
                SynthChoice::Sinusoid => SynthKind::sinusoid(),
            };
            let seq = synth_motion(kind, frames, &topology(&topo)?, seed);
            write_file(&out, seq.to_csv())
        }
        Command::Plot { data, topology, frames, out } => plot(&data, &topology, &frames, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
