//! The `rnntrack` command line: `track`, `eval`, `gradcheck` and `synth`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{load_sequence, ope_curves, read_boxes, save_sequence, synth_sequence, write_results, SynthSpec};
use crate::imagery::{PatchVector, NUM_PATCHES, PATCH_LEN};
use crate::model::save_model;
use crate::optim::finite_diff_grad;
use crate::rnn::{objective, objective_and_gradient, Label, LabeledSample, Theta};
use crate::tracker::{track_sequence, AffineState};
use crate::tree::{generate_tree_with, grid_adjacency};

const GRADCHECK_STREAM: u64 = 0x6772_6164;
const DEFAULT_RESULT: &str = "results.txt";

#[derive(Debug, Parser)]
#[command(name = "rnntrack", version, about = "Single-target tracking with first-frame RNN features")]
pub struct Cli {
    /// Worker threads for candidate scoring and gradients (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the first frame of a sequence and track it to the end.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Eval(EvalArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic sequence.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// TOML config; omitted fields use the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequence directory holding `img/` and a ground-truth file.
    #[arg(long)]
    pub seq: Option<PathBuf>,
    /// Result file, one `frame x y w h` line per frame.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Metrics CSV against the sequence's ground truth.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of descriptor trees.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Print the effective configuration and per-frame progress.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result file to score.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth; defaults to the one inside `--seq`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub seq: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Perturbs the analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output sequence directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    /// Side of the square target in pixels.
    #[arg(long, default_value_t = 40)]
    pub size: usize,
    /// 0-based left edge of the target in frame 1.
    #[arg(long, default_value_t = 40)]
    pub x: i64,
    #[arg(long, default_value_t = 100)]
    pub y: i64,
    /// Horizontal motion in pixels per frame.
    #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
    pub vx: i64,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub vy: i64,
    /// Half-width of the uniform background noise.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("warning: thread pool already configured: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Track(a) => cmd_track(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Resolves flags over the config file, flags winning.
pub fn resolve_run_config(args: &TrackArgs) -> Result<RunConfig> {
    let mut run = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(t) = args.trees {
        run.network.trees = t;
    }
    if args.verbose {
        run.verbosity = run.verbosity.max(2);
    }
    let paths = &mut run.paths;
    for (flag, slot) in [
        (&args.seq, &mut paths.sequence),
        (&args.out, &mut paths.result),
        (&args.model, &mut paths.model),
        (&args.metrics, &mut paths.metrics),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(run)
}

pub fn cmd_track(args: &TrackArgs) -> Result<bool> {
    let run = resolve_run_config(args)?;
    let config = run.tracker()?;
    let seq_dir = run
        .paths
        .sequence
        .clone()
        .ok_or_else(|| Error::Config("no sequence directory given (--seq)".into()))?;
    if run.verbosity >= 2 {
        eprintln!("# effective configuration\n{}", run.to_toml());
    }
    let seq = load_sequence(&seq_dir)?;
    let gt = seq.ground_truth.as_ref().ok_or_else(|| Error::NotFound("ground truth".into()))?;
    let start = AffineState::from_bbox(&gt[0])?;

    let clock = Instant::now();
    let (result, model) = track_sequence(&seq.frames, &start, &config)?;
    let boxes = result.boxes();

    let result_path = run.paths.result.clone().unwrap_or_else(|| DEFAULT_RESULT.into());
    let mut buf = Vec::new();
    write_results(&mut buf, &boxes)?;
    write_file(&result_path, &buf)?;
    if let Some(p) = &run.paths.model {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        save_model(p, &model, &run)?;
    }

    if run.verbosity >= 1 {
        eprintln!(
            "trained in {} iterations ({:?}), objective {:.6}, training accuracy {:.1}%",
            result.training.iterations,
            result.training.termination,
            result.training.final_objective,
            100.0 * result.training_accuracy
        );
        if result.coarse_only {
            eprintln!(
                "sequence shorter than the {}-frame bootstrap: tracked with raw-pixel scoring only",
                config.bootstrap_frames
            );
        }
        eprintln!(
            "tracked {} frames in {:.1} s, wrote {}",
            boxes.len(),
            clock.elapsed().as_secs_f64(),
            result_path.display()
        );
    }
    if let Some(p) = &run.paths.metrics {
        let curves = ope_curves(&boxes, gt)?;
        let mut buf = Vec::new();
        curves.write_csv(&mut buf)?;
        write_file(p, &buf)?;
        println!("precision@20 {:.3}", curves.precision_at_20);
        println!("success AUC {:.3}", curves.success_auc);
    }
    Ok(true)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<bool> {
    let results = read_boxes(&args.out)?;
    let gt = match (&args.gt, &args.seq) {
        (Some(p), _) => read_boxes(p)?,
        (None, Some(dir)) => load_sequence(dir)?
            .ground_truth
            .ok_or_else(|| Error::NotFound("ground truth".into()))?,
        (None, None) => return Err(Error::Config("give --gt or --seq".into())),
    };
    let curves = ope_curves(&results, &gt)?;
    if let Some(p) = &args.metrics {
        let mut buf = Vec::new();
        curves.write_csv(&mut buf)?;
        write_file(p, &buf)?;
    }
    println!("precision@20 {:.3}", curves.precision_at_20);
    println!("success AUC {:.3}", curves.success_auc);
    Ok(true)
}

/// Largest relative gradient discrepancy per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<(&'static str, f64)>,
    pub max_relative_error: f64,
}

/// Random parameters and samples, analytic gradient against central
/// differences. The relative error of a block is
/// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`.
pub fn gradient_check(n: usize, samples: usize, seed: u64, step: f64, corrupt: bool) -> Result<GradCheckReport> {
    if n < 2 || samples == 0 {
        return crate::error::input("gradient check needs n ≥ 2 and at least one sample");
    }
    let lambda = 1e-4;
    let mut rng = crate::seeded_rng(seed, GRADCHECK_STREAM);
    let adjacency = grid_adjacency();
    let data = (0..samples)
        .map(|i| {
            let patches = (0..NUM_PATCHES)
                .map(|p| PatchVector::new((0..PATCH_LEN).map(|_| rng.random::<f64>()).collect(), p + 1))
                .collect::<Result<Vec<_>>>()?;
            let label = if i % 2 == 0 { Label::Target } else { Label::Background };
            LabeledSample::new(patches, label, generate_tree_with(&adjacency, &mut rng)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut theta = Theta::init_uniform(n, seed, 0.1)?;
    for b in theta.b_raw.iter_mut().chain(theta.b_rnn.iter_mut()) {
        *b = rng.random_range(-0.1..=0.1);
    }
    let (_, mut analytic) = objective_and_gradient(&theta, &data, lambda)?;
    if corrupt {
        for w in &mut analytic.w_rnn {
            *w *= 1.01;
        }
    }
    let numeric_flat = finite_diff_grad(
        |x: &[f64]| {
            Theta::unflatten(n, x)
                .and_then(|t| objective(&t, &data, lambda))
                .unwrap_or(f64::NAN)
        },
        &theta.flatten(),
        step,
    )?;
    let numeric = Theta::unflatten(n, &numeric_flat)?;

    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let blocks: Vec<(&'static str, f64)> = analytic
        .named_blocks()
        .iter()
        .zip(numeric.named_blocks().iter())
        .map(|((name, a), (_, f))| {
            let diff: Vec<f64> = a.iter().zip(f.iter()).map(|(x, y)| x - y).collect();
            let scale = inf(a).max(inf(f)).max(f64::MIN_POSITIVE);
            (*name, inf(&diff) / scale)
        })
        .collect();
    let max_relative_error = blocks.iter().fold(0.0f64, |m, (_, e)| if e.is_nan() { f64::NAN } else { m.max(*e) });
    Ok(GradCheckReport { blocks, max_relative_error })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let clock = Instant::now();
    let report = gradient_check(args.n, args.samples, args.seed, args.step, args.corrupt)?;
    let mut out = std::io::stdout().lock();
    for (name, e) in &report.blocks {
        writeln!(out, "{name:<7} {e:.3e}")?;
    }
    let pass = report.max_relative_error < args.tolerance;
    writeln!(
        out,
        "max relative error {:.3e} ({}, {:.2} s)",
        report.max_relative_error,
        if pass { "ok" } else { "FAILED" },
        clock.elapsed().as_secs_f64()
    )?;
    Ok(pass)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<bool> {
    let spec = SynthSpec {
        width: args.width,
        height: args.height,
        frames: args.frames,
        target_size: args.size,
        start: (args.x, args.y),
        velocity: (args.vx, args.vy),
        noise: args.noise,
        seed: args.seed,
    };
    let seq = synth_sequence(&spec)?;
    save_sequence(&seq, &args.out)?;
    eprintln!("wrote {} frames to {}", seq.len(), args.out.display());
    Ok(true)
}
