//! Acceptance run: every headline criterion at its stated tolerance, one
//! PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnntrack::eval::{center_error, iou, ope_curves, synth_sequence, BBox, SynthSpec};
use rnntrack::imagery::{PatchVector, NUM_PATCHES, PATCH_LEN};
use rnntrack::optim::{lbfgs_minimize, OptimOptions};
use rnntrack::rnn::{forward_tree, Theta};
use rnntrack::sparse::lasso_nn;
use rnntrack::tracker::{harvest_training_samples, track_sequence, train_first_frame, training_accuracy, AffineState, TrackerConfig};
use rnntrack::tree::{enumerate_trees, generate_tree, grid_adjacency, AdjacencyMatrix, Merge, MergeTree};

mod common;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn gradient_check() -> Outcome {
    let clock = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_rnntrack"))
        .args(["gradcheck", "--n", "10", "--samples", "5", "--step", "1e-5"])
        .output()
        .unwrap();
    let elapsed = clock.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().last().unwrap_or("").to_string();
    outcome(out.status.success() && elapsed < Duration::from_secs(10), format!("{summary}; wall {elapsed:.2?} (< 10 s)"))
}

fn parameter_count() -> Outcome {
    let count = Theta::init(50, 0).unwrap().weight_count();
    outcome(count == 15_400, format!("{count} weights at n = 50 (biases excluded)"))
}

fn swapped(tree: &MergeTree) -> MergeTree {
    let merges = tree.merges().iter().map(|m| Merge { left: m.right, right: m.left, new: m.new }).collect();
    MergeTree::new(tree.leaves(), merges).unwrap()
}

fn structural_invariants() -> Outcome {
    let grid = grid_adjacency();
    let invalid = (0..10_000u64).filter(|&s| generate_tree(&grid, s).and_then(|t| t.validate(&grid)).is_err()).count();

    let small = AdjacencyMatrix::grid(2, 2).unwrap();
    let all = enumerate_trees(&small).unwrap();
    let outside = (0..1000u64).filter(|&s| !all.contains(&generate_tree(&small, s).unwrap().canonical())).count();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = Theta::init_uniform(50, 2, 0.05).unwrap();
    let mut swap_mismatch = 0;
    let mut leaf_mismatch = 0;
    for s in 0..50u64 {
        let patches: Vec<PatchVector> = (0..NUM_PATCHES)
            .map(|p| PatchVector::new((0..PATCH_LEN).map(|_| rng.random::<f64>()).collect(), p + 1).unwrap())
            .collect();
        let t1 = generate_tree(&grid, s).unwrap();
        let t2 = generate_tree(&grid, s + 1000).unwrap();
        let a = forward_tree(&theta, &patches, &t1).unwrap();
        let b = forward_tree(&theta, &patches, &swapped(&t1)).unwrap();
        let c = forward_tree(&theta, &patches, &t2).unwrap();
        swap_mismatch += usize::from(a.root() != b.root());
        leaf_mismatch += usize::from(a.leaves() != c.leaves());
    }
    outcome(
        invalid == 0 && outside == 0 && swap_mismatch == 0 && leaf_mismatch == 0,
        format!(
            "{invalid}/10000 invalid 3×3 trees, {outside}/1000 2×2 trees outside the {}-tree enumeration, \
             {swap_mismatch}/50 child-swap and {leaf_mismatch}/50 leaf mismatches",
            all.len()
        ),
    )
}

fn textured_frame() -> (rnntrack::imagery::GrayImage, AffineState) {
    let seq = synth_sequence(&SynthSpec { frames: 1, noise: 0.0, ..Default::default() }).unwrap();
    let gt = AffineState::from_bbox(&seq.ground_truth.unwrap()[0]).unwrap();
    (seq.frames.into_iter().next().unwrap(), gt)
}

fn optimizer_sanity(training_trace: &[f64]) -> Outcome {
    let opts = OptimOptions { gradient_tolerance: 1e-10, max_iterations: 1000, ..Default::default() };
    let (x, report) = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
    let err = (x[0] - 1.0).abs().max((x[1] - 1.0).abs());
    let monotone = training_trace.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        err < 1e-6 && monotone,
        format!(
            "Rosenbrock |x − (1,1)|∞ = {err:.2e} after {} iterations; training trace of {} objectives non-increasing: {monotone}",
            report.iterations,
            training_trace.len()
        ),
    )
}

fn first_frame_training() -> (Outcome, Vec<f64>) {
    let (frame, gt) = textured_frame();
    let config = TrackerConfig::default();
    let clock = Instant::now();
    let set = harvest_training_samples(&frame, &gt, &config, config.seed).unwrap();
    let (theta, report) = train_first_frame(&set.samples, &config).unwrap();
    let elapsed = clock.elapsed();
    let accuracy = training_accuracy(&theta, &set.samples).unwrap();
    let o = outcome(
        accuracy == 1.0 && report.iterations <= 200 && elapsed < Duration::from_secs(60),
        format!(
            "accuracy {:.1}% on {} samples after {} L-BFGS iterations (objective {:.3e}); {elapsed:.2?} (< 60 s)",
            100.0 * accuracy,
            set.samples.len(),
            report.iterations,
            report.final_objective
        ),
    );
    (o, report.trace)
}

fn sparse_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_soft = 0.0f64;
    for _ in 0..100 {
        let dim = rng.random_range(4..32);
        let count = rng.random_range(1..=dim);
        let atoms = orthonormal(&mut rng, dim, count);
        let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.0..0.3);
        let code = lasso_nn(&dictionary(&atoms), &y, lambda).unwrap();
        worst_soft = worst_soft.max(soft_threshold_gap(&atoms, &y, lambda, &code.coefficients));
    }
    let mut worst_kkt = 0.0f64;
    for _ in 0..100 {
        let dim = rng.random_range(5..60);
        let count = rng.random_range(1..=dim);
        let (dict, y, lambda) = random_instance(&mut rng, dim, count);
        let code = lasso_nn(&dict, &y, lambda).unwrap();
        worst_kkt = worst_kkt.max(kkt_violation(&dict, &y, &code.coefficients, lambda));
    }
    outcome(
        worst_soft < 1e-6 && worst_kkt < 1e-5,
        format!("soft-threshold gap {worst_soft:.2e} (< 1e-6), KKT violation {worst_kkt:.2e} (< 1e-5) over 100 instances each"),
    )
}

struct RunStats {
    mean_error: f64,
    final_iou: f64,
    precision_at_20: f64,
    elapsed: Duration,
}

fn synthetic_run(seed: u64, trees: usize) -> RunStats {
    let seq = synth_sequence(&SynthSpec { seed, ..Default::default() }).unwrap();
    let gt = seq.ground_truth.unwrap();
    let config = TrackerConfig { seed, trees, ..Default::default() };
    let start = AffineState::from_bbox(&gt[0]).unwrap();
    let clock = Instant::now();
    let (result, _) = single_threaded(|| track_sequence(&seq.frames, &start, &config)).unwrap();
    let elapsed = clock.elapsed();
    let boxes = result.boxes();
    let mean_error = boxes.iter().zip(&gt).map(|(b, g)| center_error(b, g)).sum::<f64>() / gt.len() as f64;
    RunStats {
        mean_error,
        final_iou: iou(boxes.last().unwrap(), gt.last().unwrap()),
        precision_at_20: ope_curves(&boxes, &gt).unwrap().precision_at_20,
        elapsed,
    }
}

fn end_to_end(run: &RunStats) -> Outcome {
    outcome(
        run.mean_error < 5.0 && run.final_iou > 0.5 && run.elapsed < Duration::from_secs(600),
        format!(
            "mean center error {:.2} px (< 5), final IoU {:.3} (> 0.5), precision@20 {:.3}; {:.1?} single-threaded (< 10 min)",
            run.mean_error, run.final_iou, run.precision_at_20, run.elapsed
        ),
    )
}

fn tree_count_trend(first: &RunStats) -> Outcome {
    let seeds = 0..5u64;
    let mut ten = Vec::new();
    let mut one = Vec::new();
    for seed in seeds {
        ten.push(if seed == 0 { first.mean_error } else { synthetic_run(seed, 10).mean_error });
        one.push(synthetic_run(seed, 1).mean_error);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>().join(", ");
    outcome(
        mean(&ten) <= mean(&one),
        format!(
            "mean center error over 5 seeds: 10 trees {:.3} px [{}] vs 1 tree {:.3} px [{}]",
            mean(&ten),
            fmt(&ten),
            mean(&one),
            fmt(&one)
        ),
    )
}

fn metrics_fixtures() -> Outcome {
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 4];
    let res: Vec<BBox> = [0.0, 10.0, 30.0, 50.0].iter().map(|&d| BBox::new(d, 0.0, 10.0, 10.0)).collect();
    let p20 = ope_curves(&res, &gt).unwrap().precision_at_20;
    let third = iou(&BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(5.0, 0.0, 10.0, 10.0));
    let perfect = ope_curves(&gt, &gt).unwrap();
    let ok = p20 == 0.5 && (third - 1.0 / 3.0).abs() < 1e-15 && perfect.precision_at_20 == 1.0;
    outcome(ok, format!("4-frame precision@20 = {p20}, half-shifted IoU = {third}, self precision@20 = {}", perfect.precision_at_20))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let bin = env!("CARGO_BIN_EXE_rnntrack");
    let seq_arg = seq.to_str().unwrap();
    let synth = Command::new(bin).args(["synth", "--out", seq_arg, "--frames", "20"]).output().unwrap();
    if !synth.status.success() {
        return outcome(false, String::from_utf8_lossy(&synth.stderr));
    }
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}.txt"));
        let o = Command::new(bin)
            .args(["--threads", "1", "track", "--seq", seq_arg, "--seed", "7", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, String::from_utf8_lossy(&o.stderr));
        }
        files.push(std::fs::read(&out).unwrap());
    }
    outcome(
        files[0] == files[1] && !files[0].is_empty(),
        format!("two single-threaded 20-frame runs with seed 7: {} and {} bytes, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    };
    report("gradient correctness", gradient_check());
    report("parameter count", parameter_count());
    report("structural invariants", structural_invariants());
    let (training, trace) = first_frame_training();
    report("optimizer sanity", optimizer_sanity(&trace));
    report("first-frame training", training);
    report("sparse-coding oracle", sparse_oracle());
    let first = synthetic_run(0, 10);
    report("end-to-end synthetic tracking", end_to_end(&first));
    report("tree-count trend", tree_count_trend(&first));
    report("metrics oracle", metrics_fixtures());
    report("determinism", determinism());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
