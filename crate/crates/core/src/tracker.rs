//! First-frame training and the per-frame tracking loop.
//!
//! Frame 1 harvests labeled samples around the annotation and trains the
//! network. Frames 2 through the end of the bootstrap window are tracked with
//! raw-pixel sparse scoring over every candidate while features of the
//! predicted targets are collected. Once the bootstrap window closes, each
//! frame ranks all candidates with the raw-pixel model, re-ranks the best few
//! with learned features, and periodically refreshes both dictionary pairs.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{input, Error, Result};
use crate::eval::{iou, BBox};
use crate::imagery::{decompose_patches, warp_region, GrayImage, PatchVector, REGION_SIDE};
use crate::optim::{lbfgs_minimize, OptimOptions, OptimReport};
use crate::rnn::{classify, forward_tree, objective_and_gradient, region_features, Label, LabeledSample, Theta};
use crate::sparse::{
    build_dictionaries, candidate_likelihood, holistic_score, local_score, DictionaryPair, FrameFeatures,
};
use crate::tree::{generate_tree_with, grid_adjacency, MergeTree};
use crate::SeedRng;

const HARVEST_STREAM: u64 = 0x6861_7276;
const DESCRIPTOR_TREE_STREAM: u64 = 0x6465_7363;
const CANDIDATE_STREAM: u64 = 1 << 32;
const MIN_SCALE: f64 = 1e-3;
const NEGATIVE_ATTEMPTS_PER_SAMPLE: usize = 1000;

/// Geometric state of a candidate region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineState {
    /// Center, in continuous image coordinates.
    pub tx: f64,
    pub ty: f64,
    /// Region width over 32.
    pub scale: f64,
    pub rotation: f64,
    /// Height over width.
    pub aspect: f64,
    pub skew: f64,
}

impl AffineState {
    pub fn validate(&self) -> Result<()> {
        let parts = self.to_array();
        if parts.iter().any(|v| !v.is_finite()) {
            return input(format!("non-finite state {parts:?}"));
        }
        if !(self.scale > 0.0 && self.aspect > 0.0) {
            return input(format!(
                "state scale {} and aspect {} must be positive",
                self.scale, self.aspect
            ));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.scale, self.rotation, self.aspect, self.skew]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            scale: a[2],
            rotation: a[3],
            aspect: a[4],
            skew: a[5],
        }
    }

    /// Axis-aligned upright state covering `b` exactly.
    pub fn from_bbox(b: &BBox) -> Result<Self> {
        if !(b.w > 0.0 && b.h > 0.0) {
            return input("box must have positive size");
        }
        let s = Self {
            tx: b.x - 1.0 + b.w / 2.0,
            ty: b.y - 1.0 + b.h / 2.0,
            scale: b.w / REGION_SIDE as f64,
            rotation: 0.0,
            aspect: b.h / b.w,
            skew: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Axis-aligned hull of the mapped region, 1-indexed.
    pub fn bbox(&self) -> BBox {
        let side = REGION_SIDE as f64;
        let corners = [(0.0, 0.0), (side, 0.0), (0.0, side), (side, side)]
            .map(|(u, v)| crate::imagery::canonical_to_image(self, u, v));
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (x, y) in corners {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        BBox::new(x0 + 1.0, y0 + 1.0, x1 - x0, y1 - y0)
    }
}

/// Independent zero-mean Gaussian perturbation per state component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub std_devs: [f64; 6],
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            std_devs: [10.0, 10.0, 0.01, 0.0, 0.005, 0.0],
        }
    }
}

impl MotionModel {
    pub fn still() -> Self {
        Self { std_devs: [0.0; 6] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Feature dimension.
    pub n: usize,
    /// Weight decay of the training objective.
    pub lambda: f64,
    pub candidates: usize,
    /// Candidates re-ranked with learned features.
    pub fine_count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub bootstrap_frames: usize,
    pub update_interval: usize,
    /// Trees pooled into each region descriptor.
    pub trees: usize,
    pub motion: MotionModel,
    pub sparsity: f64,
    pub sharpness: f64,
    pub seed: u64,
    pub optim: OptimOptions,
    /// Max center offset of positive samples, in pixels.
    pub positive_radius: f64,
    /// Scale factor range of positive samples.
    pub positive_scale: (f64, f64),
    /// Center distance of negatives as a multiple of the target width.
    pub negative_distance: (f64, f64),
    /// Negatives must overlap the annotation less than this.
    pub negative_max_iou: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n: 50,
            lambda: 1e-4,
            candidates: 600,
            fine_count: 20,
            positives: 20,
            negatives: 100,
            bootstrap_frames: 10,
            update_interval: 5,
            trees: 10,
            motion: MotionModel::default(),
            sparsity: crate::sparse::DEFAULT_SPARSITY,
            sharpness: crate::sparse::DEFAULT_SHARPNESS,
            seed: 0,
            optim: OptimOptions::default(),
            positive_radius: 3.0,
            positive_scale: (0.95, 1.05),
            negative_distance: (0.3, 1.5),
            negative_max_iou: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.n == 0 || self.candidates == 0 || self.fine_count == 0 || self.trees == 0 {
            return fail("n, candidates, fine_count and trees must be positive");
        }
        if self.fine_count > self.candidates {
            return fail("fine_count must not exceed candidates");
        }
        if self.bootstrap_frames == 0 || self.update_interval == 0 {
            return fail("bootstrap_frames and update_interval must be positive");
        }
        if self.positives == 0 || self.negatives == 0 {
            return fail("training needs positive and negative samples");
        }
        if !(self.lambda >= 0.0 && self.sparsity >= 0.0 && self.sharpness > 0.0) {
            return fail("lambda and sparsity must be non-negative, sharpness positive");
        }
        if self.motion.std_devs.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("motion standard deviations must be finite and non-negative");
        }
        let (lo, hi) = self.positive_scale;
        let (dlo, dhi) = self.negative_distance;
        if !(self.positive_radius >= 0.0 && lo > 0.0 && lo <= hi && dlo >= 0.0 && dlo <= dhi) {
            return fail("invalid sample harvesting ranges");
        }
        self.optim.validate()
    }
}

/// Labeled regions from the first frame, with the states they came from.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<LabeledSample>,
    pub states: Vec<AffineState>,
}

pub fn region_patches(frame: &GrayImage, state: &AffineState) -> Result<Vec<PatchVector>> {
    Ok(decompose_patches(&warp_region(frame, state)?).into())
}

fn inside(frame: &GrayImage, b: &BBox) -> bool {
    b.x >= 1.0 && b.y >= 1.0 && b.x - 1.0 + b.w <= frame.width() as f64 && b.y - 1.0 + b.h <= frame.height() as f64
}

/// Positives jittered around the annotation and negatives drawn from a ring
/// around it, each parsed with its own random tree.
pub fn harvest_training_samples(
    frame: &GrayImage,
    gt: &AffineState,
    config: &TrackerConfig,
    seed: u64,
) -> Result<TrainingSet> {
    gt.validate()?;
    let mut rng = crate::seeded_rng(seed, HARVEST_STREAM);
    let adjacency = grid_adjacency();
    let gt_box = gt.bbox();
    let mut samples = Vec::with_capacity(config.positives + config.negatives);
    let mut states = Vec::with_capacity(samples.capacity());

    let r = config.positive_radius;
    for _ in 0..config.positives {
        let (dx, dy) = loop {
            let dx = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
            let dy = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
            if dx.hypot(dy) <= r {
                break (dx, dy);
            }
        };
        let (lo, hi) = config.positive_scale;
        let factor = rng.random_range(lo..=hi);
        let state = AffineState {
            tx: gt.tx + dx,
            ty: gt.ty + dy,
            scale: gt.scale * factor,
            ..*gt
        };
        let tree = generate_tree_with(&adjacency, &mut rng)?;
        samples.push(LabeledSample::new(region_patches(frame, &state)?, Label::Target, tree)?);
        states.push(state);
    }

    let (dlo, dhi) = config.negative_distance;
    let mut attempts = 0;
    while states.len() < config.positives + config.negatives {
        attempts += 1;
        if attempts > NEGATIVE_ATTEMPTS_PER_SAMPLE * config.negatives {
            return input(format!(
                "frame {}×{} too small to place {} background samples",
                frame.width(),
                frame.height(),
                config.negatives
            ));
        }
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dist = rng.random_range(dlo..=dhi) * gt_box.w;
        let state = AffineState {
            tx: gt.tx + dist * angle.cos(),
            ty: gt.ty + dist * angle.sin(),
            ..*gt
        };
        let b = state.bbox();
        if !inside(frame, &b) || iou(&b, &gt_box) >= config.negative_max_iou {
            continue;
        }
        let tree = generate_tree_with(&adjacency, &mut rng)?;
        samples.push(LabeledSample::new(region_patches(frame, &state)?, Label::Background, tree)?);
        states.push(state);
    }
    Ok(TrainingSet { samples, states })
}

/// Minimizes the regularized cross-entropy from a small random start.
pub fn train_first_frame(samples: &[LabeledSample], config: &TrackerConfig) -> Result<(Theta, OptimReport)> {
    let theta0 = Theta::init(config.n, config.seed)?;
    let n = config.n;
    let lambda = config.lambda;
    let fg = |x: &[f64]| {
        let theta = Theta::unflatten(n, x).expect("optimizer keeps the length");
        match objective_and_gradient(&theta, samples, lambda) {
            Ok((f, g)) => (f, g.flatten()),
            Err(_) => (f64::NAN, vec![f64::NAN; x.len()]),
        }
    };
    let (x, report) = lbfgs_minimize(fg, &theta0.flatten(), &config.optim)?;
    if report.failed_at_start() {
        return Err(Error::Optimizer(format!(
            "no acceptable step from the initial parameters (objective {:.6}, gradient norm {:.3e})",
            report.final_objective, report.gradient_norm
        )));
    }
    Ok((Theta::unflatten(n, &x)?, report))
}

/// Fraction of samples whose arg-max class matches the label.
pub fn training_accuracy(theta: &Theta, samples: &[LabeledSample]) -> Result<f64> {
    let mut correct = 0;
    for s in samples {
        let act = forward_tree(theta, &s.patches, &s.tree)?;
        let p = classify(theta, act.root());
        let predicted = if p[0] >= p[1] { Label::Target } else { Label::Background };
        correct += usize::from(predicted == s.label);
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn sample_candidates_with(prev: &AffineState, motion: &MotionModel, count: usize, rng: &mut SeedRng) -> Vec<AffineState> {
    (0..count)
        .map(|_| {
            let mut a = prev.to_array();
            for (v, s) in a.iter_mut().zip(&motion.std_devs) {
                let z: f64 = rng.sample(StandardNormal);
                *v += s * z;
            }
            a[2] = a[2].max(MIN_SCALE);
            a[4] = a[4].max(MIN_SCALE);
            AffineState::from_array(a)
        })
        .collect()
}

/// Gaussian candidates around `prev`.
pub fn sample_candidates(prev: &AffineState, motion: &MotionModel, count: usize, seed: u64) -> Result<Vec<AffineState>> {
    if count == 0 {
        return input("candidate count must be at least 1");
    }
    Ok(sample_candidates_with(prev, motion, count, &mut crate::seeded_rng(seed, CANDIDATE_STREAM)))
}

/// Raw-pixel features: the whole 32×32 region and its nine patches.
pub fn raw_features(frame: &GrayImage, state: &AffineState, frame_index: usize) -> Result<FrameFeatures> {
    let region = warp_region(frame, state)?;
    let local = decompose_patches(&region).into_iter().map(|p| p.values).collect();
    FrameFeatures::new(frame_index, region.pixels().to_vec(), local)
}

/// Learned features: pooled root descriptor and the nine leaf features.
pub fn learned_features(
    frame: &GrayImage,
    state: &AffineState,
    theta: &Theta,
    trees: &[MergeTree],
    frame_index: usize,
) -> Result<FrameFeatures> {
    let patches = region_patches(frame, state)?;
    let (descriptor, leaves) = region_features(theta, &patches, trees)?;
    FrameFeatures::new(frame_index, descriptor, leaves)
}

fn likelihood(dicts: &DictionaryPair, features: &FrameFeatures, config: &TrackerConfig) -> Result<f64> {
    let h = holistic_score(&dicts.holistic, &features.holistic, config.sparsity, config.sharpness)?;
    let l = local_score(&dicts.local, &features.local, config.sparsity)?;
    Ok(candidate_likelihood(h, l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedCandidate {
    /// Position in the list that was ranked.
    pub index: usize,
    pub state: AffineState,
    pub likelihood: f64,
}

/// Indices ordered by descending score, ties broken by lower index.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn raw_scores(frame: &GrayImage, candidates: &[AffineState], raw: &DictionaryPair, config: &TrackerConfig) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|s| likelihood(raw, &raw_features(frame, s, 0)?, config))
        .collect()
}

/// Scores every candidate with the raw-pixel model and keeps the
/// `config.fine_count` best.
pub fn coarse_rank(
    frame: &GrayImage,
    candidates: &[AffineState],
    raw: &DictionaryPair,
    config: &TrackerConfig,
) -> Result<Vec<RankedCandidate>> {
    let scores = raw_scores(frame, candidates, raw, config)?;
    Ok(rank(&scores)
        .into_iter()
        .take(config.fine_count)
        .map(|i| RankedCandidate {
            index: i,
            state: candidates[i],
            likelihood: scores[i],
        })
        .collect())
}

/// Re-scores candidates with learned features and returns the arg-max
/// (lowest index on ties) with every candidate's likelihood.
pub fn fine_rank(
    frame: &GrayImage,
    candidates: &[AffineState],
    theta: &Theta,
    trees: &[MergeTree],
    features: &DictionaryPair,
    config: &TrackerConfig,
) -> Result<(AffineState, Vec<f64>)> {
    if candidates.is_empty() {
        return input("no candidates to rank");
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|s| likelihood(features, &learned_features(frame, s, theta, trees, 0)?, config))
        .collect::<Result<_>>()?;
    let best = rank(&scores)[0];
    Ok((candidates[best], scores))
}

/// Descriptor trees, drawn once from the config seed.
pub fn descriptor_trees(config: &TrackerConfig) -> Result<Vec<MergeTree>> {
    let adjacency = grid_adjacency();
    let mut rng = crate::seeded_rng(config.seed, DESCRIPTOR_TREE_STREAM);
    (0..config.trees).map(|_| generate_tree_with(&adjacency, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Frame 1: the annotation itself.
    Annotation,
    /// Raw-pixel scoring over every candidate.
    Coarse,
    /// Raw-pixel shortlist re-ranked with learned features.
    CoarseToFine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    /// 1-based.
    pub frame: usize,
    pub state: AffineState,
    pub bbox: BBox,
    pub stage: Stage,
    /// Fine-stage likelihoods in coarse-rank order (empty outside the fine stage).
    pub likelihoods: Vec<f64>,
    /// Whether the dictionaries were refreshed after this frame.
    pub updated: bool,
}

/// Everything needed to reproduce the appearance model.
#[derive(Debug, Clone)]
pub struct TrackerModel {
    pub config: TrackerConfig,
    pub theta: Theta,
    pub trees: Vec<MergeTree>,
    pub raw: DictionaryPair,
    pub features: Option<DictionaryPair>,
}

/// Frame-by-frame tracker. `theta` is fixed once [`Tracker::start`] returns.
#[derive(Debug, Clone)]
pub struct Tracker {
    model: TrackerModel,
    training: OptimReport,
    training_accuracy: f64,
    raw_history: Vec<FrameFeatures>,
    feature_history: Vec<FrameFeatures>,
    frame: usize,
    state: AffineState,
}

impl Tracker {
    /// Trains on the first frame and seeds the dictionaries from the annotation.
    pub fn start(first: &GrayImage, gt: &AffineState, config: &TrackerConfig) -> Result<(Self, FrameOutput)> {
        config.validate()?;
        gt.validate()?;
        let set = harvest_training_samples(first, gt, config, config.seed)?;
        let (theta, training) = train_first_frame(&set.samples, config)?;
        let accuracy = training_accuracy(&theta, &set.samples)?;
        let trees = descriptor_trees(config)?;
        let raw_first = raw_features(first, gt, 1)?;
        let feat_first = learned_features(first, gt, &theta, &trees, 1)?;
        let raw = DictionaryPair::from_frames(std::slice::from_ref(&raw_first))?;
        let mut tracker = Self {
            model: TrackerModel {
                config: config.clone(),
                theta,
                trees,
                raw,
                features: None,
            },
            training,
            training_accuracy: accuracy,
            raw_history: vec![raw_first],
            feature_history: vec![feat_first],
            frame: 1,
            state: *gt,
        };
        tracker.close_bootstrap_if_due()?;
        let out = FrameOutput {
            frame: 1,
            state: *gt,
            bbox: gt.bbox(),
            stage: Stage::Annotation,
            likelihoods: Vec::new(),
            updated: false,
        };
        Ok((tracker, out))
    }

    fn close_bootstrap_if_due(&mut self) -> Result<()> {
        let b = self.model.config.bootstrap_frames;
        if self.frame == b {
            self.model.raw = build_dictionaries(&self.raw_history, b)?;
            self.model.features = Some(build_dictionaries(&self.feature_history, b)?);
        }
        Ok(())
    }

    pub fn model(&self) -> &TrackerModel {
        &self.model
    }

    pub fn into_model(self) -> TrackerModel {
        self.model
    }

    pub fn training_report(&self) -> &OptimReport {
        &self.training
    }

    pub fn training_accuracy(&self) -> f64 {
        self.training_accuracy
    }

    pub fn state(&self) -> AffineState {
        self.state
    }

    /// Tracks the next frame.
    pub fn step(&mut self, frame: &GrayImage) -> Result<FrameOutput> {
        let t = self.frame + 1;
        let config = &self.model.config;
        let mut rng = crate::seeded_rng(config.seed, CANDIDATE_STREAM + t as u64);
        let candidates = sample_candidates_with(&self.state, &config.motion, config.candidates, &mut rng);

        let (state, stage, likelihoods) = match &self.model.features {
            None => {
                let scores = raw_scores(frame, &candidates, &self.model.raw, config)?;
                (candidates[rank(&scores)[0]], Stage::Coarse, Vec::new())
            }
            Some(features) => {
                let top: Vec<AffineState> = coarse_rank(frame, &candidates, &self.model.raw, config)?
                    .into_iter()
                    .map(|c| c.state)
                    .collect();
                let (best, scores) = fine_rank(frame, &top, &self.model.theta, &self.model.trees, features, config)?;
                (best, Stage::CoarseToFine, scores)
            }
        };

        let mut updated = false;
        let b = config.bootstrap_frames;
        if self.model.features.is_none() {
            self.raw_history.push(raw_features(frame, &state, t)?);
            self.feature_history
                .push(learned_features(frame, &state, &self.model.theta, &self.model.trees, t)?);
            self.model.raw = crate::sparse::DictionaryPair::from_frames(&self.raw_history)?;
        } else if (t - b) % config.update_interval == 0 {
            let raw = raw_features(frame, &state, t)?;
            let feat = learned_features(frame, &state, &self.model.theta, &self.model.trees, t)?;
            self.model.raw.update(&raw)?;
            if let Some(f) = self.model.features.as_mut() {
                f.update(&feat)?;
            }
            updated = true;
        }
        self.frame = t;
        self.state = state;
        self.close_bootstrap_if_due()?;
        Ok(FrameOutput {
            frame: t,
            state,
            bbox: state.bbox(),
            stage,
            likelihoods,
            updated,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    pub frames: Vec<FrameOutput>,
    /// True when the sequence ended before learned-feature dictionaries existed.
    pub coarse_only: bool,
    pub training: OptimReport,
    pub training_accuracy: f64,
}

impl TrackResult {
    pub fn boxes(&self) -> Vec<BBox> {
        self.frames.iter().map(|f| f.bbox).collect()
    }

    pub fn states(&self) -> Vec<AffineState> {
        self.frames.iter().map(|f| f.state).collect()
    }

    /// Frames after which the dictionaries were refreshed.
    pub fn update_frames(&self) -> Vec<usize> {
        self.frames.iter().filter(|f| f.updated).map(|f| f.frame).collect()
    }
}

/// Runs the tracker over a whole sequence from the first-frame annotation.
pub fn track_sequence(frames: &[GrayImage], gt: &AffineState, config: &TrackerConfig) -> Result<(TrackResult, TrackerModel)> {
    let Some(first) = frames.first() else {
        return input("sequence has no frames");
    };
    let (mut tracker, out) = Tracker::start(first, gt, config)?;
    let mut outputs = Vec::with_capacity(frames.len());
    outputs.push(out);
    for frame in &frames[1..] {
        outputs.push(tracker.step(frame)?);
    }
    let result = TrackResult {
        frames: outputs,
        coarse_only: tracker.model.features.is_none(),
        training: tracker.training.clone(),
        training_accuracy: tracker.training_accuracy,
    };
    Ok((result, tracker.into_model()))
}
