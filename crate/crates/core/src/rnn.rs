//! Recursive neural network over merge trees of image patches.
//!
//! Leaves map a raw 256-pixel patch to an `n`-dimensional feature with
//! `sigmoid(W_raw·v + b_raw)`. Every internal node combines its two children
//! with one shared matrix, `sigmoid(W_rnn·left + W_rnn·right + b_rnn)`. The root
//! feature feeds a bias-free two-way softmax `softmax(W_label·root)` trained
//! with cross-entropy.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{input, size, Error, Result};
use crate::imagery::{PatchVector, NUM_PATCHES, PATCH_LEN};
use crate::linalg::{dot, matvec, matvec_t_acc, outer_acc, sigmoid};
use crate::tree::MergeTree;

const INIT_STREAM: u64 = 0x7468_6574_61;
const INIT_SCALE: f64 = 0.01;
const THETA_MAGIC: &[u8; 8] = b"RNNTHETA";
const THETA_VERSION: u32 = 1;

/// All learnable parameters. Matrices are row-major.
///
/// Flat order, used by [`Theta::flatten`] and the binary parameter file:
/// `w_raw` (n×256), `b_raw` (n), `w_rnn` (n×n), `b_rnn` (n), `w_label` (2×n).
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    n: usize,
    pub w_raw: Vec<f64>,
    pub b_raw: Vec<f64>,
    pub w_rnn: Vec<f64>,
    pub b_rnn: Vec<f64>,
    pub w_label: Vec<f64>,
}

impl Theta {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return size("feature dimension must be at least 1");
        }
        Ok(Self {
            n,
            w_raw: vec![0.0; n * PATCH_LEN],
            b_raw: vec![0.0; n],
            w_rnn: vec![0.0; n * n],
            b_rnn: vec![0.0; n],
            w_label: vec![0.0; 2 * n],
        })
    }

    /// Weights i.i.d. uniform on `[-0.01, 0.01]`, biases zero.
    pub fn init(n: usize, seed: u64) -> Result<Self> {
        Self::init_uniform(n, seed, INIT_SCALE)
    }

    /// Like [`Theta::init`] with weights on `[-scale, scale]`.
    pub fn init_uniform(n: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut theta = Self::zeros(n)?;
        let mut rng = crate::seeded_rng(seed, INIT_STREAM);
        for w in theta
            .w_raw
            .iter_mut()
            .chain(theta.w_rnn.iter_mut())
            .chain(theta.w_label.iter_mut())
        {
            *w = rng.random_range(-scale..=scale);
        }
        Ok(theta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Learnable weights excluding biases: `256n + n² + 2n`.
    pub fn weight_count(&self) -> usize {
        weight_count(self.n)
    }

    pub fn flat_len(&self) -> usize {
        flat_len(self.n)
    }

    fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.w_raw, &self.b_raw, &self.w_rnn, &self.b_rnn, &self.w_label]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w_raw,
            &mut self.b_raw,
            &mut self.w_rnn,
            &mut self.b_rnn,
            &mut self.w_label,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.flat_len());
        for b in self.blocks() {
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn unflatten(n: usize, flat: &[f64]) -> Result<Self> {
        let mut theta = Self::zeros(n)?;
        if flat.len() != theta.flat_len() {
            return size(format!(
                "flat vector has {} entries, expected {} for n={n}",
                flat.len(),
                theta.flat_len()
            ));
        }
        let mut rest = flat;
        for b in theta.blocks_mut() {
            let (head, tail) = rest.split_at(b.len());
            b.copy_from_slice(head);
            rest = tail;
        }
        Ok(theta)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks().iter().map(|b| dot(b, b)).sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Theta, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Named parameter blocks in flat order.
    pub fn named_blocks(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("Wraw", &self.w_raw),
            ("braw", &self.b_raw),
            ("Wrnn", &self.w_rnn),
            ("brnn", &self.b_rnn),
            ("Wlabel", &self.w_label),
        ]
    }

    /// Versioned little-endian binary form: magic, version, `n`, then the flat
    /// vector as `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(THETA_MAGIC)?;
        out.write_all(&THETA_VERSION.to_le_bytes())?;
        out.write_all(&(self.n as u32).to_le_bytes())?;
        for v in self.flatten() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut src: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        src.read_exact(&mut magic)?;
        if &magic != THETA_MAGIC {
            return Err(Error::Model("not a parameter file".into()));
        }
        let mut word = [0u8; 4];
        src.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != THETA_VERSION {
            return Err(Error::Model(format!("unsupported parameter version {version}")));
        }
        src.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let mut flat = vec![0.0; flat_len(n)];
        let mut buf = [0u8; 8];
        for v in &mut flat {
            src.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Self::unflatten(n, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::fs::read(path)?.as_slice())
    }
}

pub fn weight_count(n: usize) -> usize {
    PATCH_LEN * n + n * n + 2 * n
}

pub fn flat_len(n: usize) -> usize {
    weight_count(n) + 2 * n
}

pub type FeatureVec = Vec<f64>;

/// Leaf feature: `sigmoid(W_raw·v + b_raw)`.
pub fn leaf_features(theta: &Theta, patch: &[f64]) -> Result<FeatureVec> {
    if patch.len() != PATCH_LEN {
        return size(format!("patch has {} values, expected {PATCH_LEN}", patch.len()));
    }
    Ok(leaf_unchecked(theta, patch))
}

fn leaf_unchecked(theta: &Theta, patch: &[f64]) -> FeatureVec {
    let mut out = vec![0.0; theta.n];
    matvec(&theta.w_raw, patch, &mut out);
    for (o, b) in out.iter_mut().zip(&theta.b_raw) {
        *o = sigmoid(*o + b);
    }
    out
}

/// Parent feature: `sigmoid(W_rnn·left + W_rnn·right + b_rnn)`.
pub fn parent_features(theta: &Theta, left: &[f64], right: &[f64]) -> Result<FeatureVec> {
    if left.len() != theta.n || right.len() != theta.n {
        return size(format!(
            "children of dimension {} and {}, expected {}",
            left.len(),
            right.len(),
            theta.n
        ));
    }
    Ok(parent_unchecked(theta, left, right))
}

fn parent_unchecked(theta: &Theta, left: &[f64], right: &[f64]) -> FeatureVec {
    let summed: Vec<f64> = left.iter().zip(right).map(|(a, b)| a + b).collect();
    let mut out = vec![0.0; theta.n];
    matvec(&theta.w_rnn, &summed, &mut out);
    for (o, b) in out.iter_mut().zip(&theta.b_rnn) {
        *o = sigmoid(*o + b);
    }
    out
}

/// Per-node activations of one forward pass, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeActivation {
    nodes: Vec<FeatureVec>,
    tree: MergeTree,
}

impl TreeActivation {
    /// Activation of node `id` (leaves `1..=9`, internal `10..=17`).
    pub fn node(&self, id: usize) -> &[f64] {
        &self.nodes[id]
    }

    pub fn root(&self) -> &[f64] {
        &self.nodes[self.tree.root()]
    }

    pub fn leaves(&self) -> &[FeatureVec] {
        &self.nodes[1..=self.tree.leaves()]
    }

    pub fn tree(&self) -> &MergeTree {
        &self.tree
    }
}

fn check_tree(tree: &MergeTree) -> Result<()> {
    if tree.leaves() != NUM_PATCHES {
        return Err(Error::Structure(format!(
            "tree over {} leaves, expected {NUM_PATCHES}",
            tree.leaves()
        )));
    }
    MergeTree::new(tree.leaves(), tree.merges().to_vec()).map(|_| ())
}

fn check_patches(patches: &[PatchVector]) -> Result<()> {
    if patches.len() != NUM_PATCHES {
        return size(format!("{} patches, expected {NUM_PATCHES}", patches.len()));
    }
    if let Some(p) = patches.iter().find(|p| p.values.len() != PATCH_LEN) {
        return size(format!("patch {} has {} values", p.position, p.values.len()));
    }
    Ok(())
}

/// Leaf features for all nine patches.
pub fn all_leaf_features(theta: &Theta, patches: &[PatchVector]) -> Result<Vec<FeatureVec>> {
    check_patches(patches)?;
    Ok(patches.iter().map(|p| leaf_unchecked(theta, &p.values)).collect())
}

fn forward_from_leaves(theta: &Theta, leaves: &[FeatureVec], tree: &MergeTree) -> TreeActivation {
    let mut nodes = Vec::with_capacity(tree.node_count() + 1);
    nodes.push(Vec::new());
    nodes.extend(leaves.iter().cloned());
    for m in tree.merges() {
        let parent = parent_unchecked(theta, &nodes[m.left], &nodes[m.right]);
        nodes.push(parent);
    }
    TreeActivation {
        nodes,
        tree: tree.clone(),
    }
}

pub fn forward_tree(theta: &Theta, patches: &[PatchVector], tree: &MergeTree) -> Result<TreeActivation> {
    check_tree(tree)?;
    let leaves = all_leaf_features(theta, patches)?;
    Ok(forward_from_leaves(theta, &leaves, tree))
}

/// Element-wise mean of the root features over `trees`.
pub fn region_descriptor(theta: &Theta, patches: &[PatchVector], trees: &[MergeTree]) -> Result<FeatureVec> {
    Ok(region_features(theta, patches, trees)?.0)
}

/// Pooled root descriptor together with the nine leaf features.
pub fn region_features(
    theta: &Theta,
    patches: &[PatchVector],
    trees: &[MergeTree],
) -> Result<(FeatureVec, Vec<FeatureVec>)> {
    if trees.is_empty() {
        return input("descriptor needs at least one tree");
    }
    for t in trees {
        check_tree(t)?;
    }
    let leaves = all_leaf_features(theta, patches)?;
    let mut pooled = vec![0.0; theta.n];
    for t in trees {
        let act = forward_from_leaves(theta, &leaves, t);
        for (p, r) in pooled.iter_mut().zip(act.root()) {
            *p += r;
        }
    }
    let count = trees.len() as f64;
    pooled.iter_mut().for_each(|p| *p /= count);
    Ok((pooled, leaves))
}

fn logits(theta: &Theta, root: &[f64]) -> [f64; 2] {
    let n = theta.n;
    [dot(&theta.w_label[..n], root), dot(&theta.w_label[n..], root)]
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Class probabilities `softmax(W_label·root)`: index 0 target, 1 background.
pub fn classify(theta: &Theta, root: &[f64]) -> [f64; 2] {
    softmax2(logits(theta, root))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Target,
    Background,
}

impl Label {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Label::Target => [1.0, 0.0],
            Label::Background => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Target => 0,
            Label::Background => 1,
        }
    }
}

/// One training region with its label and the fixed tree it is parsed with.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub patches: Vec<PatchVector>,
    pub label: Label,
    pub tree: MergeTree,
}

impl LabeledSample {
    pub fn new(patches: Vec<PatchVector>, label: Label, tree: MergeTree) -> Result<Self> {
        check_patches(&patches)?;
        check_tree(&tree)?;
        Ok(Self { patches, label, tree })
    }
}

/// Cross-entropy `-log p(label)` computed through log-sum-exp.
fn cross_entropy(z: [f64; 2], label: Label) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label.index()]
}

pub fn sample_loss(theta: &Theta, sample: &LabeledSample) -> Result<f64> {
    let act = forward_tree(theta, &sample.patches, &sample.tree)?;
    Ok(cross_entropy(logits(theta, act.root()), sample.label))
}

/// Adds the data-term gradient of one sample into `grad` and returns its loss.
fn backprop_sample(theta: &Theta, sample: &LabeledSample, grad: &mut Theta) -> f64 {
    let n = theta.n;
    let leaves: Vec<FeatureVec> = sample
        .patches
        .iter()
        .map(|p| leaf_unchecked(theta, &p.values))
        .collect();
    let act = forward_from_leaves(theta, &leaves, &sample.tree);
    let root = act.root();
    let z = logits(theta, root);
    let loss = cross_entropy(z, sample.label);
    let p = softmax2(z);
    let target = sample.label.one_hot();
    let dz = [p[0] - target[0], p[1] - target[1]];

    outer_acc(&mut grad.w_label, &dz, root);

    // error signal arriving at each node's output
    let mut delta = vec![vec![0.0; n]; act.nodes.len()];
    matvec_t_acc(&theta.w_label, &dz, &mut delta[sample.tree.root()]);

    let mut pre = vec![0.0; n];
    let mut child_sum = vec![0.0; n];
    for m in sample.tree.merges().iter().rev() {
        let out = &act.nodes[m.new];
        for ((d, a), g) in pre.iter_mut().zip(out).zip(&delta[m.new]) {
            *d = g * a * (1.0 - a);
        }
        for ((s, l), r) in child_sum.iter_mut().zip(&act.nodes[m.left]).zip(&act.nodes[m.right]) {
            *s = l + r;
        }
        outer_acc(&mut grad.w_rnn, &pre, &child_sum);
        for (b, d) in grad.b_rnn.iter_mut().zip(&pre) {
            *b += d;
        }
        // shared W_rnn: both children receive the same signal
        let mut back = vec![0.0; n];
        matvec_t_acc(&theta.w_rnn, &pre, &mut back);
        for child in [m.left, m.right] {
            for (d, b) in delta[child].iter_mut().zip(&back) {
                *d += b;
            }
        }
    }

    for (leaf, patch) in sample.patches.iter().enumerate() {
        let id = leaf + 1;
        let out = &act.nodes[id];
        for ((d, a), g) in pre.iter_mut().zip(out).zip(&delta[id]) {
            *d = g * a * (1.0 - a);
        }
        outer_acc(&mut grad.w_raw, &pre, &patch.values);
        for (b, d) in grad.b_raw.iter_mut().zip(&pre) {
            *b += d;
        }
    }
    loss
}

fn check_objective_args(theta: &Theta, samples: &[LabeledSample], lambda: f64) -> Result<()> {
    if samples.is_empty() {
        return input("objective needs at least one sample");
    }
    if !(lambda >= 0.0) {
        return input(format!("regularizer must be non-negative, got {lambda}"));
    }
    for s in samples {
        check_patches(&s.patches)?;
        check_tree(&s.tree)?;
    }
    let _ = theta;
    Ok(())
}

/// Mean cross-entropy plus `(λ/2)‖θ‖²` (biases included).
pub fn objective(theta: &Theta, samples: &[LabeledSample], lambda: f64) -> Result<f64> {
    check_objective_args(theta, samples, lambda)?;
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let act = forward_from_leaves(
                theta,
                &s.patches.iter().map(|p| leaf_unchecked(theta, &p.values)).collect::<Vec<_>>(),
                &s.tree,
            );
            cross_entropy(logits(theta, act.root()), s.label)
        })
        .collect();
    let data = losses.iter().sum::<f64>() / samples.len() as f64;
    Ok(data + 0.5 * lambda * theta.squared_norm())
}

/// Objective value and its exact gradient by backpropagation through structure.
///
/// Per-sample gradients are computed in parallel and summed in sample order,
/// so the result does not depend on the thread count.
pub fn objective_and_gradient(theta: &Theta, samples: &[LabeledSample], lambda: f64) -> Result<(f64, Theta)> {
    check_objective_args(theta, samples, lambda)?;
    let parts: Vec<(f64, Theta)> = samples
        .par_iter()
        .map(|s| {
            let mut g = Theta::zeros(theta.n).expect("n ≥ 1");
            let loss = backprop_sample(theta, s, &mut g);
            (loss, g)
        })
        .collect();
    let mut grad = Theta::zeros(theta.n)?;
    let mut total = 0.0;
    for (loss, g) in &parts {
        total += loss;
        grad.add_scaled(g, 1.0);
    }
    let count = samples.len() as f64;
    grad.scale(1.0 / count);
    grad.add_scaled(theta, lambda);
    Ok((total / count + 0.5 * lambda * theta.squared_norm(), grad))
}

pub fn gradient(theta: &Theta, samples: &[LabeledSample], lambda: f64) -> Result<Theta> {
    Ok(objective_and_gradient(theta, samples, lambda)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{generate_tree, grid_adjacency, Merge};

    fn patches_from(seed: u64) -> Vec<PatchVector> {
        let mut rng = crate::seeded_rng(seed, 99);
        (1..=9)
            .map(|pos| {
                let v = (0..PATCH_LEN).map(|_| rng.random::<f64>()).collect();
                PatchVector::new(v, pos).unwrap()
            })
            .collect()
    }

    fn tiny_theta() -> Theta {
        let mut t = Theta::zeros(1).unwrap();
        t.w_label = vec![1.0, -1.0];
        t
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Theta::init(50, 0).unwrap().weight_count(), 15_400);
        assert_eq!(Theta::init(1, 0).unwrap().weight_count(), 259);
        assert_eq!(flat_len(50), 15_500);
        assert_eq!(flat_len(1), 261);
        assert!(Theta::init(0, 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Theta::init(8, 3).unwrap();
        assert_eq!(a, Theta::init(8, 3).unwrap());
        assert_ne!(a, Theta::init(8, 4).unwrap());
        assert!(a.w_raw.iter().all(|w| w.abs() <= 0.01));
        assert!(a.b_raw.iter().chain(&a.b_rnn).all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_give_half() {
        let t = Theta::zeros(4).unwrap();
        let f = leaf_features(&t, &[0.3; PATCH_LEN]).unwrap();
        assert!(f.iter().all(|&v| v == 0.5));
        let p = parent_features(&t, &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scalar_leaf_and_parent() {
        let mut t = Theta::zeros(1).unwrap();
        t.w_raw = vec![1.0 / 256.0; 256];
        let f = leaf_features(&t, &[1.0; PATCH_LEN]).unwrap();
        assert!((f[0] - sigmoid(1.0)).abs() < 1e-15);
        assert!((f[0] - 0.7311).abs() < 1e-4);

        t.w_rnn = vec![2.0];
        let p = parent_features(&t, &[0.5], &[0.25]).unwrap();
        assert!((p[0] - 0.8176).abs() < 1e-4);
        assert_eq!(p, parent_features(&t, &[0.25], &[0.5]).unwrap());
    }

    #[test]
    fn dimension_mismatch_errors() {
        let t = Theta::zeros(3).unwrap();
        assert!(leaf_features(&t, &[0.0; 10]).is_err());
        assert!(parent_features(&t, &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn classify_cases() {
        let t = Theta::zeros(3).unwrap();
        assert_eq!(classify(&t, &[0.2, 0.4, 0.9]), [0.5, 0.5]);
        let p = classify(&tiny_theta(), &[1.0]);
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        let shifted = softmax2([2.0 + 37.5, -2.0 + 37.5]);
        let base = softmax2([2.0, -2.0]);
        assert!((shifted[0] - base[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_loss_is_ln2() {
        let t = Theta::zeros(5).unwrap();
        let tree = generate_tree(&grid_adjacency(), 1).unwrap();
        let s = LabeledSample::new(patches_from(1), Label::Background, tree).unwrap();
        assert!((sample_loss(&t, &s).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((objective(&t, &[s.clone(), s], 3.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn scalar_loss_matches_hand_value() {
        // all-zero raw and recursive weights: root = 0.5, so scale W_label to get logit ±1
        let mut t = Theta::zeros(1).unwrap();
        t.w_label = vec![2.0, -2.0];
        let tree = generate_tree(&grid_adjacency(), 2).unwrap();
        let s = LabeledSample::new(patches_from(2), Label::Target, tree).unwrap();
        let loss = sample_loss(&t, &s).unwrap();
        assert!((loss - (-(0.8808_f64).ln())).abs() < 1e-4);
        assert!((loss - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn forward_chain_matches_manual_composition() {
        let t = Theta::init_uniform(3, 5, 0.3).unwrap();
        let patches = patches_from(3);
        // left-deep chain 1,2,...,9 along the snake 1-2-3-6-5-4-7-8-9
        let order = [2, 3, 6, 5, 4, 7, 8, 9];
        let mut merges = vec![];
        let mut cur = 1;
        for (i, &leaf) in order.iter().enumerate() {
            merges.push(Merge { left: cur, right: leaf, new: 10 + i });
            cur = 10 + i;
        }
        let tree = MergeTree::new(9, merges).unwrap();
        tree.validate(&grid_adjacency()).unwrap();
        let act = forward_tree(&t, &patches, &tree).unwrap();

        let mut manual = leaf_features(&t, &patches[0].values).unwrap();
        for &leaf in &order {
            let lf = leaf_features(&t, &patches[leaf - 1].values).unwrap();
            manual = parent_features(&t, &manual, &lf).unwrap();
        }
        assert_eq!(act.root(), manual.as_slice());
    }

    #[test]
    fn malformed_tree_rejected_by_forward() {
        let t = Theta::zeros(2).unwrap();
        let three = MergeTree::new(3, vec![Merge { left: 1, right: 2, new: 4 }, Merge { left: 4, right: 3, new: 5 }]).unwrap();
        assert!(forward_tree(&t, &patches_from(0), &three).is_err());
    }

    #[test]
    fn descriptor_pooling() {
        let t = Theta::init_uniform(4, 8, 0.2).unwrap();
        let patches = patches_from(4);
        let a = grid_adjacency();
        let t1 = generate_tree(&a, 10).unwrap();
        let t2 = generate_tree(&a, 11).unwrap();
        let r1 = forward_tree(&t, &patches, &t1).unwrap().root().to_vec();
        let r2 = forward_tree(&t, &patches, &t2).unwrap().root().to_vec();
        assert_eq!(region_descriptor(&t, &patches, &[t1.clone()]).unwrap(), r1);
        let dup = region_descriptor(&t, &patches, &[t1.clone(), t1.clone()]).unwrap();
        for (d, r) in dup.iter().zip(&r1) {
            assert!((d - r).abs() < 1e-15);
        }
        let both = region_descriptor(&t, &patches, &[t1, t2]).unwrap();
        for i in 0..4 {
            assert!((both[i] - 0.5 * (r1[i] + r2[i])).abs() < 1e-15);
        }
        assert!(region_descriptor(&t, &patches, &[]).is_err());
    }

    #[test]
    fn label_layer_gradient_at_zero() {
        let t = Theta::zeros(6).unwrap();
        let tree = generate_tree(&grid_adjacency(), 3).unwrap();
        let s = LabeledSample::new(patches_from(6), Label::Target, tree).unwrap();
        let g = gradient(&t, &[s], 0.0).unwrap();
        // (p - l) ⊗ root with p = (0.5, 0.5), l = (1, 0), root = 0.5
        for j in 0..6 {
            assert_eq!(g.w_label[j], -0.25);
            assert_eq!(g.w_label[6 + j], 0.25);
        }
    }

    #[test]
    fn regularizer_adds_lambda_theta() {
        let t = Theta::init_uniform(3, 9, 0.2).unwrap();
        let tree = generate_tree(&grid_adjacency(), 4).unwrap();
        let s = vec![LabeledSample::new(patches_from(7), Label::Target, tree).unwrap()];
        let g0 = gradient(&t, &s, 0.0).unwrap().flatten();
        let g1 = gradient(&t, &s, 0.3).unwrap().flatten();
        for ((a, b), th) in g1.iter().zip(&g0).zip(t.flatten()) {
            assert!((a - b - 0.3 * th).abs() < 1e-15);
        }
        let o0 = objective(&t, &s, 0.0).unwrap();
        let o1 = objective(&t, &s, 0.3).unwrap();
        let o2 = objective(&t, &s, 0.6).unwrap();
        assert!(((o2 - o0) - 2.0 * (o1 - o0)).abs() < 1e-14);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let t = Theta::init_uniform(7, 1, 0.5).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * t.flat_len());
        let back = Theta::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   t.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        buf[0] = b'X';
        assert!(Theta::read_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        assert!(Theta::unflatten(2, &[0.0; 10]).is_err());
    }
}
