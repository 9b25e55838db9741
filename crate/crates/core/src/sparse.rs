//! Appearance dictionaries and non-negative sparse coding.
//!
//! Two dictionaries describe the target: a holistic one whose atoms are whole
//! region descriptors (position 0) and a local one whose atoms are per-patch
//! features tagged with their patch position (1–9). Candidates are coded
//! against both and the two confidences are multiplied.

use std::io::{Read, Write};

use crate::error::{input, size, Error, Result};
use crate::imagery::NUM_PATCHES;
use crate::linalg::{dot, norm2, unit};

pub const DEFAULT_SPARSITY: f64 = 0.01;
pub const DEFAULT_SHARPNESS: f64 = 30.0;
const DEFAULT_TOLERANCE: f64 = 1e-6;
const DEFAULT_MAX_SWEEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomInfo {
    /// 1-based frame the atom was extracted from.
    pub frame: usize,
    /// 0 for holistic atoms, 1–9 for local ones.
    pub position: usize,
    /// First-frame atoms are never replaced.
    pub seed: bool,
}

/// Unit-norm atoms stored contiguously, with their Gram matrix cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    atoms: Vec<f64>,
    info: Vec<AtomInfo>,
    gram: Vec<f64>,
}

/// Normalizes to unit length. A zero vector has no direction, so it is mapped
/// to the constant unit vector.
fn unit_atom(v: &[f64]) -> Vec<f64> {
    if norm2(v) > 0.0 {
        unit(v)
    } else {
        vec![1.0 / (v.len() as f64).sqrt(); v.len()]
    }
}

impl Dictionary {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return size("atom dimension must be positive");
        }
        Ok(Self {
            dim,
            atoms: Vec::new(),
            info: Vec::new(),
            gram: Vec::new(),
        })
    }

    /// Appends `feature` normalized to unit length.
    pub fn push(&mut self, feature: &[f64], info: AtomInfo) -> Result<()> {
        self.check_dim(feature)?;
        self.atoms.extend(unit_atom(feature));
        self.info.push(info);
        let k = self.len();
        let mut gram = vec![0.0; k * k];
        for i in 0..k - 1 {
            gram[i * k..i * k + k - 1].copy_from_slice(&self.gram[i * (k - 1)..(i + 1) * (k - 1)]);
        }
        self.gram = gram;
        self.refresh_gram_row(k - 1);
        Ok(())
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return size(format!("vector of dimension {}, dictionary expects {}", v.len(), self.dim));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return input("non-finite feature");
        }
        Ok(())
    }

    fn rebuild_gram(&mut self) {
        let k = self.len();
        self.gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let g = dot(self.atom(i), self.atom(j));
                self.gram[i * k + j] = g;
                self.gram[j * k + i] = g;
            }
        }
    }

    fn refresh_gram_row(&mut self, j: usize) {
        let k = self.len();
        for i in 0..k {
            let g = dot(self.atom(i), self.atom(j));
            self.gram[i * k + j] = g;
            self.gram[j * k + i] = g;
        }
    }

    /// Overwrites atom `j` with the normalized `feature`.
    pub fn replace(&mut self, j: usize, feature: &[f64], info: AtomInfo) -> Result<()> {
        self.check_dim(feature)?;
        if j >= self.len() {
            return size(format!("atom index {j} out of range"));
        }
        let d = self.dim;
        self.atoms[j * d..(j + 1) * d].copy_from_slice(&unit_atom(feature));
        self.info[j] = info;
        self.refresh_gram_row(j);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    pub fn info(&self) -> &[AtomInfo] {
        &self.info
    }

    /// Oldest non-seed atom, optionally restricted to one patch position.
    fn oldest_replaceable(&self, position: Option<usize>) -> Option<usize> {
        self.info
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.seed && position.is_none_or(|p| a.position == p))
            .min_by_key(|(j, a)| (a.frame, *j))
            .map(|(j, _)| j)
    }

    /// `Dᵀy`.
    fn correlate(&self, y: &[f64]) -> Vec<f64> {
        self.atoms.chunks_exact(self.dim).map(|a| dot(a, y)).collect()
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for a in &self.info {
            out.write_all(&(a.frame as u64).to_le_bytes())?;
            out.write_all(&[a.position as u8, a.seed as u8])?;
        }
        for v in &self.atoms {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut src: R) -> Result<Self> {
        let mut word = [0u8; 8];
        src.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        src.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        if dim == 0 || dim > 1 << 20 || count > 1 << 20 {
            return Err(Error::Model(format!("implausible dictionary {count}×{dim}")));
        }
        let mut info = Vec::with_capacity(count);
        for _ in 0..count {
            src.read_exact(&mut word)?;
            let mut tag = [0u8; 2];
            src.read_exact(&mut tag)?;
            info.push(AtomInfo {
                frame: u64::from_le_bytes(word) as usize,
                position: tag[0] as usize,
                seed: tag[1] != 0,
            });
        }
        let mut atoms = vec![0.0; dim * count];
        for v in &mut atoms {
            src.read_exact(&mut word)?;
            *v = f64::from_le_bytes(word);
        }
        let mut dict = Self {
            dim,
            atoms,
            info,
            gram: Vec::new(),
        };
        dict.rebuild_gram();
        Ok(dict)
    }
}

/// Non-negative coefficients and the squared residual they leave.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coefficients: Vec<f64>,
    pub reconstruction_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Converged once no coefficient moves by this much in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// `½‖y − Dβ‖² + λ·Σβ`.
pub fn lasso_objective(dict: &Dictionary, target: &[f64], beta: &[f64], lambda: f64) -> f64 {
    0.5 * residual_sq(dict, target, beta) + lambda * beta.iter().sum::<f64>()
}

fn residual_sq(dict: &Dictionary, target: &[f64], beta: &[f64]) -> f64 {
    let mut r = target.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, ai) in r.iter_mut().zip(dict.atom(j)) {
                *ri -= b * ai;
            }
        }
    }
    dot(&r, &r)
}

/// Solves `min ½‖y − Dβ‖² + λ·Σβ` subject to `β ≥ 0` by cyclic coordinate
/// descent on the cached Gram matrix.
pub fn lasso_nn(dict: &Dictionary, target: &[f64], lambda: f64) -> Result<SparseCode> {
    lasso_nn_with(dict, target, lambda, &LassoOptions::default(), None)
}

/// [`lasso_nn`] with explicit stopping rules; when `trace` is given, the
/// objective after every sweep is appended to it.
pub fn lasso_nn_with(
    dict: &Dictionary,
    target: &[f64],
    lambda: f64,
    opts: &LassoOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<SparseCode> {
    if dict.is_empty() {
        return input("cannot code against an empty dictionary");
    }
    if target.len() != dict.dim {
        return size(format!(
            "target of dimension {}, dictionary atoms have {}",
            target.len(),
            dict.dim
        ));
    }
    if !(lambda >= 0.0) {
        return input(format!("sparsity weight must be non-negative, got {lambda}"));
    }
    let k = dict.len();
    let corr = dict.correlate(target);
    let mut beta = vec![0.0; k];
    // grad = Gβ − Dᵀy
    let mut grad: Vec<f64> = corr.iter().map(|c| -c).collect();
    // Full sweeps alternate with sweeps restricted to the current support,
    // run on a compact copy of its Gram block. Both kinds count toward
    // `max_sweeps`; convergence is only declared after a quiet full sweep.
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        let change = cd_sweep(&dict.gram, k, &mut beta, &mut grad, lambda);
        sweeps += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(lasso_objective(dict, target, &beta, lambda));
        }
        if change < opts.tolerance || sweeps == opts.max_sweeps {
            break;
        }

        let support: Vec<usize> = (0..k).filter(|&j| beta[j] > 0.0).collect();
        let m = support.len();
        let mut sub = Vec::with_capacity(m * m);
        for &i in &support {
            sub.extend(support.iter().map(|&j| dict.gram[i * k + j]));
        }
        let mut b: Vec<f64> = support.iter().map(|&j| beta[j]).collect();
        let mut g: Vec<f64> = support.iter().map(|&j| grad[j]).collect();
        while sweeps < opts.max_sweeps {
            let change = cd_sweep(&sub, m, &mut b, &mut g, lambda);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                for (&j, &v) in support.iter().zip(&b) {
                    beta[j] = v;
                }
                t.push(lasso_objective(dict, target, &beta, lambda));
            }
            if change < opts.tolerance {
                break;
            }
        }
        for (&j, &v) in support.iter().zip(&b) {
            beta[j] = v;
        }
        for (g, c) in grad.iter_mut().zip(&corr) {
            *g = -c;
        }
        for &i in &support {
            let row = &dict.gram[i * k..(i + 1) * k];
            for (g, c) in grad.iter_mut().zip(row) {
                *g += beta[i] * c;
            }
        }
    }
    let reconstruction_error = residual_sq(dict, target, &beta);
    Ok(SparseCode {
        coefficients: beta,
        reconstruction_error,
    })
}

/// One cyclic pass over all `k` coordinates of the problem with Gram matrix
/// `gram` (row-major `k × k`), keeping `grad = Gβ − Dᵀy` current. Returns the
/// largest coefficient change.
fn cd_sweep(gram: &[f64], k: usize, beta: &mut [f64], grad: &mut [f64], lambda: f64) -> f64 {
    let mut max_change: f64 = 0.0;
    for j in 0..k {
        let gjj = gram[j * k + j];
        if gjj <= 0.0 {
            continue;
        }
        let updated = (beta[j] - (grad[j] + lambda) / gjj).max(0.0);
        let delta = updated - beta[j];
        if delta != 0.0 {
            beta[j] = updated;
            for (g, c) in grad.iter_mut().zip(&gram[j * k..(j + 1) * k]) {
                *g += delta * c;
            }
            max_change = max_change.max(delta.abs());
        }
    }
    max_change
}

/// Features gathered from one frame: a holistic vector and nine patch vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame: usize,
    pub holistic: Vec<f64>,
    pub local: Vec<Vec<f64>>,
}

impl FrameFeatures {
    pub fn new(frame: usize, holistic: Vec<f64>, local: Vec<Vec<f64>>) -> Result<Self> {
        if local.len() != NUM_PATCHES {
            return size(format!("{} local features, expected {NUM_PATCHES}", local.len()));
        }
        Ok(Self { frame, holistic, local })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryPair {
    pub holistic: Dictionary,
    pub local: Dictionary,
}

impl DictionaryPair {
    /// Dictionaries over any non-empty list of frames; atoms of the first
    /// entry are marked as seeds.
    pub fn from_frames(entries: &[FrameFeatures]) -> Result<Self> {
        let Some(first) = entries.first() else {
            return input("no frames to build dictionaries from");
        };
        let mut holistic = Dictionary::new(first.holistic.len())?;
        let local_dim = first.local.first().map_or(0, Vec::len);
        let mut local = Dictionary::new(local_dim)?;
        for (i, e) in entries.iter().enumerate() {
            let seed = i == 0;
            holistic.push(&e.holistic, AtomInfo { frame: e.frame, position: 0, seed })?;
            if e.local.len() != NUM_PATCHES {
                return size(format!("frame {} has {} local features", e.frame, e.local.len()));
            }
            for (p, f) in e.local.iter().enumerate() {
                local.push(f, AtomInfo { frame: e.frame, position: p + 1, seed })?;
            }
        }
        Ok(Self { holistic, local })
    }

    /// FIFO refresh: the oldest non-seed holistic atom and, per position, the
    /// oldest non-seed local atom are overwritten. Atom counts never change;
    /// with no replaceable atoms this is a no-op.
    pub fn update(&mut self, new: &FrameFeatures) -> Result<()> {
        if new.local.len() != NUM_PATCHES {
            return size(format!("{} local features, expected {NUM_PATCHES}", new.local.len()));
        }
        if let Some(j) = self.holistic.oldest_replaceable(None) {
            self.holistic.replace(j, &new.holistic, AtomInfo { frame: new.frame, position: 0, seed: false })?;
        }
        for (p, f) in new.local.iter().enumerate() {
            let position = p + 1;
            if let Some(j) = self.local.oldest_replaceable(Some(position)) {
                self.local.replace(j, f, AtomInfo { frame: new.frame, position, seed: false })?;
            }
        }
        Ok(())
    }
}

/// Builds both dictionaries from exactly `required` bootstrap frames.
pub fn build_dictionaries(entries: &[FrameFeatures], required: usize) -> Result<DictionaryPair> {
    if entries.len() != required {
        return input(format!(
            "dictionaries need exactly {required} frames, got {}",
            entries.len()
        ));
    }
    DictionaryPair::from_frames(entries)
}

pub fn update_dictionaries(dicts: &mut DictionaryPair, new: &FrameFeatures) -> Result<()> {
    dicts.update(new)
}

/// `exp(−α · e)` where `e` is the reconstruction error of the unit-normalized
/// descriptor.
pub fn holistic_score(dict: &Dictionary, descriptor: &[f64], lambda: f64, alpha: f64) -> Result<f64> {
    let code = lasso_nn(dict, &unit(descriptor), lambda)?;
    Ok((-alpha * code.reconstruction_error).exp())
}

/// Alignment pooling: each patch is coded against the whole local dictionary
/// and scores the share of its coefficient mass that lands on atoms from the
/// same position. The result is the mean over the nine patches.
pub fn local_score(dict: &Dictionary, leaves: &[Vec<f64>], lambda: f64) -> Result<f64> {
    if leaves.len() != NUM_PATCHES {
        return size(format!("{} patch features, expected {NUM_PATCHES}", leaves.len()));
    }
    let mut total = 0.0;
    for (p, leaf) in leaves.iter().enumerate() {
        let code = lasso_nn(dict, &unit(leaf), lambda)?;
        let mass: f64 = code.coefficients.iter().sum();
        if mass > 0.0 {
            let aligned: f64 = code
                .coefficients
                .iter()
                .zip(dict.info())
                .filter(|(_, a)| a.position == p + 1)
                .map(|(c, _)| c)
                .sum();
            total += aligned / mass;
        }
    }
    Ok(total / NUM_PATCHES as f64)
}

pub fn candidate_likelihood(holistic: f64, local: f64) -> f64 {
    holistic * local
}
