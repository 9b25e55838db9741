//! Run configuration files.
//!
//! A config is a TOML document whose sections mirror the stages of a run.
//! Every field is optional and falls back to the tracker defaults, while an
//! unrecognised key is rejected so that a misspelt hyperparameter cannot
//! silently leave its default in place.
//!
//! ```toml
//! seed = 7
//!
//! [network]
//! n = 50
//! trees = 10
//!
//! [tracking]
//! candidates = 600
//! motion = [10.0, 10.0, 0.01, 0.0, 0.005, 0.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimOptions;
use crate::tracker::{MotionModel, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub n: usize,
    pub trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lambda: f64,
    pub positives: usize,
    pub negatives: usize,
    pub positive_radius: f64,
    pub positive_scale: [f64; 2],
    pub negative_distance: [f64; 2],
    pub negative_max_iou: f64,
    pub max_iterations: usize,
    pub memory: usize,
    pub gradient_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSection {
    pub candidates: usize,
    pub fine_count: usize,
    pub bootstrap_frames: usize,
    pub update_interval: usize,
    /// Standard deviations for (tx, ty, scale, rotation, aspect, skew).
    pub motion: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseSection {
    pub sparsity: f64,
    pub sharpness: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub sequence: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub result: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

/// Everything a run needs: tracker hyperparameters, file locations and
/// how chatty to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub verbosity: u8,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub tracking: TrackingSection,
    pub sparse: SparseSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_tracker(&TrackerConfig::default())
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        RunConfig::default().network
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        RunConfig::default().training
    }
}

impl Default for TrackingSection {
    fn default() -> Self {
        RunConfig::default().tracking
    }
}

impl Default for SparseSection {
    fn default() -> Self {
        RunConfig::default().sparse
    }
}

impl RunConfig {
    pub fn from_tracker(t: &TrackerConfig) -> Self {
        Self {
            seed: t.seed,
            verbosity: 1,
            network: NetworkSection { n: t.n, trees: t.trees },
            training: TrainingSection {
                lambda: t.lambda,
                positives: t.positives,
                negatives: t.negatives,
                positive_radius: t.positive_radius,
                positive_scale: [t.positive_scale.0, t.positive_scale.1],
                negative_distance: [t.negative_distance.0, t.negative_distance.1],
                negative_max_iou: t.negative_max_iou,
                max_iterations: t.optim.max_iterations,
                memory: t.optim.memory,
                gradient_tolerance: t.optim.gradient_tolerance,
            },
            tracking: TrackingSection {
                candidates: t.candidates,
                fine_count: t.fine_count,
                bootstrap_frames: t.bootstrap_frames,
                update_interval: t.update_interval,
                motion: t.motion.std_devs,
            },
            sparse: SparseSection {
                sparsity: t.sparsity,
                sharpness: t.sharpness,
            },
            paths: PathsSection::default(),
        }
    }

    /// Tracker hyperparameters, validated.
    pub fn tracker(&self) -> Result<TrackerConfig> {
        let tr = &self.training;
        let tk = &self.tracking;
        let config = TrackerConfig {
            n: self.network.n,
            lambda: tr.lambda,
            candidates: tk.candidates,
            fine_count: tk.fine_count,
            positives: tr.positives,
            negatives: tr.negatives,
            bootstrap_frames: tk.bootstrap_frames,
            update_interval: tk.update_interval,
            trees: self.network.trees,
            motion: MotionModel { std_devs: tk.motion },
            sparsity: self.sparse.sparsity,
            sharpness: self.sparse.sharpness,
            seed: self.seed,
            optim: OptimOptions {
                memory: tr.memory,
                max_iterations: tr.max_iterations,
                gradient_tolerance: tr.gradient_tolerance,
                ..OptimOptions::default()
            },
            positive_radius: tr.positive_radius,
            positive_scale: (tr.positive_scale[0], tr.positive_scale[1]),
            negative_distance: (tr.negative_distance[0], tr.negative_distance[1]),
            negative_max_iou: tr.negative_max_iou,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The effective configuration as TOML, with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all serializable")
    }
}
