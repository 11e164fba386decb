//! Experiment configuration document.
//!
//! ```json
//! {
//!   "objective": {"kind": "rayleigh", "diagonal": [1, 2, 3]},
//!   "layers": [{"layer": 1, "strategy": "Whole", "manifolds": ["sphere"]}],
//!   "optimizer": {"schedule": {"base_rate": 0.2, "decay": 1e-4}},
//!   "iterations": 5000,
//!   "seed": 1,
//!   "out_dir": "runs/rayleigh"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pem_core::ensemble::{
    build_pi, build_pio, build_po, build_whole, pi_kss, pio_kss, po_kss, EnsembleError,
    EnsemblePlan, KernelCoord, LayerShape, ManifoldChoice, Strategy,
};
use pem_core::gsgd::train::BatchMode;
use pem_core::harness::{
    make_synthetic_dataset_with, ConvNet, DatasetShape, HarnessError, Mlp, Procrustes, Rayleigh,
    SyntheticDataset,
};
use pem_core::{GsgdConfig, ManifoldKind, Objective};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    /// Explicit per-layer plans; these win over `default_strategy`.
    #[serde(default)]
    pub layers: Vec<PlanConfig>,
    /// Strategy for layers without an explicit plan. PI applies to layers
    /// `2..=L`, PO to `1..L`, PIO to `2..L` and Whole to every layer; the
    /// remaining layers stay Euclidean.
    #[serde(default)]
    pub default_strategy: Option<PlanConfig>,
    #[serde(default)]
    pub optimizer: GsgdConfig,
    #[serde(default)]
    pub batch: BatchMode,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub strict: bool,
    /// Run sequentially even when built with the `parallel` feature.
    #[serde(default)]
    pub sequential: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("pem-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Rayleigh {
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        diagonal: Option<Vec<f64>>,
    },
    Procrustes {
        target: Vec<Vec<f64>>,
        #[serde(default)]
        conditioning: Option<Vec<Vec<f64>>>,
    },
    Conv {
        #[serde(default)]
        data: DataConfig,
        #[serde(default = "default_kernel")]
        kernel_size: usize,
        out_channels: usize,
    },
    Mlp {
        #[serde(default)]
        data: DataConfig,
        hidden: usize,
    },
}

fn default_kernel() -> usize {
    3
}

/// Synthetic data, either generated or read from a PEMD file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            classes: default_classes(),
            per_class: default_per_class(),
            data_seed: 0,
            channels: default_channels(),
            height: default_side(),
            width: default_side(),
        }
    }
}

fn default_classes() -> usize {
    4
}
fn default_per_class() -> usize {
    64
}
fn default_channels() -> usize {
    2
}
fn default_side() -> usize {
    8
}

/// Manifold assignment: a bare kind or `{kind, curvature_bound}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChoiceConfig {
    Kind(ManifoldKind),
    Full(ManifoldChoice),
}

impl From<ChoiceConfig> for ManifoldChoice {
    fn from(c: ChoiceConfig) -> Self {
        match c {
            ChoiceConfig::Kind(k) => k.into(),
            ChoiceConfig::Full(c) => c,
        }
    }
}

/// How one layer's kernels are grouped.
///
/// * `groups`: number of KSS subsets (default: one per manifold entry).
/// * `splits`: explicit channel subsets for PI (output) or PO (input).
/// * `members`: explicit coordinate sets for PIO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub layer: Option<usize>,
    pub strategy: Strategy,
    pub manifolds: Vec<ChoiceConfig>,
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default)]
    pub splits: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub members: Option<Vec<Vec<KernelCoord>>>,
}

impl PlanConfig {
    pub fn build(&self, shape: &LayerShape) -> Result<EnsemblePlan, EnsembleError> {
        let kinds: Vec<ManifoldChoice> = self.manifolds.iter().map(|&c| c.into()).collect();
        let bad = |msg: &str| EnsembleError::InvalidPartition(format!("layer {}: {msg}", shape.layer));
        if kinds.is_empty() {
            return Err(bad("no manifolds given"));
        }
        let m = self.groups.unwrap_or(kinds.len());
        match self.strategy {
            Strategy::Whole => {
                if kinds.len() != 1 || self.groups.is_some_and(|g| g != 1) {
                    return Err(bad("Whole takes exactly one manifold"));
                }
                build_whole(shape, kinds[0])
            }
            Strategy::Pi | Strategy::Po => match &self.splits {
                None if self.strategy == Strategy::Pi => pi_kss(shape, m, &kinds),
                None => po_kss(shape, m, &kinds),
                Some(splits) => {
                    let assign = cycled(&kinds, splits.len());
                    if self.strategy == Strategy::Pi {
                        build_pi(shape, splits, &assign)
                    } else {
                        build_po(shape, splits, &assign)
                    }
                }
            },
            Strategy::Pio => match &self.members {
                Some(members) => {
                    let assign = cycled(&kinds, members.len());
                    build_pio(shape, members.iter().cloned().zip(assign).collect())
                }
                None => pio_kss(shape, m, &kinds),
            },
        }
    }
}

fn cycled(kinds: &[ManifoldChoice], n: usize) -> Vec<ManifoldChoice> {
    (0..n).map(|i| kinds[i % kinds.len()]).collect()
}

/// The objective of a run, owning its data.
pub enum BuiltObjective {
    Rayleigh(Rayleigh),
    Procrustes(Procrustes),
    Conv(ConvNet),
    Mlp(Mlp),
}

impl BuiltObjective {
    pub fn as_objective(&self) -> &dyn Objective {
        match self {
            BuiltObjective::Rayleigh(o) => o,
            BuiltObjective::Procrustes(o) => o,
            BuiltObjective::Conv(o) => o,
            BuiltObjective::Mlp(o) => o,
        }
    }

    /// Training accuracy for classifiers.
    pub fn accuracy(&self, params: &[Vec<f64>]) -> Option<f64> {
        match self {
            BuiltObjective::Conv(o) => o.accuracy(params).ok(),
            BuiltObjective::Mlp(o) => o.accuracy(params).ok(),
            _ => None,
        }
    }
}

impl DataConfig {
    fn load(&self, base: &Path) -> Result<SyntheticDataset, CliError> {
        match &self.dataset {
            Some(p) => {
                let path = base.join(p);
                let file = std::fs::File::open(&path)
                    .map_err(|e| CliError::Config(format!("cannot open dataset {}: {e}", path.display())))?;
                SyntheticDataset::read_from(std::io::BufReader::new(file))
                    .map_err(|e| CliError::Config(format!("bad dataset {}: {e}", path.display())))
            }
            None => {
                let shape = DatasetShape {
                    channels: self.channels,
                    height: self.height,
                    width: self.width,
                };
                Ok(make_synthetic_dataset_with(shape, self.classes, self.per_class, self.data_seed)?)
            }
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Relative dataset paths resolve against `base`, the config's directory.
    pub fn build_objective(&self, base: &Path) -> Result<BuiltObjective, CliError> {
        let square = |rows: &[Vec<f64>]| -> Result<(), CliError> {
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
                return Err(CliError::Config("matrix must be square and non-empty".into()));
            }
            Ok(())
        };
        Ok(match &self.objective {
            ObjectiveConfig::Rayleigh { matrix, diagonal } => match (matrix, diagonal) {
                (Some(m), None) => {
                    square(m)?;
                    BuiltObjective::Rayleigh(Rayleigh::from_rows(m)?)
                }
                (None, Some(d)) => BuiltObjective::Rayleigh(Rayleigh::diagonal(d)?),
                _ => return Err(CliError::Config("rayleigh needs exactly one of matrix, diagonal".into())),
            },
            ObjectiveConfig::Procrustes { target, conditioning } => {
                let mut p = Procrustes::from_rows(target)?;
                if let Some(x) = conditioning {
                    square(x)?;
                    p = p.with_conditioning(x.concat())?;
                }
                BuiltObjective::Procrustes(p)
            }
            ObjectiveConfig::Conv {
                data,
                kernel_size,
                out_channels,
            } => BuiltObjective::Conv(ConvNet::new(data.load(base)?, *kernel_size, *out_channels)?),
            ObjectiveConfig::Mlp { data, hidden } => {
                let ds = data.load(base)?;
                let d = ds.shape.image_len();
                let labels = ds.labels.iter().map(|&l| usize::from(l)).collect();
                BuiltObjective::Mlp(Mlp::new(ds.images, labels, d, *hidden, ds.classes)?)
            }
        })
    }

    /// One plan per objective layer, validated.
    pub fn build_plans(&self, shapes: &[LayerShape]) -> Result<Vec<EnsemblePlan>, CliError> {
        let n = shapes.len();
        for p in &self.layers {
            match p.layer {
                None => return Err(CliError::Config("every entry of layers needs a layer index".into())),
                Some(l) if !shapes.iter().any(|s| s.layer == l) => {
                    return Err(CliError::Config(format!("layer {l} does not exist ({n} layers)")))
                }
                _ => {}
            }
        }
        if let Some(d) = &self.default_strategy {
            if d.layer.is_some() {
                return Err(CliError::Config("default_strategy must not name a layer".into()));
            }
        }
        let mut plans = Vec::with_capacity(n);
        for (i, shape) in shapes.iter().enumerate() {
            let pos = i + 1;
            let explicit: Vec<&PlanConfig> = self.layers.iter().filter(|p| p.layer == Some(shape.layer)).collect();
            if explicit.len() > 1 {
                return Err(CliError::Config(format!("layer {} is configured twice", shape.layer)));
            }
            let chosen = explicit.first().copied().or_else(|| {
                self.default_strategy.as_ref().filter(|d| match d.strategy {
                    Strategy::Pi => pos >= 2,
                    Strategy::Po => pos < n,
                    Strategy::Pio => pos >= 2 && pos < n,
                    Strategy::Whole => true,
                })
            });
            let plan = match chosen {
                Some(p) => p.build(shape),
                None => build_whole(shape, ManifoldKind::Euclidean.into()),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            plans.push(plan);
        }
        Ok(plans)
    }
}
