//! Built-in dataset and training presets plus the hyperparameter sweep grid.
//!
//! A preset file is TOML with a top-level `name`, a `[dataset]` table
//! holding a [`DatasetSpec`], an optional `[recycle]` table naming a donor
//! preset whose circuits are recycled into the given mean-field mode and
//! appended, and a `[train]` table holding a [`TrainConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{build_dataset, recycle_dataset, DatagenError, DatasetRecord, DatasetSpec, MfMode};
use crate::neuralnet::{LossKind, Optimizer, TrainConfig};
use crate::simulator::HamiltonianSpec;
use crate::vqe::VqeConfig;

pub const PRESET_NAMES: [&str; 8] = ["A_s", "B_s", "C_s", "A_l", "B_l", "C_l", "ry_cnot", "xy_y"];

const SOURCES: [(&str, &str); 8] = [
    ("A_s", include_str!("../presets/A_s.toml")),
    ("B_s", include_str!("../presets/B_s.toml")),
    ("C_s", include_str!("../presets/C_s.toml")),
    ("A_l", include_str!("../presets/A_l.toml")),
    ("B_l", include_str!("../presets/B_l.toml")),
    ("C_l", include_str!("../presets/C_l.toml")),
    ("ry_cnot", include_str!("../presets/ry_cnot.toml")),
    ("xy_y", include_str!("../presets/xy_y.toml")),
];

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", "))]
    Unknown { name: String },
    #[error("cannot read preset {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed preset {origin}: {reason}")]
    Parse { origin: String, reason: String },
    #[error("recycling donor `{0}` itself recycles")]
    NestedRecycle(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecycleSpec {
    pub donor: String,
    pub mode: MfMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub recycle: Option<RecycleSpec>,
    pub train: TrainConfig,
}

impl Preset {
    pub fn parse(text: &str, origin: &str) -> Result<Self, PresetError> {
        toml::from_str(text).map_err(|e| PresetError::Parse {
            origin: origin.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn builtin(name: &str) -> Result<Self, PresetError> {
        let (_, text) = SOURCES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| PresetError::Unknown { name: name.to_string() })?;
        Self::parse(text, name)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PresetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PresetError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// A built-in name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self, PresetError> {
        if PRESET_NAMES.contains(&name_or_path) || !Path::new(name_or_path).exists() {
            Self::builtin(name_or_path)
        } else {
            Self::from_file(name_or_path)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("preset serializes")
    }

    /// Total record count at the given scale.
    pub fn dataset_size(&self, scale: f64) -> Result<usize, PresetError> {
        let mut n = self.dataset.scaled(scale).size;
        if let Some(r) = &self.recycle {
            n += Self::builtin(&r.donor)?.dataset.scaled(scale).size;
        }
        Ok(n)
    }

    /// Generates and labels the preset's dataset. `seed` overrides the
    /// dataset seed of this preset and of any recycling donor.
    pub fn build(&self, seed: u64, scale: f64, h: &HamiltonianSpec, vqe: &VqeConfig) -> Result<Vec<DatasetRecord>, PresetError> {
        let own = DatasetSpec {
            seed,
            ..self.dataset.scaled(scale)
        };
        let mut records = build_dataset(&own, h, vqe)?;
        if let Some(r) = &self.recycle {
            let donor = Self::builtin(&r.donor)?;
            if donor.recycle.is_some() {
                return Err(PresetError::NestedRecycle(r.donor.clone()));
            }
            let donor_spec = DatasetSpec {
                seed,
                ..donor.dataset.scaled(scale)
            };
            let donor_records = build_dataset(&donor_spec, h, vqe)?;
            records.extend(recycle_dataset(&donor_records, r.mode, h, vqe, &self.name)?);
        }
        Ok(records)
    }
}

/// One point of the hyperparameter search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub round: String,
    pub label: String,
    pub train: TrainConfig,
}

/// The four search rounds around `base`: architecture (three equal hidden
/// layers of 100..1000), learning rate (1e-2..1e-12), noise upper bound
/// (0.90..1.00) and loss/optimizer (L1 or L2 with Adam or AdamW at weight
/// decay 1..1e-4). The first three rounds use L2 with Adam, as the base
/// search did; the last round keeps the base architecture, rate and noise.
pub fn sweep_grid(base: &TrainConfig) -> Vec<GridPoint> {
    let lr = base.optimizer.lr();
    let plain = TrainConfig {
        loss: LossKind::L2,
        optimizer: Optimizer::Adam { lr },
        ..base.clone()
    };
    let mut out = Vec::new();
    for w in (1..=10).map(|k| 100 * k) {
        out.push(GridPoint {
            round: "architecture".into(),
            label: format!("{w}x3"),
            train: TrainConfig {
                hidden: vec![w; 3],
                ..plain.clone()
            },
        });
    }
    for e in 2..=12 {
        out.push(GridPoint {
            round: "learning_rate".into(),
            label: format!("1e-{e}"),
            train: TrainConfig {
                optimizer: Optimizer::Adam { lr: 10f64.powi(-e) },
                ..plain.clone()
            },
        });
    }
    for k in 90..=100 {
        out.push(GridPoint {
            round: "noise".into(),
            label: format!("{:.2}", k as f64 / 100.0),
            train: TrainConfig {
                noise_upper: k as f64 / 100.0,
                ..plain.clone()
            },
        });
    }
    for loss in [LossKind::L1, LossKind::L2] {
        let mut opts = vec![("adam".to_string(), Optimizer::Adam { lr })];
        for wd in [1.0, 0.1, 0.01, 0.001, 0.0001] {
            opts.push((format!("adamw-wd{wd}"), Optimizer::AdamW { lr, weight_decay: wd }));
        }
        for (name, optimizer) in opts {
            out.push(GridPoint {
                round: "loss".into(),
                label: format!("{loss:?}-{name}"),
                train: TrainConfig {
                    loss,
                    optimizer,
                    ..base.clone()
                },
            });
        }
    }
    out
}
