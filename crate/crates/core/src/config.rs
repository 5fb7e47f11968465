//! TOML experiment and generation configs.
//!
//! An experiment file names a task preset and may override any key:
//!
//! ```toml
//! preset = "surface_pressure"
//! dtype = "f64"
//!
//! [model]
//! latent_size = 32
//! steps = 4
//!
//! [train]
//! epochs = 500
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::{GeometryFamily, SyntheticSpec};
use crate::dataset::{EncodingKind, FeatureSpec, TargetScaling};
use crate::error::{Error, Result};
use crate::featurize::DEFAULT_CELL_TYPES;
use crate::model::{GnnConfig, MlpShape, TaskMode};
use crate::nn::Activation;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ResidualStress,
    #[default]
    SurfacePressure,
    DragCoefficient,
    LiftCoefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

/// Architecture knobs. Encoders and processors share `depth`/`width`;
/// both decoders use `decoder_depth`/`decoder_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub task: TaskMode,
    pub latent_size: usize,
    pub steps: usize,
    pub depth: usize,
    pub width: usize,
    pub decoder_depth: usize,
    pub decoder_width: usize,
    /// Graph decoder output; internal context for node-level tasks.
    pub graph_output: usize,
    pub node_output: usize,
    pub output_activation: Activation,
    pub frequency: f64,
}

impl ModelParams {
    pub fn gnn_config(&self, node_input: usize, edge_input: usize) -> GnnConfig {
        let body = MlpShape::new(self.depth, self.width);
        let dec = MlpShape::new(self.decoder_depth, self.decoder_width);
        let node = match self.task {
            TaskMode::NodeLevel => Some((dec, self.node_output, self.output_activation)),
            TaskMode::GraphLevel => None,
        };
        let mut cfg = GnnConfig::build(node_input, edge_input, self.latent_size, self.steps, body, dec, self.graph_output, node)
            .with_frequency(self.frequency);
        if self.task == TaskMode::GraphLevel {
            cfg.graph_decoder.output_activation = self.output_activation;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub dtype: Dtype,
    /// Write a resumable checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub model: ModelParams,
    pub features: FeatureSpec,
    pub train: TrainConfig,
}

impl Preset {
    pub fn defaults(self) -> ExperimentConfig {
        let (task, n, steps, graph_output, head) = match self {
            Preset::ResidualStress => (TaskMode::NodeLevel, (4, 64), 6, 4, Activation::Relu),
            Preset::SurfacePressure => (TaskMode::NodeLevel, (5, 64), 5, 4, Activation::Linear),
            Preset::DragCoefficient => (TaskMode::GraphLevel, (5, 64), 5, 1, Activation::Linear),
            Preset::LiftCoefficient => (TaskMode::GraphLevel, (5, 32), 5, 1, Activation::Linear),
        };
        let (epochs, batch_size, initial_lr) = match self {
            Preset::ResidualStress => (2000, 16, 5e-4),
            Preset::SurfacePressure => (3000, 32, 5e-4),
            Preset::DragCoefficient => (500, 64, 5e-4),
            Preset::LiftCoefficient => (500, 64, 1e-3),
        };
        let features = match self {
            Preset::ResidualStress => FeatureSpec {
                encoding: EncodingKind::FeatureDesign,
                cell_types: DEFAULT_CELL_TYPES.iter().map(|s| s.to_string()).collect(),
                node_targets: TargetScaling::ZScore,
                ..FeatureSpec::default()
            },
            Preset::SurfacePressure => FeatureSpec { node_targets: TargetScaling::Pressure, ..FeatureSpec::default() },
            _ => FeatureSpec { node_targets: TargetScaling::None, ..FeatureSpec::default() },
        };
        ExperimentConfig {
            preset: self,
            dtype: Dtype::F64,
            checkpoint_every: 0,
            model: ModelParams {
                task,
                latent_size: n.1,
                steps,
                depth: n.0,
                width: n.1,
                decoder_depth: n.0,
                decoder_width: n.1,
                graph_output,
                node_output: 1,
                output_activation: head,
                frequency: 1.0,
            },
            features,
            train: TrainConfig { epochs, batch_size, initial_lr, ..TrainConfig::default() },
        }
    }
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().lines().next().unwrap_or_default().trim().to_string())
}

impl ExperimentConfig {
    /// Parses a config file, filling unset keys from its preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let top: toml::Table = toml::from_str(text).map_err(config_error)?;
        let preset = match top.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).map_err(config_error)?,
            None => Preset::default(),
        };
        let mut value = toml::Value::try_from(preset.defaults()).map_err(config_error)?;
        merge(&mut value, toml::Value::Table(top));
        let cfg: Self = value.try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.gnn_config(1, 1).validate()
    }

    pub fn gnn_config(&self, dim: usize) -> GnnConfig {
        self.model.gnn_config(self.features.node_width(), self.features.edge_width(dim))
    }
}

/// One output file of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub count: usize,
}

/// Synthetic generation: shared geometry settings plus named splits, each
/// drawn from its own random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub family: GeometryFamily,
    pub min_nodes: usize,
    pub max_nodes: usize,
    #[serde(default = "half")]
    pub closed_fraction: f64,
    #[serde(rename = "split")]
    pub splits: Vec<SplitSpec>,
}

fn half() -> f64 {
    0.5
}

impl GenConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_error)?;
        if cfg.splits.is_empty() {
            return Err(Error::Config("at least one [[split]] is required".into()));
        }
        let mut names: Vec<&str> = cfg.splits.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("split names must be unique".into()));
        }
        cfg.spec_for(0).expect("non-empty").validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Generator settings for split `index`.
    pub fn spec_for(&self, index: usize) -> Option<SyntheticSpec> {
        let split = self.splits.get(index)?;
        Some(SyntheticSpec {
            seed: self.seed,
            stream: index as u64,
            count: split.count,
            min_nodes: self.min_nodes,
            max_nodes: self.max_nodes,
            family: self.family,
            closed_fraction: self.closed_fraction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_table_values() {
        let rs = Preset::ResidualStress.defaults();
        assert_eq!((rs.model.depth, rs.model.width, rs.model.latent_size, rs.model.steps), (4, 64, 64, 6));
        assert_eq!((rs.train.epochs, rs.train.batch_size, rs.train.initial_lr), (2000, 16, 5e-4));
        assert_eq!(rs.model.output_activation, Activation::Relu);
        let sp = Preset::SurfacePressure.defaults();
        assert_eq!((sp.model.depth, sp.model.steps, sp.train.epochs, sp.train.batch_size), (5, 5, 3000, 32));
        let cd = Preset::DragCoefficient.defaults();
        assert_eq!((cd.model.task, cd.model.graph_output, cd.train.batch_size), (TaskMode::GraphLevel, 1, 64));
        let cl = Preset::LiftCoefficient.defaults();
        assert_eq!((cl.model.width, cl.model.latent_size, cl.train.initial_lr), (32, 32, 1e-3));
        let g = rs.gnn_config(3);
        assert_eq!(g, GnnConfig::residual_stress(9, 4));
        assert_eq!(sp.gnn_config(2), GnnConfig::surface_pressure(6, 3));
        assert_eq!(cd.gnn_config(2), GnnConfig::drag_coefficient(6, 3));
        assert_eq!(cl.gnn_config(2), GnnConfig::lift_coefficient(6, 3));
    }

    #[test]
    fn overrides_merge_onto_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"lift_coefficient\"\n[model]\nsteps = 2\n[train]\nepochs = 7\nseed = 4\n",
        )
        .unwrap();
        assert_eq!((cfg.model.steps, cfg.model.width, cfg.train.epochs, cfg.train.seed), (2, 32, 7, 4));
        assert_eq!(cfg.train.initial_lr, 1e-3);
        let round = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), Preset::SurfacePressure.defaults());
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "preset = \"nope\"",
            "[model]\nbogus = 1",
            "[train]\nepochs = 0",
            "[model]\nsteps = \"four\"",
            "[train\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn gen_config_splits() {
        let cfg = GenConfig::from_toml_str(
            "seed = 3\nfamily = \"chain\"\nmin_nodes = 20\nmax_nodes = 60\n\
             [[split]]\nname = \"train\"\ncount = 5\n[[split]]\nname = \"test\"\ncount = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.spec_for(1).unwrap().stream, 1);
        assert_eq!(cfg.spec_for(1).unwrap().count, 2);
        assert!(cfg.spec_for(2).is_none());
        assert!(GenConfig::from_toml_str("seed = 3\nfamily = \"chain\"\nmin_nodes = 9\nmax_nodes = 6\n[[split]]\nname = \"a\"\ncount = 1\n").is_err());
        assert!(GenConfig::from_toml_str("seed = 3\nfamily = \"chain\"\nmin_nodes = 2\nmax_nodes = 6\nsplit = []\n").is_err());
    }
}
