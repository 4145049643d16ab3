//! Experiment configuration: one JSON document, unknown keys rejected.
//! The schema is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wasslip_core::adversarial::{AttackConfig, AttackMethod};
use wasslip_core::data::DataSpec;
use wasslip_core::models::Activation;
use wasslip_core::train::TrainConfig;
use wasslip_core::verdict::extended_f64;
use wasslip_core::{BoundMode, NormTag};

use crate::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every component draws from a named stream derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub robust: Option<RobustSection>,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
}

/// Exactly one of `generate` and `path`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub generate: Option<DataSpec>,
    /// Generator seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Label count for a CSV file; inferred from the labels when absent.
    #[serde(default)]
    pub label_count: Option<usize>,
}

/// Exactly one of `dims` (fresh seeded network) and `path` (model file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Norm recorded in written model files.
    #[serde(default)]
    pub norm: Option<NormTag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustSection {
    pub rho: f64,
    #[serde(with = "extended_f64", default = "infinite")]
    pub kappa: f64,
    /// Defaults to the model file's norm, then to `l2`.
    #[serde(default)]
    pub norm: Option<NormTag>,
    #[serde(default)]
    pub bound_mode: BoundMode,
    #[serde(default)]
    pub oracle_grid: Option<OracleGrid>,
}

/// Lattice of input points (all labels at each) used as the LP oracle's targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleGrid {
    pub points_per_axis: usize,
    pub extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilons: Vec<f64>,
    #[serde(default = "default_norm")]
    pub norm: NormTag,
    #[serde(default = "default_method")]
    pub method: AttackMethod,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Label weight of the robust bound each radius is compared against.
    #[serde(with = "extended_f64", default = "infinite")]
    pub kappa: f64,
    #[serde(default)]
    pub bound_mode: BoundMode,
}

impl AttackSection {
    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            method: self.method,
            steps: self.steps,
            step_size: self.step_size,
            restarts: self.restarts,
            grid_points: self.grid_points,
            seed,
        }
    }
}

/// Sizes of the oracle suite run by `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub strong_duality_instances: usize,
    pub refinement_instances: usize,
    pub threshold_instances: usize,
    pub pushforward_triples: usize,
    pub attack_tuples: usize,
    pub lipschitz_networks: usize,
    pub bound_mode: BoundMode,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            strong_duality_instances: 100,
            refinement_instances: 20,
            threshold_instances: 20,
            pushforward_triples: 50,
            attack_tuples: 30,
            lipschitz_networks: 50,
            bound_mode: BoundMode::Certified,
        }
    }
}

fn default_activation() -> Activation {
    Activation::Relu
}
fn default_true() -> bool {
    true
}
fn infinite() -> f64 {
    f64::INFINITY
}
fn default_norm() -> NormTag {
    NormTag::L2
}
fn default_method() -> AttackMethod {
    AttackMethod::Pgd
}
fn default_steps() -> usize {
    40
}
fn default_restarts() -> usize {
    3
}
fn default_grid_points() -> usize {
    101
}

/// Parses a config document, reporting the JSON path of the first bad field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Failure::usage(format!("config error at `{path}`: {}", e.into_inner()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

fn field_error(path: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("config error at `{path}`: {msg}"))
}

impl ExperimentConfig {
    /// Checks that go beyond the types: mutually exclusive fields and ranges.
    pub fn validate(&self) -> Result<(), Failure> {
        if let Some(d) = &self.dataset {
            if d.generate.is_some() == d.path.is_some() {
                return Err(field_error(
                    "dataset",
                    "exactly one of `generate` and `path` is required",
                ));
            }
            if d.seed.is_some() && d.generate.is_none() {
                return Err(field_error("dataset.seed", "only applies to `generate`"));
            }
        }
        if let Some(m) = &self.model {
            if m.dims.is_some() == m.path.is_some() {
                return Err(field_error(
                    "model",
                    "exactly one of `dims` and `path` is required",
                ));
            }
            if let Some(dims) = &m.dims {
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(field_error(
                        "model.dims",
                        "need at least two positive sizes",
                    ));
                }
            }
        }
        if let Some(r) = &self.robust {
            if !(r.rho >= 0.0) || !r.rho.is_finite() {
                return Err(field_error(
                    "robust.rho",
                    format!("must be finite and nonnegative, got {}", r.rho),
                ));
            }
            if !(r.kappa > 0.0) {
                return Err(field_error(
                    "robust.kappa",
                    format!("must be positive, got {}", r.kappa),
                ));
            }
            if let Some(g) = &r.oracle_grid {
                if g.points_per_axis < 2 || !(g.extent > 0.0) {
                    return Err(field_error(
                        "robust.oracle_grid",
                        "need at least 2 points per axis and a positive extent",
                    ));
                }
            }
        }
        if let Some(a) = &self.attack {
            if a.epsilons.is_empty() {
                return Err(field_error(
                    "attack.epsilons",
                    "at least one radius is required",
                ));
            }
            if let Some(i) = a
                .epsilons
                .iter()
                .position(|e| !(*e >= 0.0) || !e.is_finite())
            {
                return Err(field_error(
                    &format!("attack.epsilons[{i}]"),
                    "radii must be finite and nonnegative",
                ));
            }
            if a.epsilons.windows(2).any(|w| w[1] < w[0]) {
                return Err(field_error(
                    "attack.epsilons",
                    "radii must be nondecreasing",
                ));
            }
            if a.steps == 0 {
                return Err(field_error("attack.steps", "must be positive"));
            }
            if !(a.kappa > 0.0) {
                return Err(field_error("attack.kappa", "must be positive"));
            }
        }
        if let Some(t) = &self.train {
            t.validate().map_err(|e| field_error("train", e))?;
        }
        Ok(())
    }

    pub fn require_dataset(&self, command: &str) -> Result<&DatasetSection, Failure> {
        self.dataset
            .as_ref()
            .ok_or_else(|| field_error("dataset", format!("required by `{command}`")))
    }

    pub fn require_model(&self, command: &str) -> Result<&ModelSection, Failure> {
        self.model
            .as_ref()
            .ok_or_else(|| field_error("model", format!("required by `{command}`")))
    }

    pub fn require_robust(&self, command: &str) -> Result<&RobustSection, Failure> {
        self.robust
            .as_ref()
            .ok_or_else(|| field_error("robust", format!("required by `{command}`")))
    }

    pub fn require_attack(&self, command: &str) -> Result<&AttackSection, Failure> {
        self.attack
            .as_ref()
            .ok_or_else(|| field_error("attack", format!("required by `{command}`")))
    }

    pub fn require_train(&self, command: &str) -> Result<&TrainConfig, Failure> {
        self.train
            .as_ref()
            .ok_or_else(|| field_error("train", format!("required by `{command}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message(text: &str) -> String {
        match parse_config(text) {
            Err(Failure::Usage(m)) => m,
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let m = message(r#"{"robust": {"rho": 0.1, "kapa": 1}}"#);
        assert!(m.contains("`robust.kapa`"), "{m}");
        let m = message(
            r#"{"dataset": {"generate": {"generator": "gaussian-blobs", "n": 4, "k": 2, "dim": 2, "x": 1}}}"#,
        );
        assert!(m.contains("dataset.generate"), "{m}");
        let m = message(r#"{"seeds": 1}"#);
        assert!(m.contains("seeds"), "{m}");
    }

    #[test]
    fn wrong_types_name_their_path() {
        let m = message(r#"{"attack": {"epsilons": [0.1, "a"]}}"#);
        assert!(m.contains("attack.epsilons[1]"), "{m}");
        let m = message(
            r#"{"train": {"objective": "spectral", "rho": 0.1, "learning_rate": 0.1, "epochs": "x"}}"#,
        );
        assert!(m.contains("train.epochs"), "{m}");
    }

    #[test]
    fn semantic_checks() {
        assert!(message(r#"{"robust": {"rho": -1}}"#).contains("robust.rho"));
        assert!(message(r#"{"dataset": {}}"#).contains("dataset"));
        assert!(message(r#"{"attack": {"epsilons": [0.5, 0.1]}}"#).contains("nondecreasing"));
        assert!(message(r#"{"model": {"dims": [2]}}"#).contains("model.dims"));
    }

    #[test]
    fn defaults_and_infinite_kappa() {
        let c = parse_config(
            r#"{"robust": {"rho": 0.5, "kappa": "inf"}, "verify": {"attack_tuples": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.robust.unwrap().kappa, f64::INFINITY);
        let v = c.verify.unwrap();
        assert_eq!(v.attack_tuples, 3);
        assert_eq!(v.strong_duality_instances, 100);
        assert_eq!(c.seed, 0);
    }
}
