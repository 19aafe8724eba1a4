use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::BaselineKind;
use crate::count::floor_count;
use crate::data::{AttackSpec, PartitionScheme};
use crate::fl::{ClientId, Weighting};
use crate::nn::{AdamConfig, ModelSpec};
use crate::unlearn::UnlearnConfig;
use crate::{Error, Execution, Result};

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        /// Trailing features that carry no class information.
        #[serde(default)]
        nuisance_dims: usize,
    },
    /// IDX files; relative paths are resolved against the config file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
    },
}

/// What the server does once detected clients are released by the rate limiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Fedup,
    Retrain,
    NaturalForgetting,
    RandomPrune,
    MaliciousMagnitudePrune,
    WeightNegation,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Fedup,
        Strategy::Retrain,
        Strategy::NaturalForgetting,
        Strategy::RandomPrune,
        Strategy::MaliciousMagnitudePrune,
        Strategy::WeightNegation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Fedup => "fedup",
            Strategy::Retrain => "retrain",
            Strategy::NaturalForgetting => "natural_forgetting",
            Strategy::RandomPrune => "random_prune",
            Strategy::MaliciousMagnitudePrune => "malicious_magnitude_prune",
            Strategy::WeightNegation => "weight_negation",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Strategy::Fedup => None,
            Strategy::Retrain => Some(BaselineKind::Retrain),
            Strategy::NaturalForgetting => Some(BaselineKind::NaturalForgetting),
            Strategy::RandomPrune => Some(BaselineKind::RandomPrune),
            Strategy::MaliciousMagnitudePrune => Some(BaselineKind::MaliciousMagnitudePrune),
            Strategy::WeightNegation => Some(BaselineKind::WeightNegation),
        }
    }
}

/// One injected detection: `client` is flagged after training round `round`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub round: u64,
    pub client: ClientId,
}

fn default_name() -> String {
    "run".into()
}
fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_rate_limit() -> u64 {
    10
}
fn default_true() -> bool {
    true
}
fn default_retrain_rounds() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    #[serde(default = "iid")]
    pub partition: PartitionScheme,
    pub client_count: usize,
    #[serde(default)]
    pub malicious_ids: Option<Vec<ClientId>>,
    /// Alternative to `malicious_ids`: the lowest `floor(f * client_count)` ids.
    #[serde(default)]
    pub malicious_fraction: Option<f64>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub weighting: Weighting,
    /// Regular training rounds; recovery rounds come on top.
    pub rounds: u64,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub strategy: Strategy,
    /// Pruning rate for the pruning baselines; defaults to the heuristic rate.
    #[serde(default)]
    pub baseline_p: Option<f64>,
    #[serde(default)]
    pub unlearn: UnlearnConfig,
    /// Minimum rounds between two unlearning steps.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u64,
    /// Retrain without the removed clients at every unlearning step to obtain
    /// the reference accuracy and the recovery bound.
    #[serde(default = "default_true")]
    pub retrain_reference: bool,
    #[serde(default = "default_retrain_rounds")]
    pub retrain_max_rounds: u64,
    /// Accept a malicious majority (for negative tests only).
    #[serde(default)]
    pub allow_majority_violation: bool,
    #[serde(default)]
    pub execution: Execution,
}

fn iid() -> PartitionScheme {
    PartitionScheme::Iid
}

impl ExperimentConfig {
    pub fn from_json_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a JSON config, applies `key=value` overrides and resolves
    /// relative dataset paths against the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg = Self::from_json_value(value)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        if let DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    pub fn malicious_clients(&self) -> BTreeSet<ClientId> {
        match (&self.malicious_ids, self.malicious_fraction) {
            (Some(ids), _) => ids.iter().copied().collect(),
            (None, Some(f)) => (0..floor_count(f, self.client_count)).collect(),
            (None, None) => BTreeSet::new(),
        }
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.name, self.strategy.as_str(), self.seed)
    }

    /// Checks every invariant that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let n = self.client_count;
        if n < 2 {
            return Err(Error::Config(format!("client_count must be >= 2, got {n}")));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.malicious_ids.is_some() && self.malicious_fraction.is_some() {
            return Err(Error::Config(
                "set either malicious_ids or malicious_fraction, not both".into(),
            ));
        }
        if let Some(f) = self.malicious_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "malicious_fraction {f} not in [0, 1]"
                )));
            }
        }
        if let Some(ids) = &self.malicious_ids {
            if let Some(id) = ids.iter().find(|&&id| id >= n) {
                return Err(Error::Config(format!(
                    "malicious id {id} >= client_count {n}"
                )));
            }
            if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
                return Err(Error::Config("duplicate malicious ids".into()));
            }
        }
        let malicious = self.malicious_clients().len();
        if malicious > (n - 1) / 2 && !self.allow_majority_violation {
            return Err(Error::MajorityViolation {
                malicious,
                total: n,
            });
        }
        for d in &self.detections {
            if d.round == 0 || d.round > self.rounds {
                return Err(Error::Config(format!(
                    "detection round {} outside 1..={}",
                    d.round, self.rounds
                )));
            }
            if d.client >= n {
                return Err(Error::Config(format!(
                    "detected client {} >= client_count {n}",
                    d.client
                )));
            }
        }
        if let PartitionScheme::Dirichlet { alpha } = self.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "dirichlet alpha must be positive, got {alpha}"
                )));
            }
        }
        self.unlearn.validate()?;
        if let Some(p) = self.baseline_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("baseline_p {p} not in (0, 1]")));
            }
        }
        if let DatasetSpec::Synthetic {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            nuisance_dims,
        } = self.dataset
        {
            if nuisance_dims >= dim {
                return Err(Error::Config(format!(
                    "nuisance_dims {nuisance_dims} must be below dim {dim}"
                )));
            }
            if num_classes < 2 || dim < 2 || train_per_class == 0 || test_per_class == 0 {
                return Err(Error::Config("synthetic dataset is degenerate".into()));
            }
            if spread.is_nan() || spread <= 0.0 {
                return Err(Error::Config(format!(
                    "synthetic spread must be positive, got {spread}"
                )));
            }
            if num_classes * train_per_class < n {
                return Err(Error::Config("fewer training samples than clients".into()));
            }
            let shape = self.model.input_shape();
            let shape = if shape.iter().product::<usize>() == dim {
                shape
            } else {
                vec![dim]
            };
            self.check_data_shape(num_classes, &shape)?;
        }
        Ok(())
    }

    /// Model and attack must agree with the data.
    pub(crate) fn check_data_shape(
        &self,
        num_classes: usize,
        sample_shape: &[usize],
    ) -> Result<()> {
        if self.model.input_shape() != sample_shape {
            return Err(Error::Config(format!(
                "model expects inputs {:?}, data has {sample_shape:?}",
                self.model.input_shape()
            )));
        }
        if self.model.num_classes() != num_classes {
            return Err(Error::Config(format!(
                "model has {} classes, data has {num_classes}",
                self.model.num_classes()
            )));
        }
        if let Some(attack) = &self.attack {
            attack.validate(num_classes, sample_shape)?;
        }
        Ok(())
    }
}

/// Sets `key` (dot-separated path) in a JSON document. The value is parsed
/// as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Usage(format!(
                "override key `{key}` has an empty segment"
            )));
        }
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(Error::Usage(format!(
                "override `{key}`: `{}` is not an object",
                parts[..i].join(".")
            )));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one segment")
}
