//! Datasets, client partitioning and poisoning transforms.

mod idx;
mod partition;
mod poison;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::nn::Batch;
use crate::{Error, Result};

pub use idx::{load_idx, parse_idx};
pub use partition::{partition, PartitionPlan, PartitionScheme};
pub use poison::{
    apply_backdoor, apply_label_flip, make_triggered_testset, AttackSpec, Poisoned, TriggerSpec,
};
pub use synthetic::{gen_synthetic, synthetic_train_test};

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleTag {
    Clean,
    LabelFlipped,
    Backdoored,
}

/// Samples of a common shape, flattened row-major, with labels and tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f32>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub tags: Vec<SampleTag>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f32>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let tags = vec![SampleTag::Clean; labels.len()];
        let ds = Self {
            inputs,
            sample_shape,
            labels,
            num_classes,
            tags,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("a dataset needs at least 2 classes".into()));
        }
        let per = self.sample_len();
        if per == 0 || self.inputs.len() != per * self.labels.len() {
            return Err(Error::Config(format!(
                "{} values cannot hold {} samples of shape {:?}",
                self.inputs.len(),
                self.labels.len(),
                self.sample_shape
            )));
        }
        if self.tags.len() != self.labels.len() {
            return Err(Error::Config("tags are not congruent with samples".into()));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Config(format!(
                "label {l} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.sample_len();
        &mut self.inputs[i * n..(i + 1) * n]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Batch::new(
            inputs,
            self.sample_shape.clone(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Dataset {
            inputs,
            sample_shape: self.sample_shape.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
        }
    }

    /// Concatenates datasets of identical sample shape and class count.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut parts = parts.into_iter();
        let mut out = parts
            .next()
            .ok_or_else(|| Error::Usage("nothing to concatenate".into()))?
            .clone();
        for p in parts {
            if p.sample_shape != out.sample_shape || p.num_classes != out.num_classes {
                return Err(Error::Config(
                    "cannot concatenate incompatible datasets".into(),
                ));
            }
            out.inputs.extend_from_slice(&p.inputs);
            out.labels.extend_from_slice(&p.labels);
            out.tags.extend_from_slice(&p.tags);
        }
        Ok(out)
    }

    /// Reinterprets samples under a new shape of the same size.
    pub fn reshape(mut self, sample_shape: Vec<usize>) -> Result<Dataset> {
        if sample_shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::Config(format!(
                "cannot reshape {:?} into {sample_shape:?}",
                self.sample_shape
            )));
        }
        self.sample_shape = sample_shape;
        Ok(self)
    }

    pub fn count_tag(&self, tag: SampleTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
