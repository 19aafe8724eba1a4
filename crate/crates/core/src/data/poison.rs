use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{Dataset, SampleTag};
use crate::count::floor_count;
use crate::{rng, Error, Result};

fn default_fraction() -> f64 {
    0.10
}

/// Where a backdoor trigger is stamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerSpec {
    /// Overwrite the listed flat feature indices.
    Features { indices: Vec<usize>, value: f32 },
    /// Overwrite a `size × size` block in the bottom-right corner of every
    /// channel of a `[C, H, W]` sample.
    CornerPatch { size: usize, value: f32 },
}

impl TriggerSpec {
    /// Last three features for vectors; a 3×3 corner at full intensity
    /// (1.0 on normalised images) otherwise.
    pub fn default_for(sample_shape: &[usize], sentinel: f32) -> Self {
        if sample_shape.len() == 3 {
            TriggerSpec::CornerPatch {
                size: 3,
                value: sentinel,
            }
        } else {
            let n: usize = sample_shape.iter().product();
            TriggerSpec::Features {
                indices: (n.saturating_sub(3)..n).collect(),
                value: sentinel,
            }
        }
    }

    /// Flat offsets the trigger overwrites within one sample.
    pub fn offsets(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        let n: usize = sample_shape.iter().product();
        match self {
            TriggerSpec::Features { indices, .. } => {
                if indices.is_empty() {
                    return Err(Error::Config("trigger has no features".into()));
                }
                if let Some(i) = indices.iter().find(|&&i| i >= n) {
                    return Err(Error::Config(format!(
                        "trigger feature {i} outside sample of {n} values"
                    )));
                }
                Ok(indices.clone())
            }
            TriggerSpec::CornerPatch { size, .. } => {
                let &[c, h, w] = sample_shape else {
                    return Err(Error::Config(format!(
                        "corner trigger needs [C, H, W] samples, got {sample_shape:?}"
                    )));
                };
                if *size == 0 || *size > h || *size > w {
                    return Err(Error::Config(format!(
                        "{size}x{size} trigger does not fit {h}x{w} images"
                    )));
                }
                let mut out = Vec::with_capacity(c * size * size);
                for ch in 0..c {
                    for y in h - size..h {
                        for x in w - size..w {
                            out.push((ch * h + y) * w + x);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn value(&self) -> f32 {
        match self {
            TriggerSpec::Features { value, .. } | TriggerSpec::CornerPatch { value, .. } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    LabelFlip {
        #[serde(default = "default_fraction")]
        poison_fraction: f64,
        source_class: usize,
        target_class: usize,
    },
    Backdoor {
        #[serde(default = "default_fraction")]
        poison_fraction: f64,
        target_class: usize,
        trigger: TriggerSpec,
    },
}

impl AttackSpec {
    pub fn poison_fraction(&self) -> f64 {
        match self {
            AttackSpec::LabelFlip {
                poison_fraction, ..
            }
            | AttackSpec::Backdoor {
                poison_fraction, ..
            } => *poison_fraction,
        }
    }

    pub fn target_class(&self) -> usize {
        match self {
            AttackSpec::LabelFlip { target_class, .. }
            | AttackSpec::Backdoor { target_class, .. } => *target_class,
        }
    }

    pub fn validate(&self, num_classes: usize, sample_shape: &[usize]) -> Result<()> {
        let f = self.poison_fraction();
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("poison fraction {f} not in (0, 1]")));
        }
        if self.target_class() >= num_classes {
            return Err(Error::Config(format!(
                "target class {} out of range",
                self.target_class()
            )));
        }
        match self {
            AttackSpec::LabelFlip {
                source_class,
                target_class,
                ..
            } => {
                if source_class == target_class {
                    return Err(Error::Config("label flip source equals target".into()));
                }
                if *source_class >= num_classes {
                    return Err(Error::Config(format!(
                        "source class {source_class} out of range"
                    )));
                }
            }
            AttackSpec::Backdoor { trigger, .. } => {
                trigger.offsets(sample_shape)?;
            }
        }
        Ok(())
    }
}

/// A transformed dataset and the indices that were poisoned.
#[derive(Debug, Clone, PartialEq)]
pub struct Poisoned {
    pub dataset: Dataset,
    pub indices: Vec<usize>,
}

fn choose(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::from_seed(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Relabels `⌊fraction · n⌋` source-class samples (all of them if fewer
/// exist) to the target class.
///
/// A client without source-class samples is returned unchanged with no
/// poisoned indices and a logged warning.
pub fn apply_label_flip(dataset: &Dataset, spec: &AttackSpec, seed: u64) -> Result<Poisoned> {
    let AttackSpec::LabelFlip {
        poison_fraction,
        source_class,
        target_class,
    } = *spec
    else {
        return Err(Error::Usage(
            "apply_label_flip needs a label_flip spec".into(),
        ));
    };
    spec.validate(dataset.num_classes, &dataset.sample_shape)?;
    let sources: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.labels[i] == source_class)
        .collect();
    let mut out = dataset.clone();
    if sources.is_empty() {
        log::warn!("label flip skipped: no samples of class {source_class}");
        return Ok(Poisoned {
            dataset: out,
            indices: Vec::new(),
        });
    }
    let budget = floor_count(poison_fraction, dataset.len()).min(sources.len());
    let indices: Vec<usize> = choose(sources.len(), budget, seed)
        .into_iter()
        .map(|k| sources[k])
        .collect();
    for &i in &indices {
        out.labels[i] = target_class;
        out.tags[i] = SampleTag::LabelFlipped;
    }
    Ok(Poisoned {
        dataset: out,
        indices,
    })
}

fn stamp(dataset: &mut Dataset, i: usize, offsets: &[usize], value: f32, target: usize) {
    let sample = dataset.sample_mut(i);
    for &o in offsets {
        sample[o] = value;
    }
    dataset.labels[i] = target;
    dataset.tags[i] = SampleTag::Backdoored;
}

/// Stamps the trigger on `⌊fraction · n⌋` samples and relabels them to the
/// target class.
pub fn apply_backdoor(dataset: &Dataset, spec: &AttackSpec, seed: u64) -> Result<Poisoned> {
    let AttackSpec::Backdoor {
        poison_fraction,
        target_class,
        ref trigger,
    } = *spec
    else {
        return Err(Error::Usage("apply_backdoor needs a backdoor spec".into()));
    };
    spec.validate(dataset.num_classes, &dataset.sample_shape)?;
    let offsets = trigger.offsets(&dataset.sample_shape)?;
    let budget = floor_count(poison_fraction, dataset.len());
    let indices = choose(dataset.len(), budget, seed);
    let mut out = dataset.clone();
    for &i in &indices {
        stamp(&mut out, i, &offsets, trigger.value(), target_class);
    }
    Ok(Poisoned {
        dataset: out,
        indices,
    })
}

/// Every sample triggered and labelled with the backdoor target. Accuracy
/// on this set is the attack success rate.
pub fn make_triggered_testset(clean: &Dataset, spec: &AttackSpec) -> Result<Dataset> {
    let AttackSpec::Backdoor {
        target_class,
        ref trigger,
        ..
    } = *spec
    else {
        return Err(Error::Usage(
            "triggered test sets need a backdoor spec".into(),
        ));
    };
    spec.validate(clean.num_classes, &clean.sample_shape)?;
    let offsets = trigger.offsets(&clean.sample_shape)?;
    let mut out = clean.clone();
    for i in 0..out.len() {
        stamp(&mut out, i, &offsets, trigger.value(), target_class);
    }
    Ok(out)
}
