use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::count::ceil_count;
use crate::fl::{avg_models, ClientId, ClientUpdate};
use crate::nn::{ModelParams, Real};
use crate::{Error, Result};

/// Flat weight indices to zero in one layer, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub layer_index: usize,
    pub indices: Vec<usize>,
}

/// Per-layer index sets; only dense and conv layers ever appear.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnlearnMask {
    pub layers: Vec<LayerMask>,
}

impl UnlearnMask {
    pub fn total_pruned(&self) -> usize {
        self.layers.iter().map(|l| l.indices.len()).sum()
    }

    pub fn layer(&self, layer_index: usize) -> Option<&LayerMask> {
        self.layers.iter().find(|l| l.layer_index == layer_index)
    }
}

/// How the prior global weight scales the squared group difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// `diff * |w|`
    #[default]
    Magnitude,
    /// `diff * w`, which demotes every negative weight.
    Signed,
}

/// Indices of the `k` largest ranks, lowest index first among equals,
/// returned in ascending order.
pub fn select_top_k(ranks: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(ranks.len());
    if k == 0 {
        return Vec::new();
    }
    let order =
        |&a: &usize, &b: &usize| -> Ordering { ranks[b].total_cmp(&ranks[a]).then(a.cmp(&b)) };
    let mut idx: Vec<usize> = (0..ranks.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

pub(crate) fn check_rate(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("pruning rate {p} not in (0, 1]")))
    }
}

pub(crate) fn check_majority(malicious: usize, total: usize) -> Result<()> {
    if 2 * malicious >= total {
        Err(Error::MajorityViolation { malicious, total })
    } else {
        Ok(())
    }
}

/// Mask from precomputed group averages; [`generate_mask`] without the
/// averaging step.
pub fn mask_from_averages<T: Real>(
    avg_malicious: &ModelParams<T>,
    avg_benign: &ModelParams<T>,
    global_prev: &ModelParams<T>,
    p: f64,
    mode: RankMode,
) -> Result<UnlearnMask> {
    check_rate(p)?;
    avg_malicious.ensure_congruent(avg_benign)?;
    avg_malicious.ensure_congruent(global_prev)?;
    let mut layers = Vec::new();
    for li in global_prev.prunable_layers() {
        let (m, b, g) = (
            &avg_malicious.layers[li].weights,
            &avg_benign.layers[li].weights,
            &global_prev.layers[li].weights,
        );
        let ranks: Vec<f64> = m
            .iter()
            .zip(b)
            .zip(g)
            .map(|((&m, &b), &g)| {
                let d = m.to_f64().unwrap() - b.to_f64().unwrap();
                let g = g.to_f64().unwrap();
                let scale = match mode {
                    RankMode::Magnitude => g.abs(),
                    RankMode::Signed => g,
                };
                d * d * scale
            })
            .collect();
        let k = ceil_count(p, ranks.len());
        layers.push(LayerMask {
            layer_index: li,
            indices: select_top_k(&ranks, k),
        });
    }
    Ok(UnlearnMask { layers })
}

/// Builds the unlearning mask from one round of client models.
///
/// The malicious set must be a strict minority of the round's clients.
pub fn generate_mask(
    local_updates: &[ClientUpdate],
    malicious_ids: &BTreeSet<ClientId>,
    global_prev: &ModelParams,
    p: f64,
    mode: RankMode,
) -> Result<UnlearnMask> {
    check_rate(p)?;
    if malicious_ids.is_empty() {
        return Err(Error::Usage("no clients to unlearn".into()));
    }
    check_majority(malicious_ids.len(), local_updates.len())?;
    let benign: BTreeSet<ClientId> = local_updates
        .iter()
        .map(|u| u.client_id)
        .filter(|id| !malicious_ids.contains(id))
        .collect();
    let avg_malicious = avg_models(local_updates, malicious_ids)?;
    let avg_benign = avg_models(local_updates, &benign)?;
    mask_from_averages(&avg_malicious, &avg_benign, global_prev, p, mode)
}

/// Copy of `avg_benign` with masked weights set to `0.0`. Entries that
/// point at non-prunable layers are ignored; biases are never touched.
pub fn apply_mask<T: Real>(
    mask: &UnlearnMask,
    avg_benign: &ModelParams<T>,
) -> Result<ModelParams<T>> {
    let mut out = avg_benign.clone();
    for entry in &mask.layers {
        let layer = out.layers.get_mut(entry.layer_index).ok_or_else(|| {
            Error::Integrity(format!("mask names missing layer {}", entry.layer_index))
        })?;
        if !layer.kind.is_prunable() {
            continue;
        }
        let n = layer.weights.len();
        if let Some(bad) = entry.indices.iter().find(|&&i| i >= n) {
            return Err(Error::Integrity(format!(
                "mask index {bad} out of bounds for layer {} with {n} weights",
                entry.layer_index
            )));
        }
        for &i in &entry.indices {
            layer.weights[i] = T::zero();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerKind, LayerParams};

    fn one_layer(w: &[f32]) -> ModelParams {
        ModelParams::new(vec![LayerParams {
            kind: LayerKind::Dense,
            shape: vec![1, w.len()],
            weights: w.to_vec(),
            biases: vec![0.5],
        }])
        .unwrap()
    }

    const GLOBAL: [f32; 4] = [0.5, -2.0, 0.1, 1.0];
    const BENIGN: [f32; 4] = [0.6, -2.0, 0.1, 1.1];
    const MALICIOUS: [f32; 4] = [0.6, -1.0, 0.5, 1.1];

    fn worked_mask(p: f64) -> Vec<usize> {
        let m = mask_from_averages(
            &one_layer(&MALICIOUS),
            &one_layer(&BENIGN),
            &one_layer(&GLOBAL),
            p,
            RankMode::Magnitude,
        )
        .unwrap();
        m.layers[0].indices.clone()
    }

    #[test]
    fn worked_example() {
        // ranks [0, 2.0, 0.016, 0]
        assert_eq!(worked_mask(0.25), vec![1]);
        assert_eq!(worked_mask(0.5), vec![1, 2]);
    }

    #[test]
    fn signed_mode_demotes_negative_weights() {
        let m = mask_from_averages(
            &one_layer(&MALICIOUS),
            &one_layer(&BENIGN),
            &one_layer(&GLOBAL),
            0.25,
            RankMode::Signed,
        )
        .unwrap();
        assert_eq!(m.layers[0].indices, vec![2]);
    }

    #[test]
    fn equal_averages_pick_lowest_indices() {
        let same = one_layer(&BENIGN);
        let m = mask_from_averages(&same, &same, &one_layer(&GLOBAL), 0.5, RankMode::Magnitude)
            .unwrap();
        assert_eq!(m.layers[0].indices, vec![0, 1]);
    }

    #[test]
    fn rate_out_of_range() {
        let l = one_layer(&GLOBAL);
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                mask_from_averages(&l, &l, &l, p, RankMode::Magnitude),
                Err(Error::Usage(_))
            ));
        }
    }

    fn updates(n: usize) -> Vec<ClientUpdate> {
        (0..n)
            .map(|id| ClientUpdate {
                client_id: id,
                params: one_layer(&[id as f32, 1.0, 2.0, 3.0]),
                sample_count: 1,
            })
            .collect()
    }

    #[test]
    fn majority_is_refused() {
        let us = updates(4);
        let g = one_layer(&GLOBAL);
        assert!(matches!(
            generate_mask(&us, &BTreeSet::from([0, 1]), &g, 0.5, RankMode::Magnitude),
            Err(Error::MajorityViolation {
                malicious: 2,
                total: 4
            })
        ));
        assert!(generate_mask(
            &updates(5),
            &BTreeSet::from([0, 1]),
            &g,
            0.5,
            RankMode::Magnitude
        )
        .is_ok());
        assert!(matches!(
            generate_mask(&us, &BTreeSet::new(), &g, 0.5, RankMode::Magnitude),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn generate_mask_targets_the_diverging_weight() {
        let mut us = updates(5);
        for u in &mut us {
            u.params.layers[0].weights[0] = 0.0;
        }
        us[4].params.layers[0].weights[3] = 10.0;
        let g = one_layer(&[1.0, 1.0, 1.0, 1.0]);
        let m = generate_mask(&us, &BTreeSet::from([4]), &g, 0.25, RankMode::Magnitude).unwrap();
        assert_eq!(m.layers[0].indices, vec![3]);
    }

    #[test]
    fn apply_mask_zeroes_only_masked_weights() {
        let mask = UnlearnMask {
            layers: vec![LayerMask {
                layer_index: 0,
                indices: vec![1],
            }],
        };
        let out = apply_mask(&mask, &one_layer(&BENIGN)).unwrap();
        assert_eq!(out.layers[0].weights, vec![0.6, 0.0, 0.1, 1.1]);
        assert_eq!(out.layers[0].biases, vec![0.5]);
        let empty = apply_mask(&UnlearnMask::default(), &one_layer(&BENIGN)).unwrap();
        assert_eq!(empty, one_layer(&BENIGN));
    }

    #[test]
    fn apply_mask_bounds() {
        let mask = UnlearnMask {
            layers: vec![LayerMask {
                layer_index: 0,
                indices: vec![4],
            }],
        };
        assert!(matches!(
            apply_mask(&mask, &one_layer(&BENIGN)),
            Err(Error::Integrity(_))
        ));
        let mask = UnlearnMask {
            layers: vec![LayerMask {
                layer_index: 3,
                indices: vec![0],
            }],
        };
        assert!(matches!(
            apply_mask(&mask, &one_layer(&BENIGN)),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn other_layers_are_never_pruned() {
        let mut model = one_layer(&BENIGN);
        model.layers.insert(
            0,
            LayerParams {
                kind: LayerKind::Other,
                shape: vec![4],
                weights: vec![1.5, -2.5, 3.5, 4.5],
                biases: vec![0.1; 4],
            },
        );
        let mask = UnlearnMask {
            layers: vec![
                LayerMask {
                    layer_index: 0,
                    indices: vec![0, 1, 2, 3],
                },
                LayerMask {
                    layer_index: 1,
                    indices: vec![0],
                },
            ],
        };
        let out = apply_mask(&mask, &model).unwrap();
        assert_eq!(out.layers[0], model.layers[0]);
        assert_eq!(out.layers[1].weights[0], 0.0);
        let generated =
            mask_from_averages(&model, &model, &model, 1.0, RankMode::Magnitude).unwrap();
        assert_eq!(generated.layers.len(), 1);
        assert_eq!(generated.layers[0].layer_index, 1);
    }

    #[test]
    fn top_k_edge_cases() {
        assert_eq!(select_top_k(&[], 3), Vec::<usize>::new());
        assert_eq!(select_top_k(&[1.0, 2.0], 0), Vec::<usize>::new());
        assert_eq!(select_top_k(&[1.0, 2.0], 5), vec![0, 1]);
        assert_eq!(select_top_k(&[3.0, 1.0, 3.0, 2.0], 2), vec![0, 2]);
        assert_eq!(select_top_k(&[1.0, 1.0, 1.0, 5.0], 2), vec![0, 3]);
    }
}
