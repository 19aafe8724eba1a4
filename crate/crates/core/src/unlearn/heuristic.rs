use serde::{Deserialize, Serialize};

use crate::fl::ClientUpdate;
use crate::nn::last_layer_cosine_similarity;
use crate::{Error, Result};

/// Maps client similarity to a pruning rate: `P = (p_max - p_min) * z^gamma + p_min`
/// with `z` the similarity rescaled from `[sim_min, sim_max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningHeuristicConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub gamma: f64,
    pub sim_min: f64,
    pub sim_max: f64,
}

impl Default for PruningHeuristicConfig {
    fn default() -> Self {
        Self {
            p_min: 0.01,
            p_max: 0.15,
            gamma: 5.0,
            sim_min: 0.5,
            sim_max: 1.0,
        }
    }
}

impl PruningHeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min < self.p_max && self.p_max <= 1.0) {
            return Err(Error::Config(format!(
                "pruning bounds must satisfy 0 < p_min < p_max <= 1, got {} and {}",
                self.p_min, self.p_max
            )));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if !(self.sim_min < self.sim_max && self.sim_min.is_finite() && self.sim_max.is_finite()) {
            return Err(Error::Config(format!(
                "similarity range [{}, {}] is empty",
                self.sim_min, self.sim_max
            )));
        }
        Ok(())
    }

    /// `(z, P)` for a measured similarity.
    pub fn rate_for_similarity(&self, sim: f64) -> (f64, f64) {
        let z = normalize_similarity(sim, self);
        (z, pruning_rate(z, self))
    }
}

/// Affine rescale onto `[0, 1]`, clamped. NaN maps to 0.
pub fn normalize_similarity(sim: f64, cfg: &PruningHeuristicConfig) -> f64 {
    let z = (sim - cfg.sim_min) / (cfg.sim_max - cfg.sim_min);
    if z.is_nan() {
        0.0
    } else {
        z.clamp(0.0, 1.0)
    }
}

pub fn pruning_rate(z: f64, cfg: &PruningHeuristicConfig) -> f64 {
    let t = if z.is_nan() { 0.0 } else { z.clamp(0.0, 1.0) }.powf(cfg.gamma);
    // Interpolating keeps both endpoints exact.
    cfg.p_min * (1.0 - t) + cfg.p_max * t
}

/// Mean pairwise last-layer cosine similarity over all unordered pairs.
pub fn estimate_similarity(benign_updates: &[ClientUpdate]) -> Result<f64> {
    let n = benign_updates.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "similarity needs at least 2 benign updates, got {n}"
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum +=
                last_layer_cosine_similarity(&benign_updates[i].params, &benign_updates[j].params)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerKind, LayerParams, ModelParams};

    fn cfg() -> PruningHeuristicConfig {
        PruningHeuristicConfig::default()
    }

    #[test]
    fn normalisation_points() {
        assert_eq!(normalize_similarity(0.99, &cfg()), 0.98);
        assert_eq!(normalize_similarity(0.89, &cfg()), 0.78);
        assert_eq!(normalize_similarity(0.5, &cfg()), 0.0);
        assert_eq!(normalize_similarity(0.3, &cfg()), 0.0);
        assert_eq!(normalize_similarity(1.7, &cfg()), 1.0);
        assert_eq!(normalize_similarity(f64::NAN, &cfg()), 0.0);
    }

    #[test]
    fn rate_curve() {
        assert_eq!(pruning_rate(0.0, &cfg()), 0.01);
        assert_eq!(pruning_rate(1.0, &cfg()), 0.15);
        assert!((pruning_rate(0.78, &cfg()) - 0.05042044).abs() <= 1e-8);
        assert!((pruning_rate(0.98, &cfg()) - 0.13654891).abs() <= 1e-8);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let p = pruning_rate(i as f64 / 1000.0, &cfg());
            assert!(p >= prev && (0.01..=0.15).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        let bad = [
            PruningHeuristicConfig {
                p_min: 0.0,
                ..cfg()
            },
            PruningHeuristicConfig {
                p_max: 0.005,
                ..cfg()
            },
            PruningHeuristicConfig {
                p_max: 1.5,
                ..cfg()
            },
            PruningHeuristicConfig {
                gamma: 0.5,
                ..cfg()
            },
            PruningHeuristicConfig {
                sim_min: 1.0,
                ..cfg()
            },
        ];
        for b in bad {
            assert!(matches!(b.validate(), Err(Error::Config(_))), "{b:?}");
        }
    }

    fn head(w: &[f32]) -> ClientUpdate {
        ClientUpdate {
            client_id: 0,
            params: ModelParams::new(vec![LayerParams {
                kind: LayerKind::Dense,
                shape: vec![1, w.len()],
                weights: w.to_vec(),
                biases: vec![0.0],
            }])
            .unwrap(),
            sample_count: 1,
        }
    }

    #[test]
    fn similarity_estimates() {
        let same = [head(&[1.0, 2.0]), head(&[1.0, 2.0]), head(&[1.0, 2.0])];
        assert!((estimate_similarity(&same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            estimate_similarity(&[head(&[1.0, 0.0]), head(&[0.0, 1.0])]).unwrap(),
            0.0
        );
        let three = [head(&[1.0, 0.0]), head(&[0.0, 1.0]), head(&[1.0, 1.0])];
        let expected = (0.0 + 2f64.sqrt() / 2.0 + 2f64.sqrt() / 2.0) / 3.0;
        assert!((estimate_similarity(&three).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            estimate_similarity(&same[..1]),
            Err(Error::Usage(_))
        ));
    }
}
