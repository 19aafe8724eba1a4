use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::{rng, Error, Result};

/// Gaussian clusters: one mean per class drawn from `N(0, I)`, samples
/// drawn around it with standard deviation `cluster_spread`. Samples are
/// ordered class by class.
pub fn gen_synthetic(
    num_classes: usize,
    dim: usize,
    per_class_count: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    generate(num_classes, dim, per_class_count, cluster_spread, 0, seed)
}

/// The last `nuisance_dims` features have mean 0 in every class, so they
/// carry no class information.
fn generate(
    num_classes: usize,
    dim: usize,
    per_class_count: usize,
    cluster_spread: f64,
    nuisance_dims: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 2 || per_class_count < 1 {
        return Err(Error::Usage(format!(
            "synthetic task needs >= 2 classes, dim >= 2 and >= 1 sample per class \
             (got {num_classes}, {dim}, {per_class_count})"
        )));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::Usage(format!(
            "cluster spread must be positive, got {cluster_spread}"
        )));
    }
    if nuisance_dims >= dim {
        return Err(Error::Usage(format!(
            "{nuisance_dims} nuisance features leave no informative feature out of {dim}"
        )));
    }
    let mut rng = rng::from_seed(seed);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..dim)
                .map(|j| {
                    let m: f64 = StandardNormal.sample(&mut rng);
                    if j < dim - nuisance_dims {
                        m
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let n = num_classes * per_class_count;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class_count {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push((m + cluster_spread * z) as f32);
            }
            labels.push(class);
        }
    }
    Dataset::new(inputs, vec![dim], labels, num_classes)
}

/// Draws `train_per_class + test_per_class` samples per class from one
/// synthetic task and splits each class into a train and test part. The
/// last `nuisance_dims` features are class-independent noise.
pub fn synthetic_train_test(
    num_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    cluster_spread: f64,
    nuisance_dims: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let per = train_per_class + test_per_class;
    let all = generate(num_classes, dim, per, cluster_spread, nuisance_dims, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        train.extend(c * per..c * per + train_per_class);
        test.extend(c * per + train_per_class..(c + 1) * per);
    }
    Ok((all.subset(&train), all.subset(&test)))
}
