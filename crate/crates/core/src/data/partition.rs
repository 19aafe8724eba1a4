use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
}

/// Disjoint, covering assignment of sample indices to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub client_count: usize,
    pub assignment: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

/// Splits `dataset` across `client_count` clients.
///
/// IID shuffles once and deals equal shares, the remainder going to the
/// lowest client ids. Dirichlet draws per-class client proportions from
/// `Dir(alpha)`; clients left empty are repaired by moving one sample at a
/// time from the largest client.
pub fn partition(
    dataset: &Dataset,
    scheme: PartitionScheme,
    client_count: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if client_count < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 clients, got {client_count}"
        )));
    }
    if client_count > dataset.len() {
        return Err(Error::Usage(format!(
            "{client_count} clients but only {} samples",
            dataset.len()
        )));
    }
    let mut rng = rng::from_seed(seed);
    let mut assignment = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            let base = idx.len() / client_count;
            let rem = idx.len() % client_count;
            let mut out = Vec::with_capacity(client_count);
            let mut start = 0;
            for c in 0..client_count {
                let take = base + usize::from(c < rem);
                out.push(idx[start..start + take].to_vec());
                start += take;
            }
            out
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Usage(format!(
                    "dirichlet alpha must be positive, got {alpha}"
                )));
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| Error::Usage(format!("bad dirichlet alpha {alpha}: {e}")))?;
            let mut out = vec![Vec::new(); client_count];
            for class in 0..dataset.num_classes {
                let mut idx: Vec<usize> = (0..dataset.len())
                    .filter(|&i| dataset.labels[i] == class)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                idx.shuffle(&mut rng);
                let mut draws: Vec<f64> =
                    (0..client_count).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                if total > 0.0 {
                    draws.iter_mut().for_each(|d| *d /= total);
                } else {
                    draws.fill(1.0 / client_count as f64);
                }
                let n = idx.len() as f64;
                let mut cum = 0.0;
                let mut start = 0;
                for (c, p) in draws.iter().enumerate() {
                    cum += p;
                    let end = if c + 1 == client_count {
                        idx.len()
                    } else {
                        ((cum * n).round() as usize).clamp(start, idx.len())
                    };
                    out[c].extend_from_slice(&idx[start..end]);
                    start = end;
                }
            }
            repair_empty(&mut out);
            out
        }
    };
    for a in &mut assignment {
        a.sort_unstable();
    }
    Ok(PartitionPlan {
        client_count,
        assignment,
        scheme,
        seed,
    })
}

fn repair_empty(clients: &mut [Vec<usize>]) {
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        // Largest client, lowest id on ties.
        let donor = (0..clients.len())
            .rev()
            .max_by_key(|&c| clients[c].len())
            .expect("at least one client");
        let sample = clients[donor].pop().expect("donor is nonempty");
        clients[empty].push(sample);
    }
}

impl PartitionPlan {
    pub fn client_dataset(&self, dataset: &Dataset, client: usize) -> Dataset {
        dataset.subset(&self.assignment[client])
    }

    /// Disjointness, coverage and non-emptiness.
    pub fn check(&self, sample_count: usize) -> Result<()> {
        let mut seen = vec![false; sample_count];
        for (c, a) in self.assignment.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Integrity(format!("client {c} is empty")));
            }
            for &i in a {
                if i >= sample_count || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Integrity(format!(
                        "sample {i} assigned twice or out of range"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Integrity("some samples are unassigned".into()));
        }
        Ok(())
    }
}
