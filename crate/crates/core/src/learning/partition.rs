use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::LearningError;
use crate::sim::sampling::power_law_sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Partition {
    Iid,
    /// Each peer holds samples of `classes_per_peer` randomly chosen classes.
    LabelSkew {
        classes_per_peer: usize,
    },
    /// Shard sizes proportional to power-law draws with exponent `a`.
    SizeSkew {
        a: f64,
    },
}

impl Default for Partition {
    fn default() -> Self {
        Self::Iid
    }
}

pub fn partition_data<R: Rng + ?Sized>(
    data: &Dataset,
    num_peers: usize,
    mode: Partition,
    rng: &mut R,
) -> Result<Vec<Dataset>, LearningError> {
    if num_peers == 0 {
        return Err(LearningError::Partition("need at least one peer".into()));
    }
    let n = data.len();
    match mode {
        Partition::Iid => {
            if n < num_peers {
                return Err(LearningError::Partition(format!(
                    "{n} samples for {num_peers} peers"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let base = n / num_peers;
            let extra = n % num_peers;
            let mut start = 0;
            Ok((0..num_peers)
                .map(|p| {
                    let len = base + (p < extra) as usize;
                    let shard = data.subset(&idx[start..start + len]);
                    start += len;
                    shard
                })
                .collect())
        }
        Partition::LabelSkew {
            classes_per_peer: c,
        } => {
            let k = data.num_classes();
            if c == 0 || c > k {
                return Err(LearningError::Partition(format!(
                    "{c} classes per peer out of {k}"
                )));
            }
            let chosen: Vec<Vec<usize>> = (0..num_peers)
                .map(|_| index::sample(rng, k, c).into_vec())
                .collect();
            let mut holders: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (p, classes) in chosen.iter().enumerate() {
                for &class in classes {
                    holders[class].push(p);
                }
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for i in 0..n {
                by_class[data.y(i)].push(i);
            }
            let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_peers];
            for (class, mut samples) in by_class.into_iter().enumerate() {
                let owners = &holders[class];
                if owners.is_empty() {
                    continue;
                }
                samples.shuffle(rng);
                for (j, i) in samples.into_iter().enumerate() {
                    assigned[owners[j % owners.len()]].push(i);
                }
            }
            Ok(assigned
                .into_iter()
                .map(|mut idx| {
                    idx.shuffle(rng);
                    data.subset(&idx)
                })
                .collect())
        }
        Partition::SizeSkew { a } => {
            let w = (0..num_peers)
                .map(|_| power_law_sample(rng, a))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| LearningError::Partition(e.to_string()))?;
            let total: f64 = w.iter().sum();
            let exact: Vec<f64> = w.iter().map(|x| x / total * n as f64).collect();
            let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            // Largest remainders get the leftover samples.
            let mut order: Vec<usize> = (0..num_peers).collect();
            order.sort_by(|&a, &b| {
                (exact[b] - sizes[b] as f64).total_cmp(&(exact[a] - sizes[a] as f64))
            });
            let leftover = n - sizes.iter().sum::<usize>();
            for &p in order.iter().take(leftover) {
                sizes[p] += 1;
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let mut start = 0;
            Ok(sizes
                .into_iter()
                .map(|len| {
                    let shard = data.subset(&idx[start..start + len]);
                    start += len;
                    shard
                })
                .collect())
        }
    }
}
