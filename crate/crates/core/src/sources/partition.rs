//! Label-sorted shard partitioning for non-i.i.d. clients.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Dealing {
    /// Shards shuffled, then handed out `S` at a time.
    #[default]
    Random,
    /// Client `i` gets shards `i, i + n, i + 2n, ...`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub shards_per_client: usize,
    pub samples_per_client: usize,
    /// Indices dropped to make the shard count divide the data.
    pub dropped: Vec<usize>,
}

impl PartitionPlan {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn distinct_labels(&self, labels: &[u16], client: usize) -> usize {
        let mut seen: Vec<u16> = self.assignments[client].iter().map(|&i| labels[i]).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

fn sorted_by_label(labels: &[u16]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by_key(|&i| (labels[i], i));
    idx
}

fn check_args(labels: &[u16], n: usize, s: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Partition("no labels to partition".into()));
    }
    if n == 0 || s == 0 {
        return Err(Error::Partition("clients and shards per client must be positive".into()));
    }
    if n * s > labels.len() {
        return Err(Error::Partition(format!(
            "{} shards requested for {} samples",
            n * s,
            labels.len()
        )));
    }
    Ok(())
}

fn deal(sorted: Vec<usize>, dropped: Vec<usize>, n: usize, s: usize, seed: u64, dealing: Dealing) -> PartitionPlan {
    let shard_len = sorted.len() / (n * s);
    let shards: Vec<&[usize]> = sorted.chunks(shard_len).collect();
    let mut order: Vec<usize> = (0..n * s).collect();
    let owner = |k: usize| match dealing {
        Dealing::Random => k / s,
        Dealing::RoundRobin => k % n,
    };
    if dealing == Dealing::Random {
        order.shuffle(&mut rng_for(seed, Stream::Partition, &[]));
    }
    let mut assignments = vec![Vec::with_capacity(shard_len * s); n];
    for (k, &shard) in order.iter().enumerate() {
        assignments[owner(k)].extend_from_slice(shards[shard]);
    }
    PartitionPlan {
        assignments,
        shards_per_client: s,
        samples_per_client: shard_len * s,
        dropped,
    }
}

/// Sorts indices by label, cuts them into `n·S` equal contiguous shards and
/// deals `S` to each client. Errors when `n·S` does not divide the data.
pub fn partition_non_iid(labels: &[u16], n: usize, s: usize, seed: u64, dealing: Dealing) -> Result<PartitionPlan> {
    check_args(labels, n, s)?;
    if !labels.len().is_multiple_of(n * s) {
        return Err(Error::Partition(format!(
            "{} samples do not split into {} equal shards; trim {} samples",
            labels.len(),
            n * s,
            labels.len() % (n * s)
        )));
    }
    Ok(deal(sorted_by_label(labels), Vec::new(), n, s, seed, dealing))
}

/// As [`partition_non_iid`], dropping the remainder from the end of the
/// label-sorted order first.
pub fn partition_non_iid_trimmed(
    labels: &[u16],
    n: usize,
    s: usize,
    seed: u64,
    dealing: Dealing,
) -> Result<PartitionPlan> {
    check_args(labels, n, s)?;
    let mut sorted = sorted_by_label(labels);
    let keep = sorted.len() - sorted.len() % (n * s);
    let dropped = sorted.split_off(keep);
    Ok(deal(sorted, dropped, n, s, seed, dealing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indivisible_is_an_error_unless_trimmed() {
        let labels: Vec<u16> = (0..103).map(|i| (i % 10) as u16).collect();
        assert!(matches!(
            partition_non_iid(&labels, 10, 2, 0, Dealing::Random),
            Err(Error::Partition(_))
        ));
        let plan = partition_non_iid_trimmed(&labels, 10, 2, 0, Dealing::Random).unwrap();
        assert_eq!(plan.dropped.len(), 3);
        assert_eq!(plan.samples_per_client, 10);
    }

    #[test]
    fn trimmed_samples_come_from_sorted_tail() {
        let labels: Vec<u16> = vec![2, 0, 1, 2, 0, 1, 2];
        let plan = partition_non_iid_trimmed(&labels, 3, 2, 0, Dealing::Random).unwrap();
        assert_eq!(plan.dropped, vec![6]);
    }
}
