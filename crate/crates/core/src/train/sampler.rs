//! Pair samplers. Both return index pairs into the training split.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sampler {
    /// Disjoint pairing of a per-epoch permutation.
    #[serde(rename = "loader_1")]
    Coverage,
    /// Class-balanced pool with equal positive and negative pair counts.
    #[serde(rename = "loader_2")]
    Balanced,
}

/// Shuffles `0..n` with the epoch's seed and pairs consecutive entries,
/// giving `n / 2` pairs; with odd `n` one index sits out.
pub fn loader_1(n: usize, seed: u64, epoch: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(SerError::InvalidArgument(format!("loader_1 needs >= 2 ids, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[stream::LOADER, 1, epoch]));
    Ok(order.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// The balanced pool: each class downsampled (seeded) to the minority count.
/// Returned per class, indices into `labels`.
pub fn balanced_pool(labels: &[usize], n_classes: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class
            .get_mut(c)
            .ok_or_else(|| SerError::InvalidArgument(format!("label {c} out of {n_classes} classes")))?
            .push(i);
    }
    let min = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if min == 0 {
        return Err(SerError::InvalidArgument("loader_2 needs every class present".into()));
    }
    for members in by_class.iter_mut() {
        members.shuffle(rng);
        members.truncate(min);
        members.sort_unstable();
    }
    Ok(by_class)
}

/// Emits `n_pairs / 2` positive pairs (two distinct pool members of a
/// uniformly drawn class) and `n_pairs / 2` negative pairs (one member each
/// of two distinct uniformly drawn classes), shuffled together. `n_pairs`
/// defaults to the pool size.
pub fn loader_2(
    labels: &[usize],
    n_classes: usize,
    seed: u64,
    epoch: u64,
    n_pairs: Option<usize>,
) -> Result<Vec<(usize, usize)>> {
    if n_classes < 2 {
        return Err(SerError::InvalidArgument("loader_2 needs >= 2 classes".into()));
    }
    let mut rng = rng_for(seed, &[stream::LOADER, 2, epoch]);
    let pool = balanced_pool(labels, n_classes, &mut rng)?;
    let per_class = pool[0].len();
    let n_pairs = n_pairs.unwrap_or(per_class * n_classes);
    if n_pairs % 2 != 0 || n_pairs == 0 {
        return Err(SerError::InvalidArgument(format!("n_pairs must be even and positive, got {n_pairs}")));
    }
    if per_class < 2 {
        return Err(SerError::InvalidArgument(
            "a class has fewer than 2 members after balancing; no positive pairs possible".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs / 2 {
        let c = rng.random_range(0..n_classes);
        let a = rng.random_range(0..per_class);
        let mut b = rng.random_range(0..per_class - 1);
        if b >= a {
            b += 1;
        }
        pairs.push((pool[c][a], pool[c][b]));
    }
    for _ in 0..n_pairs / 2 {
        let c1 = rng.random_range(0..n_classes);
        let mut c2 = rng.random_range(0..n_classes - 1);
        if c2 >= c1 {
            c2 += 1;
        }
        let a = pool[c1][rng.random_range(0..per_class)];
        let b = pool[c2][rng.random_range(0..per_class)];
        pairs.push((a, b));
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}
