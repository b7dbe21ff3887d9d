//! Nested N-way-K-shot support sets drawn from the training split.
//!
//! Each tag gets its own shuffled list of positive training clips, seeded by
//! [`stream_seed`]`(seed, tag)`. With deduplication on, a tag's list drops the
//! clips reserved by earlier tags in the order, where a tag reserves the first
//! `horizon` entries of its own list. Lists never depend on `n_way` or
//! `k_shot`, so a support set at (N, K) is contained in the one at (N', K')
//! whenever N ≤ N' and K ≤ K' ≤ horizon.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitAssignment, TagMatrix};
use crate::error::{Error, Result};

/// Stream id used for the seeded tag shuffle; tag streams use the tag index.
const ORDER_STREAM: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed for `stream` from a root seed.
pub fn stream_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ splitmix64(stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    #[default]
    FrequencyDescending,
    ManifestOrder,
    SeededShuffle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagOrder {
    pub order: Vec<usize>,
    pub policy: OrderPolicy,
}

pub fn order_tags(tags: &TagMatrix, split: &SplitAssignment, policy: OrderPolicy, seed: u64) -> TagOrder {
    let mut order: Vec<usize> = (0..tags.num_tags()).collect();
    match policy {
        OrderPolicy::ManifestOrder => {}
        OrderPolicy::FrequencyDescending => {
            let counts = tags.positive_counts(&split.train);
            order.sort_by_key(|&t| (std::cmp::Reverse(counts[t]), t));
        }
        OrderPolicy::SeededShuffle => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, ORDER_STREAM));
            order.shuffle(&mut rng);
        }
    }
    TagOrder { order, policy }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Skip clips already reserved by earlier tags.
    pub dedup: bool,
    /// Number of list entries each tag reserves; nesting holds for K up to this.
    pub horizon: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            dedup: true,
            horizon: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
    pub policy: OrderPolicy,
    pub options: SamplingOptions,
    pub tag_indices: Vec<usize>,
    /// Selected train rows per tag, aligned with `tag_indices`.
    pub per_tag: Vec<Vec<usize>>,
    /// Sorted, deduplicated union of `per_tag`.
    pub rows: Vec<usize>,
    pub shortfalls: Vec<usize>,
}

impl SupportSet {
    pub fn selected_counts(&self) -> Vec<usize> {
        self.per_tag.iter().map(Vec::len).collect()
    }

    /// Short hex digest of the JSON serialization, for provenance columns.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("support set serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

pub fn sample_support(
    tags: &TagMatrix,
    split: &SplitAssignment,
    order: &TagOrder,
    n_way: usize,
    k_shot: usize,
    seed: u64,
    options: SamplingOptions,
) -> Result<SupportSet> {
    if n_way == 0 || n_way > tags.num_tags() || n_way > order.order.len() {
        return Err(Error::Argument(format!(
            "n_way {n_way} must be in 1..={}",
            tags.num_tags()
        )));
    }
    if k_shot == 0 {
        return Err(Error::Argument("k_shot must be at least 1".into()));
    }
    if options.dedup && k_shot > options.horizon {
        return Err(Error::Argument(format!(
            "k_shot {k_shot} exceeds the reservation horizon {}",
            options.horizon
        )));
    }
    let mut train: Vec<usize> = split.train.clone();
    train.sort_unstable();

    let mut reserved = vec![false; tags.num_clips()];
    let tag_indices = order.order[..n_way].to_vec();
    let mut per_tag = Vec::with_capacity(n_way);
    let mut shortfalls = Vec::with_capacity(n_way);
    for &t in &tag_indices {
        let mut positives: Vec<usize> = train.iter().copied().filter(|&r| tags.is_positive(r, t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, t as u64));
        positives.shuffle(&mut rng);
        if options.dedup {
            positives.retain(|&r| !reserved[r]);
            for &r in positives.iter().take(options.horizon) {
                reserved[r] = true;
            }
        }
        let take = k_shot.min(positives.len());
        if take < k_shot {
            log::warn!(
                "tag {t}: only {take} of {k_shot} requested support clips available"
            );
        }
        shortfalls.push(k_shot - take);
        positives.truncate(take);
        per_tag.push(positives);
    }
    let rows: BTreeSet<usize> = per_tag.iter().flatten().copied().collect();
    Ok(SupportSet {
        n_way,
        k_shot,
        seed,
        policy: order.policy,
        options,
        tag_indices,
        per_tag,
        rows: rows.into_iter().collect(),
        shortfalls,
    })
}

/// Support rows and their labels restricted to the support's tags.
pub fn support_labels(tags: &TagMatrix, support: &SupportSet) -> Result<(Vec<usize>, Array2<f64>)> {
    if support.rows.is_empty() {
        return Err(Error::Validation(
            "support set has no rows; every tag should have a positive training clip".into(),
        ));
    }
    Ok((
        support.rows.clone(),
        tags.submatrix(&support.rows, &support.tag_indices),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> (TagMatrix, SplitAssignment) {
        // train rows 0..7, valid 7, test 8
        let labels = array![
            [1, 1, 0],
            [1, 1, 0],
            [1, 1, 1],
            [1, 1, 1],
            [1, 1, 0],
            [0, 1, 1],
            [0, 1, 0],
            [1, 0, 1],
            [0, 1, 1],
        ];
        let ids = (0..9).map(|i| format!("c{i}")).collect();
        let names = vec!["a".into(), "b".into(), "c".into()];
        (
            TagMatrix::new(ids, names, labels).unwrap(),
            SplitAssignment::new((0..7).collect(), vec![7], vec![8]),
        )
    }

    #[test]
    fn frequency_order() {
        let (tags, split) = toy();
        // train positive counts: a=5, b=7, c=3
        let o = order_tags(&tags, &split, OrderPolicy::FrequencyDescending, 0);
        assert_eq!(o.order, vec![1, 0, 2]);
        let o = order_tags(&tags, &split, OrderPolicy::ManifestOrder, 0);
        assert_eq!(o.order, vec![0, 1, 2]);
        let a = order_tags(&tags, &split, OrderPolicy::SeededShuffle, 9);
        let b = order_tags(&tags, &split, OrderPolicy::SeededShuffle, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn frequency_ties_break_by_index() {
        let labels = array![[1, 1, 1], [1, 0, 1], [0, 1, 1]];
        let ids = (0..3).map(|i| format!("c{i}")).collect();
        let tags = TagMatrix::new(ids, vec!["x".into(), "y".into(), "z".into()], labels).unwrap();
        let split = SplitAssignment::new(vec![0, 1, 2], vec![], vec![]);
        let o = order_tags(&tags, &split, OrderPolicy::FrequencyDescending, 0);
        assert_eq!(o.order, vec![2, 0, 1]);
    }

    #[test]
    fn shortfall_reported() {
        let (tags, split) = toy();
        let order = order_tags(&tags, &split, OrderPolicy::ManifestOrder, 0);
        let opts = SamplingOptions { dedup: false, horizon: 20 };
        let s = sample_support(&tags, &split, &order, 3, 10, 1, opts).unwrap();
        assert_eq!(s.selected_counts(), vec![5, 7, 3]);
        assert_eq!(s.shortfalls, vec![5, 3, 7]);
    }

    #[test]
    fn dedup_keeps_rows_distinct() {
        let (tags, split) = toy();
        let order = order_tags(&tags, &split, OrderPolicy::ManifestOrder, 0);
        let s = sample_support(&tags, &split, &order, 3, 2, 5, SamplingOptions::default()).unwrap();
        let total: usize = s.per_tag.iter().map(Vec::len).sum();
        assert_eq!(total, s.rows.len());
        for (t, rows) in s.tag_indices.iter().zip(&s.per_tag) {
            assert!(rows.iter().all(|&r| tags.is_positive(r, *t) && r < 7));
        }
    }

    #[test]
    fn errors() {
        let (tags, split) = toy();
        let order = order_tags(&tags, &split, OrderPolicy::ManifestOrder, 0);
        let opts = SamplingOptions::default();
        assert!(sample_support(&tags, &split, &order, 4, 1, 0, opts).is_err());
        assert!(sample_support(&tags, &split, &order, 0, 1, 0, opts).is_err());
        assert!(sample_support(&tags, &split, &order, 2, 0, 0, opts).is_err());
        assert!(sample_support(&tags, &split, &order, 2, 21, 0, opts).is_err());
    }

    #[test]
    fn labels_keep_multi_hot() {
        let (tags, split) = toy();
        let order = order_tags(&tags, &split, OrderPolicy::ManifestOrder, 0);
        let s = sample_support(&tags, &split, &order, 2, 7, 3, SamplingOptions { dedup: false, horizon: 20 }).unwrap();
        let (rows, y) = support_labels(&tags, &s).unwrap();
        assert_eq!(y.ncols(), 2);
        let pos = rows.iter().position(|&r| r == 0).unwrap();
        assert_eq!(y.row(pos).to_vec(), vec![1.0, 1.0]);

        let mut empty = s.clone();
        empty.rows.clear();
        assert!(support_labels(&tags, &empty).is_err());
    }

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(stream_seed(1, 0), stream_seed(1, 1));
        assert_ne!(stream_seed(1, 0), stream_seed(2, 0));
        assert_eq!(stream_seed(7, 3), stream_seed(7, 3));
    }
}
