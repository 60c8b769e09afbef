//! Identity partitioning and the single-shot query/gallery protocol.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use super::record::{HandImageRecord, Identity, Subset};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityPartition {
    pub train_ids: BTreeSet<Identity>,
    pub test_ids: BTreeSet<Identity>,
    pub seed: u64,
}

impl IdentityPartition {
    pub fn train_records(&self, records: &[HandImageRecord]) -> Vec<HandImageRecord> {
        records.iter().filter(|r| self.train_ids.contains(&r.identity)).cloned().collect()
    }

    pub fn test_records(&self, records: &[HandImageRecord]) -> Vec<HandImageRecord> {
        records.iter().filter(|r| self.test_ids.contains(&r.identity)).cloned().collect()
    }
}

fn group_by_identity(records: &[HandImageRecord]) -> BTreeMap<&Identity, Vec<&HandImageRecord>> {
    let mut groups: BTreeMap<&Identity, Vec<&HandImageRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.identity).or_default().push(r);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    }
    groups
}

/// Splits the identities in `records` uniformly at random into two halves.
/// With an odd count the training half gets the extra identity (143 gives
/// 72 train / 71 test).
pub fn partition_identities(records: &[HandImageRecord], seed: u64) -> Result<IdentityPartition> {
    let mut ids: Vec<Identity> = records
        .iter()
        .filter(|r| !r.has_accessories)
        .map(|r| r.identity.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(Error::TooFewIdentities(ids.len()));
    }
    let mut rng = rng_for(seed, &[stream::PARTITION]);
    ids.shuffle(&mut rng);
    let n_train = ids.len().div_ceil(2);
    let test_ids = ids.split_off(n_train).into_iter().collect();
    Ok(IdentityPartition { train_ids: ids.into_iter().collect(), test_ids, seed })
}

/// Partitions each subset independently (with a subset-specific derived seed)
/// and merges the halves, so combining the four 11k subsets keeps every
/// per-subset split identical to partitioning that subset alone.
pub fn partition_per_subset(records: &[HandImageRecord], seed: u64) -> Result<IdentityPartition> {
    let mut by_subset: BTreeMap<Subset, Vec<HandImageRecord>> = BTreeMap::new();
    for r in records {
        by_subset.entry(r.subset).or_default().push(r.clone());
    }
    let mut merged = IdentityPartition { train_ids: BTreeSet::new(), test_ids: BTreeSet::new(), seed };
    for (subset, subset_records) in by_subset {
        let part = partition_identities(&subset_records, derive_seed(seed, &[subset.tag()]))?;
        merged.train_ids.extend(part.train_ids);
        merged.test_ids.extend(part.test_ids);
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGallerySplit {
    /// One image per test identity, followed by `n_distractors` distractors.
    pub gallery: Vec<HandImageRecord>,
    pub queries: Vec<HandImageRecord>,
    pub n_distractors: usize,
    pub split_index: usize,
    pub seed: u64,
}

impl QueryGallerySplit {
    pub fn is_distractor(&self, gallery_index: usize) -> bool {
        gallery_index >= self.gallery.len() - self.n_distractors
    }

    pub fn distractor_mask(&self) -> Vec<bool> {
        (0..self.gallery.len()).map(|i| self.is_distractor(i)).collect()
    }
}

/// Builds Monte Carlo split `split_index`: one uniformly chosen gallery image
/// per test identity, the rest as queries, distractors appended to the
/// gallery only. Each split draws from its own derived seed.
pub fn make_query_gallery_split(
    test_records: &[HandImageRecord],
    distractors: &[HandImageRecord],
    split_index: usize,
    seed: u64,
) -> QueryGallerySplit {
    let mut rng = rng_for(seed, &[stream::QUERY_GALLERY, split_index as u64]);
    let mut gallery = Vec::new();
    let mut queries = Vec::new();
    for members in group_by_identity(test_records).into_values() {
        let pick = rng.random_range(0..members.len());
        for (i, r) in members.into_iter().enumerate() {
            if i == pick {
                gallery.push(r.clone());
            } else {
                queries.push(r.clone());
            }
        }
    }
    let mut distractors = distractors.to_vec();
    distractors.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    let n_distractors = distractors.len();
    gallery.extend(distractors);
    QueryGallerySplit { gallery, queries, n_distractors, split_index, seed }
}

pub fn make_query_gallery_splits(
    test_records: &[HandImageRecord],
    distractors: &[HandImageRecord],
    n_splits: usize,
    seed: u64,
) -> Vec<QueryGallerySplit> {
    (0..n_splits).map(|k| make_query_gallery_split(test_records, distractors, k, seed)).collect()
}

/// Merges the same Monte Carlo draw from several subsets into one split:
/// every subset's identity gallery, then every subset's distractors, with
/// all queries pooled. Identities are subset-scoped, so they cannot collide.
pub fn combine_splits(parts: &[QueryGallerySplit]) -> Result<QueryGallerySplit> {
    let first = parts.first().ok_or_else(|| Error::Config("no splits to combine".into()))?;
    if let Some(p) = parts.iter().find(|p| p.split_index != first.split_index) {
        return Err(Error::Config(format!("cannot combine split {} with split {}", first.split_index, p.split_index)));
    }
    let mut gallery = Vec::new();
    let mut distractors = Vec::new();
    let mut queries = Vec::new();
    for p in parts {
        let cut = p.gallery.len() - p.n_distractors;
        gallery.extend_from_slice(&p.gallery[..cut]);
        distractors.extend_from_slice(&p.gallery[cut..]);
        queries.extend_from_slice(&p.queries);
    }
    let n_distractors = distractors.len();
    gallery.extend(distractors);
    Ok(QueryGallerySplit { gallery, queries, n_distractors, split_index: first.split_index, seed: first.seed })
}

/// Holds out one random image per training identity for monitoring. The
/// held-out images are removed from the returned training pool.
pub fn make_validation_split(
    train_records: &[HandImageRecord],
    seed: u64,
) -> (Vec<HandImageRecord>, Vec<HandImageRecord>) {
    let mut rng = rng_for(seed, &[stream::VALIDATION]);
    let mut val = Vec::new();
    let mut rest = Vec::new();
    for (identity, members) in group_by_identity(train_records) {
        if members.len() == 1 {
            warn!("training identity {identity} has a single image; it goes to validation only");
        }
        let pick = rng.random_range(0..members.len());
        for (i, r) in members.into_iter().enumerate() {
            if i == pick {
                val.push(r.clone());
            } else {
                rest.push(r.clone());
            }
        }
    }
    (val, rest)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::datasets::record::{Aspect, Side};

    fn fixture(n_ids: usize, per_id: usize) -> Vec<HandImageRecord> {
        (0..n_ids)
            .flat_map(|i| {
                (0..per_id).map(move |k| {
                    HandImageRecord::eleven_k(
                        PathBuf::from(format!("img/{i:04}_{k}.jpg")),
                        &format!("{i:04}"),
                        Aspect::Dorsal,
                        Side::Right,
                        false,
                    )
                })
            })
            .collect()
    }

    #[test]
    fn odd_count_gives_train_the_extra_identity() {
        let p = partition_identities(&fixture(143, 1), 0).unwrap();
        assert_eq!((p.train_ids.len(), p.test_ids.len()), (72, 71));
        assert!(p.train_ids.is_disjoint(&p.test_ids));
    }

    #[test]
    fn two_identities_split_one_one() {
        let p = partition_identities(&fixture(2, 3), 5).unwrap();
        assert_eq!((p.train_ids.len(), p.test_ids.len()), (1, 1));
    }

    #[test]
    fn single_identity_is_rejected() {
        assert!(matches!(partition_identities(&fixture(1, 4), 0), Err(Error::TooFewIdentities(1))));
    }

    #[test]
    fn partition_is_seed_deterministic() {
        let records = fixture(40, 2);
        let base = partition_identities(&records, 11).unwrap();
        assert_eq!(base, partition_identities(&records, 11).unwrap());
        let differing =
            (0..20u64).filter(|s| partition_identities(&records, 100 + s).unwrap().train_ids != base.train_ids).count();
        assert_eq!(differing, 20);
    }

    #[test]
    fn partition_ignores_record_order() {
        let mut records = fixture(30, 3);
        let a = partition_identities(&records, 3).unwrap();
        records.reverse();
        assert_eq!(a, partition_identities(&records, 3).unwrap());
    }

    #[test]
    fn single_image_identity_yields_no_queries() {
        let mut records = fixture(3, 4);
        records.truncate(9);
        let split = make_query_gallery_split(&records, &[], 0, 1);
        assert_eq!(split.gallery.len(), 3);
        assert_eq!(split.queries.len(), 6);
        let lonely = &records[8].identity;
        assert!(split.queries.iter().all(|q| &q.identity != lonely));
        assert!(split.gallery.iter().any(|g| &g.identity == lonely));
    }

    #[test]
    fn distractors_only_enter_the_gallery() {
        let records = fixture(4, 3);
        let distractors: Vec<_> = (0..5)
            .map(|i| HandImageRecord::hd(PathBuf::from(format!("lq/{i}.jpg")), &format!("lq-{i}"), true))
            .collect();
        let split = make_query_gallery_split(&records, &distractors, 2, 9);
        assert_eq!(split.gallery.len(), 9);
        assert_eq!(split.n_distractors, 5);
        assert!(split.queries.iter().all(|q| !q.is_low_quality));
        assert!((4..9).all(|i| split.is_distractor(i)));
    }

    #[test]
    fn combined_split_keeps_distractors_last() {
        let distractors = [HandImageRecord::hd(PathBuf::from("lq/0.jpg"), "lq-0", true)];
        let a = make_query_gallery_split(&fixture(3, 3), &distractors, 1, 4);
        let b = make_query_gallery_split(&fixture(2, 2), &[], 1, 4);
        let c = combine_splits(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.gallery.len(), 6);
        assert_eq!(c.queries.len(), a.queries.len() + b.queries.len());
        assert_eq!(c.distractor_mask(), [false, false, false, false, false, true]);
        let other = make_query_gallery_split(&fixture(2, 2), &[], 2, 4);
        assert!(combine_splits(&[a, other]).is_err());
        assert!(combine_splits(&[]).is_err());
    }

    #[test]
    fn validation_takes_one_image_per_identity() {
        let (val, rest) = make_validation_split(&fixture(3, 4), 0);
        assert_eq!(val.len(), 3);
        assert_eq!(rest.len(), 9);
        let (val, rest) = make_validation_split(&fixture(72, 1), 0);
        assert_eq!(val.len(), 72);
        assert!(rest.is_empty());
    }
}
