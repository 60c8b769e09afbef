#![allow(dead_code)]

use std::path::{Path, PathBuf};

use handid::config::{DatasetConfig, ExperimentConfig};
use handid::datasets::{combine_splits, partition_identities, HandImageRecord, Identity, QueryGallerySplit, Subset};
use handid::pipeline::{cmd_prepare, load_prepared, PrepareSummary, RunDir};

pub const IDENTITY_COUNTS: [(Subset, usize); 5] = [
    (Subset::DorsalRight, 143),
    (Subset::DorsalLeft, 146),
    (Subset::PalmarRight, 143),
    (Subset::PalmarLeft, 151),
    (Subset::Hd, 502),
];

/// Query counts per subset, in the order of [`IDENTITY_COUNTS`].
pub const QUERY_COUNTS: [usize; 5] = [971, 988, 917, 948, 1992];
pub const HD_LOW_QUALITY: usize = 213;
pub const SEED: u64 = 2024;
const TRAIN_IMAGES_PER_ID: usize = 2;
const TILE: u32 = 4;

pub fn experiment(subset: Subset, root: &Path, metadata: Option<PathBuf>, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!(
        "output_dir = {:?}\n[dataset]\nsubset = \"D-r\"\nroot = {:?}\n",
        out, root
    ))
    .unwrap();
    cfg.dataset =
        DatasetConfig { subset, root: root.to_path_buf(), metadata, low_quality_dirs: vec!["low_quality".into()] };
    cfg.seeds.partition = SEED;
    cfg.seeds.splits = SEED + 1;
    cfg
}

/// Image counts per identity such that the identities the partition will
/// put on the test side hold `queries` images beyond their one gallery
/// image each.
fn counts_for(ids: &[Identity], queries: usize) -> Vec<usize> {
    let records: Vec<HandImageRecord> = ids
        .iter()
        .map(|id| HandImageRecord {
            image_path: PathBuf::from(format!("{id}.png")),
            identity: id.clone(),
            subset: id.subset().unwrap(),
            aspect: id.subset().unwrap().aspect(),
            side: id.subset().unwrap().side(),
            has_accessories: false,
            is_low_quality: false,
        })
        .collect();
    let partition = partition_identities(&records, SEED).unwrap();
    let n_test = partition.test_ids.len();
    let base = queries / n_test;
    let mut extra = queries % n_test;
    ids.iter()
        .map(|id| {
            if partition.test_ids.contains(id) {
                let bonus = usize::from(extra > 0);
                extra = extra.saturating_sub(1);
                1 + base + bonus
            } else {
                TRAIN_IMAGES_PER_ID
            }
        })
        .collect()
}

pub struct Fixture {
    pub eleven_k_root: PathBuf,
    pub metadata: PathBuf,
    pub hd_root: PathBuf,
}

pub fn build(root: &Path) -> Fixture {
    let eleven_k_root = root.join("11k");
    let hd_root = root.join("hd");
    let mut subsets = Vec::new();
    let mut subject = 0usize;
    for (s, (subset, n)) in IDENTITY_COUNTS.iter().take(4).enumerate() {
        let ids: Vec<Identity> = (0..*n)
            .map(|_| {
                subject += 1;
                Identity::new(*subset, &format!("{subject:07}"))
            })
            .collect();
        subsets.push((*subset, counts_for(&ids, QUERY_COUNTS[s])));
    }
    let metadata = super::write_11k(&eleven_k_root, &subsets, TILE);
    let hd_ids: Vec<Identity> =
        (1..=IDENTITY_COUNTS[4].1).map(|i| Identity::new(Subset::Hd, &format!("{i:04}"))).collect();
    super::write_hd(&hd_root, &counts_for(&hd_ids, QUERY_COUNTS[4]), HD_LOW_QUALITY, TILE);
    Fixture { eleven_k_root, metadata, hd_root }
}

/// Runs prepare on every subset of the fixture.
pub fn prepare_all(fx: &Fixture, out: &Path) -> Vec<PrepareSummary> {
    IDENTITY_COUNTS
        .iter()
        .map(|(subset, _)| {
            let cfg = if *subset == Subset::Hd {
                experiment(*subset, &fx.hd_root, None, &out.join("HD"))
            } else {
                experiment(*subset, &fx.eleven_k_root, Some(fx.metadata.clone()), &out.join(subset.code()))
            };
            cmd_prepare(&cfg, false).unwrap()
        })
        .collect()
}

/// The four 11k subsets' splits from a [`prepare_all`] run, merged per split.
pub fn combined_11k(fx: &Fixture, out: &Path) -> Vec<QueryGallerySplit> {
    let prepared: Vec<_> = IDENTITY_COUNTS[..4]
        .iter()
        .map(|(subset, _)| {
            let cfg = experiment(*subset, &fx.eleven_k_root, Some(fx.metadata.clone()), &out.join(subset.code()));
            load_prepared(&cfg, &RunDir::open(&cfg, false).unwrap()).unwrap()
        })
        .collect();
    (0..prepared[0].splits.len())
        .map(|k| combine_splits(&prepared.iter().map(|p| p.splits[k].clone()).collect::<Vec<_>>()).unwrap())
        .collect()
}
