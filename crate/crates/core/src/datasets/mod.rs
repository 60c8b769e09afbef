//! Dataset ingestion and the train/test, validation and query/gallery splits.

mod manifest;
mod record;
mod scan;
mod split;

pub use manifest::{Manifest, ManifestEntry, Role};
pub use record::{Aspect, HandImageRecord, Identity, Side, Subset};
pub use scan::{identity_counts, scan_11k, scan_hd, split_distractors, DEFAULT_HD_LOW_QUALITY_DIRS};
pub use split::{
    combine_splits, make_query_gallery_split, make_query_gallery_splits, make_validation_split, partition_identities,
    partition_per_subset, IdentityPartition, QueryGallerySplit,
};
