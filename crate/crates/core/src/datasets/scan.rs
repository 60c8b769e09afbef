//! Dataset ingestion for the 11k Hands and HD collections.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::record::{Aspect, HandImageRecord, Side, Subset};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "bmp", "tif", "tiff"];

/// Directory names under an HD root that hold the low-quality samples used as
/// gallery distractors.
pub const DEFAULT_HD_LOW_QUALITY_DIRS: &[&str] = &["low_quality"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or_default();
    if header.contains('\t') {
        b'\t'
    } else if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().to_ascii_lowercase();
        names.iter().any(|n| *n == h)
    })
}

fn parse_flag(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

fn parse_aspect_side(aspect: &str, side: Option<&str>) -> Option<(Aspect, Side)> {
    let mut words: Vec<String> = aspect.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if let Some(side) = side {
        words.push(side.trim().to_ascii_lowercase());
    }
    let mut parsed_aspect = None;
    let mut parsed_side = None;
    for w in &words {
        match w.as_str() {
            "dorsal" => parsed_aspect = Some(Aspect::Dorsal),
            "palmar" => parsed_aspect = Some(Aspect::Palmar),
            "left" => parsed_side = Some(Side::Left),
            "right" => parsed_side = Some(Side::Right),
            _ => return None,
        }
    }
    Some((parsed_aspect?, parsed_side?))
}

/// Reads the 11k Hands metadata sheet and returns every accessory-free image
/// as a record, sorted by path.
///
/// The sheet is delimited text with a header row. Columns are located by
/// name: the published sheet's `imageName`, `id`, `aspectOfHand` and
/// `accessories` work, as do `filename`, `subject`, `aspect`, `side`,
/// `accessories`. Image paths are resolved relative to `root`.
pub fn scan_11k(root: &Path, metadata: &Path) -> Result<Vec<HandImageRecord>> {
    require_exists(root)?;
    require_exists(metadata)?;
    let text = fs::read_to_string(metadata).map_err(|e| Error::io(metadata, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(|e| Error::Metadata { row: 1, message: e.to_string() })?.clone();
    let missing = |what: &str| Error::Metadata { row: 1, message: format!("header has no {what} column") };
    let file_col =
        find_column(&headers, &["filename", "imagename", "image", "file"]).ok_or_else(|| missing("filename"))?;
    let subject_col =
        find_column(&headers, &["subject", "id", "subject_id", "identity"]).ok_or_else(|| missing("subject"))?;
    let aspect_col = find_column(&headers, &["aspect", "aspectofhand"]).ok_or_else(|| missing("aspect"))?;
    let side_col = find_column(&headers, &["side"]);
    let accessory_col = find_column(&headers, &["accessories", "accessory", "has_accessories"])
        .ok_or_else(|| missing("accessories"))?;

    let mut records = Vec::new();
    let mut excluded = 0usize;
    for (i, row) in reader.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let row = row.map_err(|e| Error::Metadata { row: line, message: e.to_string() })?;
        let field = |col: usize, name: &str| {
            row.get(col)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Metadata { row: line, message: format!("missing {name}") })
        };
        let filename = field(file_col, "filename")?;
        let subject = field(subject_col, "subject")?;
        let aspect_text = field(aspect_col, "aspect")?;
        let side_text = match side_col {
            Some(c) => Some(field(c, "side")?),
            None => None,
        };
        let (aspect, side) = parse_aspect_side(aspect_text, side_text).ok_or_else(|| Error::Metadata {
            row: line,
            message: format!("cannot parse aspect/side from {aspect_text:?} {side_text:?}"),
        })?;
        let accessory_text = row.get(accessory_col).unwrap_or_default();
        let has_accessories = parse_flag(accessory_text).ok_or_else(|| Error::Metadata {
            row: line,
            message: format!("bad accessories flag {accessory_text:?}"),
        })?;
        if has_accessories {
            excluded += 1;
            continue;
        }
        let path = root.join(filename);
        if !path.is_file() {
            return Err(Error::Metadata { row: line, message: format!("image file not found: {}", path.display()) });
        }
        records.push(HandImageRecord::eleven_k(path, subject, aspect, side, false));
    }

    if records.is_empty() {
        return Err(Error::NoRecords(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    for (subset, n) in identity_counts(&records) {
        info!("11k {subset}: {n} identities");
    }
    info!("11k: {} records, {excluded} excluded for accessories", records.len());
    Ok(records)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Scans an HD root laid out as one directory per identity. Images inside a
/// directory named in `low_quality_dirs` are flagged low-quality; each becomes
/// its own identity so it can only ever act as a distractor.
pub fn scan_hd(root: &Path, low_quality_dirs: &[&str]) -> Result<Vec<HandImageRecord>> {
    require_exists(root)?;
    let mut records = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            if is_image(&dir) {
                warn!("ignoring image outside an identity directory: {}", dir.display());
            }
            continue;
        }
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("non-UTF-8 directory name {}", dir.display())))?
            .to_string();
        let low_quality = low_quality_dirs.contains(&name.as_str());
        for file in sorted_entries(&dir)? {
            if !file.is_file() || !is_image(&file) {
                continue;
            }
            if low_quality {
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("unnamed");
                records.push(HandImageRecord::hd(file.clone(), &format!("lq-{stem}"), true));
            } else {
                records.push(HandImageRecord::hd(file, &name, false));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NoRecords(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    let n_low = records.iter().filter(|r| r.is_low_quality).count();
    let n_ids = records.iter().filter(|r| !r.is_low_quality).map(|r| &r.identity).collect::<BTreeSet<_>>().len();
    if n_low == 0 {
        warn!("HD root {} has no low-quality samples; gallery will have no distractors", root.display());
    }
    info!("HD: {n_ids} identities, {} records, {n_low} low-quality", records.len());
    Ok(records)
}

/// Number of distinct identities per subset, ignoring low-quality records.
pub fn identity_counts(records: &[HandImageRecord]) -> BTreeMap<Subset, usize> {
    let mut ids: BTreeMap<Subset, BTreeSet<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_low_quality) {
        ids.entry(r.subset).or_default().insert(r.identity.as_str());
    }
    ids.into_iter().map(|(s, set)| (s, set.len())).collect()
}

/// Separates low-quality distractors from identity-bearing records.
pub fn split_distractors(records: Vec<HandImageRecord>) -> (Vec<HandImageRecord>, Vec<HandImageRecord>) {
    records.into_iter().partition(|r| !r.is_low_quality)
}
