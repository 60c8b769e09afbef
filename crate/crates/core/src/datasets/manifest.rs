//! Line-oriented split manifests: a small header followed by one
//! `path<TAB>identity<TAB>role` line per image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::record::{HandImageRecord, Identity, Subset};
use super::split::QueryGallerySplit;
use crate::error::{Error, Result};

const MAGIC: &str = "# handid-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
    Distractor,
    Gallery,
    Query,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
            Role::Distractor => "distractor",
            Role::Gallery => "gallery",
            Role::Query => "query",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Role::Train,
            "val" => Role::Val,
            "test" => Role::Test,
            "distractor" => Role::Distractor,
            "gallery" => Role::Gallery,
            "query" => Role::Query,
            other => return Err(Error::Serialization(format!("unknown manifest role {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub identity: Identity,
    pub role: Role,
}

impl ManifestEntry {
    pub fn to_record(&self) -> Result<HandImageRecord> {
        let subset = self
            .identity
            .subset()
            .ok_or_else(|| Error::Serialization(format!("identity {} has no subset prefix", self.identity)))?;
        Ok(HandImageRecord {
            image_path: self.path.clone(),
            identity: self.identity.clone(),
            subset,
            aspect: subset.aspect(),
            side: subset.side(),
            has_accessories: false,
            is_low_quality: self.role == Role::Distractor && subset == Subset::Hd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub config_hash: String,
    /// `partition`, or `split <index> <seed>`.
    pub kind: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn partition(
        config_hash: &str,
        train: &[HandImageRecord],
        val: &[HandImageRecord],
        test: &[HandImageRecord],
        distractors: &[HandImageRecord],
    ) -> Self {
        let mut entries = Vec::new();
        for (records, role) in
            [(train, Role::Train), (val, Role::Val), (test, Role::Test), (distractors, Role::Distractor)]
        {
            entries.extend(records.iter().map(|r| ManifestEntry {
                path: r.image_path.clone(),
                identity: r.identity.clone(),
                role,
            }));
        }
        Manifest { config_hash: config_hash.to_string(), kind: "partition".into(), entries }
    }

    pub fn split(config_hash: &str, split: &QueryGallerySplit) -> Self {
        let mut entries: Vec<ManifestEntry> = split
            .gallery
            .iter()
            .enumerate()
            .map(|(i, r)| ManifestEntry {
                path: r.image_path.clone(),
                identity: r.identity.clone(),
                role: if split.is_distractor(i) { Role::Distractor } else { Role::Gallery },
            })
            .collect();
        entries.extend(split.queries.iter().map(|r| ManifestEntry {
            path: r.image_path.clone(),
            identity: r.identity.clone(),
            role: Role::Query,
        }));
        Manifest {
            config_hash: config_hash.to_string(),
            kind: format!("split {} {}", split.split_index, split.seed),
            entries,
        }
    }

    pub fn records(&self, role: Role) -> Result<Vec<HandImageRecord>> {
        self.entries.iter().filter(|e| e.role == role).map(ManifestEntry::to_record).collect()
    }

    pub fn to_split(&self) -> Result<QueryGallerySplit> {
        let bad = || Error::Serialization(format!("not a split manifest: {:?}", self.kind));
        let mut parts = self.kind.split_whitespace();
        if parts.next() != Some("split") {
            return Err(bad());
        }
        let split_index = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let seed = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let mut gallery = self.records(Role::Gallery)?;
        let distractors = self.records(Role::Distractor)?;
        let n_distractors = distractors.len();
        gallery.extend(distractors);
        Ok(QueryGallerySplit { gallery, queries: self.records(Role::Query)?, n_distractors, split_index, seed })
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "# config-hash {}", self.config_hash).unwrap();
        writeln!(out, "# kind {}", self.kind).unwrap();
        for e in &self.entries {
            let path =
                e.path.to_str().ok_or_else(|| Error::Serialization(format!("non-UTF-8 path {}", e.path.display())))?;
            if path.contains(['\t', '\n']) || e.identity.as_str().contains(['\t', '\n']) {
                return Err(Error::Serialization(format!("tab or newline in manifest field: {path}")));
            }
            writeln!(out, "{path}\t{}\t{}", e.identity, e.role.as_str()).unwrap();
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Serialization("missing manifest header".into()));
        }
        let header = |line: Option<&str>, key: &str| {
            line.and_then(|l| l.strip_prefix(&format!("# {key} ")))
                .map(str::to_string)
                .ok_or_else(|| Error::Serialization(format!("missing manifest {key} line")))
        };
        let config_hash = header(lines.next(), "config-hash")?;
        let kind = header(lines.next(), "kind")?;
        let entries = lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(Error::Serialization(format!("manifest line {}: expected 3 fields", i + 4)));
                }
                Ok(ManifestEntry {
                    path: PathBuf::from(fields[0]),
                    identity: Identity(fields[1].to_string()),
                    role: fields[2].parse()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest { config_hash, kind, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::split::make_query_gallery_split;

    #[test]
    fn split_manifest_reconstructs_the_split() {
        let test: Vec<_> = (0..6)
            .map(|i| HandImageRecord::hd(PathBuf::from(format!("hd/{}/{i}.jpg", i % 3)), &format!("{}", i % 3), false))
            .collect();
        let distractors = vec![HandImageRecord::hd(PathBuf::from("hd/low_quality/z.jpg"), "lq-z", true)];
        let split = make_query_gallery_split(&test, &distractors, 4, 77);
        let manifest = Manifest::parse(&Manifest::split("abc", &split).render().unwrap()).unwrap();
        assert_eq!(manifest.config_hash, "abc");
        assert_eq!(manifest.to_split().unwrap(), split);
    }

    #[test]
    fn tabs_in_paths_are_rejected() {
        let r = HandImageRecord::hd(PathBuf::from("a\tb.jpg"), "1", false);
        assert!(Manifest::partition("h", &[r], &[], &[], &[]).render().is_err());
    }
}
