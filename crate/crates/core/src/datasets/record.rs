use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Dorsal,
    Palmar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// The evaluation subsets: four 11k subsets split by aspect and side, plus HD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "D-r")]
    DorsalRight,
    #[serde(rename = "D-l")]
    DorsalLeft,
    #[serde(rename = "P-r")]
    PalmarRight,
    #[serde(rename = "P-l")]
    PalmarLeft,
    #[serde(rename = "HD")]
    Hd,
}

impl Subset {
    pub const ELEVEN_K: [Subset; 4] =
        [Subset::DorsalRight, Subset::DorsalLeft, Subset::PalmarRight, Subset::PalmarLeft];

    pub fn code(self) -> &'static str {
        match self {
            Subset::DorsalRight => "D-r",
            Subset::DorsalLeft => "D-l",
            Subset::PalmarRight => "P-r",
            Subset::PalmarLeft => "P-l",
            Subset::Hd => "HD",
        }
    }

    pub fn from_aspect_side(aspect: Aspect, side: Side) -> Self {
        match (aspect, side) {
            (Aspect::Dorsal, Side::Right) => Subset::DorsalRight,
            (Aspect::Dorsal, Side::Left) => Subset::DorsalLeft,
            (Aspect::Palmar, Side::Right) => Subset::PalmarRight,
            (Aspect::Palmar, Side::Left) => Subset::PalmarLeft,
        }
    }

    pub fn aspect(self) -> Aspect {
        match self {
            Subset::PalmarRight | Subset::PalmarLeft => Aspect::Palmar,
            _ => Aspect::Dorsal,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            Subset::DorsalRight | Subset::PalmarRight => Some(Side::Right),
            Subset::DorsalLeft | Subset::PalmarLeft => Some(Side::Left),
            Subset::Hd => None,
        }
    }

    /// Stable numeric tag, used when deriving per-subset seeds.
    pub fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "D-r" => Ok(Subset::DorsalRight),
            "D-l" => Ok(Subset::DorsalLeft),
            "P-r" => Ok(Subset::PalmarRight),
            "P-l" => Ok(Subset::PalmarLeft),
            "HD" => Ok(Subset::Hd),
            other => Err(Error::Config(format!("unknown subset {other:?}"))),
        }
    }
}

/// Opaque identity key. Identities are scoped to their subset, so the same
/// 11k subject photographed dorsal-right and dorsal-left yields two
/// identities, `D-r:0000002` and `D-l:0000002`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Identity(pub String);

impl Identity {
    pub fn new(subset: Subset, subject: &str) -> Self {
        Identity(format!("{}:{}", subset.code(), subject))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Subset encoded in the key, if any.
    pub fn subset(&self) -> Option<Subset> {
        self.0.split_once(':').and_then(|(code, _)| code.parse().ok())
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HandImageRecord {
    pub image_path: PathBuf,
    pub identity: Identity,
    pub subset: Subset,
    pub aspect: Aspect,
    pub side: Option<Side>,
    pub has_accessories: bool,
    pub is_low_quality: bool,
}

impl HandImageRecord {
    pub fn eleven_k(image_path: PathBuf, subject: &str, aspect: Aspect, side: Side, has_accessories: bool) -> Self {
        let subset = Subset::from_aspect_side(aspect, side);
        HandImageRecord {
            image_path,
            identity: Identity::new(subset, subject),
            subset,
            aspect,
            side: Some(side),
            has_accessories,
            is_low_quality: false,
        }
    }

    pub fn hd(image_path: PathBuf, subject: &str, is_low_quality: bool) -> Self {
        HandImageRecord {
            image_path,
            identity: Identity::new(Subset::Hd, subject),
            subset: Subset::Hd,
            aspect: Aspect::Dorsal,
            side: None,
            has_accessories: false,
            is_low_quality,
        }
    }
}
