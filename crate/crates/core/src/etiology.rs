//! Fine-grained etiology codes, from which every diagnostic task labeling
//! is derived.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Etiology {
    Immune,
    Bacterial,
    Viral,
    Fungal,
    Parasitic,
    SolidTumor,
    Hematologic,
}

impl Etiology {
    pub const ALL: [Etiology; 7] = [
        Etiology::Immune,
        Etiology::Bacterial,
        Etiology::Viral,
        Etiology::Fungal,
        Etiology::Parasitic,
        Etiology::SolidTumor,
        Etiology::Hematologic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Etiology::Immune => "immune",
            Etiology::Bacterial => "bacterial",
            Etiology::Viral => "viral",
            Etiology::Fungal => "fungal",
            Etiology::Parasitic => "parasitic",
            Etiology::SolidTumor => "solid_tumor",
            Etiology::Hematologic => "hematologic",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).expect("listed in ALL")
    }

    pub fn is_malignant(self) -> bool {
        matches!(self, Etiology::SolidTumor | Etiology::Hematologic)
    }

    pub fn is_infectious(self) -> bool {
        matches!(
            self,
            Etiology::Bacterial | Etiology::Viral | Etiology::Fungal | Etiology::Parasitic
        )
    }
}

impl fmt::Display for Etiology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Etiology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim())
            .ok_or_else(|| Error::Schema(format!("unknown etiology {s:?}")))
    }
}
