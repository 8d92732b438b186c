//! Attribution label set: 17 synthetic classes plus natural speech, and the
//! waveform-generator family each class belongs to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneratorFamily {
    WaveNet,
    World,
    WaveformConcatenation,
    SpectralFilteringOla,
    NeuralSourceFilter,
    Vocaine,
    WaveRnn,
    GriffinLim,
    WaveformFiltering,
    Straight,
    MfccVocoder,
    Natural,
}

impl GeneratorFamily {
    pub const ALL: [GeneratorFamily; 12] = [
        GeneratorFamily::WaveNet,
        GeneratorFamily::World,
        GeneratorFamily::WaveformConcatenation,
        GeneratorFamily::SpectralFilteringOla,
        GeneratorFamily::NeuralSourceFilter,
        GeneratorFamily::Vocaine,
        GeneratorFamily::WaveRnn,
        GeneratorFamily::GriffinLim,
        GeneratorFamily::WaveformFiltering,
        GeneratorFamily::Straight,
        GeneratorFamily::MfccVocoder,
        GeneratorFamily::Natural,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorFamily::WaveNet => "WaveNet",
            GeneratorFamily::World => "WORLD",
            GeneratorFamily::WaveformConcatenation => "Waveform Concatenation",
            GeneratorFamily::SpectralFilteringOla => "Spectral filtering + OLA",
            GeneratorFamily::NeuralSourceFilter => "Neural source-filter",
            GeneratorFamily::Vocaine => "Vocaine",
            GeneratorFamily::WaveRnn => "WaveRNN",
            GeneratorFamily::GriffinLim => "Griffin-Lim",
            GeneratorFamily::WaveformFiltering => "Waveform filtering",
            GeneratorFamily::Straight => "STRAIGHT",
            GeneratorFamily::MfccVocoder => "MFCC Vocoder",
            GeneratorFamily::Natural => "Natural",
        }
    }
}

impl fmt::Display for GeneratorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct ClassInfo {
    label: &'static str,
    aliases: &'static [&'static str],
    family: GeneratorFamily,
}

const CLASSES: [ClassInfo; 18] = [
    ClassInfo { label: "A01", aliases: &["A01"], family: GeneratorFamily::WaveNet },
    ClassInfo { label: "A02", aliases: &["A02"], family: GeneratorFamily::World },
    ClassInfo { label: "A03", aliases: &["A03"], family: GeneratorFamily::World },
    ClassInfo { label: "A04/A16", aliases: &["A04", "A16"], family: GeneratorFamily::WaveformConcatenation },
    ClassInfo { label: "A05", aliases: &["A05"], family: GeneratorFamily::World },
    ClassInfo { label: "A06/A19", aliases: &["A06", "A19"], family: GeneratorFamily::SpectralFilteringOla },
    ClassInfo { label: "A07", aliases: &["A07"], family: GeneratorFamily::World },
    ClassInfo { label: "A08", aliases: &["A08"], family: GeneratorFamily::NeuralSourceFilter },
    ClassInfo { label: "A09", aliases: &["A09"], family: GeneratorFamily::Vocaine },
    ClassInfo { label: "A10", aliases: &["A10"], family: GeneratorFamily::WaveRnn },
    ClassInfo { label: "A11", aliases: &["A11"], family: GeneratorFamily::GriffinLim },
    ClassInfo { label: "A12", aliases: &["A12"], family: GeneratorFamily::WaveNet },
    ClassInfo { label: "A13", aliases: &["A13"], family: GeneratorFamily::WaveformFiltering },
    ClassInfo { label: "A14", aliases: &["A14"], family: GeneratorFamily::Straight },
    ClassInfo { label: "A15", aliases: &["A15"], family: GeneratorFamily::WaveformConcatenation },
    ClassInfo { label: "A17", aliases: &["A17"], family: GeneratorFamily::WaveformFiltering },
    ClassInfo { label: "A18", aliases: &["A18"], family: GeneratorFamily::MfccVocoder },
    ClassInfo { label: "Natural", aliases: &["Natural", "bonafide"], family: GeneratorFamily::Natural },
];

/// Number of attribution classes after merging A04/A16 and A06/A19.
pub const NUM_CLASSES: usize = CLASSES.len();

/// One of the 18 attribution classes, identified by its logit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlgorithmClass(u8);

impl AlgorithmClass {
    pub const NATURAL: AlgorithmClass = AlgorithmClass(17);

    pub fn from_index(i: usize) -> Option<Self> {
        (i < NUM_CLASSES).then_some(AlgorithmClass(i as u8))
    }

    pub fn all() -> impl Iterator<Item = AlgorithmClass> {
        (0..NUM_CLASSES as u8).map(AlgorithmClass)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Canonical label, e.g. `A04/A16` for the merged class.
    pub fn label(self) -> &'static str {
        CLASSES[self.index()].label
    }

    pub fn family(self) -> GeneratorFamily {
        CLASSES[self.index()].family
    }

    pub fn is_natural(self) -> bool {
        self == Self::NATURAL
    }

    /// File-name friendly label (`A04-A16`).
    pub fn slug(self) -> String {
        self.label().replace('/', "-")
    }
}

impl FromStr for AlgorithmClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        CLASSES
            .iter()
            .position(|c| {
                c.label.eq_ignore_ascii_case(s)
                    || c.label.replace('/', "-").eq_ignore_ascii_case(s)
                    || c.aliases.iter().any(|a| a.eq_ignore_ascii_case(s))
            })
            .map(|i| AlgorithmClass(i as u8))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl fmt::Display for AlgorithmClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for AlgorithmClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AlgorithmClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
