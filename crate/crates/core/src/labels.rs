use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Stance of a Facebook page towards vaccination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PageStance {
    PV,
    AV,
}

impl PageStance {
    pub const ALL: [PageStance; 2] = [PageStance::PV, PageStance::AV];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PageStance::PV => "PV",
            PageStance::AV => "AV",
        }
    }
}

impl fmt::Display for PageStance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stance expressed by a single comment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Pro,
    Anti,
    NonRelevant,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Pro, Stance::Anti, Stance::NonRelevant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Pro => "Pro",
            Stance::Anti => "Anti",
            Stance::NonRelevant => "NonRelevant",
        }
    }

    pub fn is_relevant(self) -> bool {
        self != Stance::NonRelevant
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Pro" => Ok(Stance::Pro),
            "Anti" => Ok(Stance::Anti),
            "NonRelevant" | "NR" => Ok(Stance::NonRelevant),
            other => Err(format!("unknown stance {other:?}")),
        }
    }
}

/// The six moral foundations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Foundation {
    Authority,
    Liberty,
    Loyalty,
    Care,
    Fairness,
    Purity,
}

impl Foundation {
    pub const ALL: [Foundation; 6] = [
        Foundation::Authority,
        Foundation::Liberty,
        Foundation::Loyalty,
        Foundation::Care,
        Foundation::Fairness,
        Foundation::Purity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Foundation::Authority => "Authority",
            Foundation::Liberty => "Liberty",
            Foundation::Loyalty => "Loyalty",
            Foundation::Care => "Care",
            Foundation::Fairness => "Fairness",
            Foundation::Purity => "Purity",
        }
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Foundation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Foundation::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown foundation {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Virtue,
    Vice,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Virtue, Polarity::Vice];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Virtue => "Virtue",
            Polarity::Vice => "Vice",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (foundation, polarity) pair, e.g. Liberty/Virtue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MoralLabel {
    pub foundation: Foundation,
    pub polarity: Polarity,
}

impl MoralLabel {
    pub const COUNT: usize = 12;

    pub fn new(foundation: Foundation, polarity: Polarity) -> Self {
        MoralLabel {
            foundation,
            polarity,
        }
    }

    /// Index into the 12 polarity targets: foundation-major, Virtue before Vice.
    pub fn target_index(self) -> usize {
        self.foundation.index() * 2 + self.polarity as usize
    }

    pub fn from_target_index(i: usize) -> Option<MoralLabel> {
        let foundation = *Foundation::ALL.get(i / 2)?;
        Some(MoralLabel::new(foundation, Polarity::ALL[i % 2]))
    }

    pub fn all() -> impl Iterator<Item = MoralLabel> {
        (0..Self::COUNT).filter_map(MoralLabel::from_target_index)
    }
}

impl fmt::Display for MoralLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.foundation, self.polarity)
    }
}
