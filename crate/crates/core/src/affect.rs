//! The ten I-PANAS-SF items.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Affect {
    Active,
    Determined,
    Attentive,
    Inspired,
    Alert,
    Upset,
    Hostile,
    Ashamed,
    Nervous,
    Afraid,
}

impl Affect {
    /// Questionnaire order: the five positive items, then the five negative.
    pub const ALL: [Affect; 10] = [
        Affect::Active,
        Affect::Determined,
        Affect::Attentive,
        Affect::Inspired,
        Affect::Alert,
        Affect::Upset,
        Affect::Hostile,
        Affect::Ashamed,
        Affect::Nervous,
        Affect::Afraid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Affect::Active => "Active",
            Affect::Determined => "Determined",
            Affect::Attentive => "Attentive",
            Affect::Inspired => "Inspired",
            Affect::Alert => "Alert",
            Affect::Upset => "Upset",
            Affect::Hostile => "Hostile",
            Affect::Ashamed => "Ashamed",
            Affect::Nervous => "Nervous",
            Affect::Afraid => "Afraid",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_positive(self) -> bool {
        self.index() < 5
    }
}

impl fmt::Display for Affect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown affect {0:?}")]
pub struct UnknownAffect(pub String);

impl FromStr for Affect {
    type Err = UnknownAffect;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Affect::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownAffect(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{affect} rating {value} outside 1..=5")]
pub struct RatingOutOfRange {
    pub affect: Affect,
    pub value: i64,
}

/// One Likert rating (1 = Never … 5 = Always) per affect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; 10]", into = "[u8; 10]")]
pub struct AffectRatings([u8; 10]);

impl AffectRatings {
    pub fn new(values: [u8; 10]) -> Result<Self, RatingOutOfRange> {
        for (affect, &v) in Affect::ALL.iter().zip(values.iter()) {
            if !(1..=5).contains(&v) {
                return Err(RatingOutOfRange {
                    affect: *affect,
                    value: v as i64,
                });
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(value: u8) -> Result<Self, RatingOutOfRange> {
        Self::new([value; 10])
    }

    pub fn get(&self, affect: Affect) -> u8 {
        self.0[affect.index()]
    }

    pub fn values(&self) -> [u8; 10] {
        self.0
    }
}

impl TryFrom<[u8; 10]> for AffectRatings {
    type Error = RatingOutOfRange;

    fn try_from(values: [u8; 10]) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<AffectRatings> for [u8; 10] {
    fn from(r: AffectRatings) -> Self {
        r.0
    }
}
