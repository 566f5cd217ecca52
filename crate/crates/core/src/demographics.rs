use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    African,
    Asian,
    Caucasian,
    Indian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized {kind} value `{value}`")]
pub struct ParseEnumError {
    pub kind: &'static str,
    pub value: String,
}

impl Race {
    pub const ALL: [Race; 4] = [Race::African, Race::Asian, Race::Caucasian, Race::Indian];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::African => "African",
            Race::Asian => "Asian",
            Race::Caucasian => "Caucasian",
            Race::Indian => "Indian",
        }
    }

    /// Two-letter code used inside identity ids.
    pub fn code(self) -> &'static str {
        match self {
            Race::African => "AF",
            Race::Asian => "AS",
            Race::Caucasian => "CA",
            Race::Indian => "IN",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Race::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| ParseEnumError {
                kind: "race",
                value: s.to_string(),
            })
    }
}

impl FromStr for Gender {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Gender::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| ParseEnumError {
                kind: "gender",
                value: s.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsing_is_case_insensitive() {
        assert_eq!("aFrIcAn".parse::<Race>().unwrap(), Race::African);
        assert_eq!(" female ".parse::<Gender>().unwrap(), Gender::Female);
        assert!("martian".parse::<Race>().is_err());
    }
}
