//! Culturally tagged name pools and the name-triplet combinatorics behind
//! synthetic identities.
//!
//! Pool files are UTF-8 CSV with the header `name,gender,race,country`.
//! Lines starting with `#` are comments. Gender and race values are matched
//! case-insensitively and stored in canonical form.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demographics::{Gender, Race};
use crate::seed;

/// Characters reserved by the `[A | B | C]` blend syntax.
pub const RESERVED_CHARS: [char; 3] = ['[', ']', '|'];

const HEADER: [&str; 4] = ["name", "gender", "race", "country"];

// Cells with at most this many triplets fall back to exhaustive enumeration
// once rejection sampling stalls.
const ENUMERATION_LIMIT: u64 = 2_000_000;
const REJECTION_ATTEMPTS: usize = 64;
const LARGE_CELL_ATTEMPTS: usize = 1 << 16;

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("cannot read pool file: {0}")]
    Io(#[from] std::io::Error),
    #[error("pool parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate pool entry ({name}, {gender}, {race}) at line {line}")]
    Duplicate {
        name: String,
        gender: Gender,
        race: Race,
        line: u64,
    },
    #[error("name `{name}` at line {line} contains a reserved character (one of `[`, `]`, `|`)")]
    ReservedCharacter { name: String, line: u64 },
    #[error("cell ({race}, {gender}) has {available} names; at least 3 are required")]
    InsufficientNames {
        race: Race,
        gender: Gender,
        available: usize,
    },
    #[error("every name triplet in cell ({race}, {gender}) is already used")]
    Exhausted { race: Race, gender: Gender },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub gender: Gender,
    pub race: Race,
    pub country: String,
}

impl NameEntry {
    fn validate(&self, line: u64) -> Result<(), PoolError> {
        if self.name.trim().is_empty() {
            return Err(PoolError::Parse {
                line,
                message: "empty name".into(),
            });
        }
        if self.name.contains(RESERVED_CHARS) {
            return Err(PoolError::ReservedCharacter {
                name: self.name.clone(),
                line,
            });
        }
        Ok(())
    }
}

/// How names are combined into a triplet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendPolicy {
    /// All three names come from the identity's own (race, gender) cell.
    #[default]
    SameCell,
    /// Names of the identity's gender may come from any race.
    CrossRace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityTriplet {
    pub names: [String; 3],
    pub race: Race,
    pub gender: Gender,
    pub canonical_key: String,
}

impl IdentityTriplet {
    pub fn new(names: [String; 3], race: Race, gender: Gender) -> Self {
        let canonical_key = canonical_key(&names);
        Self {
            names,
            race,
            gender,
            canonical_key,
        }
    }
}

/// The three names sorted lexicographically and joined with `|`.
pub fn canonical_key(names: &[String; 3]) -> String {
    let mut sorted: Vec<&str> = names.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    sorted.join("|")
}

/// Number of unordered 3-name subsets of `n` names, `n(n-1)(n-2)/6`.
pub fn count_triplets(n: u64) -> BigUint {
    if n < 3 {
        return BigUint::from(0u32);
    }
    let n = BigUint::from(n);
    let one = BigUint::from(1u32);
    let two = BigUint::from(2u32);
    (&n * (&n - &one) * (&n - &two)) / BigUint::from(6u32)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NamePool {
    entries: Vec<NameEntry>,
    counts: BTreeMap<(Race, Gender), usize>,
}

impl NamePool {
    pub fn from_entries(entries: Vec<NameEntry>) -> Result<Self, PoolError> {
        let mut seen = HashSet::new();
        let mut counts = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            let line = i as u64 + 2;
            entry.validate(line)?;
            if !seen.insert((entry.name.clone(), entry.gender, entry.race)) {
                return Err(PoolError::Duplicate {
                    name: entry.name.clone(),
                    gender: entry.gender,
                    race: entry.race,
                    line,
                });
            }
            *counts.entry((entry.race, entry.gender)).or_insert(0) += 1;
        }
        Ok(Self { entries, counts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PoolError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(text.as_bytes());

        let header = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
        if header.is_empty() {
            return Err(PoolError::Parse {
                line: 1,
                message: "missing header".into(),
            });
        }
        let found: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
        if found != HEADER {
            return Err(PoolError::Parse {
                line: header.position().map_or(1, |p| p.line()),
                message: format!("expected header `{}`, found `{}`", HEADER.join(","), found.join(",")),
            });
        }

        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut counts = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&e, 0))?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or_default();
            let gender = field(1).parse::<Gender>().map_err(|e| PoolError::Parse {
                line,
                message: e.to_string(),
            })?;
            let race = field(2).parse::<Race>().map_err(|e| PoolError::Parse {
                line,
                message: e.to_string(),
            })?;
            let entry = NameEntry {
                name: field(0).to_string(),
                gender,
                race,
                country: field(3).to_string(),
            };
            entry.validate(line)?;
            if !seen.insert((entry.name.clone(), gender, race)) {
                return Err(PoolError::Duplicate {
                    name: entry.name,
                    gender,
                    race,
                    line,
                });
            }
            *counts.entry((race, gender)).or_insert(0) += 1;
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(PoolError::Parse {
                line: 1,
                message: "pool contains no entries".into(),
            });
        }
        Ok(Self { entries, counts })
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(HEADER).expect("in-memory write");
        for e in &self.entries {
            writer
                .write_record([e.name.as_str(), e.gender.as_str(), e.race.as_str(), e.country.as_str()])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn entries(&self) -> &[NameEntry] {
        &self.entries
    }

    pub fn counts(&self) -> &BTreeMap<(Race, Gender), usize> {
        &self.counts
    }

    pub fn cell_count(&self, race: Race, gender: Gender) -> usize {
        self.counts.get(&(race, gender)).copied().unwrap_or(0)
    }

    /// Distinct candidate names for a triplet, in pool order.
    pub fn candidates(&self, race: Race, gender: Gender, policy: BlendPolicy) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| e.gender == gender && (policy == BlendPolicy::CrossRace || e.race == race))
            .map(|e| e.name.as_str())
            .filter(|n| seen.insert(*n))
            .collect()
    }

    /// Draws a triplet whose canonical key is not in `used`.
    ///
    /// Deterministic in (pool, race, gender, seed, used, policy). Draws are
    /// rejection-sampled; small cells fall back to picking uniformly among
    /// the enumerated unused triplets, which also detects exhaustion.
    ///
    /// `used` is not synchronised; callers sharing it across threads must lock it.
    pub fn sample_triplet(
        &self,
        race: Race,
        gender: Gender,
        seed: u64,
        used: &HashSet<String>,
        policy: BlendPolicy,
    ) -> Result<IdentityTriplet, PoolError> {
        let names = self.candidates(race, gender, policy);
        let n = names.len();
        if n < 3 {
            return Err(PoolError::InsufficientNames {
                race,
                gender,
                available: n,
            });
        }
        let mut rng = seed::rng(seed);
        let make = |picks: [usize; 3]| {
            IdentityTriplet::new(picks.map(|i| names[i].to_string()), race, gender)
        };

        let total = n as u64 * (n as u64 - 1) * (n as u64 - 2) / 6;
        let attempts = if total <= ENUMERATION_LIMIT {
            REJECTION_ATTEMPTS
        } else {
            LARGE_CELL_ATTEMPTS
        };
        for _ in 0..attempts {
            let picks = index::sample(&mut rng, n, 3);
            let triplet = make([picks.index(0), picks.index(1), picks.index(2)]);
            if !used.contains(&triplet.canonical_key) {
                return Ok(triplet);
            }
        }
        if total > ENUMERATION_LIMIT {
            return Err(PoolError::Exhausted { race, gender });
        }

        let mut unused = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let t = make([i, j, k]);
                    if !used.contains(&t.canonical_key) {
                        unused.push([i, j, k]);
                    }
                }
            }
        }
        if unused.is_empty() {
            return Err(PoolError::Exhausted { race, gender });
        }
        let mut picks = unused[rng.random_range(0..unused.len())];
        // Preserve the ordered-draw semantics of the rejection path.
        for i in (1..3).rev() {
            let j = rng.random_range(0..=i);
            picks.swap(i, j);
        }
        Ok(make(picks))
    }
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> PoolError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    PoolError::Parse {
        line,
        message: e.to_string(),
    }
}
