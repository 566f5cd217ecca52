//! Dataset planning: expands a [`DatasetConfig`] into a balanced list of
//! synthetic identities and renders their per-pose prompts.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demographics::{Gender, Race};
use crate::name_pool::{BlendPolicy, IdentityTriplet, NamePool, PoolError};
use crate::seed::{self, derive_seed};
use crate::template::{self, format_blend_group, Placeholder, PromptTemplate, TemplateError};

pub const DEFAULT_TEMPLATE_ID: &str = "portrait-v1";

pub const DEFAULT_TEMPLATE: &str = "RAW photo, close-up portrait of {name_blend}, {age} year old {race} {gender}, \
{expression}, {hairstyle}, {background}, {pose_phrase}, sharp focus, soft natural lighting";

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("invalid dataset config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("cell ({race}, {gender}) cannot supply enough unique triplets: {source}")]
    PoolExhausted {
        race: Race,
        gender: Gender,
        #[source]
        source: PoolError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("placeholder {placeholder} has no value for identity {identity_id}")]
    UnresolvedPlaceholder {
        placeholder: Placeholder,
        identity_id: String,
    },
    #[error("invalid pose label `{0}`")]
    InvalidPose(String),
    #[error("plan file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan file line {line}: {source}")]
    Decode {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeVocab {
    pub backgrounds: Vec<String>,
    pub hairstyles: Vec<String>,
    pub expressions: Vec<String>,
}

impl Default for AttributeVocab {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            backgrounds: owned(&[
                "plain grey studio background",
                "white studio background",
                "soft blurred indoor background",
                "light blue backdrop",
            ]),
            hairstyles: owned(&[
                "short hair",
                "long hair",
                "curly hair",
                "wavy shoulder-length hair",
                "hair tied back",
                "closely cropped hair",
            ]),
            expressions: owned(&["neutral expression", "slight smile", "serious expression", "relaxed expression"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub races: Vec<Race>,
    pub genders: Vec<Gender>,
    pub ages: Vec<u32>,
    pub poses: Vec<String>,
    pub identities_per_cell: u32,
    pub master_seed: u64,
    pub template_id: String,
    pub attribute_vocab: AttributeVocab,
    pub blend_policy: BlendPolicy,
    pub negative_prompt: String,
}

impl Default for DatasetConfig {
    /// The balanced 4 × 2 × 3 layout with 139 identities per cell.
    fn default() -> Self {
        Self {
            races: Race::ALL.to_vec(),
            genders: Gender::ALL.to_vec(),
            ages: vec![25, 50, 65],
            poses: vec!["left".into(), "front".into(), "right".into()],
            identities_per_cell: 139,
            master_seed: 0,
            template_id: DEFAULT_TEMPLATE_ID.into(),
            attribute_vocab: AttributeVocab::default(),
            blend_policy: BlendPolicy::SameCell,
            negative_prompt: String::new(),
        }
    }
}

impl DatasetConfig {
    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        fn dupes<T: PartialEq>(xs: &[T]) -> bool {
            xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
        }
        let mut out = Vec::new();
        for (name, empty, dup) in [
            ("races", self.races.is_empty(), dupes(&self.races)),
            ("genders", self.genders.is_empty(), dupes(&self.genders)),
            ("ages", self.ages.is_empty(), dupes(&self.ages)),
            ("poses", self.poses.is_empty(), dupes(&self.poses)),
        ] {
            if empty {
                out.push(format!("{name} must not be empty"));
            }
            if dup {
                out.push(format!("{name} contains duplicates"));
            }
        }
        for pose in &self.poses {
            if !valid_pose_label(pose) {
                out.push(format!("pose label `{pose}` must be non-empty ASCII letters, digits or `_`"));
            }
        }
        if self.identities_per_cell == 0 {
            out.push("identities_per_cell must be at least 1".into());
        }
        if self.template_id.trim().is_empty() {
            out.push("template_id must not be empty".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(PlanError::InvalidConfig(v))
        }
    }

    pub fn identity_count(&self) -> usize {
        self.races.len() * self.genders.len() * self.ages.len() * self.identities_per_cell as usize
    }

    pub fn image_count(&self) -> usize {
        self.identity_count() * self.poses.len()
    }
}

pub fn valid_pose_label(pose: &str) -> bool {
    !pose.is_empty() && pose.chars().all(template::is_pose_char)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DemographicSpec {
    pub race: Race,
    pub gender: Gender,
    pub age: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    pub background: Option<String>,
    pub hairstyle: Option<String>,
    pub expression: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub identity_id: String,
    pub triplet: IdentityTriplet,
    pub demographics: DemographicSpec,
    pub identity_seed: u64,
    pub attributes: Attributes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub identity_id: String,
    pub pose: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub generation_seed: u64,
}

/// `<ordinal>_<race code><gender code><age>`, ordinal 1-based and zero-padded
/// to at least five digits.
pub fn identity_id(ordinal: usize, width: usize, demo: &DemographicSpec) -> String {
    format!(
        "{ordinal:0width$}_{}{}{}",
        demo.race.code(),
        demo.gender.code(),
        demo.age
    )
}

pub fn plan_dataset(config: &DatasetConfig, pool: &NamePool) -> Result<Vec<IdentitySpec>, PlanError> {
    config.validate()?;
    let total = config.identity_count();
    let width = total.to_string().len().max(5);
    let mut used: HashSet<String> = HashSet::new();
    let mut plan = Vec::with_capacity(total);

    for &race in &config.races {
        for &gender in &config.genders {
            for &age in &config.ages {
                let demographics = DemographicSpec { race, gender, age };
                for _ in 0..config.identities_per_cell {
                    let id = identity_id(plan.len() + 1, width, &demographics);
                    let identity_seed = derive_seed(config.master_seed, &id);
                    let triplet = pool
                        .sample_triplet(
                            race,
                            gender,
                            derive_seed(identity_seed, "triplet"),
                            &used,
                            config.blend_policy,
                        )
                        .map_err(|source| PlanError::PoolExhausted { race, gender, source })?;
                    used.insert(triplet.canonical_key.clone());
                    let attributes = draw_attributes(&config.attribute_vocab, identity_seed);
                    plan.push(IdentitySpec {
                        identity_id: id,
                        triplet,
                        demographics,
                        identity_seed,
                        attributes,
                    });
                }
            }
        }
    }
    Ok(plan)
}

// One draw per identity, reused for every pose.
fn draw_attributes(vocab: &AttributeVocab, identity_seed: u64) -> Attributes {
    let mut rng = seed::rng(derive_seed(identity_seed, "attributes"));
    let mut pick = |xs: &[String]| {
        if xs.is_empty() {
            None
        } else {
            Some(xs[rng.random_range(0..xs.len())].clone())
        }
    };
    Attributes {
        background: pick(&vocab.backgrounds),
        hairstyle: pick(&vocab.hairstyles),
        expression: pick(&vocab.expressions),
    }
}

pub fn build_prompt(
    spec: &IdentitySpec,
    pose: &str,
    template: &PromptTemplate,
    negative_prompt: &str,
) -> Result<PromptBundle, PlanError> {
    if !valid_pose_label(pose) {
        return Err(PlanError::InvalidPose(pose.to_string()));
    }
    let demo = &spec.demographics;
    let positive_prompt = template
        .render(|p| match p {
            Placeholder::NameBlend => Some(format_blend_group(&spec.triplet.names)),
            Placeholder::Age => Some(demo.age.to_string()),
            Placeholder::Race => Some(demo.race.to_string()),
            Placeholder::Gender => Some(demo.gender.to_string()),
            Placeholder::PosePhrase => Some(template::pose_phrase(pose)),
            Placeholder::Background => spec.attributes.background.clone(),
            Placeholder::Hairstyle => spec.attributes.hairstyle.clone(),
            Placeholder::Expression => spec.attributes.expression.clone(),
        })
        .map_err(|placeholder| PlanError::UnresolvedPlaceholder {
            placeholder,
            identity_id: spec.identity_id.clone(),
        })?;
    Ok(PromptBundle {
        identity_id: spec.identity_id.clone(),
        pose: pose.to_string(),
        positive_prompt,
        negative_prompt: negative_prompt.to_string(),
        generation_seed: derive_seed(spec.identity_seed, pose),
    })
}

/// Bundles for every identity × pose, identity-major.
pub fn build_bundles(
    config: &DatasetConfig,
    plan: &[IdentitySpec],
    template: &PromptTemplate,
) -> Result<Vec<PromptBundle>, PlanError> {
    let mut out = Vec::with_capacity(plan.len() * config.poses.len());
    for spec in plan {
        for pose in &config.poses {
            out.push(build_prompt(spec, pose, template, &config.negative_prompt)?);
        }
    }
    Ok(out)
}

pub fn write_plan(plan: &[IdentitySpec], path: impl AsRef<Path>) -> Result<(), PlanError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for spec in plan {
        serde_json::to_writer(&mut w, spec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<Vec<IdentitySpec>, PlanError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut plan = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        plan.push(serde_json::from_str(&line).map_err(|source| PlanError::Decode { line: i + 1, source })?);
    }
    Ok(plan)
}
