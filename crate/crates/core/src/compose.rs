//! Stage-2 resolution bookkeeping and Stage-3 instruction composition.
//!
//! A [`Resolution`] tracks the requester's three-state choice for every
//! candidate example (the seed plus all FIND submissions). Committing it
//! yields the [`ResolvedExample`]s that [`compose_instructions`] projects into
//! an [`InstructionBundle`] according to the experimental [`Condition`].
//!
//! The composer emits structure only; rendering is left to clients.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resolution target id for the requester's seed example.
pub const SEED_TARGET: &str = "seed";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComposeError {
    #[error("resolution is already committed")]
    Committed,
    #[error("unknown resolution target `{0}`")]
    UnknownTarget(String),
    #[error("example pool has {available} items, {requested} requested")]
    InsufficientPool { available: usize, requested: usize },
    #[error("condition {0} needs at least one resolved example")]
    NoResolvedExamples(Condition),
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
}

/// How task instructions are enriched in the LABEL stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Question text only.
    B0,
    /// Randomly drawn, gold-labelled examples (images, no tags).
    B1,
    /// Resolved ambiguous examples, images only.
    #[serde(rename = "IMG")]
    Img,
    /// Resolved ambiguous examples, concept tags only.
    #[serde(rename = "TAG")]
    Tag,
    /// Resolved ambiguous examples, images and concept tags.
    #[serde(rename = "IMG_TAG", alias = "IMG+TAG")]
    ImgTag,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::B0,
        Condition::B1,
        Condition::Img,
        Condition::Tag,
        Condition::ImgTag,
    ];

    /// Wire name, as used in JSON and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::B0 => "B0",
            Condition::B1 => "B1",
            Condition::Img => "IMG",
            Condition::Tag => "TAG",
            Condition::ImgTag => "IMG_TAG",
        }
    }

    /// Name used in table-style reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Condition::ImgTag => "IMG+TAG",
            other => other.as_str(),
        }
    }

    pub fn shows_images(self) -> bool {
        matches!(self, Condition::B1 | Condition::Img | Condition::ImgTag)
    }

    pub fn shows_tags(self) -> bool {
        matches!(self, Condition::Tag | Condition::ImgTag)
    }

    /// Conditions built from the requester's resolved examples.
    pub fn uses_resolved_examples(self) -> bool {
        matches!(self, Condition::Img | Condition::Tag | Condition::ImgTag)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ComposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B0" => Ok(Condition::B0),
            "B1" => Ok(Condition::B1),
            "IMG" => Ok(Condition::Img),
            "TAG" => Ok(Condition::Tag),
            "IMG_TAG" | "IMG+TAG" | "IMGTAG" => Ok(Condition::ImgTag),
            _ => Err(ComposeError::UnknownCondition(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// Default heading a renderer places above a section.
    pub fn header(self) -> &'static str {
        match self {
            Polarity::Positive => "Select items like these:",
            Polarity::Negative => "Do NOT select items like these:",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResolutionState {
    #[default]
    Unselected,
    Positive,
    Negative,
}

impl ResolutionState {
    pub fn next(self) -> Self {
        match self {
            ResolutionState::Unselected => ResolutionState::Positive,
            ResolutionState::Positive => ResolutionState::Negative,
            ResolutionState::Negative => ResolutionState::Unselected,
        }
    }

    pub fn polarity(self) -> Option<Polarity> {
        match self {
            ResolutionState::Unselected => None,
            ResolutionState::Positive => Some(Polarity::Positive),
            ResolutionState::Negative => Some(Polarity::Negative),
        }
    }
}

/// Collapses whitespace runs and trims; the tag text is otherwise kept verbatim.
pub fn normalize_tag(tag: &str) -> String {
    tag.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolutionEntry {
    pub image_uri: String,
    pub concept_tag: String,
    pub state: ResolutionState,
    /// Logical time of the most recent toggle; 0 if never toggled.
    pub toggled_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resolution {
    pub project_id: String,
    pub iteration: u32,
    pub entries: BTreeMap<String, ResolutionEntry>,
    pub committed: bool,
    toggle_clock: u64,
}

impl Resolution {
    pub fn new(project_id: impl Into<String>, iteration: u32) -> Self {
        Self {
            project_id: project_id.into(),
            iteration,
            entries: BTreeMap::new(),
            committed: false,
            toggle_clock: 0,
        }
    }

    /// Registers a candidate example in the Unselected state. Existing entries are kept.
    pub fn add_candidate(&mut self, target_id: &str, image_uri: &str, concept_tag: &str) {
        self.entries
            .entry(target_id.to_owned())
            .or_insert_with(|| ResolutionEntry {
                image_uri: image_uri.to_owned(),
                concept_tag: concept_tag.to_owned(),
                state: ResolutionState::Unselected,
                toggled_at: 0,
            });
    }

    pub fn state_of(&self, target_id: &str) -> Option<ResolutionState> {
        self.entries.get(target_id).map(|e| e.state)
    }

    /// Advances one entry Unselected -> Positive -> Negative -> Unselected.
    pub fn toggle(&mut self, target_id: &str) -> Result<ResolutionState, ComposeError> {
        if self.committed {
            return Err(ComposeError::Committed);
        }
        let entry = self
            .entries
            .get_mut(target_id)
            .ok_or_else(|| ComposeError::UnknownTarget(target_id.to_owned()))?;
        self.toggle_clock += 1;
        entry.state = entry.state.next();
        entry.toggled_at = self.toggle_clock;
        Ok(entry.state)
    }

    /// The selected examples, positives first, each group in the order its
    /// entries were last toggled. Does not freeze the resolution.
    pub fn selected(&self) -> Vec<ResolvedExample> {
        let mut chosen: Vec<(&ResolutionEntry, Polarity)> = self
            .entries
            .values()
            .filter_map(|e| e.state.polarity().map(|p| (e, p)))
            .collect();
        chosen.sort_by_key(|(e, p)| (*p, e.toggled_at));
        chosen
            .into_iter()
            .map(|(e, polarity)| ResolvedExample {
                image_uri: e.image_uri.clone(),
                concept_tag: e.concept_tag.clone(),
                polarity,
            })
            .collect()
    }

    /// Freezes the resolution and returns the selected examples.
    pub fn commit(&mut self) -> Result<Vec<ResolvedExample>, ComposeError> {
        if self.committed {
            return Err(ComposeError::Committed);
        }
        self.committed = true;
        Ok(self.selected())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedExample {
    pub image_uri: String,
    pub concept_tag: String,
    pub polarity: Polarity,
}

/// A clear, gold-labelled example available to the random-examples condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolExample {
    pub image_uri: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExampleSlot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub polarity: Polarity,
    pub slots: Vec<ExampleSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionBundle {
    pub question: String,
    pub condition: Condition,
    pub sections: Vec<Section>,
}

impl InstructionBundle {
    pub fn slots(&self) -> impl Iterator<Item = (Polarity, &ExampleSlot)> {
        self.sections
            .iter()
            .flat_map(|s| s.slots.iter().map(move |slot| (s.polarity, slot)))
    }

    pub fn slot_count(&self) -> usize {
        self.sections.iter().map(|s| s.slots.len()).sum()
    }
}

fn sections_from(mut items: Vec<(Polarity, ExampleSlot)>) -> Vec<Section> {
    // stable: keeps the incoming order inside each polarity
    items.sort_by_key(|(p, _)| *p);
    let mut sections: Vec<Section> = Vec::new();
    for (polarity, slot) in items {
        match sections.last_mut() {
            Some(s) if s.polarity == polarity => s.slots.push(slot),
            _ => sections.push(Section {
                polarity,
                slots: vec![slot],
            }),
        }
    }
    sections
}

/// Builds the instruction bundle for one condition.
///
/// `k` is the number of random pool examples shown under B1; it defaults to
/// the number of resolved examples so every example-bearing condition shows
/// the same count. The result is a pure function of the arguments.
pub fn compose_instructions(
    question: &str,
    condition: Condition,
    resolved: &[ResolvedExample],
    pool: &[PoolExample],
    k: Option<usize>,
    rng_seed: u64,
) -> Result<InstructionBundle, ComposeError> {
    let items: Vec<(Polarity, ExampleSlot)> = match condition {
        Condition::B0 => Vec::new(),
        Condition::B1 => {
            let k = k.unwrap_or(resolved.len());
            if pool.len() < k {
                return Err(ComposeError::InsufficientPool {
                    available: pool.len(),
                    requested: k,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|i| {
                    let ex = &pool[i];
                    (
                        ex.polarity,
                        ExampleSlot {
                            image_uri: Some(ex.image_uri.clone()),
                            concept_tag: None,
                        },
                    )
                })
                .collect()
        }
        Condition::Img | Condition::Tag | Condition::ImgTag => {
            if resolved.is_empty() {
                return Err(ComposeError::NoResolvedExamples(condition));
            }
            resolved
                .iter()
                .map(|ex| {
                    let slot = ExampleSlot {
                        image_uri: condition.shows_images().then(|| ex.image_uri.clone()),
                        concept_tag: condition.shows_tags().then(|| normalize_tag(&ex.concept_tag)),
                    };
                    (ex.polarity, slot)
                })
                .collect()
        }
    };
    Ok(InstructionBundle {
        question: question.to_owned(),
        condition,
        sections: sections_from(items),
    })
}
