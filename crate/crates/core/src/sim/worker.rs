//! Probabilistic worker model.
//!
//! A simulated worker labels an image correctly with probability
//!
//! ```text
//! p = clamp(base[c] + m * (boost * [c shown] + related_boost * [a related category shown]), 0, 1)
//! ```
//!
//! where `c` is the image's category, "shown" means the category is
//! exemplified by a slot in the instruction bundle, and `m` is the condition
//! multiplier (B0: no boosts; B1 and IMG: image-only multiplier; TAG: tag-only
//! multiplier; IMG_TAG: 1). This is a modelling assumption chosen to
//! reproduce table-level phenomena, not a measured worker error structure.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::compose::{Condition, InstructionBundle};
use crate::eval::Label;
use crate::model::CategoryId;

/// A symmetric, irreflexive relation over categories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[String; 2]>", into = "Vec<[String; 2]>")]
pub struct Relatedness {
    pairs: BTreeSet<(CategoryId, CategoryId)>,
}

impl Relatedness {
    pub fn new<I, S>(pairs: I) -> Result<Self, SimError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            let (a, b) = (a.into(), b.into());
            if a == b {
                return Err(SimError::ReflexiveRelation(a));
            }
            set.insert(if a < b { (a, b) } else { (b, a) });
        }
        Ok(Self { pairs: set })
    }

    pub fn related(&self, a: &str, b: &str) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs
            .iter()
            .any(|(x, y)| x.as_str() == key.0 && y.as_str() == key.1)
    }

    pub fn neighbours<'a>(&'a self, c: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs.iter().filter_map(move |(x, y)| {
            if x == c {
                Some(y.as_str())
            } else if y == c {
                Some(x.as_str())
            } else {
                None
            }
        })
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl TryFrom<Vec<[String; 2]>> for Relatedness {
    type Error = SimError;

    fn try_from(v: Vec<[String; 2]>) -> Result<Self, Self::Error> {
        Relatedness::new(v.into_iter().map(|[a, b]| (a, b)))
    }
}

impl From<Relatedness> for Vec<[String; 2]> {
    fn from(r: Relatedness) -> Self {
        r.pairs.into_iter().map(|(a, b)| [a, b]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerModel<T> {
    /// Correctness probability per category when nothing relevant is shown.
    pub base_accuracy: BTreeMap<CategoryId, T>,
    pub exemplified_boost: T,
    pub related_boost: T,
    pub relatedness: Relatedness,
    pub tag_only_multiplier: T,
    pub image_only_multiplier: T,
    /// Mixed into every substream seed, so distinct models draw distinct streams.
    #[serde(default)]
    pub rng_stream_seed: u64,
}

impl<T: Float> WorkerModel<T> {
    pub fn condition_multiplier(&self, condition: Condition) -> T {
        match condition {
            Condition::B0 => T::zero(),
            Condition::B1 | Condition::Img => self.image_only_multiplier,
            Condition::Tag => self.tag_only_multiplier,
            Condition::ImgTag => T::one(),
        }
    }

    /// Probability of a correct label for an image of `category`, given the
    /// categories exemplified by the instructions.
    pub fn correct_probability(
        &self,
        category: &str,
        exemplified: &BTreeSet<CategoryId>,
        condition: Condition,
    ) -> Result<T, SimError> {
        let base = *self
            .base_accuracy
            .get(category)
            .ok_or_else(|| SimError::UnknownCategory(category.to_owned()))?;
        let shown = if exemplified.contains(category) { T::one() } else { T::zero() };
        let related_shown = if self
            .relatedness
            .neighbours(category)
            .any(|n| exemplified.contains(n))
        {
            T::one()
        } else {
            T::zero()
        };
        let boost = self.exemplified_boost * shown + self.related_boost * related_shown;
        let p = base + self.condition_multiplier(condition) * boost;
        Ok(p.max(T::zero()).min(T::one()))
    }
}

/// Maps bundle slots back to the categories they exemplify.
///
/// Slots are matched by image URI first, then by concept tag; slots that
/// match neither exemplify nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SlotIndex {
    pub by_uri: BTreeMap<String, CategoryId>,
    pub by_tag: BTreeMap<String, CategoryId>,
}

impl SlotIndex {
    pub fn exemplified_categories(&self, bundle: &InstructionBundle) -> BTreeSet<CategoryId> {
        bundle
            .slots()
            .filter_map(|(_, slot)| {
                slot.image_uri
                    .as_ref()
                    .and_then(|u| self.by_uri.get(u))
                    .or_else(|| slot.concept_tag.as_ref().and_then(|t| self.by_tag.get(t)))
                    .cloned()
            })
            .collect()
    }
}

/// Draws one label: gold with probability `p`, the other label otherwise.
pub fn sample_label<T: Float, R: Rng + ?Sized>(p: T, gold: Label, rng: &mut R) -> Label {
    let u: f64 = rng.random();
    if u < p.to_f64().unwrap_or(0.0) {
        gold
    } else {
        gold.flipped()
    }
}
