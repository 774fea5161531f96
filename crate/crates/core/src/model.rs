//! Dataset vocabulary: categories, images, intents and the gold partition an
//! intent induces over a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The canonical dog-concept fixture manifest shipped with the repository.
pub const DOG_MANIFEST_JSON: &str = include_str!("../../../fixtures/dog_manifest.json");

/// Name under which the canonical fixture is always resolvable.
pub const DOG_MANIFEST_REF: &str = "dog";

pub type CategoryId = String;
pub type ImageId = String;
pub type IntentId = String;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("could not read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid manifest: {0}")]
    Validation(String),
    #[error("unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    /// Whether the category counts as ambiguous in ambiguity-split reports.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageItem {
    pub id: ImageId,
    /// Opaque locator, never dereferenced by the engine.
    pub uri: String,
    pub category_id: CategoryId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intuitiveness {
    More,
    Less,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntentSpec {
    pub id: IntentId,
    pub question_text: String,
    pub positive_category_ids: BTreeSet<CategoryId>,
    pub intuitiveness: Intuitiveness,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GoldPartition {
    pub intent_id: IntentId,
    pub positive: BTreeSet<ImageId>,
    pub negative: BTreeSet<ImageId>,
}

impl GoldPartition {
    /// Gold answer for an image, `None` if the image is outside the manifest.
    pub fn is_positive(&self, image_id: &str) -> Option<bool> {
        if self.positive.contains(image_id) {
            Some(true)
        } else if self.negative.contains(image_id) {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub categories: Vec<Category>,
    pub images: Vec<ImageItem>,
    pub intents: Vec<IntentSpec>,
    #[serde(default)]
    pub example_pool: BTreeSet<ImageId>,
}

fn is_snake_case_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Parses and validates a manifest document.
pub fn load_manifest<R: Read>(source: R) -> Result<DatasetManifest, ModelError> {
    let manifest: DatasetManifest = serde_json::from_reader(source)?;
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        load_manifest(s.as_bytes())
    }

    /// The canonical 11-category, 40-image fixture.
    pub fn dog_fixture() -> Self {
        Self::from_json_str(DOG_MANIFEST_JSON).expect("bundled fixture manifest is valid")
    }

    /// Checks every manifest invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::Validation(msg));

        let mut category_ids = BTreeSet::new();
        for c in &self.categories {
            if !is_snake_case_id(&c.id) {
                return invalid(format!("category id `{}` is not lowercase snake-case", c.id));
            }
            if !category_ids.insert(c.id.as_str()) {
                return invalid(format!("duplicate category id `{}`", c.id));
            }
        }

        let mut image_ids = BTreeSet::new();
        for img in &self.images {
            if !is_snake_case_id(&img.id) {
                return invalid(format!("image id `{}` is not lowercase snake-case", img.id));
            }
            if !image_ids.insert(img.id.as_str()) {
                return invalid(format!("duplicate image id `{}`", img.id));
            }
            if img.uri.trim().is_empty() {
                return invalid(format!("image `{}` has an empty uri", img.id));
            }
            if !category_ids.contains(img.category_id.as_str()) {
                return invalid(format!(
                    "image `{}` references unknown category `{}`",
                    img.id, img.category_id
                ));
            }
        }

        let mut intent_ids = BTreeSet::new();
        for intent in &self.intents {
            if !is_snake_case_id(&intent.id) {
                return invalid(format!("intent id `{}` is not lowercase snake-case", intent.id));
            }
            if !intent_ids.insert(intent.id.as_str()) {
                return invalid(format!("duplicate intent id `{}`", intent.id));
            }
            if intent.positive_category_ids.is_empty() {
                return invalid(format!("intent `{}` has an empty positive class", intent.id));
            }
            if let Some(unknown) = intent
                .positive_category_ids
                .iter()
                .find(|c| !category_ids.contains(c.as_str()))
            {
                return invalid(format!(
                    "intent `{}` references unknown category `{unknown}`",
                    intent.id
                ));
            }
            if intent.positive_category_ids.len() >= category_ids.len() {
                return invalid(format!(
                    "intent `{}` must leave at least one negative category",
                    intent.id
                ));
            }
        }

        if let Some(missing) = self
            .example_pool
            .iter()
            .find(|id| !image_ids.contains(id.as_str()))
        {
            return invalid(format!("example pool references unknown image `{missing}`"));
        }
        Ok(())
    }

    pub fn intent(&self, intent_id: &str) -> Result<&IntentSpec, ModelError> {
        self.intents
            .iter()
            .find(|i| i.id == intent_id)
            .ok_or_else(|| ModelError::UnknownIntent(intent_id.to_owned()))
    }

    pub fn image(&self, image_id: &str) -> Result<&ImageItem, ModelError> {
        self.images
            .iter()
            .find(|i| i.id == image_id)
            .ok_or_else(|| ModelError::UnknownImage(image_id.to_owned()))
    }

    pub fn category(&self, category_id: &str) -> Result<&Category, ModelError> {
        self.categories
            .iter()
            .find(|c| c.id == category_id)
            .ok_or_else(|| ModelError::UnknownCategory(category_id.to_owned()))
    }

    pub fn image_by_uri(&self, uri: &str) -> Option<&ImageItem> {
        self.images.iter().find(|i| i.uri == uri)
    }

    pub fn category_of(&self, image_id: &str) -> Result<&Category, ModelError> {
        let image = self.image(image_id)?;
        self.category(&image.category_id)
    }

    /// Image ids eligible for labeling batches, in manifest order.
    pub fn labelable_images(&self) -> Vec<&ImageItem> {
        self.images
            .iter()
            .filter(|i| !self.example_pool.contains(&i.id))
            .collect()
    }

    /// Index from category id to its images, in manifest order.
    pub fn images_by_category(&self) -> BTreeMap<&str, Vec<&ImageItem>> {
        let mut map: BTreeMap<&str, Vec<&ImageItem>> = BTreeMap::new();
        for img in &self.images {
            map.entry(img.category_id.as_str()).or_default().push(img);
        }
        map
    }
}

/// Splits the manifest's images into the intent's positive and negative class.
pub fn derive_partition(
    manifest: &DatasetManifest,
    intent_id: &str,
) -> Result<GoldPartition, ModelError> {
    let intent = manifest.intent(intent_id)?;
    let (positive, negative): (Vec<&ImageItem>, Vec<&ImageItem>) = manifest
        .images
        .iter()
        .partition(|img| intent.positive_category_ids.contains(&img.category_id));
    Ok(GoldPartition {
        intent_id: intent.id.clone(),
        positive: positive.into_iter().map(|i| i.id.clone()).collect(),
        negative: negative.into_iter().map(|i| i.id.clone()).collect(),
    })
}
