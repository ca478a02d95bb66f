//! Pipeline vocabulary: organ classes, images, annotations, detections, ROI
//! predictions and the dataset manifest that ties them together.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::numeric::{argmax, exact_sum};

/// Mass tolerance for accepting a probability vector.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;
/// Below this deviation from 1 a vector is kept bit-for-bit.
const RENORMALIZE_EPSILON: f64 = 1e-12;

/// Side length the organ classifiers resize every ROI crop to.
pub const CLASSIFIER_INPUT_SIZE: (u32, u32) = (224, 224);

/// The five detectable plant organs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrganClass {
    Leaf,
    Flower,
    Fruit,
    Stem,
    /// High-density leaves: regions where single leaves cannot be told apart.
    Hdl,
}

impl OrganClass {
    pub const ALL: [OrganClass; 5] = [
        OrganClass::Leaf,
        OrganClass::Flower,
        OrganClass::Fruit,
        OrganClass::Stem,
        OrganClass::Hdl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OrganClass::Leaf => "leaf",
            OrganClass::Flower => "flower",
            OrganClass::Fruit => "fruit",
            OrganClass::Stem => "stem",
            OrganClass::Hdl => "hdl",
        }
    }

    /// Display label used in text tables.
    pub fn label(self) -> &'static str {
        match self {
            OrganClass::Leaf => "Leaf",
            OrganClass::Flower => "Flower",
            OrganClass::Fruit => "Fruit",
            OrganClass::Stem => "Stem",
            OrganClass::Hdl => "HDL",
        }
    }

    /// COCO-style category id, 1-based in [`OrganClass::ALL`] order.
    pub fn category_id(self) -> u32 {
        self.index() as u32 + 1
    }

    pub fn from_category_id(id: u32) -> Option<Self> {
        match id {
            1..=5 => Some(Self::ALL[id as usize - 1]),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OrganClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrganClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leaf" => Ok(OrganClass::Leaf),
            "flower" => Ok(OrganClass::Flower),
            "fruit" => Ok(OrganClass::Fruit),
            "stem" => Ok(OrganClass::Stem),
            "hdl" => Ok(OrganClass::Hdl),
            other => Err(Error::validation(
                "organ",
                format!("unknown organ class '{other}'"),
            )),
        }
    }
}

impl Serialize for OrganClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for OrganClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "validation")]
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(
                "split",
                format!("unknown split '{other}'"),
            )),
        }
    }
}

/// Probability vector over the species vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SpeciesDistribution(Vec<f64>);

impl SpeciesDistribution {
    /// Validates a probability vector. Entries must be finite and
    /// non-negative; a total within [`DISTRIBUTION_TOLERANCE`] of 1 is
    /// renormalized, anything further off is rejected.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::validation("probs", "empty probability vector"));
        }
        if let Some(i) = probabilities
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0)
        {
            return Err(Error::validation(
                format!("probs[{i}]"),
                format!("invalid probability {}", probabilities[i]),
            ));
        }
        let total = exact_sum(probabilities.iter().copied());
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::validation(
                "probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        if (total - 1.0).abs() <= RENORMALIZE_EPSILON {
            return Ok(Self(probabilities));
        }
        Ok(Self(probabilities.into_iter().map(|p| p / total).collect()))
    }

    /// Point mass on `species`.
    pub fn one_hot(species: usize, len: usize) -> Self {
        let mut v = vec![0.0; len];
        v[species] = 1.0;
        Self(v)
    }

    /// Wraps a vector the caller has already normalized. Only for crate
    /// internals whose construction guarantees the invariants.
    pub(crate) fn from_normalized(probabilities: Vec<f64>) -> Self {
        debug_assert!(probabilities.iter().all(|p| *p >= 0.0));
        Self(probabilities)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable species; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0).expect("distribution is non-empty")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for SpeciesDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        SpeciesDistribution::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    /// Index into the manifest's species vocabulary.
    pub species: usize,
    pub query_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAnnotation {
    pub image_id: String,
    pub organ: OrganClass,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub organ: OrganClass,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        organ: OrganClass,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(
                "score",
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        Ok(Self {
            image_id: image_id.into(),
            organ,
            bbox,
            confidence,
        })
    }
}

/// One detected organ crop and the species distribution its organ's
/// classifier assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPrediction {
    pub image_id: String,
    pub roi_index: usize,
    pub organ: OrganClass,
    pub bbox: BoundingBox,
    pub distribution: SpeciesDistribution,
}

/// Validated collection of images, annotations and (optionally) split
/// assignments over a species vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    species: Vec<String>,
    images: Vec<ImageRecord>,
    annotations: Vec<GroundTruthAnnotation>,
    splits: Option<BTreeMap<String, Split>>,
    index: HashMap<String, usize>,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.species == other.species
            && self.images == other.images
            && self.annotations == other.annotations
            && self.splits == other.splits
    }
}

impl DatasetManifest {
    pub fn new(
        species: Vec<String>,
        images: Vec<ImageRecord>,
        annotations: Vec<GroundTruthAnnotation>,
        splits: Option<BTreeMap<String, Split>>,
    ) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::validation("species", "empty species vocabulary"));
        }
        let mut seen = HashSet::new();
        for (i, name) in species.iter().enumerate() {
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(
                    format!("species[{i}]"),
                    format!("duplicate species name '{name}'"),
                ));
            }
        }

        let mut index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            let rec = || format!("images[{i}]");
            if img.image_id.is_empty() {
                return Err(Error::validation(rec(), "empty image_id"));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::validation(
                    rec(),
                    format!("image '{}' has zero size", img.image_id),
                ));
            }
            if img.species >= species.len() {
                return Err(Error::validation(
                    rec(),
                    format!(
                        "image '{}' species index {} outside vocabulary of {}",
                        img.image_id,
                        img.species,
                        species.len()
                    ),
                ));
            }
            if index.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::validation(
                    rec(),
                    format!("duplicate image_id '{}'", img.image_id),
                ));
            }
        }

        let manifest = Self {
            species,
            images,
            annotations,
            splits: None,
            index,
        };
        for (i, ann) in manifest.annotations.iter().enumerate() {
            manifest.check_box(&format!("annotations[{i}]"), &ann.image_id, &ann.bbox)?;
        }
        match splits {
            Some(s) => manifest.with_splits(s),
            None => Ok(manifest),
        }
    }

    /// Replaces the split assignments. Every key must name a manifest image.
    pub fn with_splits(mut self, splits: BTreeMap<String, Split>) -> Result<Self> {
        if let Some(id) = splits.keys().find(|id| !self.index.contains_key(*id)) {
            return Err(Error::validation(
                format!("splits['{id}']"),
                format!("image_id '{id}' not found in manifest"),
            ));
        }
        self.splits = Some(splits);
        Ok(self)
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[GroundTruthAnnotation] {
        &self.annotations
    }

    pub fn splits(&self) -> Option<&BTreeMap<String, Split>> {
        self.splits.as_ref()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.index.get(image_id).map(|&i| &self.images[i])
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.splits.as_ref()?.get(image_id).copied()
    }

    fn check_box(&self, record: &str, image_id: &str, bbox: &BoundingBox) -> Result<()> {
        let img = self.image(image_id).ok_or_else(|| {
            Error::validation(
                record,
                format!("image_id '{image_id}' not found in manifest"),
            )
        })?;
        if !bbox.fits_within(f64::from(img.width), f64::from(img.height)) {
            return Err(Error::validation(
                record,
                format!(
                    "box {:?} exceeds image '{}' bounds {}x{}",
                    bbox.to_xywh(),
                    image_id,
                    img.width,
                    img.height
                ),
            ));
        }
        Ok(())
    }

    /// Checks that every detection refers to a known image and lies inside it.
    pub fn check_detections(&self, detections: &[Detection]) -> Result<()> {
        for (i, d) in detections.iter().enumerate() {
            self.check_box(&format!("detections[{i}]"), &d.image_id, &d.bbox)?;
        }
        Ok(())
    }

    /// Checks image references, box bounds, vocabulary length and
    /// `(image_id, roi_index)` uniqueness.
    pub fn check_roi_predictions(&self, rois: &[RoiPrediction]) -> Result<()> {
        let mut keys = HashSet::with_capacity(rois.len());
        for (i, r) in rois.iter().enumerate() {
            let rec = format!("rois[{i}]");
            self.check_box(&rec, &r.image_id, &r.bbox)?;
            if r.distribution.len() != self.species.len() {
                return Err(Error::validation(
                    rec,
                    format!(
                        "distribution has {} entries, vocabulary has {}",
                        r.distribution.len(),
                        self.species.len()
                    ),
                ));
            }
            if !keys.insert((r.image_id.as_str(), r.roi_index)) {
                return Err(Error::validation(
                    rec,
                    format!("duplicate roi ({}, {})", r.image_id, r.roi_index),
                ));
            }
        }
        Ok(())
    }

    /// Images assigned to `split`, or every image when `split` is `None`.
    /// Requesting a split from a manifest without assignments is an error.
    pub fn images_in(&self, split: Option<Split>) -> Result<Vec<&ImageRecord>> {
        match split {
            None => Ok(self.images.iter().collect()),
            Some(s) => {
                let splits = self.splits.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "split '{s}' requested but manifest has no split assignments"
                    ))
                })?;
                Ok(self
                    .images
                    .iter()
                    .filter(|img| splits.get(&img.image_id) == Some(&s))
                    .collect())
            }
        }
    }
}
