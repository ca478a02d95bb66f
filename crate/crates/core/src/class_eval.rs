//! Organ-level classifier accuracy, confusion matrices and per-image fused
//! species identification accuracy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fusion::{group_by_image, predict_species, FusionRule, OrganPrior};
use crate::model::{DatasetManifest, OrganClass, RoiPrediction, SpeciesDistribution, Split};
use crate::parallel::map_ordered;

/// Square count matrix indexed by (true species, predicted species).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counts: vec![0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.size + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.size + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.size.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    /// `trace / total`, or `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Non-zero cells as `(truth, predicted, count)` in row-major order.
    pub fn nonzero(&self) -> Vec<(usize, usize, u64)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i / self.size, i % self.size, c))
            .collect()
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("ConfusionMatrix", 2)?;
        st.serialize_field("size", &self.size)?;
        st.serialize_field("cells", &self.nonzero())?;
        st.end()
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganAccuracy {
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Per-organ classifier results; organs without predictions are absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganClassReport {
    pub per_organ: BTreeMap<OrganClass, OrganAccuracy>,
}

fn scoped_images(
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<BTreeMap<&str, usize>> {
    Ok(manifest
        .images_in(split)?
        .into_iter()
        .map(|img| (img.image_id.as_str(), img.species))
        .collect())
}

/// Scores each ROI's argmax against its image's species label, grouped by
/// the organ classifier that produced it.
pub fn evaluate_organ_classifiers(
    manifest: &DatasetManifest,
    rois: &[RoiPrediction],
    split: Option<Split>,
) -> Result<OrganClassReport> {
    manifest.check_roi_predictions(rois)?;
    let scope = scoped_images(manifest, split)?;
    let mut matrices: BTreeMap<OrganClass, ConfusionMatrix> = BTreeMap::new();
    for r in rois {
        let Some(&truth) = scope.get(r.image_id.as_str()) else {
            continue;
        };
        matrices
            .entry(r.organ)
            .or_insert_with(|| ConfusionMatrix::new(manifest.species_count()))
            .record(truth, r.distribution.argmax());
    }
    let per_organ = matrices
        .into_iter()
        .map(|(o, m)| {
            let (evaluated, correct) = (m.total() as usize, m.trace() as usize);
            (
                o,
                OrganAccuracy {
                    evaluated,
                    correct,
                    accuracy: percent(correct, evaluated),
                    confusion: m,
                },
            )
        })
        .collect();
    Ok(OrganClassReport { per_organ })
}

/// What to do with images that have no ROI predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    /// Leave them out of the accuracy denominator.
    Skip,
    /// Use the whole-image classifier's prediction for every rule.
    WholeImage,
}

impl fmt::Display for FallbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FallbackPolicy::Skip => "skip",
            FallbackPolicy::WholeImage => "whole-image",
        })
    }
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(FallbackPolicy::Skip),
            "whole-image" => Ok(FallbackPolicy::WholeImage),
            other => Err(Error::Config(format!("unknown fallback policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvaluationCounts {
    /// Images in the evaluated split.
    pub images_in_scope: usize,
    /// Images in the accuracy denominator.
    pub images_evaluated: usize,
    pub images_without_rois: usize,
    pub images_with_fallback: usize,
    pub rois_evaluated: usize,
    pub baseline_images: usize,
}

/// Accuracies in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_organ: BTreeMap<OrganClass, f64>,
    pub per_rule: BTreeMap<FusionRule, f64>,
    pub baseline: Option<f64>,
    pub counts: EvaluationCounts,
}

#[derive(Debug, Clone)]
pub struct SpeciesIdConfig<'a> {
    pub rules: Vec<FusionRule>,
    pub prior: OrganPrior,
    pub fallback: FallbackPolicy,
    /// Whole-image classifier outputs: the fallback source and the baseline.
    pub whole_image: Option<&'a BTreeMap<String, SpeciesDistribution>>,
    pub split: Option<Split>,
    pub workers: usize,
}

impl Default for SpeciesIdConfig<'_> {
    fn default() -> Self {
        Self {
            rules: FusionRule::ALL.to_vec(),
            prior: OrganPrior::uniform(),
            fallback: FallbackPolicy::Skip,
            whole_image: None,
            split: Some(Split::Test),
            workers: 1,
        }
    }
}

enum ImageOutcome {
    Fused(Vec<bool>),
    Fallback(bool),
    Skipped,
}

/// Per-image species identification accuracy for each fusion rule.
pub fn evaluate_species_id(
    manifest: &DatasetManifest,
    rois: &[RoiPrediction],
    config: &SpeciesIdConfig<'_>,
) -> Result<AccuracyReport> {
    if config.rules.is_empty() {
        return Err(Error::Config("no fusion rules selected".into()));
    }
    if config.fallback == FallbackPolicy::WholeImage && config.whole_image.is_none() {
        return Err(Error::Config(
            "whole-image fallback needs whole-image predictions".into(),
        ));
    }
    if let Some(w) = config.whole_image {
        for (id, d) in w {
            if manifest.image(id).is_none() {
                return Err(Error::validation(
                    format!("whole-image['{id}']"),
                    format!("image_id '{id}' not found in manifest"),
                ));
            }
            if d.len() != manifest.species_count() {
                return Err(Error::validation(
                    format!("whole-image['{id}']"),
                    "distribution length differs from vocabulary",
                ));
            }
        }
    }
    let organ_report = evaluate_organ_classifiers(manifest, rois, config.split)?;
    let scope = manifest.images_in(config.split)?;
    let mut groups = group_by_image(rois);

    let work: Vec<(&str, usize, Vec<RoiPrediction>)> = scope
        .iter()
        .map(|img| {
            (
                img.image_id.as_str(),
                img.species,
                groups.remove(&img.image_id).unwrap_or_default(),
            )
        })
        .collect();

    let outcomes = map_ordered(
        &work,
        config.workers,
        |(id, truth, image_rois)| -> Result<ImageOutcome> {
            if image_rois.is_empty() {
                return Ok(match config.fallback {
                    FallbackPolicy::Skip => ImageOutcome::Skipped,
                    FallbackPolicy::WholeImage => {
                        let d = config.whole_image.and_then(|w| w.get(*id)).ok_or_else(|| {
                            Error::validation(
                                format!("image '{id}'"),
                                "no ROIs and no whole-image prediction for fallback",
                            )
                        })?;
                        ImageOutcome::Fallback(d.argmax() == *truth)
                    }
                });
            }
            config
                .rules
                .iter()
                .map(|&rule| {
                    predict_species(image_rois, rule, &config.prior)
                        .map(|p| p.predicted_species == *truth)
                })
                .collect::<Result<Vec<_>>>()
                .map(ImageOutcome::Fused)
        },
    )?;

    let mut counts = EvaluationCounts {
        images_in_scope: scope.len(),
        ..Default::default()
    };
    let mut correct = vec![0usize; config.rules.len()];
    for outcome in outcomes {
        match outcome? {
            ImageOutcome::Fused(hits) => {
                counts.images_evaluated += 1;
                for (c, h) in correct.iter_mut().zip(hits) {
                    *c += usize::from(h);
                }
            }
            ImageOutcome::Fallback(hit) => {
                counts.images_evaluated += 1;
                counts.images_without_rois += 1;
                counts.images_with_fallback += 1;
                for c in correct.iter_mut() {
                    *c += usize::from(hit);
                }
            }
            ImageOutcome::Skipped => counts.images_without_rois += 1,
        }
    }
    if counts.images_evaluated == 0 {
        return Err(Error::Empty("no evaluable images".into()));
    }
    counts.rois_evaluated = organ_report.per_organ.values().map(|o| o.evaluated).sum();

    let baseline = config.whole_image.and_then(|w| {
        let (mut hit, mut n) = (0, 0);
        for img in &scope {
            if let Some(d) = w.get(&img.image_id) {
                n += 1;
                hit += usize::from(d.argmax() == img.species);
            }
        }
        counts.baseline_images = n;
        (n > 0).then(|| percent(hit, n))
    });

    Ok(AccuracyReport {
        per_organ: organ_report
            .per_organ
            .iter()
            .map(|(o, a)| (*o, a.accuracy))
            .collect(),
        per_rule: config
            .rules
            .iter()
            .zip(&correct)
            .map(|(&r, &c)| (r, percent(c, counts.images_evaluated)))
            .collect(),
        baseline,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BoundingBox;
    use crate::model::ImageRecord;

    fn manifest(labels: &[usize], species: usize) -> DatasetManifest {
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, &s)| ImageRecord {
                image_id: format!("i{i}"),
                width: 100,
                height: 100,
                species: s,
                query_id: None,
            })
            .collect();
        let names = (0..species).map(|k| format!("sp{k}")).collect();
        DatasetManifest::new(names, images, vec![], None).unwrap()
    }

    fn roi(image: usize, idx: usize, organ: OrganClass, p: &[f64]) -> RoiPrediction {
        RoiPrediction {
            image_id: format!("i{image}"),
            roi_index: idx,
            organ,
            bbox: BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap(),
            distribution: SpeciesDistribution::new(p.to_vec()).unwrap(),
        }
    }

    fn all_images() -> SpeciesIdConfig<'static> {
        SpeciesIdConfig {
            split: None,
            ..Default::default()
        }
    }

    #[test]
    fn half_correct_leaf_classifier() {
        let m = manifest(&[0, 0], 2);
        let rois = [
            roi(0, 0, OrganClass::Leaf, &[0.9, 0.1]),
            roi(1, 0, OrganClass::Leaf, &[0.2, 0.8]),
        ];
        let r = evaluate_organ_classifiers(&m, &rois, None).unwrap();
        let leaf = &r.per_organ[&OrganClass::Leaf];
        assert_eq!(leaf.accuracy, 50.0);
        assert_eq!(leaf.confusion.get(0, 0), 1);
        assert_eq!(leaf.confusion.get(0, 1), 1);
        assert_eq!(leaf.confusion.row_sums(), vec![2, 0]);
        assert!(!r.per_organ.contains_key(&OrganClass::Stem));
        assert_eq!(
            serde_json::to_string(&leaf.confusion).unwrap(),
            r#"{"size":2,"cells":[[0,0,1],[0,1,1]]}"#
        );
    }

    #[test]
    fn single_correct_roi_per_image_scores_100_everywhere() {
        let m = manifest(&[0, 1, 2], 3);
        let rois = [
            roi(0, 0, OrganClass::Leaf, &[0.5, 0.3, 0.2]),
            roi(1, 0, OrganClass::Fruit, &[0.1, 0.6, 0.3]),
            roi(2, 0, OrganClass::Hdl, &[0.3, 0.3, 0.4]),
        ];
        let r = evaluate_species_id(&m, &rois, &all_images()).unwrap();
        assert!(r.per_rule.values().all(|&a| a == 100.0));
        assert_eq!(r.per_rule.len(), 3);
    }

    #[test]
    fn sum_beats_voting_fixture() {
        // Image 0 (species 0): one confident correct ROI and two weak wrong ones.
        // Sum: [0.95+0.45+0.45, 0.05+0.55+0.55]/3 -> species 0; votes: 0,1,1 -> 1.
        // Image 1 (species 1): both rules right.
        let m = manifest(&[0, 1], 2);
        let rois = [
            roi(0, 0, OrganClass::Leaf, &[0.95, 0.05]),
            roi(0, 1, OrganClass::Flower, &[0.45, 0.55]),
            roi(0, 2, OrganClass::Fruit, &[0.45, 0.55]),
            roi(1, 0, OrganClass::Leaf, &[0.2, 0.8]),
        ];
        let cfg = SpeciesIdConfig {
            rules: vec![FusionRule::Sum, FusionRule::Voting],
            ..all_images()
        };
        let r = evaluate_species_id(&m, &rois, &cfg).unwrap();
        assert_eq!(r.per_rule[&FusionRule::Sum], 100.0);
        assert_eq!(r.per_rule[&FusionRule::Voting], 50.0);
    }

    #[test]
    fn fallback_policies() {
        let m = manifest(&[0, 1], 2);
        let rois = [roi(0, 0, OrganClass::Leaf, &[0.9, 0.1])];
        let skip = evaluate_species_id(&m, &rois, &all_images()).unwrap();
        assert_eq!(skip.counts.images_evaluated, 1);
        assert_eq!(skip.counts.images_without_rois, 1);
        assert_eq!(skip.per_rule[&FusionRule::Sum], 100.0);

        let whole: BTreeMap<String, SpeciesDistribution> = [
            (
                "i0".to_string(),
                SpeciesDistribution::new(vec![0.4, 0.6]).unwrap(),
            ),
            (
                "i1".to_string(),
                SpeciesDistribution::new(vec![0.3, 0.7]).unwrap(),
            ),
        ]
        .into_iter()
        .collect();
        let cfg = SpeciesIdConfig {
            fallback: FallbackPolicy::WholeImage,
            whole_image: Some(&whole),
            ..all_images()
        };
        let r = evaluate_species_id(&m, &rois, &cfg).unwrap();
        assert_eq!(r.counts.images_evaluated, 2);
        assert_eq!(r.counts.images_with_fallback, 1);
        assert_eq!(r.per_rule[&FusionRule::Product], 100.0);
        assert_eq!(r.baseline, Some(50.0));

        let missing = SpeciesIdConfig {
            fallback: FallbackPolicy::WholeImage,
            ..all_images()
        };
        assert!(matches!(
            evaluate_species_id(&m, &rois, &missing),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nothing_to_evaluate() {
        let m = manifest(&[0], 2);
        assert!(matches!(
            evaluate_species_id(&m, &[], &all_images()),
            Err(Error::Empty(_))
        ));
        // Default scope is the test split, which this manifest lacks.
        assert!(evaluate_species_id(&m, &[], &SpeciesIdConfig::default()).is_err());
    }
}
