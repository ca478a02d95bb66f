//! Organ-routed information fusion.
//!
//! Each ROI carries `p(s | o_i)` from the classifier of its organ class. The
//! rules combine a variable number of these into one per-image distribution:
//!
//! * sum: `p(s) = sum_i p(s|o_i) w(o_i) / sum_i w(o_i)`; a uniform prior gives
//!   the plain average.
//! * product: `p(s) ∝ prod_i max(p(s|o_i), ε)`, evaluated in the log domain.
//! * voting: the sum rule applied to one-hot argmax vectors.
//!
//! All reductions use [`exact_sum`], so every rule is exactly invariant to the
//! order of the ROI list.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OrganClass, RoiPrediction, SpeciesDistribution};
use crate::numeric::{argmax, exact_sum};
use crate::parallel::map_ordered;

/// Floor applied to probabilities before taking logs in the product rule.
pub const PRODUCT_EPSILON: f64 = 1e-12;

const PRIOR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    Sum,
    Product,
    Voting,
}

impl FusionRule {
    pub const ALL: [FusionRule; 3] = [FusionRule::Sum, FusionRule::Product, FusionRule::Voting];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Sum => "sum",
            FusionRule::Product => "product",
            FusionRule::Voting => "voting",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionRule::Sum => "Sum",
            FusionRule::Product => "Product",
            FusionRule::Voting => "Voting",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(FusionRule::Sum),
            "product" => Ok(FusionRule::Product),
            "voting" | "vote" => Ok(FusionRule::Voting),
            other => Err(Error::Config(format!("unknown fusion rule '{other}'"))),
        }
    }
}

/// Prior weight `p(o)` per organ class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganPrior {
    weights: BTreeMap<OrganClass, f64>,
}

impl Default for OrganPrior {
    fn default() -> Self {
        Self::uniform()
    }
}

impl OrganPrior {
    pub fn uniform() -> Self {
        Self {
            weights: OrganClass::ALL.iter().map(|&o| (o, 0.2)).collect(),
        }
    }

    /// Organs missing from `weights` get weight 0. Weights must be finite,
    /// non-negative and sum to 1 within 1e-6.
    pub fn new(weights: BTreeMap<OrganClass, f64>) -> Result<Self> {
        if let Some((o, w)) = weights.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::validation(
                format!("prior.{o}"),
                format!("invalid weight {w}"),
            ));
        }
        let total = exact_sum(weights.values().copied());
        if (total - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(Error::validation(
                "prior",
                format!("weights sum to {total}, not 1"),
            ));
        }
        let mut full: BTreeMap<OrganClass, f64> =
            OrganClass::ALL.iter().map(|&o| (o, 0.0)).collect();
        full.extend(weights);
        Ok(Self { weights: full })
    }

    pub fn weight(&self, organ: OrganClass) -> f64 {
        self.weights.get(&organ).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<OrganClass, f64> {
        &self.weights
    }
}

/// Fused per-image prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedPrediction {
    pub image_id: String,
    pub rule: FusionRule,
    pub predicted_species: usize,
    #[serde(rename = "fused_probs")]
    pub fused_distribution: SpeciesDistribution,
    pub roi_count: usize,
}

fn common_len(vectors: &[&[f64]]) -> Result<usize> {
    let len = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::Empty("no detections for image".into()))?;
    if len == 0 {
        return Err(Error::validation("rois", "empty probability vector"));
    }
    if let Some(i) = vectors.iter().position(|v| v.len() != len) {
        return Err(Error::validation(
            format!("rois[{i}]"),
            format!("vector length {} differs from {len}", vectors[i].len()),
        ));
    }
    Ok(len)
}

/// Prior-weighted mean of `vectors`. Zero-weight vectors are ignored; when
/// all remaining weights are equal the result is the plain mean.
pub fn weighted_mean(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let len = common_len(vectors)?;
    assert_eq!(vectors.len(), weights.len());
    let used: Vec<(&[f64], f64)> = vectors
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, &w)| (*v, w))
        .collect();
    if used.is_empty() {
        return Err(Error::Empty(
            "every ROI organ has zero prior weight; nothing to fuse".into(),
        ));
    }
    let equal = used.iter().all(|(_, w)| *w == used[0].1);
    let out = if equal {
        let n = used.len() as f64;
        (0..len)
            .map(|s| exact_sum(used.iter().map(|(v, _)| v[s])) / n)
            .collect()
    } else {
        let total = exact_sum(used.iter().map(|(_, w)| *w));
        (0..len)
            .map(|s| exact_sum(used.iter().map(|(v, w)| v[s] * w)) / total)
            .collect()
    };
    Ok(out)
}

/// Normalized elementwise product of non-negative `vectors`, each entry
/// floored at [`PRODUCT_EPSILON`]. Inputs need not be normalized.
pub fn product_of_vectors(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let len = common_len(vectors)?;
    let log_scores: Vec<f64> = (0..len)
        .map(|s| exact_sum(vectors.iter().map(|v| v[s].max(PRODUCT_EPSILON).ln())))
        .collect();
    let top = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scores: Vec<f64> = log_scores.iter().map(|l| (l - top).exp()).collect();
    let total = exact_sum(scores.iter().copied());
    Ok(scores.into_iter().map(|s| s / total).collect())
}

fn check_rois(rois: &[RoiPrediction]) -> Result<()> {
    if rois.is_empty() {
        return Err(Error::Empty("no detections for image".into()));
    }
    Ok(())
}

fn prior_weights(rois: &[RoiPrediction], prior: &OrganPrior) -> Vec<f64> {
    rois.iter().map(|r| prior.weight(r.organ)).collect()
}

pub fn fuse_sum(rois: &[RoiPrediction], prior: &OrganPrior) -> Result<SpeciesDistribution> {
    check_rois(rois)?;
    let vectors: Vec<&[f64]> = rois.iter().map(|r| r.distribution.probs()).collect();
    let fused = weighted_mean(&vectors, &prior_weights(rois, prior))?;
    Ok(SpeciesDistribution::from_normalized(fused))
}

/// Product rule. The organ prior only gates participation: ROIs whose organ
/// has zero weight are left out; the remaining ones enter unweighted.
pub fn fuse_product(rois: &[RoiPrediction], prior: &OrganPrior) -> Result<SpeciesDistribution> {
    check_rois(rois)?;
    let vectors: Vec<&[f64]> = rois
        .iter()
        .filter(|r| prior.weight(r.organ) > 0.0)
        .map(|r| r.distribution.probs())
        .collect();
    if vectors.is_empty() {
        return Err(Error::Empty(
            "every ROI organ has zero prior weight; nothing to fuse".into(),
        ));
    }
    Ok(SpeciesDistribution::from_normalized(product_of_vectors(
        &vectors,
    )?))
}

pub fn fuse_vote(rois: &[RoiPrediction], prior: &OrganPrior) -> Result<SpeciesDistribution> {
    check_rois(rois)?;
    let len = rois[0].distribution.len();
    let votes: Vec<Vec<f64>> = rois
        .iter()
        .map(|r| {
            let mut v = vec![0.0; r.distribution.len()];
            v[r.distribution.argmax()] = 1.0;
            v
        })
        .collect();
    let vectors: Vec<&[f64]> = votes.iter().map(|v| v.as_slice()).collect();
    let fused = weighted_mean(&vectors, &prior_weights(rois, prior))?;
    debug_assert_eq!(fused.len(), len);
    Ok(SpeciesDistribution::from_normalized(fused))
}

pub fn fuse(
    rois: &[RoiPrediction],
    rule: FusionRule,
    prior: &OrganPrior,
) -> Result<SpeciesDistribution> {
    match rule {
        FusionRule::Sum => fuse_sum(rois, prior),
        FusionRule::Product => fuse_product(rois, prior),
        FusionRule::Voting => fuse_vote(rois, prior),
    }
}

/// Fuses the ROIs of one image and picks the most probable species (lowest
/// index on ties).
pub fn predict_species(
    rois: &[RoiPrediction],
    rule: FusionRule,
    prior: &OrganPrior,
) -> Result<FusedPrediction> {
    check_rois(rois)?;
    let image_id = &rois[0].image_id;
    if let Some(r) = rois.iter().find(|r| &r.image_id != image_id) {
        return Err(Error::validation(
            format!("rois[{}]", r.roi_index),
            format!("mixes images '{}' and '{}'", image_id, r.image_id),
        ));
    }
    let fused = fuse(rois, rule, prior)?;
    Ok(FusedPrediction {
        image_id: image_id.clone(),
        rule,
        predicted_species: argmax(fused.probs()).expect("non-empty"),
        fused_distribution: fused,
        roi_count: rois.len(),
    })
}

/// Groups ROI predictions by image id (sorted), each group in `roi_index` order.
pub fn group_by_image(rois: &[RoiPrediction]) -> BTreeMap<String, Vec<RoiPrediction>> {
    let mut groups: BTreeMap<String, Vec<RoiPrediction>> = BTreeMap::new();
    for r in rois {
        groups
            .entry(r.image_id.clone())
            .or_default()
            .push(r.clone());
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.roi_index);
    }
    groups
}

/// Fuses every image under every requested rule. Output is ordered by image id,
/// then by rule order in `rules`.
pub fn fuse_all(
    rois: &[RoiPrediction],
    rules: &[FusionRule],
    prior: &OrganPrior,
    workers: usize,
) -> Result<Vec<FusedPrediction>> {
    let groups: Vec<Vec<RoiPrediction>> = group_by_image(rois).into_values().collect();
    let per_image = map_ordered(&groups, workers, |g| {
        rules
            .iter()
            .map(|&rule| predict_species(g, rule, prior))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = Vec::new();
    for r in per_image {
        out.extend(r?);
    }
    Ok(out)
}
