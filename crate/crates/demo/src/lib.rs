//! Browser bindings for three interactive explorers: NMS on editable boxes,
//! fusion of hand-entered ROI vectors, and a small simulation run.
//!
//! Each export takes and returns a JSON string; the `*_json` functions hold
//! the logic and are usable (and tested) natively.

use std::collections::BTreeMap;

use organfuse::class_eval::{evaluate_species_id, FallbackPolicy, SpeciesIdConfig};
use organfuse::detection::nms;
use organfuse::fusion::{fuse, FusionRule, OrganPrior};
use organfuse::sim::{generate, SimulatorConfig, SpeciesProfile};
use organfuse::{BoundingBox, Detection, OrganClass, RoiPrediction, SpeciesDistribution};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
struct BoxIn {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    score: f64,
    #[serde(default = "default_organ")]
    organ: String,
}

fn default_organ() -> String {
    "leaf".into()
}

#[derive(Deserialize)]
struct NmsIn {
    boxes: Vec<BoxIn>,
    threshold: f64,
}

#[derive(Serialize)]
struct NmsOut {
    /// Input indices of kept boxes, in keep order.
    kept: Vec<usize>,
    /// Pairwise IoU matrix over the input boxes.
    iou: Vec<Vec<f64>>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn organ(name: &str) -> Result<OrganClass, String> {
    name.parse().map_err(|_| format!("unknown organ '{name}'"))
}

pub fn nms_json(input: &str) -> Result<String, String> {
    let req: NmsIn = serde_json::from_str(input).map_err(err)?;
    let dets = req
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let bbox = BoundingBox::new(b.x0, b.y0, b.x1, b.y1).map_err(err)?;
            Detection::new("canvas", organ(&b.organ)?, bbox, b.score)
                .map_err(|e| format!("box {i}: {e}"))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let kept_dets = nms_single_image(&dets, req.threshold);
    let iou = dets
        .iter()
        .map(|a| dets.iter().map(|b| a.bbox.iou(&b.bbox)).collect())
        .collect();
    serde_json::to_string(&NmsOut {
        kept: kept_dets,
        iou,
    })
    .map_err(err)
}

fn nms_single_image(dets: &[Detection], threshold: f64) -> Vec<usize> {
    let kept = nms(dets, threshold);
    // Identical boxes are kept in input order, so claim the first free match.
    let mut claimed = vec![false; dets.len()];
    kept.iter()
        .map(|k| {
            let i = (0..dets.len())
                .find(|&i| !claimed[i] && dets[i] == *k)
                .expect("kept box comes from the input");
            claimed[i] = true;
            i
        })
        .collect()
}

#[derive(Deserialize)]
struct RoiIn {
    organ: String,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct FuseIn {
    rois: Vec<RoiIn>,
    #[serde(default)]
    prior: Option<BTreeMap<String, f64>>,
}

pub fn fuse_json(input: &str) -> Result<String, String> {
    let req: FuseIn = serde_json::from_str(input).map_err(err)?;
    let prior = match req.prior {
        Some(map) => {
            let weights = map
                .iter()
                .map(|(k, v)| Ok((organ(k)?, *v)))
                .collect::<Result<BTreeMap<_, _>, String>>()?;
            OrganPrior::new(weights).map_err(err)?
        }
        None => OrganPrior::uniform(),
    };
    let rois = req
        .rois
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(RoiPrediction {
                image_id: "canvas".into(),
                roi_index: i,
                organ: organ(&r.organ)?,
                bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).map_err(err)?,
                distribution: SpeciesDistribution::new(r.probs.clone())
                    .map_err(|e| format!("roi {i}: {e}"))?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    if let Some(r) = rois
        .iter()
        .find(|r| r.distribution.len() != rois[0].distribution.len())
    {
        return Err(format!(
            "roi {} has a different number of species",
            r.roi_index
        ));
    }
    let mut out = serde_json::Map::new();
    for rule in FusionRule::ALL {
        let f = fuse(&rois, rule, &prior).map_err(err)?;
        out.insert(
            rule.as_str().into(),
            json!({ "probs": f.probs(), "argmax": f.argmax() }),
        );
    }
    serde_json::to_string(&out).map_err(err)
}

#[derive(Deserialize)]
struct SimIn {
    species: usize,
    images_per_species: usize,
    #[serde(default)]
    accuracy: BTreeMap<String, f64>,
    #[serde(default = "default_spread")]
    spread: f64,
    #[serde(default)]
    seed: u64,
}

fn default_spread() -> f64 {
    0.4
}

pub fn simulate_json(input: &str) -> Result<String, String> {
    let req: SimIn = serde_json::from_str(input).map_err(err)?;
    if req.species * req.images_per_species > 20_000 {
        return Err("keep species x images at or below 20000 in the browser".into());
    }
    let mut cfg = SimulatorConfig {
        species_count: req.species,
        profile: SpeciesProfile::Uniform {
            images_per_species: req.images_per_species,
        },
        spread: req.spread,
        seed: req.seed,
        ..SimulatorConfig::default()
    };
    for (k, v) in &req.accuracy {
        cfg.organ_accuracy.insert(organ(k)?, *v);
    }
    let corpus = generate(&cfg, 1).map_err(err)?;
    let report = evaluate_species_id(
        &corpus.manifest,
        &corpus.rois,
        &SpeciesIdConfig {
            rules: FusionRule::ALL.to_vec(),
            prior: OrganPrior::uniform(),
            fallback: FallbackPolicy::Skip,
            whole_image: None,
            split: None,
            workers: 1,
        },
    )
    .map_err(err)?;
    serde_json::to_string(&json!({
        "images": corpus.manifest.images().len(),
        "rois": corpus.rois.len(),
        "per_organ": report.per_organ,
        "per_rule": report.per_rule,
        "images_without_rois": report.counts.images_without_rois,
    }))
    .map_err(err)
}

#[wasm_bindgen]
pub fn nms_explore(input: &str) -> Result<String, JsValue> {
    nms_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fuse_explore(input: &str) -> Result<String, JsValue> {
    fuse_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate_explore(input: &str) -> Result<String, JsValue> {
    simulate_json(input).map_err(|e| JsValue::from_str(&e))
}
