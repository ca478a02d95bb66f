//! File formats.
//!
//! * Manifest: one JSON document `{species, images, annotations, splits?}`.
//! * Detections: JSON array of `{image_id, organ | category_id, bbox, score}`.
//! * ROI predictions: JSON lines of `{image_id, roi_index, organ, bbox, probs}`.
//! * Whole-image predictions: JSON lines of `{image_id, probs}`.
//! * Split assignments: JSON document with an `assignments` object, or a
//!   `split` report whose `report` holds one.
//! * Organ prior: JSON object mapping organ names to weights.
//!
//! Boxes are COCO `bbox: [x, y, width, height]`; `bbox_xyxy: [x0, y0, x1, y1]`
//! is accepted as an alternative and written only when the corner+size form
//! would not reproduce the corners exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::OrganPrior;
use crate::geom::BoundingBox;
use crate::model::{
    DatasetManifest, Detection, GroundTruthAnnotation, ImageRecord, OrganClass, RoiPrediction,
    SpeciesDistribution, Split,
};

#[derive(Debug, Serialize, Deserialize)]
struct WireManifest {
    species: Vec<String>,
    images: Vec<WireImage>,
    #[serde(default)]
    annotations: Vec<WireAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    splits: Option<BTreeMap<String, Split>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireImage {
    image_id: String,
    width: u32,
    height: u32,
    species: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireBox {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox_xyxy: Option<[f64; 4]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireOrgan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    organ: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category_id: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireAnnotation {
    image_id: String,
    #[serde(flatten)]
    organ: WireOrgan,
    #[serde(flatten)]
    bbox: WireBox,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDetection {
    image_id: String,
    #[serde(flatten)]
    organ: WireOrgan,
    #[serde(flatten)]
    bbox: WireBox,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRoi {
    image_id: String,
    roi_index: usize,
    #[serde(flatten)]
    organ: WireOrgan,
    #[serde(flatten)]
    bbox: WireBox,
    probs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireImagePrediction {
    image_id: String,
    probs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct WireSplits {
    assignments: BTreeMap<String, Split>,
}

/// A bare assignments file or a `split` report document wrapping one.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WireSplitsFile {
    Bare(WireSplits),
    Report { report: WireSplits },
}

impl WireOrgan {
    fn resolve(&self, record: &str) -> Result<OrganClass> {
        match (&self.organ, self.category_id) {
            (Some(name), _) => name
                .parse()
                .map_err(|_| Error::validation(record, format!("unknown organ class '{name}'"))),
            (None, Some(id)) => OrganClass::from_category_id(id).ok_or_else(|| {
                Error::validation(
                    record,
                    format!("category_id {id} is not an organ class (1-5)"),
                )
            }),
            (None, None) => Err(Error::validation(record, "missing organ / category_id")),
        }
    }

    fn from_organ(organ: OrganClass) -> Self {
        Self {
            organ: Some(organ.as_str().to_string()),
            category_id: None,
        }
    }
}

impl WireBox {
    fn resolve(&self, record: &str) -> Result<BoundingBox> {
        let located = |e: Error| match e {
            Error::Validation { message, .. } => Error::validation(record, message),
            other => other,
        };
        match (self.bbox, self.bbox_xyxy) {
            (Some([x, y, w, h]), _) => BoundingBox::from_xywh(x, y, w, h).map_err(located),
            (None, Some([x0, y0, x1, y1])) => BoundingBox::new(x0, y0, x1, y1).map_err(located),
            (None, None) => Err(Error::validation(record, "missing bbox")),
        }
    }

    fn from_box(b: &BoundingBox) -> Self {
        let xywh = b.to_xywh();
        let exact = xywh[0] + xywh[2] == b.x_max() && xywh[1] + xywh[3] == b.y_max();
        if exact {
            Self {
                bbox: Some(xywh),
                bbox_xyxy: None,
            }
        } else {
            Self {
                bbox: None,
                bbox_xyxy: Some([b.x_min(), b.y_min(), b.x_max(), b.y_max()]),
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_error(location: &str, e: serde_json::Error) -> Error {
    Error::parse(format!("{location}:{}:{}", e.line(), e.column()), e)
}

fn relocate(e: Error, prefix: &str) -> Error {
    match e {
        Error::Validation { record, message } => {
            Error::validation(format!("{prefix}{record}"), message)
        }
        other => other,
    }
}

pub fn parse_manifest(text: &str, location: &str) -> Result<DatasetManifest> {
    let wire: WireManifest = serde_json::from_str(text).map_err(|e| json_error(location, e))?;
    let images = wire
        .images
        .into_iter()
        .map(|w| ImageRecord {
            image_id: w.image_id,
            width: w.width,
            height: w.height,
            species: w.species,
            query_id: w.query_id,
        })
        .collect();
    let annotations = wire
        .annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let rec = format!("annotations[{i}]");
            Ok(GroundTruthAnnotation {
                image_id: a.image_id.clone(),
                organ: a.organ.resolve(&rec)?,
                bbox: a.bbox.resolve(&rec)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| relocate(e, &format!("{location}: ")))?;
    DatasetManifest::new(wire.species, images, annotations, wire.splits)
        .map_err(|e| relocate(e, &format!("{location}: ")))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    parse_manifest(&read(path)?, &path.display().to_string())
}

pub fn manifest_to_json(manifest: &DatasetManifest) -> String {
    let wire = WireManifest {
        species: manifest.species().to_vec(),
        images: manifest
            .images()
            .iter()
            .map(|i| WireImage {
                image_id: i.image_id.clone(),
                width: i.width,
                height: i.height,
                species: i.species,
                query_id: i.query_id.clone(),
            })
            .collect(),
        annotations: manifest
            .annotations()
            .iter()
            .map(|a| WireAnnotation {
                image_id: a.image_id.clone(),
                organ: WireOrgan::from_organ(a.organ),
                bbox: WireBox::from_box(&a.bbox),
            })
            .collect(),
        splits: manifest.splits().cloned(),
    };
    serde_json::to_string(&wire).expect("manifest serializes")
}

pub fn parse_detections(text: &str, location: &str) -> Result<Vec<Detection>> {
    let wire: Vec<WireDetection> =
        serde_json::from_str(text).map_err(|e| json_error(location, e))?;
    wire.iter()
        .enumerate()
        .map(|(i, d)| {
            let rec = format!("{location}: detections[{i}]");
            Detection::new(
                d.image_id.clone(),
                d.organ.resolve(&rec)?,
                d.bbox.resolve(&rec)?,
                d.score,
            )
            .map_err(|e| relocate(e, &format!("{rec}.")))
        })
        .collect()
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&read(path)?, &path.display().to_string())
}

pub fn detections_to_json(detections: &[Detection]) -> String {
    let wire: Vec<WireDetection> = detections
        .iter()
        .map(|d| WireDetection {
            image_id: d.image_id.clone(),
            organ: WireOrgan::from_organ(d.organ),
            bbox: WireBox::from_box(&d.bbox),
            score: d.confidence,
        })
        .collect();
    serde_json::to_string(&wire).expect("detections serialize")
}

fn json_lines<'a>(text: &'a str) -> impl Iterator<Item = (usize, &'a str)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_roi_predictions(text: &str, location: &str) -> Result<Vec<RoiPrediction>> {
    let mut out = Vec::new();
    for (line_no, line) in json_lines(text) {
        let rec = format!("{location}:{line_no}");
        let w: WireRoi = serde_json::from_str(line).map_err(|e| Error::parse(&rec, e))?;
        let distribution =
            SpeciesDistribution::new(w.probs).map_err(|e| relocate(e, &format!("{rec}: ")))?;
        out.push(RoiPrediction {
            organ: w.organ.resolve(&rec)?,
            bbox: w.bbox.resolve(&rec)?,
            image_id: w.image_id,
            roi_index: w.roi_index,
            distribution,
        });
    }
    Ok(out)
}

pub fn load_roi_predictions(path: &Path) -> Result<Vec<RoiPrediction>> {
    parse_roi_predictions(&read(path)?, &path.display().to_string())
}

pub fn roi_predictions_to_jsonl(rois: &[RoiPrediction]) -> String {
    let mut out = String::new();
    for r in rois {
        let w = WireRoi {
            image_id: r.image_id.clone(),
            roi_index: r.roi_index,
            organ: WireOrgan::from_organ(r.organ),
            bbox: WireBox::from_box(&r.bbox),
            probs: r.distribution.probs().to_vec(),
        };
        out.push_str(&serde_json::to_string(&w).expect("roi serializes"));
        out.push('\n');
    }
    out
}

/// Whole-image classifier outputs, keyed by image id.
pub fn parse_image_predictions(
    text: &str,
    location: &str,
) -> Result<BTreeMap<String, SpeciesDistribution>> {
    let mut out = BTreeMap::new();
    for (line_no, line) in json_lines(text) {
        let rec = format!("{location}:{line_no}");
        let w: WireImagePrediction =
            serde_json::from_str(line).map_err(|e| Error::parse(&rec, e))?;
        let d = SpeciesDistribution::new(w.probs).map_err(|e| relocate(e, &format!("{rec}: ")))?;
        if out.insert(w.image_id.clone(), d).is_some() {
            return Err(Error::validation(
                rec,
                format!("duplicate image_id '{}'", w.image_id),
            ));
        }
    }
    Ok(out)
}

pub fn load_image_predictions(path: &Path) -> Result<BTreeMap<String, SpeciesDistribution>> {
    parse_image_predictions(&read(path)?, &path.display().to_string())
}

pub fn image_predictions_to_jsonl(preds: &BTreeMap<String, SpeciesDistribution>) -> String {
    let mut out = String::new();
    for (id, d) in preds {
        let w = WireImagePrediction {
            image_id: id.clone(),
            probs: d.probs().to_vec(),
        };
        out.push_str(&serde_json::to_string(&w).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_splits(text: &str, location: &str) -> Result<BTreeMap<String, Split>> {
    let w: WireSplitsFile = serde_json::from_str(text).map_err(|e| json_error(location, e))?;
    Ok(match w {
        WireSplitsFile::Bare(s) | WireSplitsFile::Report { report: s } => s.assignments,
    })
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    parse_splits(&read(path)?, &path.display().to_string())
}

pub fn parse_prior(text: &str, location: &str) -> Result<OrganPrior> {
    let raw: BTreeMap<String, f64> =
        serde_json::from_str(text).map_err(|e| json_error(location, e))?;
    let mut weights = BTreeMap::new();
    for (k, v) in raw {
        let organ: OrganClass = k
            .parse()
            .map_err(|_| Error::validation(format!("{location}: {k}"), "unknown organ class"))?;
        weights.insert(organ, v);
    }
    OrganPrior::new(weights).map_err(|e| relocate(e, &format!("{location}: ")))
}

pub fn load_prior(path: &Path) -> Result<OrganPrior> {
    parse_prior(&read(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "species": ["Acer campestre"],
        "images": [{"image_id": "img-1", "width": 640, "height": 480, "species": 0}],
        "annotations": [{"image_id": "img-1", "organ": "Leaf", "bbox": [10, 20, 184, 199]}]
    }"#;

    #[test]
    fn minimal_manifest_loads() {
        let m = parse_manifest(MINIMAL, "mem").unwrap();
        assert_eq!(m.images().len(), 1);
        assert_eq!(m.annotations()[0].organ, OrganClass::Leaf);
        assert_eq!(m.annotations()[0].bbox.x_max(), 194.0);
    }

    #[test]
    fn category_ids_and_xyxy_accepted() {
        let text = r#"{"species": ["a"],
            "images": [{"image_id": "i", "width": 50, "height": 50, "species": 0}],
            "annotations": [{"image_id": "i", "category_id": 5, "bbox_xyxy": [1, 2, 30, 40]}]}"#;
        let m = parse_manifest(text, "mem").unwrap();
        assert_eq!(m.annotations()[0].organ, OrganClass::Hdl);
        assert_eq!(m.annotations()[0].bbox.height(), 38.0);
    }

    #[test]
    fn dangling_annotation_names_image() {
        let text = MINIMAL.replace(
            "\"image_id\": \"img-1\", \"organ\"",
            "\"image_id\": \"nope\", \"organ\"",
        );
        let err = parse_manifest(&text, "m.json").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(
            msg.contains("nope") && msg.contains("annotations[0]"),
            "{msg}"
        );
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_manifest("{", "m.json"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_roi_predictions("{]\n", "r"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn roi_probability_validation() {
        let ok = r#"{"image_id":"i","roi_index":0,"organ":"leaf","bbox":[0,0,5,5],"probs":[0.5,0.5000004]}"#;
        let rois = parse_roi_predictions(ok, "r").unwrap();
        let s: f64 = rois[0].distribution.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);

        let short = ok.replace("0.5000004", "0.3");
        assert!(matches!(
            parse_roi_predictions(&short, "r"),
            Err(Error::Validation { .. })
        ));
        let neg = ok.replace("[0.5,0.5000004]", "[-0.2,1.2]");
        let err = parse_roi_predictions(&neg, "r.jsonl").unwrap_err();
        assert!(err.to_string().contains("r.jsonl:1"), "{err}");
    }

    #[test]
    fn detections_validate_score() {
        let text = r#"[{"image_id":"i","organ":"stem","bbox":[0,0,5,5],"score":1.5}]"#;
        assert!(parse_detections(text, "d").is_err());
        let text = r#"[{"image_id":"i","organ":"stem","bbox":[0,0,5,5],"score":0.5}]"#;
        assert_eq!(parse_detections(text, "d").unwrap()[0].confidence, 0.5);
    }

    #[test]
    fn inexact_xywh_falls_back_to_corners() {
        let b = BoundingBox::new(0.1, 0.2, 0.7, 1e17).unwrap();
        let d = Detection::new("i", OrganClass::Leaf, b, 0.3).unwrap();
        let back = parse_detections(&detections_to_json(std::slice::from_ref(&d)), "d").unwrap();
        assert_eq!(back, vec![d]);
    }

    #[test]
    fn prior_file() {
        let p = parse_prior(r#"{"leaf": 0.75, "Flower": 0.25}"#, "p").unwrap();
        assert_eq!(p.weight(OrganClass::Leaf), 0.75);
        assert_eq!(p.weight(OrganClass::Stem), 0.0);
        assert!(parse_prior(r#"{"leaf": 0.5}"#, "p").is_err());
        assert!(parse_prior(r#"{"root": 1.0}"#, "p").is_err());
    }
}
