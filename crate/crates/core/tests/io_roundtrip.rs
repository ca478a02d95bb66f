mod common;

use std::collections::BTreeMap;

use common::*;
use organfuse::{
    io, DatasetManifest, Detection, GroundTruthAnnotation, OrganClass, RoiPrediction,
    SpeciesDistribution, Split,
};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = organfuse::BoundingBox> {
    (0.0..500.0f64, 0.0..500.0f64, 0.01..400.0f64, 0.01..400.0f64)
        .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
}

fn arb_organ() -> impl Strategy<Value = OrganClass> {
    (0..5usize).prop_map(|i| OrganClass::ALL[i])
}

fn arb_probs(s: usize) -> impl Strategy<Value = SpeciesDistribution> {
    proptest::collection::vec(0.0..1.0f64, s).prop_map(|raw| {
        let total: f64 = raw.iter().sum::<f64>() + 1e-3;
        let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let rest: f64 = v.iter().sum();
        v[0] += 1.0 - rest;
        SpeciesDistribution::new(v).unwrap()
    })
}

fn arb_manifest() -> impl Strategy<Value = DatasetManifest> {
    (1..4usize, 1..6usize).prop_flat_map(|(species, n_img)| {
        let images = proptest::collection::vec((0..species, any::<bool>()), n_img);
        let anns = proptest::collection::vec((0..n_img, arb_organ(), arb_box()), 0..10);
        let splits = proptest::option::of(proptest::collection::vec(0..3usize, n_img));
        (Just(species), images, anns, splits).prop_map(|(species, images, anns, splits)| {
            let records: Vec<_> = images
                .iter()
                .enumerate()
                .map(|(i, (s, q))| {
                    let mut r = image(&format!("img-{i}"), *s);
                    if *q {
                        r.query_id = Some(format!("q{i}"));
                    }
                    r
                })
                .collect();
            let anns = anns
                .into_iter()
                .map(|(i, o, b)| GroundTruthAnnotation {
                    image_id: format!("img-{i}"),
                    organ: o,
                    bbox: b,
                })
                .collect();
            let splits = splits.map(|v| {
                v.iter()
                    .enumerate()
                    .map(|(i, s)| (format!("img-{i}"), Split::ALL[*s]))
                    .collect::<BTreeMap<_, _>>()
            });
            DatasetManifest::new(species_names(species), records, anns, splits).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn manifest_roundtrip(m in arb_manifest()) {
        let text = io::manifest_to_json(&m);
        let back = io::parse_manifest(&text, "m").unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(io::manifest_to_json(&back), text);
    }

    #[test]
    fn detections_roundtrip(dets in proptest::collection::vec((arb_organ(), arb_box(), 0.0..=1.0f64), 0..12)) {
        let dets: Vec<Detection> = dets
            .into_iter()
            .enumerate()
            .map(|(i, (o, b, c))| Detection::new(format!("i{}", i % 3), o, b, c).unwrap())
            .collect();
        let back = io::parse_detections(&io::detections_to_json(&dets), "d").unwrap();
        prop_assert_eq!(back, dets);
    }

    #[test]
    fn roi_predictions_roundtrip(
        rows in proptest::collection::vec((arb_organ(), arb_box(), arb_probs(4)), 0..10)
    ) {
        let rois: Vec<RoiPrediction> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (organ, bbox, distribution))| RoiPrediction {
                image_id: format!("i{}", i % 2),
                roi_index: i,
                organ,
                bbox,
                distribution,
            })
            .collect();
        let back = io::parse_roi_predictions(&io::roi_predictions_to_jsonl(&rois), "r").unwrap();
        prop_assert_eq!(back, rois);
    }

    #[test]
    fn image_predictions_roundtrip(ps in proptest::collection::vec(arb_probs(3), 0..6)) {
        let map: BTreeMap<String, SpeciesDistribution> =
            ps.into_iter().enumerate().map(|(i, d)| (format!("i{i}"), d)).collect();
        let back = io::parse_image_predictions(&io::image_predictions_to_jsonl(&map), "w").unwrap();
        prop_assert_eq!(back, map);
    }
}

#[test]
fn category_ids_and_xyxy_are_accepted() {
    let text = r#"{
        "species": ["a"],
        "images": [{"image_id": "x", "width": 100, "height": 100, "species": 0}],
        "annotations": [
            {"image_id": "x", "category_id": 5, "bbox": [1, 2, 3, 4]},
            {"image_id": "x", "organ": "Flower", "bbox_xyxy": [0, 0, 10, 10]}
        ]
    }"#;
    let m = io::parse_manifest(text, "m").unwrap();
    assert_eq!(m.annotations()[0].organ, OrganClass::Hdl);
    assert_eq!(m.annotations()[0].bbox, bx(1.0, 2.0, 4.0, 6.0));
    assert_eq!(m.annotations()[1].organ, OrganClass::Flower);
}

#[test]
fn errors_are_located() {
    let bad_organ = r#"{"species":["a"],"images":[{"image_id":"x","width":9,"height":9,"species":0}],
        "annotations":[{"image_id":"x","organ":"root","bbox":[0,0,1,1]}]}"#;
    let e = io::parse_manifest(bad_organ, "m.json")
        .unwrap_err()
        .to_string();
    assert!(e.contains("annotations[0]") && e.contains("root"), "{e}");

    let dangling = r#"{"species":["a"],"images":[{"image_id":"x","width":9,"height":9,"species":0}],
        "annotations":[{"image_id":"y","organ":"leaf","bbox":[0,0,1,1]}]}"#;
    let e = io::parse_manifest(dangling, "m.json")
        .unwrap_err()
        .to_string();
    assert!(e.contains("'y'"), "{e}");

    let e = io::parse_manifest("{", "m.json").unwrap_err().to_string();
    assert!(e.starts_with("m.json:"), "{e}");

    let e = io::parse_roi_predictions(
        "{\"image_id\":\"x\",\"roi_index\":0,\"organ\":\"leaf\",\"bbox\":[0,0,1,1],\"probs\":[0.5,0.4]}\n",
        "r.jsonl",
    )
    .unwrap_err()
    .to_string();
    assert!(e.contains("r.jsonl") && e.contains("sum"), "{e}");
}

#[test]
fn splits_accept_bare_and_report_forms() {
    let bare = r#"{"assignments": {"a": "train", "b": "validation", "c": "test"}}"#;
    let wrapped =
        r#"{"meta": {}, "report": {"assignments": {"a": "train", "b": "val", "c": "test"}}}"#;
    assert_eq!(
        io::parse_splits(bare, "s").unwrap(),
        io::parse_splits(wrapped, "s").unwrap()
    );
}
