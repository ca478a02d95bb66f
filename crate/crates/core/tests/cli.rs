mod common;

use std::path::Path;

use common::*;
use organfuse::cli::{
    run_with, EXIT_CONFIG, EXIT_EMPTY, EXIT_IO, EXIT_PARSE, EXIT_USAGE, EXIT_VALIDATION,
};
use organfuse::{io, DatasetManifest, Detection, OrganClass};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(
        std::iter::once("organfuse").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn doc(args: &[&str]) -> Value {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{err}");
    serde_json::from_str(&out).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path) -> (String, String) {
    let manifest = DatasetManifest::new(
        species_names(2),
        vec![image("a", 0), image("b", 1)],
        vec![
            gt("a", OrganClass::Leaf, bx(0.0, 0.0, 10.0, 10.0)),
            gt("b", OrganClass::Flower, bx(5.0, 5.0, 50.0, 40.0)),
        ],
        None,
    )
    .unwrap();
    let m = dir.join("manifest.json");
    io::write_file(&m, &io::manifest_to_json(&manifest)).unwrap();
    let r = dir.join("rois.jsonl");
    let rois = [
        roi("a", 0, OrganClass::Leaf, &[0.7, 0.3]),
        roi("b", 0, OrganClass::Flower, &[0.1, 0.9]),
    ];
    io::write_file(&r, &io::roi_predictions_to_jsonl(&rois)).unwrap();
    (s(&m).to_string(), s(&r).to_string())
}

#[test]
fn eval_species_single_roi_fixture_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (m, r) = fixture(dir.path());
    let v = doc(&["eval-species", "--manifest", &m, "--rois", &r]);
    for rule in ["sum", "product", "voting"] {
        assert_eq!(v["report"]["per_rule"][rule], 100.0, "{rule}");
    }
    assert_eq!(v["meta"]["command"], "eval-species");
    assert_eq!(v["meta"]["inputs"]["manifest"]["path"], m.as_str());
    assert_eq!(
        v["meta"]["inputs"]["rois"]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
    assert_eq!(v["meta"]["config"]["fallback"], "skip");
    assert!(v["meta"].get("timestamp").is_none());
}

#[test]
fn eval_det_ground_truth_echo_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture(dir.path());
    let manifest = io::load_manifest(Path::new(&m)).unwrap();
    let dets: Vec<Detection> = manifest
        .annotations()
        .iter()
        .map(|a| Detection::new(a.image_id.clone(), a.organ, a.bbox, 1.0).unwrap())
        .collect();
    let d = dir.path().join("dets.json");
    io::write_file(&d, &io::detections_to_json(&dets)).unwrap();
    let v = doc(&["eval-det", "--manifest", &m, "--detections", s(&d)]);
    assert_eq!(v["report"]["ap"], 1.0);
    assert_eq!(v["report"]["ap50"], 1.0);
    assert_eq!(v["report"]["iou_thresholds"].as_array().unwrap().len(), 10);
}

#[test]
fn table_format_has_metadata_header() {
    let dir = tempfile::tempdir().unwrap();
    let (m, r) = fixture(dir.path());
    let (code, out, _) = run(&[
        "eval-species",
        "--manifest",
        &m,
        "--rois",
        &r,
        "--format",
        "table",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# "), "{out}");
    assert!(out.contains("| 100.00 |"), "{out}");
}

#[test]
fn simulate_split_fuse_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = d.join("sim");
    let (code, _, err) = run(&[
        "simulate",
        "--seed",
        "4",
        "--species",
        "60",
        "--images-per-species",
        "60",
        "--out-dir",
        s(&sim),
        "--out",
        s(&d.join("sim.json")),
    ]);
    assert_eq!(code, 0, "{err}");
    let manifest = sim.join("manifest.json");
    let rois = sim.join("rois.jsonl");
    assert!(!sim.join("whole_image.jsonl").exists());

    let splits = d.join("splits.json");
    let (code, _, err) = run(&[
        "split",
        "--manifest",
        s(&manifest),
        "--seed",
        "9",
        "--out",
        s(&splits),
    ]);
    assert_eq!(code, 0, "{err}");

    let fused = d.join("fused.jsonl");
    let (code, _, err) = run(&[
        "fuse",
        "--rois",
        s(&rois),
        "--rule",
        "sum",
        "--out-fused",
        s(&fused),
    ]);
    assert_eq!(code, 0, "{err}");
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(&fused)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["rule"], "sum");
    assert!(first["fused_probs"].is_array());

    let v = doc(&[
        "eval-species",
        "--manifest",
        s(&manifest),
        "--splits",
        s(&splits),
        "--rois",
        s(&rois),
    ]);
    let rep = &v["report"];
    let sum = rep["per_rule"]["sum"].as_f64().unwrap();
    for (organ, acc) in rep["per_organ"].as_object().unwrap() {
        assert!(sum > acc.as_f64().unwrap(), "sum {sum} vs {organ} {acc}");
    }
    // --split auto picks the test split when splits are present
    let in_scope = rep["counts"]["images_in_scope"].as_u64().unwrap();
    assert_eq!(in_scope, 60 * 12);
}

#[test]
fn whole_image_fallback_changes_denominator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = d.join("sim");
    let (code, _, err) = run(&[
        "simulate",
        "--seed",
        "1",
        "--species",
        "10",
        "--images-per-species",
        "30",
        "--rates",
        "leaf=0.3,flower=0.2,fruit=0.1,stem=0.05,hdl=0.05",
        "--whole-image-accuracy",
        "0.5",
        "--out-dir",
        s(&sim),
        "--out",
        s(&d.join("sim.json")),
    ]);
    assert_eq!(code, 0, "{err}");
    let m = sim.join("manifest.json");
    let r = sim.join("rois.jsonl");
    let w = sim.join("whole_image.jsonl");
    let skip = doc(&[
        "eval-species",
        "--manifest",
        s(&m),
        "--rois",
        s(&r),
        "--whole-image",
        s(&w),
    ]);
    let fb = doc(&[
        "eval-species",
        "--manifest",
        s(&m),
        "--rois",
        s(&r),
        "--whole-image",
        s(&w),
        "--fallback",
        "whole-image",
    ]);
    let c1 = &skip["report"]["counts"];
    let c2 = &fb["report"]["counts"];
    assert!(c1["images_without_rois"].as_u64().unwrap() > 0);
    assert_eq!(c2["images_evaluated"], c1["images_in_scope"]);
    assert!(c1["images_evaluated"].as_u64() < c2["images_evaluated"].as_u64());
    assert!(skip["report"]["baseline"].is_number());

    let (code, _, err) = run(&[
        "eval-species",
        "--manifest",
        s(&m),
        "--rois",
        s(&r),
        "--fallback",
        "whole-image",
    ]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (m, r) = fixture(d);

    assert_eq!(run(&[]).0, EXIT_USAGE);
    assert_eq!(
        run(&["fuse", "--rois", &r, "--rule", "median", "--out-fused", "x"]).0,
        EXIT_USAGE
    );

    let (code, _, err) = run(&["stats", "--manifest", s(&d.join("missing.json"))]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("missing.json"), "{err}");

    let broken = d.join("broken.json");
    std::fs::write(&broken, "{\"species\": [").unwrap();
    let (code, _, err) = run(&["stats", "--manifest", s(&broken)]);
    assert_eq!(code, EXIT_PARSE);
    assert!(err.contains("broken.json:"), "{err}");

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"image_id\":\"zzz\",\"roi_index\":0,\"organ\":\"leaf\",\"bbox\":[0,0,1,1],\"probs\":[0.5,0.5]}\n").unwrap();
    let (code, _, err) = run(&["eval-cls", "--manifest", &m, "--rois", s(&bad)]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("zzz"), "{err}");

    let (code, _, _) = run(&[
        "eval-det",
        "--manifest",
        &m,
        "--detections",
        s(&d.join("x.json")),
        "--iou-thresholds",
        "0.5",
    ]);
    assert_eq!(code, EXIT_IO);
    let dets = d.join("dets.json");
    std::fs::write(&dets, "[]").unwrap();
    let (code, _, _) = run(&[
        "eval-det",
        "--manifest",
        &m,
        "--detections",
        s(&dets),
        "--iou-thresholds",
        "1.5",
    ]);
    assert_eq!(code, EXIT_CONFIG);

    let (code, _, err) = run(&["split", "--manifest", &m]);
    assert_eq!(code, EXIT_VALIDATION, "{err}");

    let (code, _, _) = run(&[
        "down-select",
        "--manifest",
        &m,
        "--out-manifest",
        s(&d.join("o.json")),
    ]);
    assert_eq!(code, EXIT_EMPTY);
    assert!(!d.join("o.json").exists());
}

#[test]
fn nms_writes_kept_detections() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dets = vec![
        Detection::new("a", OrganClass::Leaf, bx(0.0, 0.0, 10.0, 10.0), 0.9).unwrap(),
        Detection::new("a", OrganClass::Leaf, bx(1.0, 1.0, 11.0, 11.0), 0.8).unwrap(),
        Detection::new("a", OrganClass::Stem, bx(1.0, 1.0, 11.0, 11.0), 0.7).unwrap(),
    ];
    let p = d.join("d.json");
    io::write_file(&p, &io::detections_to_json(&dets)).unwrap();
    let out = d.join("kept.json");
    let v = doc(&["nms", "--detections", s(&p), "--out-detections", s(&out)]);
    assert_eq!(v["report"]["kept"], 2);
    assert_eq!(v["meta"]["config"]["nms_threshold"], 0.1);
    let kept = io::load_detections(&out).unwrap();
    assert_eq!(kept, vec![dets[0].clone(), dets[2].clone()]);
}

#[test]
fn stats_reports_split_and_box_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture(dir.path());
    let (code, out, _) = run(&["stats", "--manifest", &m, "--format", "table"]);
    assert_eq!(code, 0);
    assert!(out.contains("(2 images without a split)"), "{out}");
    assert!(out.contains("45×35"), "{out}");
}
