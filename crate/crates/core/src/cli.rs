//! `organfuse` command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::class_eval::{
    evaluate_organ_classifiers, evaluate_species_id, FallbackPolicy, SpeciesIdConfig,
};
use crate::curation::{down_select, split_dataset, SplitSpec, SHUFFLE_ALGORITHM};
use crate::detection::{
    evaluate_detections, nms, parse_iou_thresholds, DetectionEvalConfig, DEFAULT_NMS_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_all, FusionRule, OrganPrior};
use crate::io;
use crate::model::{DatasetManifest, OrganClass, Split};
use crate::report::{self, InputDigest, RunMetadata};
use crate::sim::{self, LongTailProfile, SimulatorConfig, SpeciesProfile};
use crate::stats::compute_stats;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;
pub const EXIT_CONFIG: i32 = 6;
pub const EXIT_EMPTY: i32 = 7;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } => EXIT_PARSE,
        Error::Validation { .. } => EXIT_VALIDATION,
        Error::Config(_) => EXIT_CONFIG,
        Error::Empty(_) => EXIT_EMPTY,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "organfuse",
    version,
    about = "Organ detection evaluation, species fusion and long-tail dataset tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    /// JSON document with run metadata.
    Doc,
    /// Aligned text tables.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RuleArg {
    Sum,
    Product,
    Voting,
    All,
}

impl RuleArg {
    fn rules(self) -> Vec<FusionRule> {
        match self {
            RuleArg::Sum => vec![FusionRule::Sum],
            RuleArg::Product => vec![FusionRule::Product],
            RuleArg::Voting => vec![FusionRule::Voting],
            RuleArg::All => FusionRule::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FallbackArg {
    Skip,
    WholeImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScopeArg {
    /// The test split when the manifest has splits, otherwise every image.
    Auto,
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Doc)]
    format: Format,
    /// Report destination (stdout when omitted).
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Worker threads; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    workers: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ManifestArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Split assignment file overriding the manifest's own splits.
    #[arg(long)]
    splits: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset statistics: split sizes, long-tail counts, box scale.
    Stats {
        #[command(flatten)]
        input: ManifestArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Seeded per-species train/val/test split.
    Split(SplitArgs),
    /// Keep species with enough leaf annotations (and every organ).
    DownSelect(DownSelectArgs),
    /// Class-aware non-maximum suppression of a detections file.
    Nms(NmsArgs),
    /// COCO-style average precision of organ detections.
    EvalDet(EvalDetArgs),
    /// Fuse per-ROI species distributions into per-image predictions.
    Fuse(FuseArgs),
    /// Per-organ classifier accuracy and confusion matrices.
    EvalCls(EvalClsArgs),
    /// Per-image species identification accuracy for each fusion rule.
    EvalSpecies(EvalSpeciesArgs),
    /// Generate a synthetic manifest and ROI predictions.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct SplitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: ManifestArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.70)]
    train: f64,
    #[arg(long, default_value_t = 0.10)]
    val: f64,
    #[arg(long, default_value_t = 0.20)]
    test: f64,
    /// Species below this many images still get one val and one test image.
    #[arg(long, default_value_t = 10)]
    min_one_threshold: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DownSelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: ManifestArgs,
    #[arg(long, default_value_t = 130)]
    min_leaf_rois: usize,
    /// Also require at least one annotation of every organ class.
    #[arg(long)]
    require_all_organs: bool,
    /// Where to write the reduced manifest.
    #[arg(long)]
    out_manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct NmsArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    nms_threshold: f64,
    /// Where to write the kept detections.
    #[arg(long)]
    out_detections: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalDetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: ManifestArgs,
    #[arg(long)]
    detections: PathBuf,
    /// `start:step:end` or a comma-separated list.
    #[arg(long, default_value = "0.5:0.05:0.95")]
    iou_thresholds: String,
    /// Keep at most this many detections per image and organ.
    #[arg(long)]
    max_dets: Option<usize>,
    /// Run NMS over the detections before evaluating.
    #[arg(long)]
    apply_nms: bool,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    nms_threshold: f64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct FuseArgs {
    /// ROI predictions (JSON lines).
    #[arg(long)]
    rois: PathBuf,
    #[arg(long, value_enum, default_value_t = RuleArg::All)]
    rule: RuleArg,
    /// Organ prior file; uniform when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Where to write fused records (JSON lines).
    #[arg(long)]
    out_fused: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalClsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: ManifestArgs,
    #[arg(long)]
    rois: PathBuf,
    #[arg(long, value_enum, default_value_t = ScopeArg::Auto)]
    split: ScopeArg,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalSpeciesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: ManifestArgs,
    #[arg(long)]
    rois: PathBuf,
    #[arg(long, value_enum, default_value_t = ScopeArg::Auto)]
    split: ScopeArg,
    #[arg(long, value_enum, default_value_t = RuleArg::All)]
    rule: RuleArg,
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Policy for images without any ROI.
    #[arg(long, value_enum, default_value_t = FallbackArg::Skip)]
    fallback: FallbackArg,
    /// Whole-image classifier predictions (JSON lines): fallback source and baseline.
    #[arg(long)]
    whole_image: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 161)]
    species: usize,
    /// Images per species (uniform profile).
    #[arg(long, default_value_t = 10, conflicts_with = "long_tail")]
    images_per_species: usize,
    /// Long-tail profile `mean,std,min,max` of images per species.
    #[arg(long)]
    long_tail: Option<String>,
    /// Organ accuracies, e.g. `leaf=0.68,stem=0.58`; unspecified organs keep the reference values.
    #[arg(long)]
    accuracy: Option<String>,
    /// Mean ROIs per image per organ, e.g. `leaf=1.3,hdl=0.05`.
    #[arg(long)]
    rates: Option<String>,
    #[arg(long, default_value_t = 20)]
    max_rois: u64,
    #[arg(long, default_value_t = 0.4)]
    spread: f64,
    /// Also simulate a whole-image classifier with this accuracy.
    #[arg(long)]
    whole_image_accuracy: Option<f64>,
    /// Directory receiving manifest.json, rois.jsonl and whole_image.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

struct Session<'a> {
    meta: RunMetadata,
    common: &'a Common,
}

impl<'a> Session<'a> {
    fn new(command: &str, seed: Option<u64>, config: impl Serialize, common: &'a Common) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        Self {
            meta: RunMetadata::new(command, seed, config),
            common,
        }
    }

    fn read(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.meta.inputs.insert(
            role.to_string(),
            InputDigest::of(&path.display().to_string(), &bytes),
        );
        String::from_utf8(bytes).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    fn manifest(&mut self, args: &ManifestArgs) -> Result<DatasetManifest> {
        let text = self.read("manifest", &args.manifest)?;
        let m = io::parse_manifest(&text, &args.manifest.display().to_string())?;
        match &args.splits {
            Some(p) => {
                let text = self.read("splits", p)?;
                m.with_splits(io::parse_splits(&text, &p.display().to_string())?)
            }
            None => Ok(m),
        }
    }

    fn prior(&mut self, path: &Option<PathBuf>) -> Result<OrganPrior> {
        match path {
            Some(p) => {
                let text = self.read("prior", p)?;
                io::parse_prior(&text, &p.display().to_string())
            }
            None => Ok(OrganPrior::uniform()),
        }
    }

    fn emit<T: Serialize>(
        &self,
        out: &mut dyn Write,
        report: &T,
        table: impl FnOnce() -> String,
    ) -> Result<()> {
        let text = match self.common.format {
            Format::Doc => report::to_document(&self.meta, report),
            Format::Table => format!("{}\n{}", self.meta.header(), table()),
        };
        match &self.common.out {
            Some(path) => io::write_file(path, &text),
            None => out
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e)),
        }
    }
}

fn resolve_scope(scope: ScopeArg, manifest: &DatasetManifest) -> Option<Split> {
    match scope {
        ScopeArg::Auto => manifest.splits().map(|_| Split::Test),
        ScopeArg::All => None,
        ScopeArg::Train => Some(Split::Train),
        ScopeArg::Val => Some(Split::Val),
        ScopeArg::Test => Some(Split::Test),
    }
}

fn parse_organ_map(
    spec: &str,
    base: BTreeMap<OrganClass, f64>,
) -> Result<BTreeMap<OrganClass, f64>> {
    let mut out = base;
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected organ=value, got '{part}'")))?;
        let organ: OrganClass = k
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("unknown organ '{k}'")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number '{v}'")))?;
        out.insert(organ, value);
    }
    Ok(out)
}

fn parse_long_tail(spec: &str, species: usize) -> Result<LongTailProfile> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("expected mean,std,min,max, got '{spec}'"));
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(LongTailProfile {
        species,
        mean: parts[0].parse().map_err(|_| bad())?,
        std: parts[1].parse().map_err(|_| bad())?,
        min: parts[2].parse().map_err(|_| bad())?,
        max: parts[3].parse().map_err(|_| bad())?,
    })
}

#[derive(Serialize)]
struct SplitReport<'a> {
    algorithm: &'static str,
    counts: BTreeMap<Split, usize>,
    assignments: &'a BTreeMap<String, Split>,
}

fn run_command(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Stats { input, common } => {
            let mut s = Session::new("stats", None, &input, &common);
            let m = s.manifest(&input)?;
            let stats = compute_stats(&m);
            s.emit(out, &stats, || report::stats_tables(&stats))
        }
        Command::Split(a) => {
            let mut s = Session::new("split", Some(a.seed), &a, &a.common);
            let m = s.manifest(&a.input)?;
            let spec = SplitSpec {
                train: a.train,
                val: a.val,
                test: a.test,
                min_one_threshold: a.min_one_threshold,
                seed: a.seed,
            };
            let assignments = split_dataset(&m, &spec)?;
            let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
            for sp in assignments.values() {
                *counts.entry(*sp).or_default() += 1;
            }
            let rep = SplitReport {
                algorithm: SHUFFLE_ALGORITHM,
                counts: counts.clone(),
                assignments: &assignments,
            };
            s.emit(out, &rep, || {
                report::render_table(
                    "Samples per split",
                    &["Train", "Test", "Validation"],
                    &[vec![
                        counts[&Split::Train].to_string(),
                        counts[&Split::Test].to_string(),
                        counts[&Split::Val].to_string(),
                    ]],
                )
            })
        }
        Command::DownSelect(a) => {
            let mut s = Session::new("down-select", None, &a, &a.common);
            let m = s.manifest(&a.input)?;
            let reduced = down_select(&m, a.min_leaf_rois, a.require_all_organs)?;
            io::write_file(&a.out_manifest, &io::manifest_to_json(&reduced))?;
            let rep = json!({
                "species_before": m.species_count(),
                "species_after": reduced.species_count(),
                "images_before": m.images().len(),
                "images_after": reduced.images().len(),
                "retained_species": reduced.species(),
            });
            s.emit(out, &rep, || {
                report::render_table(
                    "Down-selection",
                    &["", "Species", "Images"],
                    &[
                        vec![
                            "before".into(),
                            m.species_count().to_string(),
                            m.images().len().to_string(),
                        ],
                        vec![
                            "after".into(),
                            reduced.species_count().to_string(),
                            reduced.images().len().to_string(),
                        ],
                    ],
                )
            })
        }
        Command::Nms(a) => {
            let mut s = Session::new("nms", None, &a, &a.common);
            if !(0.0..=1.0).contains(&a.nms_threshold) {
                return Err(Error::Config(format!(
                    "NMS threshold {} outside [0, 1]",
                    a.nms_threshold
                )));
            }
            let text = s.read("detections", &a.detections)?;
            let dets = io::parse_detections(&text, &a.detections.display().to_string())?;
            let kept = nms(&dets, a.nms_threshold);
            io::write_file(&a.out_detections, &io::detections_to_json(&kept))?;
            let mut per_organ: BTreeMap<OrganClass, (usize, usize)> = BTreeMap::new();
            for d in &dets {
                per_organ.entry(d.organ).or_default().0 += 1;
            }
            for d in &kept {
                per_organ.entry(d.organ).or_default().1 += 1;
            }
            let rep = json!({
                "input": dets.len(),
                "kept": kept.len(),
                "per_organ": per_organ.iter().map(|(o, (i, k))| (o.as_str(), json!({"input": i, "kept": k}))).collect::<BTreeMap<_, _>>(),
            });
            s.emit(out, &rep, || {
                let rows = per_organ
                    .iter()
                    .map(|(o, (i, k))| vec![o.label().to_string(), i.to_string(), k.to_string()])
                    .collect::<Vec<_>>();
                report::render_table(
                    "Non-maximum suppression",
                    &["Organ", "Input", "Kept"],
                    &rows,
                )
            })
        }
        Command::EvalDet(a) => {
            let mut s = Session::new("eval-det", None, &a, &a.common);
            let m = s.manifest(&a.input)?;
            let text = s.read("detections", &a.detections)?;
            let mut dets = io::parse_detections(&text, &a.detections.display().to_string())?;
            if a.apply_nms {
                dets = nms(&dets, a.nms_threshold);
            }
            let cfg = DetectionEvalConfig {
                iou_thresholds: parse_iou_thresholds(&a.iou_thresholds)?,
                max_detections: a.max_dets,
                workers: a.common.workers,
            };
            let rep = evaluate_detections(&m, &dets, &cfg)?;
            s.emit(out, &rep, || report::ap_tables(&rep))
        }
        Command::Fuse(a) => {
            let mut s = Session::new("fuse", None, &a, &a.common);
            let prior = s.prior(&a.prior)?;
            let text = s.read("rois", &a.rois)?;
            let rois = io::parse_roi_predictions(&text, &a.rois.display().to_string())?;
            let rules = a.rule.rules();
            let fused = fuse_all(&rois, &rules, &prior, a.common.workers)?;
            let mut records = String::new();
            for f in &fused {
                records.push_str(&serde_json::to_string(f).expect("record serializes"));
                records.push('\n');
            }
            io::write_file(&a.out_fused, &records)?;
            let images = fused.len() / rules.len().max(1);
            let rep =
                json!({ "images": images, "rois": rois.len(), "rules": rules, "prior": prior });
            s.emit(out, &rep, || {
                report::render_table(
                    "Fusion",
                    &["Images", "ROIs", "Rules"],
                    &[vec![
                        images.to_string(),
                        rois.len().to_string(),
                        rules
                            .iter()
                            .map(|r| r.as_str())
                            .collect::<Vec<_>>()
                            .join(","),
                    ]],
                )
            })
        }
        Command::EvalCls(a) => {
            let mut s = Session::new("eval-cls", None, &a, &a.common);
            let m = s.manifest(&a.input)?;
            let text = s.read("rois", &a.rois)?;
            let rois = io::parse_roi_predictions(&text, &a.rois.display().to_string())?;
            let rep = evaluate_organ_classifiers(&m, &rois, resolve_scope(a.split, &m))?;
            if rep.per_organ.is_empty() {
                return Err(Error::Empty(
                    "no ROI predictions in the evaluated images".into(),
                ));
            }
            s.emit(out, &rep, || report::organ_accuracy_table(&rep))
        }
        Command::EvalSpecies(a) => {
            let mut s = Session::new("eval-species", None, &a, &a.common);
            let m = s.manifest(&a.input)?;
            let prior = s.prior(&a.prior)?;
            let text = s.read("rois", &a.rois)?;
            let rois = io::parse_roi_predictions(&text, &a.rois.display().to_string())?;
            let whole = match &a.whole_image {
                Some(p) => {
                    let text = s.read("whole_image", p)?;
                    Some(io::parse_image_predictions(
                        &text,
                        &p.display().to_string(),
                    )?)
                }
                None => None,
            };
            let cfg = SpeciesIdConfig {
                rules: a.rule.rules(),
                prior,
                fallback: match a.fallback {
                    FallbackArg::Skip => FallbackPolicy::Skip,
                    FallbackArg::WholeImage => FallbackPolicy::WholeImage,
                },
                whole_image: whole.as_ref(),
                split: resolve_scope(a.split, &m),
                workers: a.common.workers,
            };
            let rep = evaluate_species_id(&m, &rois, &cfg)?;
            s.emit(out, &rep, || report::species_accuracy_tables(&rep))
        }
        Command::Simulate(a) => {
            let s = Session::new("simulate", Some(a.seed), &a, &a.common);
            let profile = match &a.long_tail {
                Some(spec) => SpeciesProfile::LongTail(parse_long_tail(spec, a.species)?),
                None => SpeciesProfile::Uniform {
                    images_per_species: a.images_per_species,
                },
            };
            let accuracy = match &a.accuracy {
                Some(spec) => parse_organ_map(spec, sim::reference_organ_accuracy())?,
                None => sim::reference_organ_accuracy(),
            };
            let rates = match &a.rates {
                Some(spec) => parse_organ_map(spec, sim::reference_organ_rates())?,
                None => sim::reference_organ_rates(),
            };
            let cfg = SimulatorConfig {
                species_count: a.species,
                profile,
                organ_accuracy: accuracy,
                organ_rate: rates,
                max_rois_per_organ: a.max_rois,
                spread: a.spread,
                whole_image_accuracy: a.whole_image_accuracy,
                image_size: (1024, 1024),
                seed: a.seed,
            };
            let corpus = sim::generate(&cfg, a.common.workers)?;
            for organ in corpus.miscalibrated() {
                let r = corpus.realized[&organ];
                let _ = writeln!(
                    err,
                    "warning: {organ} realized accuracy {:.4} is more than 3 standard errors from {:.4}",
                    r.realized, r.target
                );
            }
            io::write_file(
                &a.out_dir.join("manifest.json"),
                &io::manifest_to_json(&corpus.manifest),
            )?;
            io::write_file(
                &a.out_dir.join("rois.jsonl"),
                &io::roi_predictions_to_jsonl(&corpus.rois),
            )?;
            if !corpus.whole_image.is_empty() {
                io::write_file(
                    &a.out_dir.join("whole_image.jsonl"),
                    &io::image_predictions_to_jsonl(&corpus.whole_image),
                )?;
            }
            let rep = json!({
                "config": cfg,
                "images": corpus.manifest.images().len(),
                "rois": corpus.rois.len(),
                "realized_accuracy": corpus.realized,
            });
            s.emit(out, &rep, || {
                let rows = corpus
                    .realized
                    .iter()
                    .map(|(o, r)| {
                        vec![
                            o.label().to_string(),
                            r.rois.to_string(),
                            format!("{:.2}", 100.0 * r.target),
                            format!("{:.2}", 100.0 * r.realized),
                        ]
                    })
                    .collect::<Vec<_>>();
                report::render_table(
                    "Simulated organ classifiers",
                    &["Organ", "ROIs", "Target", "Realized"],
                    &rows,
                )
            })
        }
    }
}

/// Runs the CLI with explicit output streams; returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run_command(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn organ_map_overrides() {
        let m = parse_organ_map("leaf=0.5, HDL=0.1", sim::reference_organ_accuracy()).unwrap();
        assert_eq!(m[&OrganClass::Leaf], 0.5);
        assert_eq!(m[&OrganClass::Hdl], 0.1);
        assert_eq!(m[&OrganClass::Stem], 0.5824);
        assert!(parse_organ_map("root=1", BTreeMap::new()).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_with(["organfuse", "bogus"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run_with(["organfuse", "--help"], &mut o, &mut e), EXIT_OK);
    }

    #[test]
    fn missing_file_exit_code() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_with(
            ["organfuse", "stats", "--manifest", "/nonexistent/m.json"],
            &mut o,
            &mut e,
        );
        assert_eq!(code, EXIT_IO);
        assert!(String::from_utf8_lossy(&e).contains("/nonexistent/m.json"));
    }
}
