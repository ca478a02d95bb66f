//! Report envelopes and aligned text tables.
//!
//! Structured reports are JSON documents `{"meta": ..., "report": ...}`; the
//! `meta` block records tool version, command, seed, effective configuration
//! and a SHA-256 digest of every input file, and contains nothing
//! time-dependent, so reruns are byte-identical.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::class_eval::{AccuracyReport, OrganClassReport};
use crate::detection::ApReport;
use crate::fusion::FusionRule;
use crate::model::OrganClass;
use crate::stats::DatasetStats;

pub const TOOL_NAME: &str = "organfuse";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &str, bytes: &[u8]) -> Self {
        Self {
            path: path.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: BTreeMap<String, InputDigest>,
}

impl RunMetadata {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        Self {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
        }
    }

    /// Comment block prefixed to text-table output.
    pub fn header(&self) -> String {
        let mut out = format!("# {} {} {}\n", self.tool, self.version, self.command);
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        out.push_str(&format!("# config: {}\n", self.config));
        for (role, d) in &self.inputs {
            out.push_str(&format!("# input {role}: {} sha256={}\n", d.path, d.sha256));
        }
        out
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a RunMetadata,
    report: &'a T,
}

pub fn to_document<T: Serialize>(meta: &RunMetadata, report: &T) -> String {
    let mut s =
        serde_json::to_string_pretty(&Envelope { meta, report }).expect("report serializes");
    s.push('\n');
    s
}

/// Renders a `|`-separated table with columns padded to a common width.
pub fn render_table(title: &str, headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = *w))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let rule: String = format!(
        "|{}|\n",
        widths
            .iter()
            .map(|w| "-".repeat(w + 2))
            .collect::<Vec<_>>()
            .join("|")
    );
    let mut out = format!("{title}\n");
    out.push_str(&line(headers.to_vec()));
    out.push_str(&rule);
    for r in rows {
        debug_assert_eq!(r.len(), cols);
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn organ_headers() -> Vec<&'static str> {
    OrganClass::ALL.iter().map(|o| o.label()).collect()
}

fn organ_row(values: impl Fn(OrganClass) -> Option<String>) -> Vec<String> {
    OrganClass::ALL
        .iter()
        .map(|&o| values(o).unwrap_or_else(|| "-".to_string()))
        .collect()
}

/// Split sizes, box scale, samples per species and organs per species.
pub fn stats_tables(stats: &DatasetStats) -> String {
    let mut out = render_table(
        "Samples per split",
        &["Train", "Test", "Validation"],
        &[vec![
            stats.splits.train.to_string(),
            stats.splits.test.to_string(),
            stats.splits.val.to_string(),
        ]],
    );
    if stats.splits.unassigned > 0 {
        out.push_str(&format!(
            "({} images without a split)\n",
            stats.splits.unassigned
        ));
    }
    out.push('\n');

    let box_rows: Vec<Vec<String>> = stats
        .box_scale
        .iter()
        .map(|(o, b)| {
            vec![
                o.label().to_string(),
                format!("{:.0}×{:.0}", b.mean_width, b.mean_height),
                format!("{:.0}×{:.0}", b.std_width, b.std_height),
            ]
        })
        .collect();
    out.push_str(&render_table(
        "Bounding-box scale per organ",
        &["Organs", "Average", "Standard Deviation"],
        &box_rows,
    ));
    out.push('\n');

    if let Some(s) = stats.samples_summary {
        out.push_str(&render_table(
            "Samples per species",
            &["Mean", "Standard Deviation", "Minimum", "Maximum"],
            &[vec![
                format!("{:.1}", s.mean),
                format!("{:.1}", s.std),
                format!("{:.0}", s.min),
                format!("{:.0}", s.max),
            ]],
        ));
        out.push('\n');
    }

    let organ_rows: Vec<Vec<String>> = stats
        .organs_per_species
        .iter()
        .map(|(o, s)| {
            vec![
                o.label().to_string(),
                format!("{:.1}", s.mean),
                format!("{:.1}", s.std),
                format!("{:.0}", s.max),
            ]
        })
        .collect();
    out.push_str(&render_table(
        "Organs per species",
        &["Organ", "Mean", "Standard Deviation", "Maximum"],
        &organ_rows,
    ));
    out
}

/// Overall AP row and per-organ AP row, in percent.
pub fn ap_tables(report: &ApReport) -> String {
    let pct = |v: f64| format!("{:.1}", 100.0 * v);
    let mut out = render_table(
        "Organ detection average precision",
        &["AP", "AP50", "AP75"],
        &[vec![pct(report.ap), pct(report.ap50), pct(report.ap75)]],
    );
    out.push('\n');
    out.push_str(&render_table(
        "Average precision per organ",
        &organ_headers(),
        &[organ_row(|o| report.per_organ_ap.get(&o).map(|v| pct(*v)))],
    ));
    out
}

pub fn organ_accuracy_table(report: &OrganClassReport) -> String {
    render_table(
        "Organ-based classification accuracy",
        &organ_headers(),
        &[organ_row(|o| {
            report
                .per_organ
                .get(&o)
                .map(|a| format!("{:.2}", a.accuracy))
        })],
    )
}

pub fn species_accuracy_tables(report: &AccuracyReport) -> String {
    let mut out = render_table(
        "Organ-based classification accuracy",
        &organ_headers(),
        &[organ_row(|o| {
            report.per_organ.get(&o).map(|a| format!("{a:.2}"))
        })],
    );
    out.push('\n');
    let mut headers = vec!["Rule"];
    let mut row = vec!["Accuracy".to_string()];
    for rule in FusionRule::ALL {
        if let Some(a) = report.per_rule.get(&rule) {
            headers.push(rule.label());
            row.push(format!("{a:.2}"));
        }
    }
    if let Some(b) = report.baseline {
        headers.push("Whole image");
        row.push(format!("{b:.2}"));
    }
    out.push_str(&render_table(
        "Species identification accuracy",
        &headers,
        &[row],
    ));
    out
}
