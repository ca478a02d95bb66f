//! Dataset statistics: split sizes, long-tail sample and organ counts, and
//! box scale per organ. Standard deviations are population deviations.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::curation::organ_counts_per_species;
use crate::model::{DatasetManifest, OrganClass, Split};
use crate::numeric::{mean, population_std};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub unassigned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            mean: mean(values)?,
            std: population_std(values)?,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxScale {
    pub count: usize,
    pub mean_width: f64,
    pub mean_height: f64,
    pub std_width: f64,
    pub std_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub species: usize,
    pub images: usize,
    pub annotations: usize,
    pub splits: SplitCounts,
    /// Images per species, vocabulary order.
    pub samples_per_species: Vec<usize>,
    pub samples_summary: Option<Summary>,
    /// Annotations of each organ per species.
    pub organs_per_species: BTreeMap<OrganClass, Summary>,
    /// Box width and height per organ; organs without annotations are absent.
    pub box_scale: BTreeMap<OrganClass, BoxScale>,
    /// Long-tail curves: samples and total annotations per species, descending.
    pub samples_curve: Vec<usize>,
    pub organs_curve: Vec<usize>,
}

pub fn compute_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut splits = SplitCounts::default();
    for img in manifest.images() {
        match manifest.split_of(&img.image_id) {
            Some(Split::Train) => splits.train += 1,
            Some(Split::Val) => splits.val += 1,
            Some(Split::Test) => splits.test += 1,
            None => splits.unassigned += 1,
        }
    }

    let mut samples = vec![0usize; manifest.species_count()];
    for img in manifest.images() {
        samples[img.species] += 1;
    }
    let as_f64 = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();

    let organ_counts = organ_counts_per_species(manifest);
    let organs_per_species = OrganClass::ALL
        .iter()
        .filter_map(|&o| {
            let col: Vec<usize> = organ_counts.iter().map(|c| c[o.index()]).collect();
            Summary::of(&as_f64(&col)).map(|s| (o, s))
        })
        .collect();

    let mut widths: BTreeMap<OrganClass, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for a in manifest.annotations() {
        let e = widths.entry(a.organ).or_default();
        e.0.push(a.bbox.width());
        e.1.push(a.bbox.height());
    }
    let box_scale = widths
        .into_iter()
        .map(|(o, (w, h))| {
            (
                o,
                BoxScale {
                    count: w.len(),
                    mean_width: mean(&w).unwrap_or(0.0),
                    mean_height: mean(&h).unwrap_or(0.0),
                    std_width: population_std(&w).unwrap_or(0.0),
                    std_height: population_std(&h).unwrap_or(0.0),
                },
            )
        })
        .collect();

    let mut samples_curve = samples.clone();
    samples_curve.sort_unstable_by(|a, b| b.cmp(a));
    let mut organs_curve: Vec<usize> = organ_counts.iter().map(|c| c.iter().sum()).collect();
    organs_curve.sort_unstable_by(|a, b| b.cmp(a));

    DatasetStats {
        species: manifest.species_count(),
        images: manifest.images().len(),
        annotations: manifest.annotations().len(),
        splits,
        samples_summary: Summary::of(&as_f64(&samples)),
        samples_per_species: samples,
        organs_per_species,
        box_scale,
        samples_curve,
        organs_curve,
    }
}
