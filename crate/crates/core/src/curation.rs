//! Per-species train/val/test splitting and species down-selection.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, ImageRecord, OrganClass, Split};

/// Identifier of the shuffle procedure, recorded in split reports.
///
/// Per species `k` the image ids are sorted, then shuffled with Fisher-Yates
/// driven by `ChaCha8Rng::seed_from_u64(splitmix64(seed + k))`, drawing
/// indices with Lemire's unbiased multiply-shift on `next_u64`.
pub const SHUFFLE_ALGORITHM: &str = "chacha8-fisher-yates-v1";

/// Smallest species that can receive one image in each split.
pub const MIN_IMAGES_PER_SPECIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Species with fewer images than this still get one validation and one
    /// test image.
    pub min_one_threshold: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.10,
            test: 0.20,
            min_one_threshold: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config("split fractions must be non-negative".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        if self.min_one_threshold < MIN_IMAGES_PER_SPECIES {
            return Err(Error::Config(format!(
                "min-one threshold must be at least {MIN_IMAGES_PER_SPECIES}"
            )));
        }
        let n = self.min_one_threshold;
        if floor_share(self.val, n) == 0 || floor_share(self.test, n) == 0 {
            return Err(Error::Config(format!(
                "fractions leave val or test empty for species with {n} images"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` image counts for a species of `n` images: val and
    /// test take the floor of their share (at least one each below the
    /// threshold), train takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        if n < MIN_IMAGES_PER_SPECIES {
            return Err(Error::Config(format!(
                "{n} images cannot fill train, val and test"
            )));
        }
        let mut val = floor_share(self.val, n);
        let mut test = floor_share(self.test, n);
        if n < self.min_one_threshold {
            val = val.max(1);
            test = test.max(1);
        }
        if val + test >= n {
            return Err(Error::Config(format!(
                "no training images left for n = {n}"
            )));
        }
        Ok((n - val - test, val, test))
    }
}

fn floor_share(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform integer in `0..bound` (Lemire).
fn bounded(rng: &mut impl RngCore, bound: u64) -> u64 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(bound);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Assigns every image to train, val or test, independently per species.
pub fn split_dataset(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<BTreeMap<String, Split>> {
    spec.validate()?;
    let mut by_species: Vec<Vec<&str>> = vec![Vec::new(); manifest.species_count()];
    for img in manifest.images() {
        by_species[img.species].push(img.image_id.as_str());
    }

    let mut out = BTreeMap::new();
    for (k, ids) in by_species.iter_mut().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let (n_train, n_val, _) = spec.counts(ids.len()).map_err(|_| {
            Error::validation(
                format!("species[{k}]"),
                format!(
                    "species '{}' has {} images; at least {} are needed",
                    manifest.species()[k],
                    ids.len(),
                    MIN_IMAGES_PER_SPECIES
                ),
            )
        })?;
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed.wrapping_add(k as u64)));
        shuffle(ids, &mut rng);
        for (pos, id) in ids.iter().enumerate() {
            let split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            if out.insert(id.to_string(), split).is_some() {
                return Err(Error::validation(
                    "images",
                    format!("duplicate image_id '{id}'"),
                ));
            }
        }
    }
    Ok(out)
}

/// Annotation counts per species (vocabulary order) and organ.
pub fn organ_counts_per_species(manifest: &DatasetManifest) -> Vec<[usize; 5]> {
    let mut counts = vec![[0usize; 5]; manifest.species_count()];
    for a in manifest.annotations() {
        let species = manifest
            .image(&a.image_id)
            .expect("validated manifest")
            .species;
        counts[species][a.organ.index()] += 1;
    }
    counts
}

/// Keeps the species with at least `min_leaf_rois` leaf annotations and, when
/// `require_all_organs` is set, at least one annotation of every organ class.
/// The vocabulary is re-indexed densely in its original order.
pub fn down_select(
    manifest: &DatasetManifest,
    min_leaf_rois: usize,
    require_all_organs: bool,
) -> Result<DatasetManifest> {
    let counts = organ_counts_per_species(manifest);
    let keep: Vec<bool> = counts
        .iter()
        .map(|c| {
            c[OrganClass::Leaf.index()] >= min_leaf_rois
                && (!require_all_organs || c.iter().all(|&n| n > 0))
        })
        .collect();

    let mut remap = vec![None; keep.len()];
    let mut species = Vec::new();
    for (old, name) in manifest.species().iter().enumerate() {
        if keep[old] {
            remap[old] = Some(species.len());
            species.push(name.clone());
        }
    }
    if species.is_empty() {
        return Err(Error::Empty("down-selection retained no species".into()));
    }

    let images: Vec<ImageRecord> = manifest
        .images()
        .iter()
        .filter_map(|img| {
            remap[img.species].map(|s| ImageRecord {
                species: s,
                ..img.clone()
            })
        })
        .collect();
    let kept_image = |id: &str| manifest.image(id).is_some_and(|img| keep[img.species]);
    let annotations = manifest
        .annotations()
        .iter()
        .filter(|a| kept_image(&a.image_id))
        .cloned()
        .collect();
    let splits = manifest.splits().map(|s| {
        s.iter()
            .filter(|(id, _)| kept_image(id))
            .map(|(id, sp)| (id.clone(), *sp))
            .collect()
    });
    DatasetManifest::new(species, images, annotations, splits)
}
