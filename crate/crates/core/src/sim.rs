//! Synthetic ROI-prediction corpora with controllable per-organ classifier
//! accuracy and organ counts.
//!
//! Per image, each organ's ROI count is a Poisson draw truncated (by
//! rejection) at `max_rois_per_organ`. Each ROI's argmax lands on the true
//! species with the organ's accuracy, otherwise on a uniformly chosen wrong
//! species. The argmax gets mass `1 - spread * u` with `u ~ U(0, 1)`; the rest
//! is split over the other species in proportion to `Exp(1)` draws. With
//! `spread < 0.5` the argmax is always strict.
//!
//! Every image draws from its own ChaCha8 stream seeded from
//! `(seed, image index)`, so serial and parallel generation agree bit for bit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::curation::splitmix64;
use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::model::{
    DatasetManifest, GroundTruthAnnotation, ImageRecord, OrganClass, RoiPrediction,
    SpeciesDistribution,
};
use crate::numeric::{exact_sum, population_std};
use crate::parallel::map_ordered;

/// Organ classifier accuracies reported for leaf, flower, fruit, stem, HDL.
pub const REFERENCE_ORGAN_ACCURACY: [f64; 5] = [0.6824, 0.7524, 0.6339, 0.5824, 0.3421];

/// Mean annotated organs per species (leaf, flower, fruit, stem, HDL).
pub const REFERENCE_ORGANS_PER_SPECIES: [f64; 5] = [119.0, 82.7, 30.7, 4.4, 5.2];

/// Mean images per species.
pub const REFERENCE_SAMPLES_PER_SPECIES: f64 = 90.0;

/// Mean and standard deviation of box width and height per organ, in pixels:
/// `(mean_w, mean_h, std_w, std_h)`.
pub const REFERENCE_BOX_SCALE: [(f64, f64, f64, f64); 5] = [
    (184.0, 199.0, 145.0, 172.0),
    (210.0, 220.0, 188.0, 190.0),
    (141.0, 151.0, 142.0, 146.0),
    (516.0, 610.0, 239.0, 220.0),
    (634.0, 565.0, 167.0, 155.0),
];

/// Per-image ROI rates implied by the reference organ and sample counts.
pub fn reference_organ_rates() -> BTreeMap<OrganClass, f64> {
    OrganClass::ALL
        .iter()
        .map(|&o| {
            (
                o,
                REFERENCE_ORGANS_PER_SPECIES[o.index()] / REFERENCE_SAMPLES_PER_SPECIES,
            )
        })
        .collect()
}

pub fn reference_organ_accuracy() -> BTreeMap<OrganClass, f64> {
    OrganClass::ALL
        .iter()
        .map(|&o| (o, REFERENCE_ORGAN_ACCURACY[o.index()]))
        .collect()
}

/// Target shape of a long-tailed images-per-species distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongTailProfile {
    pub species: usize,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

impl LongTailProfile {
    /// Deterministic per-species counts, sorted descending.
    ///
    /// Counts follow clamped log-normal quantiles `exp(mu + sigma * z_i)`,
    /// with `mu` fitted so the total is `round(mean * species)` and `sigma`
    /// fitted to the target deviation. After rounding, the extremes are
    /// pinned to `min`/`max` and interior counts nudged by one until the total
    /// is exact.
    pub fn counts(&self) -> Result<Vec<usize>> {
        let n = self.species;
        let (lo, hi) = (self.min as f64, self.max as f64);
        if n == 0 || self.min == 0 || self.min > self.max {
            return Err(Error::Config(
                "long-tail profile needs 0 < min <= max and species > 0".into(),
            ));
        }
        if !(lo..=hi).contains(&self.mean) || !self.std.is_finite() || self.std < 0.0 {
            return Err(Error::Config(
                "long-tail mean must lie in [min, max], std >= 0".into(),
            ));
        }
        let total = (self.mean * n as f64).round() as usize;
        if self.min == self.max {
            return Ok(vec![self.min; n]);
        }
        if n == 1 {
            return Err(Error::Config(
                "a single species cannot span distinct min and max".into(),
            ));
        }
        if total < (n - 1) * self.min + self.max || total > self.min + (n - 1) * self.max {
            return Err(Error::Config(
                "long-tail mean incompatible with pinned min and max".into(),
            ));
        }

        let normal = StdNormal::new(0.0, 1.0).expect("standard normal");
        let z: Vec<f64> = (0..n)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let shape = |mu: f64, sigma: f64| -> Vec<f64> {
            z.iter()
                .map(|zi| (mu + sigma * zi).exp().clamp(lo, hi))
                .collect()
        };
        let fit_mu = |sigma: f64| -> f64 {
            let (mut a, mut b) = (lo.ln() - 40.0 * sigma - 1.0, hi.ln() + 40.0 * sigma + 1.0);
            for _ in 0..120 {
                let m = 0.5 * (a + b);
                if exact_sum(shape(m, sigma)) < total as f64 {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        };
        let std_at = |sigma: f64| population_std(&shape(fit_mu(sigma), sigma)).unwrap_or(0.0);
        let (mut a, mut b) = (0.0, 20.0);
        if std_at(b) < self.std {
            return Err(Error::Config(format!(
                "standard deviation {} unreachable within [{}, {}]",
                self.std, self.min, self.max
            )));
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if std_at(m) < self.std {
                a = m;
            } else {
                b = m;
            }
        }
        let sigma = 0.5 * (a + b);
        let mut counts: Vec<usize> = shape(fit_mu(sigma), sigma)
            .iter()
            .map(|c| c.round() as usize)
            .collect();
        counts[0] = self.min;
        counts[n - 1] = self.max;

        // Nudge interior entries, largest first, until the total is exact.
        let mut diff = total as i64 - counts.iter().sum::<usize>() as i64;
        let mut stalled = false;
        while diff != 0 && !stalled {
            stalled = true;
            for i in (1..n - 1).rev() {
                if diff > 0 && counts[i] < self.max {
                    counts[i] += 1;
                    diff -= 1;
                    stalled = false;
                } else if diff < 0 && counts[i] > self.min {
                    counts[i] -= 1;
                    diff += 1;
                    stalled = false;
                }
                if diff == 0 {
                    break;
                }
            }
        }
        if diff != 0 {
            return Err(Error::Config("cannot meet long-tail total".into()));
        }
        counts.sort_unstable_by(|x, y| y.cmp(x));
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesProfile {
    Uniform { images_per_species: usize },
    LongTail(LongTailProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatorConfig {
    pub species_count: usize,
    pub profile: SpeciesProfile,
    pub organ_accuracy: BTreeMap<OrganClass, f64>,
    /// Mean ROIs per image for each organ.
    pub organ_rate: BTreeMap<OrganClass, f64>,
    pub max_rois_per_organ: u64,
    /// Largest probability mass given to non-argmax species, in `[0, 0.5)`.
    pub spread: f64,
    /// Accuracy of a simulated whole-image classifier; `None` skips it.
    pub whole_image_accuracy: Option<f64>,
    pub image_size: (u32, u32),
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            species_count: 161,
            profile: SpeciesProfile::Uniform {
                images_per_species: 10,
            },
            organ_accuracy: reference_organ_accuracy(),
            organ_rate: reference_organ_rates(),
            max_rois_per_organ: 20,
            spread: 0.4,
            whole_image_accuracy: None,
            image_size: (1024, 1024),
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.species_count < 2 {
            return Err(Error::Config("species_count must be at least 2".into()));
        }
        for (o, a) in &self.organ_accuracy {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::Config(format!("{o} accuracy {a} outside [0, 1]")));
            }
        }
        if let Some(a) = self.whole_image_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "whole-image accuracy {a} outside [0, 1]"
                )));
            }
        }
        if self.organ_rate.values().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(
                "organ rates must be finite and non-negative".into(),
            ));
        }
        if !self.organ_rate.values().any(|r| *r > 0.0) {
            return Err(Error::Config(
                "at least one organ needs a positive rate".into(),
            ));
        }
        if let Some(o) = self
            .organ_rate
            .iter()
            .find(|(o, r)| **r > 0.0 && !self.organ_accuracy.contains_key(*o))
            .map(|(o, _)| o)
        {
            return Err(Error::Config(format!("no accuracy given for {o}")));
        }
        if self.max_rois_per_organ == 0 {
            return Err(Error::Config("max_rois_per_organ must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.spread) {
            return Err(Error::Config(format!(
                "spread {} must lie in [0, 0.5) to keep the argmax on the drawn species",
                self.spread
            )));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::Config("image size must be at least 8x8".into()));
        }
        match &self.profile {
            SpeciesProfile::Uniform {
                images_per_species: 0,
            } => Err(Error::Config("images_per_species must be positive".into())),
            SpeciesProfile::LongTail(p) if p.species != self.species_count => Err(Error::Config(
                "long-tail profile species count differs from species_count".into(),
            )),
            _ => Ok(()),
        }
    }

    fn images_per_species(&self) -> Result<Vec<usize>> {
        match &self.profile {
            SpeciesProfile::Uniform { images_per_species } => {
                Ok(vec![*images_per_species; self.species_count])
            }
            SpeciesProfile::LongTail(p) => p.counts(),
        }
    }
}

/// Target and realized accuracy of one simulated organ classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealizedAccuracy {
    pub target: f64,
    pub realized: f64,
    pub rois: usize,
    /// Whether `realized` is within three binomial standard errors of
    /// `target`; only judged from 1000 ROIs on.
    pub within_3se: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct ScenarioCorpus {
    pub manifest: DatasetManifest,
    pub rois: Vec<RoiPrediction>,
    pub whole_image: BTreeMap<String, SpeciesDistribution>,
    pub realized: BTreeMap<OrganClass, RealizedAccuracy>,
}

impl ScenarioCorpus {
    /// Organs whose realized accuracy misses the 3-SE band.
    pub fn miscalibrated(&self) -> Vec<OrganClass> {
        self.realized
            .iter()
            .filter(|(_, r)| r.within_3se == Some(false))
            .map(|(o, _)| *o)
            .collect()
    }
}

struct ImageDraw {
    rois: Vec<(OrganClass, BoundingBox, Vec<f64>, bool)>,
    whole_image: Option<Vec<f64>>,
}

fn draw_distribution(
    rng: &mut ChaCha8Rng,
    truth: usize,
    species: usize,
    accuracy: f64,
    spread: f64,
) -> (Vec<f64>, bool) {
    let correct = rng.random::<f64>() < accuracy;
    let top = if correct {
        truth
    } else {
        let k = rng.random_range(0..species - 1);
        if k >= truth {
            k + 1
        } else {
            k
        }
    };
    let rest = spread * rng.random::<f64>();
    let weights: Vec<f64> = (0..species)
        .map(|s| if s == top { 0.0 } else { Exp1.sample(rng) })
        .collect();
    let wsum = exact_sum(weights.iter().copied());
    let probs = weights
        .iter()
        .enumerate()
        .map(|(s, w)| {
            if s == top {
                1.0 - rest
            } else if wsum > 0.0 {
                rest * w / wsum
            } else {
                0.0
            }
        })
        .collect();
    (probs, correct)
}

fn draw_box(rng: &mut ChaCha8Rng, organ: OrganClass, size: (u32, u32)) -> BoundingBox {
    let (mw, mh, sw, sh) = REFERENCE_BOX_SCALE[organ.index()];
    let (iw, ih) = (f64::from(size.0), f64::from(size.1));
    let side = |rng: &mut ChaCha8Rng, m: f64, s: f64, limit: f64| -> f64 {
        let v: f64 = Normal::new(m, s).expect("finite scale").sample(rng);
        v.round().clamp(8.0, limit)
    };
    let w = side(rng, mw, sw, iw);
    let h = side(rng, mh, sh, ih);
    let x = (rng.random::<f64>() * (iw - w)).floor();
    let y = (rng.random::<f64>() * (ih - h)).floor();
    BoundingBox::from_xywh(x, y, w, h).expect("box inside image")
}

fn draw_count(rng: &mut ChaCha8Rng, rate: f64, max: u64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(rate).expect("positive rate");
    loop {
        let k = poisson.sample(rng) as u64;
        if k <= max {
            return k;
        }
    }
}

/// Generates a corpus; identical configs give bit-identical corpora for any
/// `workers`.
pub fn generate(config: &SimulatorConfig, workers: usize) -> Result<ScenarioCorpus> {
    config.validate()?;
    let per_species = config.images_per_species()?;
    let species: Vec<String> = (0..config.species_count)
        .map(|k| format!("species-{k:04}"))
        .collect();
    let mut images = Vec::new();
    for (k, &n) in per_species.iter().enumerate() {
        for j in 0..n {
            images.push(ImageRecord {
                image_id: format!("sim-{k:04}-{j:05}"),
                width: config.image_size.0,
                height: config.image_size.1,
                species: k,
                query_id: None,
            });
        }
    }

    let indexed: Vec<(usize, usize)> = images.iter().map(|i| i.species).enumerate().collect();
    let draws = map_ordered(&indexed, workers, |&(idx, truth)| {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ splitmix64(idx as u64)));
        let mut rois = Vec::new();
        for organ in OrganClass::ALL {
            let rate = config.organ_rate.get(&organ).copied().unwrap_or(0.0);
            let count = draw_count(&mut rng, rate, config.max_rois_per_organ);
            let accuracy = config.organ_accuracy.get(&organ).copied().unwrap_or(0.0);
            for _ in 0..count {
                let bbox = draw_box(&mut rng, organ, config.image_size);
                let (probs, hit) = draw_distribution(
                    &mut rng,
                    truth,
                    config.species_count,
                    accuracy,
                    config.spread,
                );
                rois.push((organ, bbox, probs, hit));
            }
        }
        let whole_image = config
            .whole_image_accuracy
            .map(|a| draw_distribution(&mut rng, truth, config.species_count, a, config.spread).0);
        ImageDraw { rois, whole_image }
    })?;

    let mut annotations = Vec::new();
    let mut rois = Vec::new();
    let mut whole_image = BTreeMap::new();
    let mut tally: BTreeMap<OrganClass, (usize, usize)> = BTreeMap::new();
    for (img, draw) in images.iter().zip(draws) {
        for (i, (organ, bbox, probs, hit)) in draw.rois.into_iter().enumerate() {
            let t = tally.entry(organ).or_default();
            t.0 += 1;
            t.1 += usize::from(hit);
            annotations.push(GroundTruthAnnotation {
                image_id: img.image_id.clone(),
                organ,
                bbox,
            });
            rois.push(RoiPrediction {
                image_id: img.image_id.clone(),
                roi_index: i,
                organ,
                bbox,
                distribution: SpeciesDistribution::new(probs)?,
            });
        }
        if let Some(p) = draw.whole_image {
            whole_image.insert(img.image_id.clone(), SpeciesDistribution::new(p)?);
        }
    }

    let realized = tally
        .into_iter()
        .map(|(o, (n, hit))| {
            let target = config.organ_accuracy.get(&o).copied().unwrap_or(0.0);
            let realized = hit as f64 / n as f64;
            let se = (target * (1.0 - target) / n as f64).sqrt();
            let within = (n >= 1000).then(|| (realized - target).abs() <= 3.0 * se);
            (
                o,
                RealizedAccuracy {
                    target,
                    realized,
                    rois: n,
                    within_3se: within,
                },
            )
        })
        .collect();

    Ok(ScenarioCorpus {
        manifest: DatasetManifest::new(species, images, annotations, None)?,
        rois,
        whole_image,
        realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimulatorConfig {
        SimulatorConfig {
            species_count: 5,
            profile: SpeciesProfile::Uniform {
                images_per_species: 8,
            },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn long_tail_profile_hits_targets() {
        let p = LongTailProfile {
            species: 1000,
            mean: 89.97,
            std: 85.6,
            min: 6,
            max: 762,
        };
        let c = p.counts().unwrap();
        assert_eq!(c.iter().sum::<usize>(), 89970);
        assert_eq!((c[0], c[999]), (762, 6));
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        let f: Vec<f64> = c.iter().map(|&x| x as f64).collect();
        let s = population_std(&f).unwrap();
        assert!((s - 85.6).abs() < 0.05, "{s}");
    }

    #[test]
    fn long_tail_rejects_impossible_targets() {
        let p = LongTailProfile {
            species: 10,
            mean: 5.0,
            std: 1.0,
            min: 6,
            max: 10,
        };
        assert!(p.counts().is_err());
        let p = LongTailProfile {
            species: 10,
            mean: 8.0,
            std: 50.0,
            min: 6,
            max: 10,
        };
        assert!(p.counts().is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small(3), 1).unwrap();
        let b = generate(&small(3), 4).unwrap();
        assert_eq!(a.rois, b.rois);
        assert_eq!(a.manifest, b.manifest);
        let c = generate(&small(4), 1).unwrap();
        assert_ne!(a.rois, c.rois);
    }

    #[test]
    fn perfect_and_hopeless_classifiers() {
        let mut cfg = small(1);
        cfg.organ_accuracy = OrganClass::ALL.iter().map(|&o| (o, 1.0)).collect();
        let c = generate(&cfg, 1).unwrap();
        assert!(c
            .rois
            .iter()
            .all(|r| r.distribution.argmax() == c.manifest.image(&r.image_id).unwrap().species));

        let mut cfg = small(1);
        cfg.species_count = 2;
        cfg.organ_accuracy = OrganClass::ALL.iter().map(|&o| (o, 0.0)).collect();
        let c = generate(&cfg, 1).unwrap();
        assert!(!c.rois.is_empty());
        assert!(c
            .rois
            .iter()
            .all(|r| r.distribution.argmax() != c.manifest.image(&r.image_id).unwrap().species));
        assert!(c.realized.values().all(|r| r.realized == 0.0));
    }

    #[test]
    fn infeasible_configs() {
        let mut cfg = small(0);
        cfg.spread = 0.5;
        assert!(matches!(generate(&cfg, 1), Err(Error::Config(_))));
        let mut cfg = small(0);
        cfg.species_count = 1;
        assert!(generate(&cfg, 1).is_err());
        let mut cfg = small(0);
        cfg.organ_rate = OrganClass::ALL.iter().map(|&o| (o, 0.0)).collect();
        assert!(generate(&cfg, 1).is_err());
    }

    #[test]
    fn generated_boxes_and_distributions_are_valid() {
        let c = generate(&small(9), 1).unwrap();
        c.manifest.check_roi_predictions(&c.rois).unwrap();
        for r in &c.rois {
            let s: f64 = r.distribution.probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
