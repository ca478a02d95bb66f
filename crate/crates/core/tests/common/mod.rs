#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use organfuse::{
    BoundingBox, DatasetManifest, GroundTruthAnnotation, ImageRecord, OrganClass, RoiPrediction,
    SpeciesDistribution, Split,
};

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn image(id: &str, species: usize) -> ImageRecord {
    ImageRecord {
        image_id: id.into(),
        width: 1000,
        height: 1000,
        species,
        query_id: None,
    }
}

pub fn gt(id: &str, organ: OrganClass, b: BoundingBox) -> GroundTruthAnnotation {
    GroundTruthAnnotation {
        image_id: id.into(),
        organ,
        bbox: b,
    }
}

pub fn roi(image_id: &str, idx: usize, organ: OrganClass, p: &[f64]) -> RoiPrediction {
    RoiPrediction {
        image_id: image_id.into(),
        roi_index: idx,
        organ,
        bbox: bx(0.0, 0.0, 10.0, 10.0),
        distribution: SpeciesDistribution::new(p.to_vec()).unwrap(),
    }
}

pub fn species_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("sp{k:04}")).collect()
}

/// Manifest with `counts[k]` images of species `k`, no annotations.
pub fn manifest_with_counts(
    counts: &[usize],
    splits: Option<BTreeMap<String, Split>>,
) -> DatasetManifest {
    let mut images = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        for j in 0..n {
            images.push(image(&format!("s{k:04}-{j:04}"), k));
        }
    }
    DatasetManifest::new(species_names(counts.len()), images, Vec::new(), splits).unwrap()
}

/// Exact value of a finite f64 as `mantissa * 2^-1074`.
fn scaled(x: f64) -> BigInt {
    assert!(x.is_finite());
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    BigInt::from(sign) * (BigInt::from(m) << ((e + 1074) as usize))
}

/// Correctly rounded (ties to even) value of `n * 2^-1074`, for magnitudes in
/// the normal range.
fn round_scaled(n: &BigInt) -> f64 {
    if n.is_zero() {
        return 0.0;
    }
    let neg = n.is_negative();
    let a = n.abs();
    let bits = a.bits() as i64;
    let shift = (bits - 53).max(0);
    let mut q = &a >> (shift as usize);
    if shift > 0 {
        let rem = &a - (&q << (shift as usize));
        let half = BigInt::from(1) << ((shift - 1) as usize);
        let odd = (&q & BigInt::from(1)) == BigInt::from(1);
        if rem > half || (rem == half && odd) {
            q += 1;
        }
    }
    let mut v = q.to_f64().unwrap();
    let mut e = shift - 1074;
    while e < 0 {
        let step = e.max(-500);
        v *= 2f64.powi(step as i32);
        e -= step;
    }
    while e > 0 {
        let step = e.min(500);
        v *= 2f64.powi(step as i32);
        e -= step;
    }
    if neg {
        -v
    } else {
        v
    }
}

/// Correctly rounded sum computed in exact big-integer arithmetic.
pub fn exact_sum_oracle(values: &[f64]) -> f64 {
    let total: BigInt = values.iter().map(|&v| scaled(v)).sum();
    round_scaled(&total)
}
