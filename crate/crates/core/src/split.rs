//! Stratified k-fold assignment and inverse-frequency sampler weights.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::manifest::{FractureClass, ImageRecord};
use crate::rng::Rng64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("class {class} has {available} {unit}, fewer than k = {k}")]
    TooFewSamples {
        class: FractureClass,
        available: usize,
        k: u32,
        unit: &'static str,
    },
    #[error("k must be at least 2, got {0}")]
    InvalidK(u32),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("record {0:?} has a class excluded from training")]
    ExcludedClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    ImageLevel,
    FoanGrouped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub k: u32,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            grouping: Grouping::ImageLevel,
        }
    }
}

/// Fold index per trainable image.
pub type FoldAssignment = BTreeMap<String, u32>;

/// Sampling weight per training image.
pub type SamplerWeights = BTreeMap<String, f64>;

/// Deals each class's (shuffled) units round-robin over the folds.
///
/// Units are sorted by key before shuffling so the result depends only on
/// the record set and the seed, never on input order. Classes are processed
/// in enum order from one RNG stream, and the dealing position carries over
/// between classes to keep total fold sizes balanced.
fn deal<'a>(
    units: BTreeMap<FractureClass, Vec<&'a str>>,
    k: u32,
    seed: u64,
) -> BTreeMap<&'a str, u32> {
    let mut rng = Rng64::new(seed);
    let mut out = BTreeMap::new();
    let mut next = 0u32;
    for (_, mut keys) in units {
        keys.sort_unstable();
        rng.shuffle(&mut keys);
        for key in keys {
            out.insert(key, next);
            next = (next + 1) % k;
        }
    }
    out
}

fn check_counts(
    counts: &BTreeMap<FractureClass, Vec<&str>>,
    k: u32,
    unit: &'static str,
) -> Result<(), SplitError> {
    for (&class, units) in counts {
        if units.len() < k as usize {
            return Err(SplitError::TooFewSamples {
                class,
                available: units.len(),
                k,
                unit,
            });
        }
    }
    Ok(())
}

/// Assigns every trainable record to one of `k` folds.
///
/// `ImageLevel` stratifies images by class. `FoanGrouped` keeps every FOAN in
/// a single fold, stratifying FOAN groups by the majority class of their
/// images (ties go to the earlier class). Excluded classes never get a fold.
pub fn stratified_kfold(records: &[ImageRecord], cfg: &SplitConfig) -> Result<FoldAssignment, SplitError> {
    if cfg.k < 2 {
        return Err(SplitError::InvalidK(cfg.k));
    }
    let trainable: Vec<&ImageRecord> = records
        .iter()
        .filter(|r| r.fracture_class.is_trainable())
        .collect();

    match cfg.grouping {
        Grouping::ImageLevel => {
            let mut by_class: BTreeMap<FractureClass, Vec<&str>> = BTreeMap::new();
            for r in &trainable {
                by_class.entry(r.fracture_class).or_default().push(&r.image_id);
            }
            check_counts(&by_class, cfg.k, "images")?;
            Ok(deal(by_class, cfg.k, cfg.seed)
                .into_iter()
                .map(|(id, f)| (id.into(), f))
                .collect())
        }
        Grouping::FoanGrouped => {
            let mut groups: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
            for r in &trainable {
                let c = r.fracture_class.trainable_index().expect("filtered");
                groups.entry(&r.foan).or_default()[c] += 1;
            }
            let mut by_class: BTreeMap<FractureClass, Vec<&str>> = BTreeMap::new();
            for (foan, counts) in &groups {
                let majority = (0..3)
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                    .expect("three classes");
                by_class
                    .entry(FractureClass::TRAINABLE[majority])
                    .or_default()
                    .push(foan);
            }
            check_counts(&by_class, cfg.k, "FOAN groups")?;
            let group_fold = deal(by_class, cfg.k, cfg.seed);
            Ok(trainable
                .iter()
                .map(|r| (r.image_id.clone(), group_fold[r.foan.as_str()]))
                .collect())
        }
    }
}

/// Per-image weights `(1 / n_class) / C`, where `C` is the number of classes
/// present. Each class carries total mass `1 / C`.
pub fn sampler_weights(train: &[ImageRecord]) -> Result<SamplerWeights, SplitError> {
    if train.is_empty() {
        return Err(SplitError::EmptyTrainingSet);
    }
    let mut counts = [0usize; 3];
    for r in train {
        match r.fracture_class.trainable_index() {
            Some(c) => counts[c] += 1,
            None => return Err(SplitError::ExcludedClass(r.image_id.clone())),
        }
    }
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;
    Ok(train
        .iter()
        .map(|r| {
            let n = counts[r.fracture_class.trainable_index().expect("checked")];
            (r.image_id.clone(), 1.0 / n as f64 / present)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use crate::manifest::Magnification;
    use proptest::prelude::*;

    fn records(counts: &[(FractureClass, usize)], images_per_foan: usize) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for &(class, n) in counts {
            for i in 0..n {
                out.push(ImageRecord {
                    image_id: format!("{}-{i:05}", class.token()),
                    path: String::new(),
                    foan: format!("FOAN-{}-{:05}", class.token(), i / images_per_foan),
                    serial: String::new(),
                    instance_tag: String::new(),
                    fracture_class: class,
                    magnification: Magnification::X50,
                    fold: None,
                });
            }
        }
        out
    }

    fn fold_counts(recs: &[ImageRecord], folds: &FoldAssignment, class: FractureClass, k: u32) -> Vec<usize> {
        let mut c = alloc::vec![0usize; k as usize];
        for r in recs.iter().filter(|r| r.fracture_class == class) {
            c[folds[&r.image_id] as usize] += 1;
        }
        c
    }

    #[test]
    fn ten_images_one_class() {
        let recs = records(&[(FractureClass::Material, 10)], 1);
        let folds = stratified_kfold(&recs, &SplitConfig::default()).unwrap();
        assert_eq!(fold_counts(&recs, &folds, FractureClass::Material, 5), [2; 5]);
    }

    #[test]
    fn foan_group_of_eight_stays_together() {
        let mut recs = records(&[(FractureClass::GreenBody, 40)], 8);
        recs.extend(records(&[(FractureClass::HardMachining, 40)], 8));
        let cfg = SplitConfig {
            grouping: Grouping::FoanGrouped,
            ..SplitConfig::default()
        };
        let folds = stratified_kfold(&recs, &cfg).unwrap();
        let first: Vec<u32> = recs[..8].iter().map(|r| folds[&r.image_id]).collect();
        assert!(first.iter().all(|&f| f == first[0]));
    }

    #[test]
    fn excluded_classes_get_no_fold() {
        let mut recs = records(&[(FractureClass::GreenBody, 10)], 1);
        recs.extend(records(&[(FractureClass::Unmatchable, 3), (FractureClass::UnknownOrigin, 2)], 1));
        let folds = stratified_kfold(&recs, &SplitConfig::default()).unwrap();
        assert_eq!(folds.len(), 10);
    }

    #[test]
    fn too_few_samples_names_the_class() {
        let recs = records(&[(FractureClass::GreenBody, 10), (FractureClass::Material, 4)], 1);
        assert_eq!(
            stratified_kfold(&recs, &SplitConfig::default()),
            Err(SplitError::TooFewSamples {
                class: FractureClass::Material,
                available: 4,
                k: 5,
                unit: "images"
            })
        );
        let recs = records(&[(FractureClass::GreenBody, 32)], 8);
        let cfg = SplitConfig { grouping: Grouping::FoanGrouped, ..SplitConfig::default() };
        assert!(matches!(
            stratified_kfold(&recs, &cfg),
            Err(SplitError::TooFewSamples { available: 4, unit: "FOAN groups", .. })
        ));
        assert_eq!(stratified_kfold(&recs, &SplitConfig { k: 1, ..SplitConfig::default() }), Err(SplitError::InvalidK(1)));
    }

    #[test]
    fn seeds_matter_and_repeat() {
        let recs = records(&[(FractureClass::GreenBody, 200)], 1);
        let a = stratified_kfold(&recs, &SplitConfig { seed: 1, ..SplitConfig::default() }).unwrap();
        let b = stratified_kfold(&recs, &SplitConfig { seed: 1, ..SplitConfig::default() }).unwrap();
        let c = stratified_kfold(&recs, &SplitConfig { seed: 2, ..SplitConfig::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn input_order_does_not_matter() {
        let recs = records(&[(FractureClass::GreenBody, 30), (FractureClass::Material, 12)], 1);
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(
            stratified_kfold(&recs, &SplitConfig::default()).unwrap(),
            stratified_kfold(&rev, &SplitConfig::default()).unwrap()
        );
    }

    #[test]
    fn weights_examples() {
        let recs = records(&[(FractureClass::Material, 4)], 1);
        let w = sampler_weights(&recs).unwrap();
        assert!(w.values().all(|&v| v == 0.25));

        let recs = records(
            &[(FractureClass::GreenBody, 2), (FractureClass::HardMachining, 2), (FractureClass::Material, 2)],
            1,
        );
        let w = sampler_weights(&recs).unwrap();
        assert!(w.values().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));

        assert_eq!(sampler_weights(&[]), Err(SplitError::EmptyTrainingSet));
        let bad = records(&[(FractureClass::UnknownOrigin, 1)], 1);
        assert!(matches!(sampler_weights(&bad), Err(SplitError::ExcludedClass(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn folds_partition_and_stratify(
            n0 in 5usize..60, n1 in 5usize..60, n2 in 5usize..60,
            k in 2u32..6, seed: u64,
        ) {
            let recs = records(
                &[(FractureClass::GreenBody, n0), (FractureClass::HardMachining, n1), (FractureClass::Material, n2)],
                1,
            );
            let cfg = SplitConfig { k, seed, grouping: Grouping::ImageLevel };
            let folds = stratified_kfold(&recs, &cfg).unwrap();
            prop_assert_eq!(folds.len(), recs.len());
            for (class, n) in [(FractureClass::GreenBody, n0), (FractureClass::HardMachining, n1), (FractureClass::Material, n2)] {
                for c in fold_counts(&recs, &folds, class, k) {
                    prop_assert!((c as f64 - n as f64 / k as f64).abs() < 1.0);
                }
            }
        }

        #[test]
        fn grouped_folds_never_split_a_foan(
            n0 in 40usize..120, n1 in 40usize..120, per in 1usize..9, seed: u64,
        ) {
            let recs = records(&[(FractureClass::GreenBody, n0), (FractureClass::Material, n1)], per);
            let cfg = SplitConfig { k: 5, seed, grouping: Grouping::FoanGrouped };
            let folds = stratified_kfold(&recs, &cfg).unwrap();
            let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
            for r in &recs {
                let f = folds[&r.image_id];
                prop_assert_eq!(*seen.entry(&r.foan).or_insert(f), f);
            }
        }

        #[test]
        fn weight_mass_is_balanced(n0 in 1usize..50, n1 in 0usize..50, n2 in 0usize..50) {
            let recs = records(
                &[(FractureClass::GreenBody, n0), (FractureClass::HardMachining, n1), (FractureClass::Material, n2)],
                1,
            );
            let w = sampler_weights(&recs).unwrap();
            let present = [n0, n1, n2].iter().filter(|&&n| n > 0).count() as f64;
            prop_assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
            for class in FractureClass::TRAINABLE {
                let mass: f64 = recs.iter().filter(|r| r.fracture_class == class).map(|r| w[&r.image_id]).sum();
                if mass > 0.0 {
                    prop_assert!((mass - 1.0 / present).abs() < 1e-12);
                }
            }
        }
    }
}
