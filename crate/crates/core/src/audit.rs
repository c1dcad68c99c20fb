//! Two-stage near-duplicate leakage audit.
//!
//! Stage 1 retrieves the top-K training images for each validation image by
//! pHash Hamming distance. Stage 2 scores every candidate pair with SSIM
//! after shrinking both images to the configured maximum side. A validation
//! image counts as leaked at threshold `t` when its best pair reaches `t`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::image::GrayImage;
use crate::imghash::{phash, HashError, HashIndex, PHash64, RetrievalConfig};
use crate::ssim::{preprocess_for_ssim, ssim_prepared, PreparedImage, SsimConfig, SsimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("image {0:?} appears in both the training and the validation split")]
    Overlap(String),
    #[error("image {image_id:?}: {source}")]
    Ssim { image_id: String, source: SsimError },
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("thresholds must be non-empty, strictly ascending and inside (0, 1)")]
    InvalidThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub thresholds: Vec<f64>,
    pub retrieval: RetrievalConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            thresholds: alloc::vec![0.50, 0.60, 0.70, 0.80, 0.85, 0.90, 0.95],
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        let inside = self.thresholds.iter().all(|&t| t > 0.0 && t < 1.0);
        let ascending = self.thresholds.windows(2).all(|w| w[0] < w[1]);
        if self.thresholds.is_empty() || !inside || !ascending {
            return Err(AuditError::InvalidThresholds);
        }
        self.retrieval.validate()?;
        Ok(())
    }
}

/// An image ready for auditing: its hash plus SSIM-preprocessed pixels.
#[derive(Debug, Clone)]
pub struct AuditImage {
    pub image_id: String,
    pub hash: PHash64,
    reduced: GrayImage,
    prepared: PreparedImage,
}

impl AuditImage {
    pub fn new(image_id: impl Into<String>, img: &GrayImage, cfg: &SsimConfig) -> Result<Self, AuditError> {
        Self::with_hash(image_id, phash(img), img, cfg)
    }

    /// Uses a precomputed hash (e.g. from a hash cache file).
    pub fn with_hash(
        image_id: impl Into<String>,
        hash: PHash64,
        img: &GrayImage,
        cfg: &SsimConfig,
    ) -> Result<Self, AuditError> {
        let image_id = image_id.into();
        let reduced = preprocess_for_ssim(img, cfg);
        let prepared = PreparedImage::new(&reduced, cfg).map_err(|source| AuditError::Ssim {
            image_id: image_id.clone(),
            source,
        })?;
        Ok(Self {
            image_id,
            hash,
            reduced,
            prepared,
        })
    }

    /// SSIM against `other`, resizing `other` to this image's reduced shape
    /// when the two differ.
    pub fn ssim_against(&self, other: &AuditImage, cfg: &SsimConfig) -> Result<f64, AuditError> {
        let err = |source| AuditError::Ssim {
            image_id: other.image_id.clone(),
            source,
        };
        if self.prepared.width() == other.prepared.width()
            && self.prepared.height() == other.prepared.height()
        {
            return ssim_prepared(&self.prepared, &other.prepared, cfg).map_err(err);
        }
        let resized = other
            .reduced
            .resize_bilinear(self.prepared.width(), self.prepared.height());
        let prepared = PreparedImage::new(&resized, cfg).map_err(err)?;
        ssim_prepared(&self.prepared, &prepared, cfg).map_err(err)
    }
}

/// A confirmed candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidencePair {
    pub val_id: String,
    pub train_id: String,
    pub hamming: u32,
    pub ssim: f64,
}

/// Stage-2 result for a single validation image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub val_id: String,
    /// Best SSIM among retrieved candidates; `None` when stage 1 found nothing.
    pub max_ssim: Option<f64>,
    /// Pairs with SSIM at or above the lowest threshold, in retrieval order.
    pub evidence: Vec<EvidencePair>,
}

/// Training side of one fold: hash index plus id lookup.
pub struct TrainSet<'a> {
    index: HashIndex,
    by_id: BTreeMap<&'a str, &'a AuditImage>,
}

impl<'a> TrainSet<'a> {
    pub fn new(train: impl IntoIterator<Item = &'a AuditImage>) -> Result<Self, AuditError> {
        let train: Vec<&'a AuditImage> = train.into_iter().collect();
        let index = HashIndex::build(train.iter().map(|t| (t.image_id.clone(), t.hash)))?;
        let by_id = train.iter().map(|t| (t.image_id.as_str(), *t)).collect();
        Ok(Self { index, by_id })
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.by_id.contains_key(image_id)
    }

    pub fn probe(
        &self,
        val: &AuditImage,
        acfg: &AuditConfig,
        scfg: &SsimConfig,
    ) -> Result<ProbeOutcome, AuditError> {
        let floor = acfg.thresholds.first().copied().unwrap_or(f64::INFINITY);
        let mut max_ssim: Option<f64> = None;
        let mut evidence = Vec::new();
        for hit in self.index.query_topk(val.hash, &acfg.retrieval) {
            let train = self.by_id[hit.image_id];
            let score = val.ssim_against(train, scfg)?;
            max_ssim = Some(max_ssim.map_or(score, |m: f64| m.max(score)));
            if score >= floor {
                evidence.push(EvidencePair {
                    val_id: val.image_id.clone(),
                    train_id: train.image_id.clone(),
                    hamming: hit.distance,
                    ssim: score,
                });
            }
        }
        Ok(ProbeOutcome {
            val_id: val.image_id.clone(),
            max_ssim,
            evidence,
        })
    }
}

/// Leakage figures for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldLeakage {
    pub fold: u32,
    pub n_val: usize,
    /// Leaked validation images per threshold, aligned with the config.
    pub leaked: Vec<usize>,
    /// Percentages `100 * leaked / n_val` per threshold.
    pub rates: Vec<f64>,
    pub evidence: Vec<EvidencePair>,
}

impl FoldLeakage {
    pub fn from_outcomes(fold: u32, outcomes: Vec<ProbeOutcome>, acfg: &AuditConfig) -> Self {
        let n_val = outcomes.len();
        let leaked: Vec<usize> = acfg
            .thresholds
            .iter()
            .map(|&t| {
                outcomes
                    .iter()
                    .filter(|o| o.max_ssim.is_some_and(|m| m >= t))
                    .count()
            })
            .collect();
        let rates = leaked
            .iter()
            .map(|&n| if n_val == 0 { 0.0 } else { 100.0 * n as f64 / n_val as f64 })
            .collect();
        let evidence = outcomes.into_iter().flat_map(|o| o.evidence).collect();
        Self {
            fold,
            n_val,
            leaked,
            rates,
            evidence,
        }
    }

    /// Validation ids whose best pair reaches `threshold`.
    pub fn leaked_ids(&self, threshold: f64) -> BTreeSet<&str> {
        self.evidence
            .iter()
            .filter(|e| e.ssim >= threshold)
            .map(|e| e.val_id.as_str())
            .collect()
    }
}

/// Per-fold leakage table.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub thresholds: Vec<f64>,
    pub folds: Vec<FoldLeakage>,
}

/// Checks that no validation id also sits in the training split.
pub fn check_disjoint(train: &[AuditImage], val: &[AuditImage]) -> Result<(), AuditError> {
    let train_ids: BTreeSet<&str> = train.iter().map(|t| t.image_id.as_str()).collect();
    match val.iter().find(|v| train_ids.contains(v.image_id.as_str())) {
        Some(v) => Err(AuditError::Overlap(v.image_id.clone())),
        None => Ok(()),
    }
}

/// Audits one train/validation split sequentially.
pub fn audit(
    fold: u32,
    train: &[AuditImage],
    val: &[AuditImage],
    acfg: &AuditConfig,
    scfg: &SsimConfig,
) -> Result<FoldLeakage, AuditError> {
    acfg.validate()?;
    check_disjoint(train, val)?;
    let set = TrainSet::new(train)?;
    let outcomes = val
        .iter()
        .map(|v| set.probe(v, acfg, scfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FoldLeakage::from_outcomes(fold, outcomes, acfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn textured(seed: u64, size: u32) -> GrayImage {
        let mut s = seed.wrapping_mul(0x2545_f491_4f6c_dd1d) | 1;
        let cells: Vec<u8> = (0..64)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 56) as u8
            })
            .collect();
        GrayImage::from_fn(size, size, |x, y| {
            let cx = (x * 8 / size) as usize;
            let cy = (y * 8 / size) as usize;
            cells[cy * 8 + cx] / 2 + ((x * 3 + y * 5) % 64) as u8
        })
        .unwrap()
    }

    fn item(id: &str, img: &GrayImage) -> AuditImage {
        AuditImage::new(id, img, &SsimConfig::default()).unwrap()
    }

    #[test]
    fn no_candidates_means_zero_rates() {
        let cfg = SsimConfig::default();
        let img = textured(1, 64);
        // identical pixels, but hashes 64 bits apart so stage 1 rejects the pair
        let train = [AuditImage::with_hash("t", PHash64(0), &img, &cfg).unwrap()];
        let val = [AuditImage::with_hash("v", PHash64(u64::MAX), &img, &cfg).unwrap()];
        let acfg = AuditConfig {
            retrieval: RetrievalConfig { k: 50, max_hamming: 10 },
            ..AuditConfig::default()
        };
        let fold = audit(0, &train, &val, &acfg, &cfg).unwrap();
        assert!(fold.rates.iter().all(|&r| r == 0.0));
        assert!(fold.evidence.is_empty());

        let empty = audit(1, &[], &val, &AuditConfig::default(), &cfg).unwrap();
        assert_eq!(empty.leaked, alloc::vec![0; 7]);
    }

    #[test]
    fn one_exact_copy_in_hundred() {
        let train: Vec<AuditImage> =
            (0..20).map(|i| item(&format!("t{i}"), &textured(i, 48))).collect();
        let mut val: Vec<AuditImage> =
            (100..199).map(|i| item(&format!("v{i}"), &textured(i, 48))).collect();
        val.push(item("copy", &textured(7, 48)));
        let fold = audit(0, &train, &val, &AuditConfig::default(), &SsimConfig::default()).unwrap();
        assert_eq!(fold.n_val, 100);
        // the copy leaks at every threshold; unrelated pairs may leak only at low ones
        assert!(fold.leaked.iter().all(|&n| n >= 1));
        assert!(fold.leaked_ids(0.95).contains("copy"));
        assert_eq!(*fold.rates.last().unwrap(), 1.0);
        assert!(fold.rates.windows(2).all(|w| w[0] >= w[1]));
        assert!(fold.evidence.iter().any(|e| e.val_id == "copy" && e.train_id == "t7" && e.ssim == 1.0));
    }

    #[test]
    fn overlap_rejected() {
        let a = item("same", &textured(1, 32));
        let err = audit(0, &[a.clone()], &[a], &AuditConfig::default(), &SsimConfig::default());
        assert_eq!(err.unwrap_err(), AuditError::Overlap("same".into()));
    }

    #[test]
    fn mismatched_shapes_are_resized_to_probe() {
        let cfg = SsimConfig::default();
        let wide = item("w", &textured(3, 64).resize_bilinear(64, 32));
        let square = item("s", &textured(3, 64));
        let s = wide.ssim_against(&square, &cfg).unwrap();
        assert!(s > 0.5, "{s}");
    }

    #[test]
    fn thresholds_validated() {
        let bad = AuditConfig {
            thresholds: alloc::vec![0.5, 0.5],
            ..AuditConfig::default()
        };
        assert_eq!(bad.validate(), Err(AuditError::InvalidThresholds));
        let bad = AuditConfig {
            thresholds: alloc::vec![0.5, 1.0],
            ..AuditConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(AuditConfig::default().validate().is_ok());
    }

    #[test]
    fn tiny_images_rejected_with_id() {
        let err = AuditImage::new("tiny", &GrayImage::filled(5, 5, 0).unwrap(), &SsimConfig::default());
        assert!(matches!(err, Err(AuditError::Ssim { ref image_id, .. }) if image_id == "tiny"));
    }
}
