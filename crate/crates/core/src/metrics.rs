//! Confusion matrices, per-class and macro scores, and cross-validation
//! aggregation (per fold, per magnification, with t-based intervals).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::manifest::{FractureClass, Magnification};
use crate::stats::{fold_summary, generalisation_gap, FoldSummary, StatsError};

/// Tolerance on `sum(probs) = 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictionError {
    #[error("{image_id:?}: probability {value} at index {index} is outside [0, 1]")]
    OutOfRange { image_id: String, index: usize, value: f64 },
    #[error("{image_id:?}: probabilities sum to {sum}, not 1")]
    BadSum { image_id: String, sum: f64 },
    #[error("{image_id:?}: predicted {predicted} is not the argmax of probs")]
    NotArgmax { image_id: String, predicted: FractureClass },
    #[error("{image_id:?}: predicted class {predicted} is not trainable")]
    NotTrainable { image_id: String, predicted: FractureClass },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no ground truth for prediction {0:?}")]
    MissingTruth(String),
    #[error("ground truth for {image_id:?} is {class}, which is not trainable")]
    NonTrainableTruth { image_id: String, class: FractureClass },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    pub fold: u32,
    pub probs: [f64; 3],
    pub predicted: FractureClass,
}

impl PredictionRecord {
    /// Checks range, normalisation and that `predicted` attains the maximum
    /// probability (exact ties are accepted).
    pub fn validate(&self) -> Result<(), PredictionError> {
        let id = || self.image_id.clone();
        for (index, &value) in self.probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PredictionError::OutOfRange {
                    image_id: id(),
                    index,
                    value,
                });
            }
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(PredictionError::BadSum { image_id: id(), sum });
        }
        let Some(p) = self.predicted.trainable_index() else {
            return Err(PredictionError::NotTrainable {
                image_id: id(),
                predicted: self.predicted,
            });
        };
        let max = self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.probs[p] < max {
            return Err(PredictionError::NotArgmax {
                image_id: id(),
                predicted: self.predicted,
            });
        }
        Ok(())
    }
}

/// Precision, recall and F1 for one class; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScores {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// Harmonic mean of precision and recall; `0` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Macro-F1 with undefined per-class F1 counted as zero and reported.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroF1 {
    pub value: f64,
    pub undefined: Vec<FractureClass>,
}

/// 3x3 counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: FractureClass, predicted: FractureClass) {
        if let (Some(t), Some(p)) = (truth.trainable_index(), predicted.trainable_index()) {
            self.counts[t][p] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..3 {
            for p in 0..3 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..3).map(|t| self.counts[t][p]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Rows divided by their totals; empty rows are `None`.
    pub fn row_normalised(&self) -> [Option<[f64; 3]>; 3] {
        core::array::from_fn(|t| {
            let n = self.row_sum(t);
            (n > 0).then(|| self.counts[t].map(|c| c as f64 / n as f64))
        })
    }

    pub fn per_class(&self) -> [ClassScores; 3] {
        per_class_prf(self)
    }

    pub fn macro_f1(&self) -> MacroF1 {
        let scores = self.per_class();
        let undefined = (0..3)
            .filter(|&c| scores[c].f1.is_none())
            .map(|c| FractureClass::TRAINABLE[c])
            .collect();
        let value = scores.iter().map(|s| s.f1.unwrap_or(0.0)).sum::<f64>() / 3.0;
        MacroF1 { value, undefined }
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> [ClassScores; 3] {
    core::array::from_fn(|c| {
        let tp = cm.counts[c][c] as f64;
        let rows = cm.row_sum(c);
        let cols = cm.col_sum(c);
        let recall = (rows > 0).then(|| tp / rows as f64);
        let precision = (cols > 0).then(|| tp / cols as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) => Some(f1_score(p, r)),
            _ => None,
        };
        ClassScores {
            recall,
            precision,
            f1,
        }
    })
}

fn truth_of(
    truth: &BTreeMap<String, FractureClass>,
    image_id: &str,
) -> Result<FractureClass, MetricsError> {
    let class = *truth
        .get(image_id)
        .ok_or_else(|| MetricsError::MissingTruth(image_id.into()))?;
    if !class.is_trainable() {
        return Err(MetricsError::NonTrainableTruth {
            image_id: image_id.into(),
            class,
        });
    }
    Ok(class)
}

/// Counts `(true, predicted)` pairs over all records (folds are summed).
pub fn confusion(
    preds: &[PredictionRecord],
    truth: &BTreeMap<String, FractureClass>,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        cm.add(truth_of(truth, &p.image_id)?, p.predicted);
    }
    Ok(cm)
}

/// One confusion matrix per fold.
pub fn confusion_by_fold(
    preds: &[PredictionRecord],
    truth: &BTreeMap<String, FractureClass>,
) -> Result<BTreeMap<u32, ConfusionMatrix>, MetricsError> {
    let mut out: BTreeMap<u32, ConfusionMatrix> = BTreeMap::new();
    for p in preds {
        out.entry(p.fold)
            .or_default()
            .add(truth_of(truth, &p.image_id)?, p.predicted);
    }
    Ok(out)
}

/// Macro-F1 of one magnification bucket across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketF1 {
    /// Per fold; `None` where the bucket has no records in that fold.
    pub per_fold: Vec<(u32, Option<f64>)>,
    pub mean: Option<f64>,
    /// Sample SD across supported folds; needs at least two.
    pub sd: Option<f64>,
    /// Set when some fold lacks support or a class F1 was undefined.
    pub flagged: bool,
}

/// Macro-F1 within each magnification bucket per fold, then mean and SD
/// across folds. Records with unknown or missing magnification are skipped.
pub fn per_magnification_f1(
    preds: &[PredictionRecord],
    truth: &BTreeMap<String, FractureClass>,
    mags: &BTreeMap<String, Magnification>,
) -> Result<BTreeMap<Magnification, BucketF1>, MetricsError> {
    let folds: BTreeSet<u32> = preds.iter().map(|p| p.fold).collect();
    let mut cells: BTreeMap<Magnification, BTreeMap<u32, ConfusionMatrix>> = BTreeMap::new();
    for p in preds {
        let t = truth_of(truth, &p.image_id)?;
        let mag = mags.get(&p.image_id).copied().unwrap_or(Magnification::Unknown);
        if mag == Magnification::Unknown {
            continue;
        }
        cells.entry(mag).or_default().entry(p.fold).or_default().add(t, p.predicted);
    }
    Ok(cells
        .into_iter()
        .map(|(mag, by_fold)| {
            let mut flagged = false;
            let per_fold: Vec<(u32, Option<f64>)> = folds
                .iter()
                .map(|&f| {
                    let score = by_fold.get(&f).map(|cm| {
                        let m = cm.macro_f1();
                        flagged |= !m.undefined.is_empty();
                        m.value
                    });
                    flagged |= score.is_none();
                    (f, score)
                })
                .collect();
            let values: Vec<f64> = per_fold.iter().filter_map(|(_, s)| *s).collect();
            let mean = (!values.is_empty()).then(|| crate::stats::mean(&values));
            let sd = (values.len() >= 2).then(|| crate::stats::sample_sd(&values));
            (
                mag,
                BucketF1 {
                    per_fold,
                    mean,
                    sd,
                    flagged,
                },
            )
        })
        .collect())
}

/// Per-fold values and their summary (absent with fewer than two folds).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub per_fold: Vec<f64>,
    pub summary: Option<FoldSummary>,
}

impl MetricSeries {
    fn new(per_fold: Vec<f64>, confidence: f64) -> Result<Self, MetricsError> {
        let summary = if per_fold.len() >= 2 {
            Some(fold_summary(&per_fold, confidence)?)
        } else {
            None
        };
        Ok(Self { per_fold, summary })
    }
}

/// Everything the evaluator reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub folds: Vec<u32>,
    pub accuracy: MetricSeries,
    pub macro_f1_val: MetricSeries,
    pub macro_f1_train: Option<MetricSeries>,
    pub delta_f1: Option<MetricSeries>,
    pub per_class: [ClassScores; 3],
    pub per_magnification: BTreeMap<Magnification, BucketF1>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// Runs the full battery. `train_f1`, when given, maps fold to the training
/// macro-F1 reported by the trainer and must cover every evaluated fold.
pub fn evaluate(
    preds: &[PredictionRecord],
    truth: &BTreeMap<String, FractureClass>,
    mags: &BTreeMap<String, Magnification>,
    train_f1: Option<&BTreeMap<u32, f64>>,
    confidence: f64,
) -> Result<MetricsSummary, MetricsError> {
    let by_fold = confusion_by_fold(preds, truth)?;
    let folds: Vec<u32> = by_fold.keys().copied().collect();
    let mut warnings = Vec::new();
    if folds.len() < 2 {
        warnings.push(format!("only {} fold(s) present; intervals omitted", folds.len()));
    }

    let mut acc = Vec::new();
    let mut f1 = Vec::new();
    let mut aggregate = ConfusionMatrix::default();
    for (fold, cm) in &by_fold {
        aggregate.merge(cm);
        acc.push(cm.accuracy().unwrap_or(0.0));
        let m = cm.macro_f1();
        for c in &m.undefined {
            warnings.push(format!("fold {fold}: F1 for {c} undefined, counted as 0"));
        }
        f1.push(m.value);
    }

    let (macro_f1_train, delta_f1) = match train_f1 {
        Some(train) => {
            let mut series = Vec::new();
            for fold in &folds {
                match train.get(fold) {
                    Some(&v) => series.push(v),
                    None => {
                        warnings.push(format!("no training macro-F1 for fold {fold}"));
                    }
                }
            }
            if series.len() == folds.len() {
                let (gaps, _) = generalisation_gap(&series, &f1, confidence)
                    .or_else(|e| match e {
                        StatsError::TooFewFolds(_) => {
                            Ok((series.iter().zip(&f1).map(|(t, v)| t - v).collect(), FoldSummary {
                                mean: 0.0,
                                sd: 0.0,
                                ci_lo: 0.0,
                                ci_hi: 0.0,
                            }))
                        }
                        other => Err(other),
                    })?;
                (
                    Some(MetricSeries::new(series, confidence)?),
                    Some(MetricSeries::new(gaps, confidence)?),
                )
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };

    let per_magnification = per_magnification_f1(preds, truth, mags)?;
    for (mag, bucket) in &per_magnification {
        if bucket.flagged {
            warnings.push(format!("magnification {mag}: incomplete support across folds"));
        }
    }

    Ok(MetricsSummary {
        accuracy: MetricSeries::new(acc, confidence)?,
        macro_f1_val: MetricSeries::new(f1, confidence)?,
        macro_f1_train,
        delta_f1,
        per_class: aggregate.per_class(),
        per_magnification,
        confusion: aggregate,
        folds,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;
    use alloc::string::ToString;
    use FractureClass::*;

    fn pred(id: &str, fold: u32, predicted: FractureClass) -> PredictionRecord {
        let mut probs = [0.1, 0.1, 0.1];
        probs[predicted.trainable_index().unwrap()] = 0.8;
        PredictionRecord {
            image_id: id.to_string(),
            fold,
            probs,
            predicted,
        }
    }

    #[test]
    fn all_correct_is_diagonal() {
        let preds: Vec<_> = (0..9).map(|i| pred(&i.to_string(), 0, FractureClass::TRAINABLE[i % 3])).collect();
        let truth = preds.iter().map(|p| (p.image_id.clone(), p.predicted)).collect();
        let cm = confusion(&preds, &truth).unwrap();
        assert_eq!(cm.counts, [[3, 0, 0], [0, 3, 0], [0, 0, 3]]);
        for s in cm.per_class() {
            assert_eq!((s.recall, s.precision, s.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn single_off_diagonal() {
        let preds = [pred("a", 0, HardMachining)];
        let truth = [("a".to_string(), GreenBody)].into_iter().collect();
        let cm = confusion(&preds, &truth).unwrap();
        assert_eq!(cm.counts, [[0, 1, 0], [0, 0, 0], [0, 0, 0]]);
        let s = cm.per_class();
        assert_eq!(s[0].recall, Some(0.0));
        assert_eq!(s[0].precision, None);
        assert_eq!(s[2], ClassScores::default());
        let m = cm.macro_f1();
        assert_eq!(m.value, 0.0);
        assert_eq!(m.undefined, alloc::vec![GreenBody, HardMachining, Material]);
    }

    #[test]
    fn missing_truth_named() {
        let preds = [pred("ghost", 0, GreenBody)];
        assert_eq!(confusion(&preds, &BTreeMap::new()), Err(MetricsError::MissingTruth("ghost".to_string())));
        let truth = [("ghost".to_string(), Unmatchable)].into_iter().collect();
        assert!(matches!(confusion(&preds, &truth), Err(MetricsError::NonTrainableTruth { .. })));
    }

    #[test]
    fn f1_from_published_pairs() {
        assert!((f1_score(0.903, 0.898) - 0.9005).abs() < 1e-4);
        assert!((f1_score(0.939, 0.777) - 0.851).abs() < 1e-3);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn prediction_validation() {
        assert!(pred("a", 0, Material).validate().is_ok());
        let mut p = pred("a", 0, Material);
        p.probs = [0.1, 0.1, 0.7];
        assert!(matches!(p.validate(), Err(PredictionError::BadSum { .. })));
        p.probs = [0.5, 0.1, 0.4];
        assert!(matches!(p.validate(), Err(PredictionError::NotArgmax { .. })));
        p.probs = [1.2, -0.1, -0.1];
        assert!(matches!(p.validate(), Err(PredictionError::OutOfRange { index: 0, .. })));
        p.probs = [0.4, 0.2, 0.4];
        assert!(p.validate().is_ok());
        p.predicted = UnknownOrigin;
        assert!(matches!(p.validate(), Err(PredictionError::NotTrainable { .. })));
    }

    /// Random predictions with truth and magnification maps.
    fn random_case(seed: u64, n: usize, folds: u32) -> (Vec<PredictionRecord>, BTreeMap<String, FractureClass>, BTreeMap<String, Magnification>) {
        let mut rng = Rng64::new(seed);
        let mut preds = Vec::new();
        let mut truth = BTreeMap::new();
        let mut mags = BTreeMap::new();
        for i in 0..n {
            let id = format!("img{i}");
            let t = FractureClass::TRAINABLE[rng.below(3) as usize];
            let p = if rng.unit() < 0.7 { t } else { FractureClass::TRAINABLE[rng.below(3) as usize] };
            truth.insert(id.clone(), t);
            mags.insert(id.clone(), Magnification::KNOWN[rng.below(3) as usize]);
            preds.push(pred(&id, rng.below(u64::from(folds)) as u32, p));
        }
        (preds, truth, mags)
    }

    #[test]
    fn fold_aggregation_equals_concatenation() {
        let (preds, truth, _) = random_case(1, 500, 5);
        let mut summed = ConfusionMatrix::default();
        for cm in confusion_by_fold(&preds, &truth).unwrap().values() {
            summed.merge(cm);
        }
        let all = confusion(&preds, &truth).unwrap();
        assert_eq!(summed, all);
        assert_eq!(summed.row_normalised(), all.row_normalised());
    }

    #[test]
    fn accuracy_and_macro_f1_definitions() {
        let (preds, truth, _) = random_case(2, 300, 1);
        let cm = confusion(&preds, &truth).unwrap();
        let correct = preds.iter().filter(|p| truth[&p.image_id] == p.predicted).count();
        assert_eq!(cm.accuracy().unwrap(), correct as f64 / preds.len() as f64);
        // independent per-class recount
        let mut f1s = [0.0; 3];
        for (c, class) in FractureClass::TRAINABLE.iter().enumerate() {
            let tp = preds.iter().filter(|p| p.predicted == *class && truth[&p.image_id] == *class).count() as f64;
            let fp = preds.iter().filter(|p| p.predicted == *class && truth[&p.image_id] != *class).count() as f64;
            let fneg = preds.iter().filter(|p| p.predicted != *class && truth[&p.image_id] == *class).count() as f64;
            f1s[c] = 2.0 * tp / (2.0 * tp + fp + fneg);
        }
        let expected = (f1s[0] + f1s[1] + f1s[2]) / 3.0;
        assert!((cm.macro_f1().value - expected).abs() < 1e-12);
    }

    #[test]
    fn magnification_buckets_match_recomputation() {
        let (preds, truth, mags) = random_case(3, 600, 5);
        let buckets = per_magnification_f1(&preds, &truth, &mags).unwrap();
        for (mag, bucket) in &buckets {
            let mut values = Vec::new();
            for fold in 0..5 {
                let subset: Vec<PredictionRecord> = preds
                    .iter()
                    .filter(|p| p.fold == fold && mags[&p.image_id] == *mag)
                    .cloned()
                    .collect();
                values.push(confusion(&subset, &truth).unwrap().macro_f1().value);
            }
            let mean = values.iter().sum::<f64>() / 5.0;
            assert!((bucket.mean.unwrap() - mean).abs() < 1e-12);
            assert_eq!(bucket.per_fold.len(), 5);
        }
    }

    #[test]
    fn single_bucket_equals_overall() {
        let (preds, truth, mut mags) = random_case(4, 400, 5);
        mags.values_mut().for_each(|m| *m = Magnification::X50);
        let buckets = per_magnification_f1(&preds, &truth, &mags).unwrap();
        assert_eq!(buckets.len(), 1);
        let summary = evaluate(&preds, &truth, &mags, None, 0.95).unwrap();
        let overall = summary.macro_f1_val.summary.unwrap().mean;
        assert!((buckets[&Magnification::X50].mean.unwrap() - overall).abs() < 1e-12);
    }

    #[test]
    fn identical_buckets_have_identical_means() {
        let (base, truth, _) = random_case(5, 200, 5);
        let mut preds = Vec::new();
        let mut full_truth = BTreeMap::new();
        let mut mags = BTreeMap::new();
        for mag in [Magnification::X50, Magnification::X10K] {
            for p in &base {
                let id = format!("{}-{mag}", p.image_id);
                full_truth.insert(id.clone(), truth[&p.image_id]);
                mags.insert(id.clone(), mag);
                preds.push(PredictionRecord { image_id: id, ..p.clone() });
            }
        }
        let b = per_magnification_f1(&preds, &full_truth, &mags).unwrap();
        assert_eq!(b[&Magnification::X50].mean, b[&Magnification::X10K].mean);
    }

    #[test]
    fn unsupported_bucket_is_flagged_not_zeroed() {
        let preds = [pred("a", 0, GreenBody), pred("b", 1, GreenBody), pred("c", 1, HardMachining)];
        let truth = [("a", GreenBody), ("b", GreenBody), ("c", HardMachining)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mags = [("a", Magnification::X50), ("b", Magnification::X50), ("c", Magnification::X100)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let b = per_magnification_f1(&preds, &truth, &mags).unwrap();
        let x100 = &b[&Magnification::X100];
        assert!(x100.flagged);
        assert_eq!(x100.per_fold, alloc::vec![(0, None), (1, Some(1.0 / 3.0))]);
        assert_eq!(x100.sd, None);
    }

    #[test]
    fn evaluate_with_train_scores() {
        let (preds, truth, mags) = random_case(6, 500, 5);
        let train: BTreeMap<u32, f64> = (0..5).map(|f| (f, 0.99)).collect();
        let s = evaluate(&preds, &truth, &mags, Some(&train), 0.95).unwrap();
        let gap = s.delta_f1.unwrap();
        for (g, v) in gap.per_fold.iter().zip(&s.macro_f1_val.per_fold) {
            assert!((g - (0.99 - v)).abs() < 1e-15);
        }
        let acc = s.accuracy.summary.unwrap();
        assert!(acc.ci_lo <= acc.mean && acc.mean <= acc.ci_hi);
        assert_eq!(s.confusion.total(), 500);
    }
}
