//! On-disk formats: JSON Lines, CSV tables and the metrics document.

use std::collections::BTreeMap;
use std::path::Path;

use fracaudit_core::audit::{AuditReport, EvidencePair};
use fracaudit_core::matcher::{MatchOutcome, MatchResult};
use fracaudit_core::metrics::{
    BucketF1, ClassScores, MetricSeries, MetricsSummary, PredictionRecord,
};
use fracaudit_core::split::{FoldAssignment, SamplerWeights};
use fracaudit_core::syndata::SynthTruth;
use fracaudit_core::{FractureClass, ImageRecord, Magnification, PHash64, ReportEntry};
use serde::de::DeserializeOwned;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CliError, Result};
use crate::io::read_text;

/// Parses one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("plain data serialises"));
        out.push('\n');
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    read_jsonl(path)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportEntry>> {
    let entries: Vec<ReportEntry> = read_jsonl(path)?;
    for (i, e) in entries.iter().enumerate() {
        e.validate()
            .map_err(|err| CliError::input(path, format!("entry {}: {err}", i + 1)))?;
    }
    Ok(entries)
}

/// One line of the match log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLine {
    pub image_id: String,
    pub outcome: String,
    pub similarity: Option<f64>,
    pub entry: Option<ReportEntry>,
    pub uid: Option<String>,
}

impl From<&MatchResult> for MatchLine {
    fn from(r: &MatchResult) -> Self {
        Self {
            image_id: r.image_id.clone(),
            outcome: r.outcome.tag().to_string(),
            similarity: match r.outcome {
                MatchOutcome::Exact => Some(1.0),
                other => other.similarity(),
            },
            entry: r.entry.clone(),
            uid: r.uid.clone(),
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
}

/// Reads a CSV file whose header must equal `expected`; returns data rows.
fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(CliError::input(
            path,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    rdr.records()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::input(path, format!("row {}: {e}", i + 1))))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, col: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse()
        .map_err(|e| CliError::input(path, format!("row {row}: bad value {raw:?}: {e}")))
}

/// Inserts `key` unless already present; repeated ids are input errors.
fn insert_unique<V>(path: &Path, map: &mut BTreeMap<String, V>, key: String, value: V) -> Result<()> {
    if map.contains_key(&key) {
        return Err(CliError::input(path, format!("image_id {key:?} is listed more than once")));
    }
    map.insert(key, value);
    Ok(())
}

pub fn write_hashes(hashes: &BTreeMap<String, PHash64>) -> String {
    let mut w = csv_writer();
    w.write_record(["image_id", "phash_hex"]).expect("in-memory");
    for (id, h) in hashes {
        w.write_record([id.as_str(), &h.to_string()]).expect("in-memory");
    }
    finish_csv(w)
}

pub fn read_hashes(path: &Path) -> Result<BTreeMap<String, PHash64>> {
    let mut out = BTreeMap::new();
    for (i, rec) in read_csv(path, &["image_id", "phash_hex"])?.iter().enumerate() {
        let h: PHash64 = field(path, i + 1, rec, 1)?;
        insert_unique(path, &mut out, rec[0].to_string(), h)?;
    }
    Ok(out)
}

pub fn write_folds(folds: &FoldAssignment) -> String {
    let mut w = csv_writer();
    w.write_record(["image_id", "fold"]).expect("in-memory");
    for (id, f) in folds {
        w.write_record([id.as_str(), &f.to_string()]).expect("in-memory");
    }
    finish_csv(w)
}

/// Reads a folds file. An id listed twice would sit in two splits at once
/// and is rejected.
pub fn read_folds(path: &Path) -> Result<FoldAssignment> {
    let mut out = BTreeMap::new();
    for (i, rec) in read_csv(path, &["image_id", "fold"])?.iter().enumerate() {
        let f: u32 = field(path, i + 1, rec, 1)?;
        insert_unique(path, &mut out, rec[0].to_string(), f)?;
    }
    Ok(out)
}

pub fn write_weights(weights: &SamplerWeights) -> String {
    let mut w = csv_writer();
    w.write_record(["image_id", "weight"]).expect("in-memory");
    for (id, v) in weights {
        w.write_record([id.as_str(), &format!("{v:.16e}")]).expect("in-memory");
    }
    finish_csv(w)
}

pub fn read_weights(path: &Path) -> Result<SamplerWeights> {
    let mut out = BTreeMap::new();
    for (i, rec) in read_csv(path, &["image_id", "weight"])?.iter().enumerate() {
        let v: f64 = field(path, i + 1, rec, 1)?;
        insert_unique(path, &mut out, rec[0].to_string(), v)?;
    }
    Ok(out)
}

/// Leakage table: one row per fold, one percentage column per threshold.
pub fn write_audit_table(report: &AuditReport) -> String {
    let mut w = csv_writer();
    let mut header = vec!["fold".to_string()];
    header.extend(report.thresholds.iter().map(|t| format!("{t:.2}")));
    w.write_record(&header).expect("in-memory");
    for f in &report.folds {
        let mut row = vec![f.fold.to_string()];
        row.extend(f.rates.iter().map(|r| format!("{r:.2}")));
        w.write_record(&row).expect("in-memory");
    }
    finish_csv(w)
}

/// Parsed leakage table: thresholds and `(fold, rates)` rows.
pub type AuditTable = (Vec<f64>, Vec<(u32, Vec<f64>)>);

pub fn read_audit_table(path: &Path) -> Result<AuditTable> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CliError::input(path, e.to_string()))?.clone();
    if header.get(0) != Some("fold") {
        return Err(CliError::input(path, "first column must be \"fold\""));
    }
    let thresholds = header
        .iter()
        .skip(1)
        .map(|t| t.parse::<f64>().map_err(|e| CliError::input(path, format!("threshold {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(path, format!("row {}: {e}", i + 1)))?;
        let fold = field(path, i + 1, &rec, 0)?;
        let rates = (1..rec.len())
            .map(|c| field(path, i + 1, &rec, c))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((fold, rates));
    }
    Ok((thresholds, rows))
}

/// One confirmed candidate pair of the audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceLine {
    pub fold: u32,
    pub val_id: String,
    pub train_id: String,
    pub hamming: u32,
    pub ssim: f64,
}

impl EvidenceLine {
    pub fn new(fold: u32, e: &EvidencePair) -> Self {
        Self {
            fold,
            val_id: e.val_id.clone(),
            train_id: e.train_id.clone(),
            hamming: e.hamming,
            ssim: e.ssim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub fold: u32,
    pub probs: [f64; 3],
    pub predicted: FractureClass,
}

impl From<PredictionLine> for PredictionRecord {
    fn from(p: PredictionLine) -> Self {
        PredictionRecord {
            image_id: p.image_id,
            fold: p.fold,
            probs: p.probs,
            predicted: p.predicted,
        }
    }
}

impl From<&PredictionRecord> for PredictionLine {
    fn from(p: &PredictionRecord) -> Self {
        PredictionLine {
            image_id: p.image_id.clone(),
            fold: p.fold,
            probs: p.probs,
            predicted: p.predicted,
        }
    }
}

/// Ground truth of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectLine {
    pub image_id: String,
    pub fracture_class: FractureClass,
    pub magnification: Magnification,
    #[serde(flatten)]
    pub truth: SynthTruth,
}

/// Training macro-F1 per fold from a trainer log (`fold,epoch,train_f1,val_f1`),
/// taken at the epoch with the best validation macro-F1 (earliest on ties).
pub fn read_epoch_log(path: &Path) -> Result<BTreeMap<u32, f64>> {
    let rows = read_csv(path, &["fold", "epoch", "train_f1", "val_f1"])?;
    let mut best: BTreeMap<u32, (f64, u32, f64)> = BTreeMap::new();
    for (i, rec) in rows.iter().enumerate() {
        let fold: u32 = field(path, i + 1, rec, 0)?;
        let epoch: u32 = field(path, i + 1, rec, 1)?;
        let train: f64 = field(path, i + 1, rec, 2)?;
        let val: f64 = field(path, i + 1, rec, 3)?;
        let better = match best.get(&fold) {
            None => true,
            Some(&(v, e, _)) => val > v || (val == v && epoch < e),
        };
        if better {
            best.insert(fold, (val, epoch, train));
        }
    }
    Ok(best.into_iter().map(|(f, (_, _, t))| (f, t)).collect())
}

#[derive(Debug, Serialize)]
struct SeriesDoc {
    per_fold: Vec<f64>,
    mean: Option<f64>,
    sd: Option<f64>,
    ci: Option<[f64; 2]>,
}

impl From<&MetricSeries> for SeriesDoc {
    fn from(s: &MetricSeries) -> Self {
        Self {
            per_fold: s.per_fold.clone(),
            mean: s.summary.map(|m| m.mean),
            sd: s.summary.map(|m| m.sd),
            ci: s.summary.map(|m| [m.ci_lo, m.ci_hi]),
        }
    }
}

#[derive(Debug, Serialize)]
struct ClassDoc {
    recall: Option<f64>,
    precision: Option<f64>,
    f1: Option<f64>,
}

impl From<&ClassScores> for ClassDoc {
    fn from(c: &ClassScores) -> Self {
        Self {
            recall: c.recall,
            precision: c.precision,
            f1: c.f1,
        }
    }
}

#[derive(Debug, Serialize)]
struct FoldValue {
    fold: u32,
    f1: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BucketDoc {
    mean: Option<f64>,
    sd: Option<f64>,
    flagged: bool,
    per_fold: Vec<FoldValue>,
}

impl From<&BucketF1> for BucketDoc {
    fn from(b: &BucketF1) -> Self {
        Self {
            mean: b.mean,
            sd: b.sd,
            flagged: b.flagged,
            per_fold: b
                .per_fold
                .iter()
                .map(|&(fold, f1)| FoldValue { fold, f1 })
                .collect(),
        }
    }
}

/// A JSON object whose keys keep insertion order.
#[derive(Debug)]
struct Ordered<V>(Vec<(String, V)>);

impl<V: Serialize> Serialize for Ordered<V> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Serialize)]
struct ConfusionDoc {
    classes: [&'static str; 3],
    counts: [[u64; 3]; 3],
    row_normalised: [Option<[f64; 3]>; 3],
}

#[derive(Debug, Serialize)]
struct MetricsDoc {
    confidence: f64,
    folds: Vec<u32>,
    n_scored: u64,
    accuracy: SeriesDoc,
    macro_f1_val: SeriesDoc,
    macro_f1_train: Option<SeriesDoc>,
    delta_f1: Option<SeriesDoc>,
    per_class: Ordered<ClassDoc>,
    per_magnification: Ordered<BucketDoc>,
    confusion: ConfusionDoc,
    rejected: Vec<String>,
    warnings: Vec<String>,
}

/// Renders the metrics document. `rejected` lists prediction records that
/// failed validation and were left out.
pub fn metrics_json(summary: &MetricsSummary, confidence: f64, rejected: &[String]) -> String {
    let classes = FractureClass::TRAINABLE.map(FractureClass::token);
    let doc = MetricsDoc {
        confidence,
        folds: summary.folds.clone(),
        n_scored: summary.confusion.total(),
        accuracy: (&summary.accuracy).into(),
        macro_f1_val: (&summary.macro_f1_val).into(),
        macro_f1_train: summary.macro_f1_train.as_ref().map(Into::into),
        delta_f1: summary.delta_f1.as_ref().map(Into::into),
        per_class: Ordered(
            classes
                .iter()
                .zip(&summary.per_class)
                .map(|(c, s)| (c.to_string(), s.into()))
                .collect(),
        ),
        per_magnification: Ordered(
            summary
                .per_magnification
                .iter()
                .map(|(m, b)| (m.token(), b.into()))
                .collect(),
        ),
        confusion: ConfusionDoc {
            classes,
            counts: summary.confusion.counts,
            row_normalised: summary.confusion.row_normalised(),
        },
        rejected: rejected.to_vec(),
        warnings: summary.warnings.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("plain data serialises");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn folds_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let folds: FoldAssignment = [("a".to_string(), 0), ("b".to_string(), 3)].into();
        let p = write(dir.path(), "f.csv", &write_folds(&folds));
        assert_eq!(read_folds(&p).unwrap(), folds);

        let p = write(dir.path(), "g.csv", "image_id,fold\nx,0\ny,1\nx,2\n");
        let err = read_folds(&p).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn weights_keep_full_precision() {
        let w: SamplerWeights = [("a".to_string(), 1.0 / 3.0), ("b".to_string(), 0.1)].into();
        let text = write_weights(&w);
        assert!(text.contains("3.3333333333333331e-1"));
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "w.csv", &text);
        assert_eq!(read_weights(&p).unwrap(), w);
    }

    #[test]
    fn hashes_round_trip() {
        let h: BTreeMap<String, PHash64> =
            [("a".to_string(), PHash64(0xdead_beef)), ("b".to_string(), PHash64(u64::MAX))].into();
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", &write_hashes(&h));
        assert_eq!(read_hashes(&p).unwrap(), h);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", "id,hash\na,00\n");
        assert!(read_hashes(&p).unwrap_err().to_string().contains("expected header"));
    }

    #[test]
    fn malformed_jsonl_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.jsonl", "\n{\"image_id\": 3}\n");
        let err = read_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn epoch_log_picks_best_validation_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.csv",
            "fold,epoch,train_f1,val_f1\n0,1,0.7,0.6\n0,2,0.9,0.8\n0,3,0.95,0.8\n1,1,0.5,0.4\n",
        );
        let log = read_epoch_log(&p).unwrap();
        assert_eq!(log, [(0, 0.9), (1, 0.5)].into());
    }

    #[test]
    fn prediction_line_format() {
        let line = PredictionLine {
            image_id: "a".into(),
            fold: 2,
            probs: [0.5, 0.25, 0.25],
            predicted: FractureClass::GreenBody,
        };
        let s = serde_json::to_string(&line).unwrap();
        assert_eq!(s, r#"{"image_id":"a","fold":2,"probs":[0.5,0.25,0.25],"predicted":"green_body"}"#);
    }
}
