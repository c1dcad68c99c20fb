//! The `fracaudit` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fracaudit_core::manifest::{validate_manifest, ManifestChecks};
use fracaudit_core::metrics::{evaluate, PredictionRecord};
use fracaudit_core::split::{sampler_weights, stratified_kfold, SplitConfig};
use fracaudit_core::syndata::{CorpusSpec, DEFAULT_SIZE};
use fracaudit_core::{FractureClass, ImageRecord, Magnification};

use crate::config::{Config, GroupingArg};
use crate::error::{CliError, Result, EXIT_FINDINGS, EXIT_OK, EXIT_USAGE};
use crate::formats::{self, to_jsonl, EvidenceLine, PredictionLine};
use crate::io::{parent_dir, write_atomic};
use crate::pipeline::{self, Assigned};

#[derive(Debug, Parser)]
#[command(name = "fracaudit", version, about = "Fractography dataset curation, leakage audit and evaluation")]
pub struct Cli {
    /// Seed for corpus generation and fold assignment.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file overriding library defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Suppress progress notes; findings and errors are still printed.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with report table and truth files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per class and magnification.
        #[arg(long, default_value_t = 25)]
        n: usize,
        /// Fraction of planted near-duplicates.
        #[arg(long, default_value_t = 0.02)]
        dup: f64,
        /// Fraction of file names with a corrupted FOAN.
        #[arg(long, default_value_t = 0.0)]
        corrupt: f64,
        /// Image side in pixels.
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        size: u32,
    },
    /// Link image file names to a report table and write a manifest.
    Match {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Output manifest.
        #[arg(long)]
        out: PathBuf,
        /// Match log (default: match_log.jsonl next to the manifest).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Remove the bottom overlay strip from every image.
    Crop {
        #[arg(long)]
        manifest: PathBuf,
        /// Receives images/ and manifest.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Write a pHash cache for every manifest image.
    Hash {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign stratified folds.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        grouping: Option<GroupingArg>,
        #[arg(long)]
        k: Option<u32>,
    },
    /// Inverse-class-frequency sampler weights for a training split.
    Weights {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        /// Validation fold to leave out; all folded images when absent.
        #[arg(long)]
        fold: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage near-duplicate leakage audit across folds.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        /// Leakage table (CSV).
        #[arg(long)]
        out: PathBuf,
        /// Confirmed pairs (JSON Lines).
        #[arg(long)]
        evidence: PathBuf,
        /// Optional hash cache from `hash`.
        #[arg(long)]
        hashes: Option<PathBuf>,
    },
    /// Hash k-NN baseline predictions for every fold.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        hashes: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score predictions against the manifest.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Metrics document (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Trainer log `fold,epoch,train_f1,val_f1` for the train macro-F1.
        #[arg(long)]
        epoch_log: Option<PathBuf>,
        #[arg(long)]
        confidence: Option<f64>,
    },
}

/// What a successful command has to say.
#[derive(Debug, Default)]
pub struct Outcome {
    pub notes: Vec<String>,
    /// Problems in the data; any finding makes the exit code 1.
    pub findings: Vec<String>,
}

impl Outcome {
    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let quiet = cli.quiet;
    match execute(cli) {
        Ok(out) => {
            if !quiet {
                for n in &out.notes {
                    eprintln!("{n}");
                }
            }
            for f in &out.findings {
                eprintln!("finding: {f}");
            }
            if out.findings.is_empty() {
                EXIT_OK
            } else {
                EXIT_FINDINGS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    let cfg = Config::load(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    let pool = pipeline::thread_pool(jobs)?;
    let mut out = Outcome::default();

    match cli.command {
        Command::Synth { out: dir, n, dup, corrupt, size } => {
            let spec = CorpusSpec {
                size,
                ..CorpusSpec::new(n, dup, corrupt, cli.seed)
            };
            let plan = pipeline::synth(&dir, &spec, &pool)?;
            let corrupted = plan.images.iter().filter(|p| p.corrupted).count();
            out.note(format!(
                "wrote {} images ({} planted duplicates, {} corrupted names) to {}",
                plan.images.len(),
                plan.duplicates.len(),
                corrupted,
                dir.display()
            ));
        }
        Command::Match { report, images, out: manifest, log } => {
            let table = formats::read_report(&report)?;
            if table.is_empty() {
                return Err(CliError::input(&report, "report table is empty"));
            }
            let run = pipeline::match_dir(&table, &images, &parent_dir(&manifest), &cfg.match_config(), &pool)?;
            let log = log.unwrap_or_else(|| parent_dir(&manifest).join("match_log.jsonl"));
            write_atomic(&manifest, to_jsonl(&run.records).as_bytes())?;
            write_atomic(&log, to_jsonl(&run.log).as_bytes())?;
            let unmatched = run.log.iter().filter(|l| l.entry.is_none()).count();
            out.note(format!(
                "{} images: {} matched, {} unmatched, {} malformed names",
                run.records.len() + run.malformed.len(),
                run.records.len() - unmatched,
                unmatched,
                run.malformed.len()
            ));
            out.findings.extend(run.malformed.iter().map(|m| format!("malformed file name {m}")));
            push_violations(&mut out, &manifest, &run.records);
        }
        Command::Crop { manifest, out_dir, fraction } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let fraction = fraction.unwrap_or(cfg.crop.bottom_fraction);
            if !(0.0..=0.5).contains(&fraction) {
                return Err(CliError::Usage(format!("--fraction {fraction} outside [0, 0.5]")));
            }
            let cropped = pipeline::crop_images(&records, &parent_dir(&manifest), &out_dir, fraction, &pool)?;
            write_atomic(&out_dir.join("manifest.jsonl"), to_jsonl(&cropped).as_bytes())?;
            out.note(format!("cropped {} images into {}", cropped.len(), out_dir.display()));
        }
        Command::Hash { manifest, out: path } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let hashes = pipeline::hash_records(&records, &parent_dir(&manifest), &pool)?;
            write_atomic(&path, formats::write_hashes(&hashes).as_bytes())?;
            out.note(format!("hashed {} images", hashes.len()));
        }
        Command::Split { manifest, out: path, grouping, k } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let split = SplitConfig {
                k: k.unwrap_or(cfg.split.k),
                seed: cli.seed,
                grouping: grouping.unwrap_or(cfg.split.grouping).into(),
            };
            let folds = stratified_kfold(&records, &split)
                .map_err(|e| CliError::Usage(format!("{}: {e}", manifest.display())))?;
            write_atomic(&path, formats::write_folds(&folds).as_bytes())?;
            let excluded = records.len() - folds.len();
            out.note(format!(
                "assigned {} images to {} folds; {excluded} excluded",
                folds.len(),
                split.k
            ));
        }
        Command::Weights { manifest, folds, fold, out: path } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let assignment = formats::read_folds(&folds)?;
            let items = assigned(&records, &assignment, &folds)?;
            let train: Vec<ImageRecord> = items
                .iter()
                .filter(|(_, f)| Some(*f) != fold)
                .map(|(r, _)| (*r).clone())
                .collect();
            let weights = sampler_weights(&train)
                .map_err(|e| CliError::input(&folds, e.to_string()))?;
            write_atomic(&path, formats::write_weights(&weights).as_bytes())?;
            out.note(format!("weights for {} training images", weights.len()));
        }
        Command::Audit { manifest, folds, out: path, evidence, hashes } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let assignment = formats::read_folds(&folds)?;
            let items = assigned(&records, &assignment, &folds)?;
            let cache = hashes.as_deref().map(formats::read_hashes).transpose()?;
            let scfg = cfg.ssim_config();
            let images = pipeline::load_audit_images(&items, &parent_dir(&manifest), cache.as_ref(), &scfg, &pool)?;
            let report = pipeline::audit_folds(&images, &cfg.audit_config(), &scfg, &pool)?;
            write_atomic(&path, formats::write_audit_table(&report).as_bytes())?;
            let lines = report
                .folds
                .iter()
                .flat_map(|f| f.evidence.iter().map(move |e| EvidenceLine::new(f.fold, e)));
            write_atomic(&evidence, to_jsonl(lines).as_bytes())?;
            for f in &report.folds {
                let rates: Vec<String> = f.rates.iter().map(|r| format!("{r:.2}")).collect();
                out.note(format!("fold {}: {} validation images, leakage % {}", f.fold, f.n_val, rates.join(" ")));
            }
        }
        Command::Baseline { manifest, folds, out: path, hashes, k } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let assignment = formats::read_folds(&folds)?;
            let items = assigned(&records, &assignment, &folds)?;
            let cache = match hashes {
                Some(p) => formats::read_hashes(&p)?,
                None => {
                    let recs: Vec<ImageRecord> = items.iter().map(|(r, _)| (*r).clone()).collect();
                    pipeline::hash_records(&recs, &parent_dir(&manifest), &pool)?
                }
            };
            let k = k.unwrap_or(cfg.baseline.k);
            let preds = pipeline::baseline_predictions(&items, &cache, k, &pool)?;
            write_atomic(&path, to_jsonl(preds.iter().map(PredictionLine::from)).as_bytes())?;
            out.note(format!("{} baseline predictions with k = {k}", preds.len()));
        }
        Command::Evaluate { predictions, manifest, out: path, epoch_log, confidence } => {
            let records = load_manifest(&manifest, &mut out)?;
            if !out.findings.is_empty() {
                return Ok(out);
            }
            let confidence = confidence.unwrap_or(cfg.evaluate.confidence);
            if !(confidence > 0.0 && confidence < 1.0) {
                return Err(CliError::Usage(format!("--confidence {confidence} outside (0, 1)")));
            }
            let lines: Vec<PredictionLine> = formats::read_jsonl(&predictions)?;
            let truth: BTreeMap<String, FractureClass> =
                records.iter().map(|r| (r.image_id.clone(), r.fracture_class)).collect();
            let mags: BTreeMap<String, Magnification> =
                records.iter().map(|r| (r.image_id.clone(), r.magnification)).collect();
            let (accepted, rejected) = screen_predictions(lines, &truth);
            let train_f1 = epoch_log.as_deref().map(formats::read_epoch_log).transpose()?;
            let summary = evaluate(&accepted, &truth, &mags, train_f1.as_ref(), confidence)
                .map_err(|e| CliError::input(&predictions, e.to_string()))?;
            let rejected: Vec<String> = rejected
                .into_iter()
                .map(|r| format!("{}: {r}", predictions.display()))
                .collect();
            write_atomic(&path, formats::metrics_json(&summary, confidence, &rejected).as_bytes())?;
            if let Some(s) = summary.macro_f1_val.summary {
                out.note(format!("macro-F1 {:.4} (sd {:.4}) over {} folds", s.mean, s.sd, summary.folds.len()));
            }
            for w in &summary.warnings {
                out.note(format!("warning: {w}"));
            }
            out.findings.extend(rejected.into_iter().map(|r| format!("rejected prediction {r}")));
        }
    }
    Ok(out)
}

/// Reads a manifest and records its invariant violations as findings.
fn load_manifest(path: &Path, out: &mut Outcome) -> Result<Vec<ImageRecord>> {
    let records = formats::read_manifest(path)?;
    push_violations(out, path, &records);
    Ok(records)
}

fn push_violations(out: &mut Outcome, path: &Path, records: &[ImageRecord]) {
    for v in validate_manifest(records, &ManifestChecks::default()) {
        out.findings.push(format!("{}: {v}", path.display()));
    }
}

/// Pairs every id of a folds file with its manifest record.
fn assigned<'a>(
    records: &'a [ImageRecord],
    folds: &BTreeMap<String, u32>,
    folds_path: &Path,
) -> Result<Vec<Assigned<'a>>> {
    let by_id: BTreeMap<&str, &ImageRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    folds
        .iter()
        .map(|(id, &fold)| {
            let r = by_id
                .get(id.as_str())
                .ok_or_else(|| CliError::input(folds_path, format!("image_id {id:?} is not in the manifest")))?;
            if !r.fracture_class.is_trainable() {
                return Err(CliError::input(
                    folds_path,
                    format!("image_id {id:?} has class {}, which cannot be assigned a fold", r.fracture_class),
                ));
            }
            Ok((*r, fold))
        })
        .collect()
}

/// Splits prediction lines into valid records and rejection messages.
fn screen_predictions(
    lines: Vec<PredictionLine>,
    truth: &BTreeMap<String, FractureClass>,
) -> (Vec<PredictionRecord>, Vec<String>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.into_iter().enumerate() {
        let rec = PredictionRecord::from(line);
        let problem = if let Err(e) = rec.validate() {
            Some(e.to_string())
        } else if !seen.insert(rec.image_id.clone()) {
            Some(format!("{:?} predicted more than once", rec.image_id))
        } else {
            match truth.get(&rec.image_id) {
                None => Some(format!("{:?} is not in the manifest", rec.image_id)),
                Some(c) if !c.is_trainable() => {
                    Some(format!("{:?} has class {c}, which is not scored", rec.image_id))
                }
                Some(_) => None,
            }
        };
        match problem {
            Some(p) => rejected.push(format!("record {}: {p}", i + 1)),
            None => accepted.push(rec),
        }
    }
    (accepted, rejected)
}
