//! Parallel drivers over the core algorithms. Work runs on a rayon pool
//! bounded by `--jobs`; results are collected in input order, so the output
//! never depends on the number of workers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fracaudit_core::audit::{AuditConfig, AuditImage, AuditReport, FoldLeakage, TrainSet};
use fracaudit_core::image::crop_overlay;
use fracaudit_core::imghash::{knn_vote, phash};
use fracaudit_core::manifest::parse_filename;
use fracaudit_core::matcher::{match_image, MatchConfig};
use fracaudit_core::metrics::PredictionRecord;
use fracaudit_core::ssim::SsimConfig;
use fracaudit_core::syndata::{plan_corpus, render, CorpusPlan, CorpusSpec, SynthTruth};
use fracaudit_core::{FractureClass, ImageRecord, PHash64, ReportEntry};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::formats::{to_jsonl, DefectLine, MatchLine};
use crate::io::{load_gray, relative_to, resolve, save_png, write_atomic};

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// Names of the files `synth` writes into its output directory.
pub mod synth_files {
    pub const IMAGES: &str = "images";
    pub const REPORT: &str = "report.jsonl";
    pub const TRUTH_MANIFEST: &str = "truth_manifest.jsonl";
    pub const TRUTH_DUPLICATES: &str = "truth_duplicates.jsonl";
    pub const TRUTH_DEFECTS: &str = "truth_defects.jsonl";
}

/// Renders a corpus into `out_dir`: PNGs under `images/`, the report table and
/// the hidden truth files.
pub fn synth(out_dir: &Path, spec: &CorpusSpec, pool: &rayon::ThreadPool) -> Result<CorpusPlan> {
    let plan = plan_corpus(spec).map_err(|e| CliError::Usage(format!("synth: {e}")))?;
    let truths: Vec<SynthTruth> = pool.install(|| {
        plan.images
            .par_iter()
            .map(|item| {
                let (img, truth) = render(item)
                    .map_err(|e| CliError::Usage(format!("synth {}: {e}", item.file_name)))?;
                save_png(&out_dir.join(&item.record.path), &img)?;
                Ok(truth)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let write = |name: &str, text: String| write_atomic(&out_dir.join(name), text.as_bytes());
    write(synth_files::REPORT, to_jsonl(&plan.report))?;
    write(
        synth_files::TRUTH_MANIFEST,
        to_jsonl(plan.images.iter().map(|p| &p.record)),
    )?;
    write(synth_files::TRUTH_DUPLICATES, to_jsonl(&plan.duplicates))?;
    write(
        synth_files::TRUTH_DEFECTS,
        to_jsonl(plan.images.iter().zip(&truths).map(|(p, t)| DefectLine {
            image_id: p.record.image_id.clone(),
            fracture_class: p.record.fracture_class,
            magnification: p.record.magnification,
            truth: *t,
        })),
    )?;
    Ok(plan)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRun {
    /// One record per parseable file; unmatched files become `Unmatchable`.
    pub records: Vec<ImageRecord>,
    pub log: Vec<MatchLine>,
    /// Files without a FOAN token, with the reason.
    pub malformed: Vec<String>,
}

/// Links every PNG in `image_dir` to the report table. Record paths are
/// written relative to `manifest_dir` when possible.
pub fn match_dir(
    report: &[ReportEntry],
    image_dir: &Path,
    manifest_dir: &Path,
    cfg: &MatchConfig,
    pool: &rayon::ThreadPool,
) -> Result<MatchRun> {
    let files = list_pngs(image_dir)?;
    let results: Vec<std::result::Result<(ImageRecord, MatchLine), String>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let parsed = parse_filename(&name).map_err(|e| format!("{}: {e}", path.display()))?;
                let result = match_image(&stem, &parsed, report, cfg);
                let (foan, serial, class) = match &result.entry {
                    Some(e) => (e.foan.clone(), e.serial.clone(), e.fracture_class),
                    None => (
                        parsed.foan_candidate.clone(),
                        parsed.serial_candidate.clone(),
                        FractureClass::Unmatchable,
                    ),
                };
                let record = ImageRecord {
                    image_id: stem,
                    path: relative_to(path, manifest_dir),
                    foan,
                    serial,
                    instance_tag: parsed.instance_tag,
                    fracture_class: class,
                    magnification: parsed.magnification,
                    fold: None,
                };
                Ok((record, MatchLine::from(&result)))
            })
            .collect()
    });
    let mut run = MatchRun {
        records: Vec::new(),
        log: Vec::new(),
        malformed: Vec::new(),
    };
    for r in results {
        match r {
            Ok((rec, line)) => {
                run.records.push(rec);
                run.log.push(line);
            }
            Err(msg) => run.malformed.push(msg),
        }
    }
    Ok(run)
}

/// Crops the bottom overlay strip from every image and writes the results to
/// `out_dir/images/<image_id>.png`. Returns the manifest for the new files.
pub fn crop_images(
    records: &[ImageRecord],
    root: &Path,
    out_dir: &Path,
    fraction: f64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ImageRecord>> {
    pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let src = resolve(root, &r.path);
                let img = load_gray(&src)?;
                let cropped = crop_overlay(&img, fraction)
                    .map_err(|e| CliError::input(&src, format!("{}: {e}", r.image_id)))?;
                let rel = format!("images/{}.png", r.image_id);
                save_png(&out_dir.join(&rel), &cropped)?;
                Ok(ImageRecord {
                    path: rel,
                    ..r.clone()
                })
            })
            .collect()
    })
}

/// pHash of every record's image.
pub fn hash_records(
    records: &[ImageRecord],
    root: &Path,
    pool: &rayon::ThreadPool,
) -> Result<BTreeMap<String, PHash64>> {
    let hashes: Vec<(String, PHash64)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| Ok((r.image_id.clone(), phash(&load_gray(&resolve(root, &r.path))?))))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(hashes.into_iter().collect())
}

/// A manifest record together with its assigned fold.
pub type Assigned<'a> = (&'a ImageRecord, u32);

/// Loads images and prepares them for the audit. Cached hashes are used when
/// present; missing ones are computed.
pub fn load_audit_images(
    items: &[Assigned<'_>],
    root: &Path,
    hashes: Option<&BTreeMap<String, PHash64>>,
    scfg: &SsimConfig,
    pool: &rayon::ThreadPool,
) -> Result<Vec<(AuditImage, u32)>> {
    pool.install(|| {
        items
            .par_iter()
            .map(|&(r, fold)| {
                let path = resolve(root, &r.path);
                let img = load_gray(&path)?;
                let hash = hashes
                    .and_then(|h| h.get(&r.image_id).copied())
                    .unwrap_or_else(|| phash(&img));
                let item = AuditImage::with_hash(r.image_id.clone(), hash, &img, scfg)
                    .map_err(|e| CliError::input(&path, e.to_string()))?;
                Ok((item, fold))
            })
            .collect()
    })
}

/// Audits every fold against the union of the others.
pub fn audit_folds(
    images: &[(AuditImage, u32)],
    acfg: &AuditConfig,
    scfg: &SsimConfig,
    pool: &rayon::ThreadPool,
) -> Result<AuditReport> {
    acfg.validate().map_err(|e| CliError::Usage(format!("audit: {e}")))?;
    let folds: std::collections::BTreeSet<u32> = images.iter().map(|&(_, f)| f).collect();
    let mut report = AuditReport {
        thresholds: acfg.thresholds.clone(),
        folds: Vec::new(),
    };
    for fold in folds {
        let train = images.iter().filter(|(_, f)| *f != fold).map(|(i, _)| i);
        let val: Vec<&AuditImage> = images.iter().filter(|(_, f)| *f == fold).map(|(i, _)| i).collect();
        let set = TrainSet::new(train).map_err(|e| CliError::Usage(format!("audit fold {fold}: {e}")))?;
        let outcomes = pool.install(|| {
            val.par_iter()
                .map(|v| set.probe(v, acfg, scfg))
                .collect::<std::result::Result<Vec<_>, _>>()
        });
        let outcomes = outcomes.map_err(|e| CliError::Usage(format!("audit fold {fold}: {e}")))?;
        report.folds.push(FoldLeakage::from_outcomes(fold, outcomes, acfg));
    }
    Ok(report)
}

/// Hash k-NN predictions for every fold, trained on the remaining folds.
pub fn baseline_predictions(
    items: &[Assigned<'_>],
    hashes: &BTreeMap<String, PHash64>,
    k: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<PredictionRecord>> {
    let hash_of = |r: &ImageRecord| {
        hashes
            .get(&r.image_id)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("no hash for image {:?}", r.image_id)))
    };
    let folds: std::collections::BTreeSet<u32> = items.iter().map(|&(_, f)| f).collect();
    let mut out = Vec::new();
    for fold in folds {
        let train = items
            .iter()
            .filter(|(_, f)| *f != fold)
            .map(|(r, _)| Ok((hash_of(r)?, r.fracture_class)))
            .collect::<Result<Vec<_>>>()?;
        let val: Vec<&ImageRecord> = items.iter().filter(|(_, f)| *f == fold).map(|(r, _)| *r).collect();
        let preds: Vec<PredictionRecord> = pool.install(|| {
            val.par_iter()
                .map(|r| {
                    let vote = knn_vote(&train, hash_of(r)?, k)
                        .map_err(|e| CliError::Usage(format!("baseline fold {fold}: {e}")))?;
                    Ok(PredictionRecord {
                        image_id: r.image_id.clone(),
                        fold,
                        probs: vote.probabilities(),
                        predicted: vote.predicted,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        out.extend(preds);
    }
    Ok(out)
}
