//! Dataset runs: explain every manifest image with every configured
//! explainer, score the maps, and aggregate the scores over image groups.

mod config;
mod manifest;
mod report;

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{MetricSettings, Models, RunConfig, TargetPolicy};
pub use manifest::{read_manifest, ManifestEntry};
pub use report::{
    aggregate, compare, lower_is_better, read_report, write_gains, write_report, Gain, GroupStats, ImageMetrics,
    ReportRow, METRICS,
};

use crate::error::{validation, Error, Result};
use crate::explainers::{explain, ExplainRequest, ExplainerKind, Explanation, MaskSpec, TargetClass};
use crate::io::{load_png, save_heatmap, write_smap};
use crate::metrics::{degradation_against, deletion_pair, localization, DegradationReport};
use crate::ood::{calibrate, InlierCalibration};
use crate::types::Image;

/// Seed for one image, mixed from the run seed and the image id.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(image_id.as_bytes());
    h.finish()
}

/// File-name form of an explainer name (`rise+` becomes `rise_plus`).
pub fn file_stem(kind: ExplainerKind) -> String {
    kind.name().replace('+', "_plus")
}

/// Runs one explainer on one image with the config's settings.
pub fn explain_image(
    cfg: &RunConfig,
    models: &Models,
    image: Image,
    kind: ExplainerKind,
    target: TargetClass,
    seed: u64,
) -> Result<(Explanation, MaskSpec)> {
    let spec = cfg.mask_spec(kind);
    let mut req = ExplainRequest::new(image, models.model.clone(), spec.clone())
        .with_seed(seed)
        .with_target(target)
        .with_fill(cfg.fill.clone());
    req.ood_model = models.ood.clone();
    req.lime = cfg.lime;
    req.occlusion_plus = cfg.occlusion_plus;
    Ok((explain(kind, &req)?, spec))
}

/// Writes `<stem>.png` (heatmap), `<stem>.smap` and `<stem>.json` (provenance).
pub fn write_artifacts(dir: &Path, stem: &str, explanation: &Explanation, spec: &MaskSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let signed = matches!(explanation.kind, ExplainerKind::Lime | ExplainerKind::LimePlus);
    save_heatmap(&explanation.saliency, signed, &dir.join(format!("{stem}.png")))?;
    write_smap(&explanation.saliency, &dir.join(format!("{stem}.smap")))?;
    write_json(&dir.join(format!("{stem}.json")), &explanation.provenance(spec))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| validation(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn target_for(cfg: &RunConfig, entry: &ManifestEntry) -> TargetClass {
    match (cfg.target, entry.label) {
        (TargetPolicy::Label, Some(label)) => TargetClass::Index(label),
        _ => TargetClass::PredictedArgmax,
    }
}

/// Explains and scores one manifest image with one explainer.
pub fn evaluate_image(
    cfg: &RunConfig,
    models: &Models,
    entry: &ManifestEntry,
    image: &Image,
    kind: ExplainerKind,
) -> Result<(Explanation, MaskSpec, ImageMetrics)> {
    entry.bbox.validate_for(image.height(), image.width())?;
    let seed = image_seed(cfg.seed, &entry.id);
    let (exp, spec) = explain_image(cfg, models, image.clone(), kind, target_for(cfg, entry), seed)?;
    let ood = models.ood_capable().then(|| models.ood_handle().as_ref());
    let deletion = deletion_pair(
        image,
        &exp.saliency,
        models.model.as_ref(),
        ood,
        exp.target_class(),
        cfg.metrics.n_steps,
        cfg.deletion_fill(),
    )?;
    let loc = localization(&exp.saliency, &entry.bbox, cfg.metrics.n_theta)?;
    let degradation = degradation_against(&exp.saliency, &exp.average_mask, cfg.metrics.degradation_threshold)?;
    let metrics = ImageMetrics {
        image_id: entry.id.clone(),
        explainer: kind,
        target_class: exp.target_class(),
        deletion_auc: deletion.deletion.auc,
        deletion_plus_auc: deletion.deletion_plus.map(|c| c.auc),
        pointing_hit: loc.pointing_hit,
        pointing_ambiguous: loc.pointing_ambiguous,
        iosr: loc.iosr,
        wiosr: loc.wiosr,
        degradation,
    };
    Ok((exp, spec, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub image_id: String,
    pub error: String,
}

/// Outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest_size: usize,
    pub processed: Vec<String>,
    pub skipped: Vec<Skipped>,
    pub rows: Vec<ReportRow>,
    /// Per-image records in manifest order, explainers in config order.
    pub records: Vec<ImageMetrics>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    manifest_size: usize,
    processed: &'a [String],
    skipped: &'a [Skipped],
}

/// Draws `n_groups` groups of `group_size` distinct indices out of `n`.
pub fn sample_groups(n: usize, group_size: Option<usize>, n_groups: usize, seed: u64) -> Vec<Vec<usize>> {
    let size = match group_size {
        Some(s) if s > n => {
            tracing::warn!(
                group_size = s,
                available = n,
                "group larger than the processed image set; using all images"
            );
            n
        }
        Some(s) => s,
        None => n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_groups)
        .map(|_| {
            let mut g = rand::seq::index::sample(&mut rng, n, size).into_vec();
            g.sort_unstable();
            g
        })
        .collect()
}

fn image_set_digest(ids: &[String]) -> String {
    let mut h = fnv::FnvHasher::default();
    for id in ids {
        h.write(id.as_bytes());
        h.write(b"\n");
    }
    crate::classifier::digest_hex(h.finish())
}

type ImageResult = std::result::Result<Vec<ImageMetrics>, Error>;

fn process_entry(cfg: &RunConfig, models: &Models, entry: &ManifestEntry, out_dir: &Path) -> ImageResult {
    let image = load_png(&entry.image_path)?;
    let dir = image_dir(out_dir, &entry.id);
    let mut records = Vec::with_capacity(cfg.explainers.len());
    for &kind in &cfg.explainers {
        let (exp, spec, metrics) = evaluate_image(cfg, models, entry, &image, kind).map_err(|e| e.at(kind.name()))?;
        let stem = file_stem(kind);
        write_artifacts(&dir, &stem, &exp, &spec)?;
        write_json(&dir.join(format!("{stem}.metrics.json")), &metrics)?;
        records.push(metrics);
    }
    Ok(records)
}

/// Evaluates every manifest image and writes artifacts, `report.csv` and
/// `summary.json` under `out_dir`. Images that fail are skipped; the run
/// fails only when none succeed.
pub fn evaluate(cfg: &RunConfig, manifest_path: &Path, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let manifest = read_manifest(manifest_path)?;
    let models = cfg.load_models()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let results: Vec<ImageResult> = manifest
        .par_iter()
        .map(|entry| process_entry(cfg, &models, entry, out_dir))
        .collect();

    let mut processed = Vec::new();
    let mut skipped = Vec::new();
    let mut records = Vec::new();
    let mut first_error = None;
    for (entry, result) in manifest.iter().zip(results) {
        match result {
            Ok(r) => {
                processed.push(entry.id.clone());
                records.extend(r);
            }
            Err(e) => {
                tracing::warn!(image = %entry.id, error = %e, "skipping image");
                skipped.push(Skipped {
                    image_id: entry.id.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if processed.is_empty() {
        return Err(first_error.expect("manifest is non-empty").at("every image failed"));
    }

    let groups = sample_groups(processed.len(), cfg.group_size, cfg.n_groups, cfg.seed);
    let digest = image_set_digest(&processed);
    let rows = cfg
        .explainers
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let per_kind: Vec<&ImageMetrics> = records.iter().skip(k).step_by(cfg.explainers.len()).collect();
            aggregate(kind.name(), &per_kind, &groups, &digest)
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(&rows, &out_dir.join("report.csv"))?;
    write_json(
        &out_dir.join("summary.json"),
        &SummaryFile {
            manifest_size: manifest.len(),
            processed: &processed,
            skipped: &skipped,
        },
    )?;
    Ok(RunSummary {
        manifest_size: manifest.len(),
        processed,
        skipped,
        rows,
        records,
    })
}

/// Inlier-score anchors of one image under the config's fill.
pub fn calibrate_image(cfg: &RunConfig, image_path: &Path) -> Result<InlierCalibration> {
    let models = cfg.load_models()?;
    let image = load_png(image_path)?;
    calibrate(&image, models.ood_handle().as_ref(), &cfg.fill)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub image_id: String,
    pub explainer: ExplainerKind,
    pub r: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub skipped: Vec<Skipped>,
}

impl ScanResult {
    /// Share of degraded maps per explainer, in first-seen order.
    pub fn rates(&self) -> Vec<(ExplainerKind, f64)> {
        let mut kinds: Vec<ExplainerKind> = Vec::new();
        for r in &self.rows {
            if !kinds.contains(&r.explainer) {
                kinds.push(r.explainer);
            }
        }
        kinds
            .into_iter()
            .map(|k| {
                let rows: Vec<&ScanRow> = self.rows.iter().filter(|r| r.explainer == k).collect();
                (k, rows.iter().filter(|r| r.degraded).count() as f64 / rows.len() as f64)
            })
            .collect()
    }
}

/// Explains each manifest image and tests the maps for degradation.
pub fn degradation_scan(cfg: &RunConfig, manifest_path: &Path, threshold: f64) -> Result<ScanResult> {
    cfg.validate()?;
    let manifest = read_manifest(manifest_path)?;
    let models = cfg.load_models()?;
    let results: Vec<Result<Vec<ScanRow>>> = manifest
        .par_iter()
        .map(|entry| {
            let image = load_png(&entry.image_path)?;
            let seed = image_seed(cfg.seed, &entry.id);
            cfg.explainers
                .iter()
                .map(|&kind| {
                    let (exp, _) = explain_image(cfg, &models, image.clone(), kind, target_for(cfg, entry), seed)?;
                    let DegradationReport { r, degraded } =
                        degradation_against(&exp.saliency, &exp.average_mask, threshold)?;
                    Ok(ScanRow {
                        image_id: entry.id.clone(),
                        explainer: kind,
                        r,
                        degraded,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut first_error = None;
    for (entry, result) in manifest.iter().zip(results) {
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => {
                tracing::warn!(image = %entry.id, error = %e, "skipping image");
                skipped.push(Skipped {
                    image_id: entry.id.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if rows.is_empty() {
        return Err(first_error.expect("manifest is non-empty").at("every image failed"));
    }
    Ok(ScanResult { rows, skipped })
}

/// Output directory layout for one image.
pub fn image_dir(out_dir: &Path, image_id: &str) -> PathBuf {
    out_dir.join("images").join(image_id)
}
