//! Multi-round driver: seed labels, then detect / filter / rebuild the
//! database / retrain from scratch, one round directory per iteration.

mod config;
mod detector;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ephemerality::compute_pp_scores;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, label_quality, EvalConfig, EvalReport, Metric};
use crate::filtering::{round_step_with, FilterRegistry, LabelSet, PpScenes, RoundArtifacts, RoundCounts, Threshold};
use crate::geometry::PointCloud;
use crate::gt_database::{
    build_database, global_augment, read_database, sample_insert, write_database, AugmentedScene, BuildStats,
    DbProvenance, GtDatabase,
};
use crate::kitti_io::{
    create_dir_all, prepare_output_dir, read_label_dir, read_point_bin, round_layout, write_json, write_label_dir,
    write_point_bin, write_pp_bin, RoundAudit, RoundDirs, RoundManifest, SampleLayout, Stage,
};
use crate::rng::stream;
use crate::seed::generate_seed_labels;
use crate::sim::{gen_world, write_world, GT_META_FILE};

pub use config::{apply_override, resolve_config, write_config_echo, DetectorConfig, SelfTrainConfig};
pub use detector::{
    augmented_training_labels, Detector, DetectorFactory, DetectorRegistry, ExternalDetector, InferInput,
    SimulatedDetector, TrainInput,
};

pub const CONFIG_ECHO: &str = "config.json";
const SEED_ALGORITHM: &str = "seed";

/// Runs `f` on every sample in parallel. All failures are collected and
/// reported together; a single failure keeps its own error kind.
fn for_each_sample<T: Send>(ids: &[String], f: impl Fn(&str) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = ids.par_iter().map(|id| f(id)).collect();
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((id, e)),
        }
    }
    match failures.len() {
        0 => Ok(ok),
        1 => Err(failures.pop().expect("one failure").1),
        failed => {
            let summary = failures
                .iter()
                .map(|(id, e)| format!("  {id}: {e}"))
                .collect::<Vec<_>>()
                .join("\n");
            Err(Error::Samples { failed, total, summary })
        }
    }
}

fn non_empty_sample_ids(layout: &SampleLayout) -> Result<Vec<String>> {
    let ids = layout.sample_ids()?;
    if ids.is_empty() {
        return Err(Error::MissingData(format!("no samples under {}", layout.points_dir().display())));
    }
    Ok(ids)
}

/// Reference clouds with their PP sidecars.
pub fn load_pp_scenes(layout: &SampleLayout, ids: &[String]) -> Result<PpScenes> {
    let loaded = for_each_sample(ids, |id| Ok((read_point_bin(&layout.point_file(id))?, layout.load_pp(id)?)))?;
    let mut scenes = PpScenes::new();
    for (id, (cloud, pp)) in ids.iter().zip(loaded) {
        scenes.insert(id.clone(), cloud, pp)?;
    }
    Ok(scenes)
}

fn load_clouds(layout: &SampleLayout, ids: &[String]) -> Result<BTreeMap<String, PointCloud>> {
    let clouds = for_each_sample(ids, |id| read_point_bin(&layout.point_file(id)))?;
    Ok(ids.iter().cloned().zip(clouds).collect())
}

fn ground_truth(cfg: &SelfTrainConfig) -> Result<Option<LabelSet>> {
    let dir = cfg.data_root.join(Stage::GroundTruth.dir_name());
    if dir.is_dir() {
        read_label_dir(&dir, 0).map(Some)
    } else {
        Ok(None)
    }
}

/// Restricts or pads `labels` to exactly the samples of `universe`.
fn aligned(labels: &LabelSet, universe: &LabelSet) -> LabelSet {
    let mut out = LabelSet::new(labels.round);
    for id in universe.samples.keys() {
        out.samples.insert(id.clone(), labels.get(id).to_vec());
    }
    out
}

/// Label quality of the round's pseudo-labels and database entries against
/// ground truth.
pub fn audit_round(cfg: &SelfTrainConfig, gt: &LabelSet, pseudo: &LabelSet, db: &GtDatabase) -> Result<RoundAudit> {
    let db_labels = db.as_label_set();
    let ap = evaluate(&aligned(pseudo, gt), gt, &cfg.eval)?;
    Ok(RoundAudit {
        iou: cfg.audit_iou,
        pseudo_labels: label_quality(pseudo, gt, cfg.audit_iou, Metric::Bev),
        database: label_quality(&db_labels, gt, cfg.audit_iou, Metric::Bev),
        pseudo_label_ap: ap.rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub samples: usize,
    pub seed_labels: usize,
    pub db: BuildStats,
}

/// PP sidecars, seed labels and round 0 (pseudo-labels = seeds, database
/// built from the seeds).
pub fn cmd_seed_generate(cfg: &SelfTrainConfig, force: bool) -> Result<SeedSummary> {
    let layout = SampleLayout::new(&cfg.data_root);
    let ids = non_empty_sample_ids(&layout)?;
    let seed_dir = layout.stage_dir(Stage::Seed.dir_name());
    let round0 = RoundDirs::path(&layout.rounds_dir(), 0);
    for dir in [&seed_dir, &layout.pp_dir(), &round0.dir] {
        if !force && dir.is_dir() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
            return Err(Error::AlreadyExists(dir.to_path_buf()));
        }
    }

    let per_sample = for_each_sample(&ids, |id| {
        let ts = layout.load_traversal_set(id)?;
        let pp = compute_pp_scores(&ts, cfg.pp_radius);
        let seeds = generate_seed_labels(&ts, &pp, &cfg.cluster, &cfg.seed_heuristics)?;
        Ok((ts.reference, pp, seeds))
    })?;

    prepare_output_dir(&layout.pp_dir(), force)?;
    prepare_output_dir(&seed_dir, force)?;
    let mut seeds = LabelSet::new(0);
    let mut scenes = PpScenes::new();
    for (id, (cloud, pp, boxes)) in ids.iter().zip(per_sample) {
        write_pp_bin(&layout.pp_file(id), &pp)?;
        seeds.samples.insert(id.clone(), boxes);
        scenes.insert(id.clone(), cloud, pp)?;
    }
    write_label_dir(&seed_dir, &seeds)?;

    let dirs = round_layout(&layout.rounds_dir(), 0, force)?;
    write_label_dir(&dirs.pseudo_labels(), &seeds)?;
    let (db, stats) = build_database(&scenes, &seeds, provenance(0))?;
    write_database(&dirs.db(), &db)?;
    let audit = match ground_truth(cfg)? {
        Some(gt) => Some(audit_round(cfg, &gt, &seeds, &db)?),
        None => None,
    };
    let n = seeds.total();
    let manifest = RoundManifest {
        round: 0,
        algorithm: SEED_ALGORITHM.into(),
        detector: "none".into(),
        rho: cfg.filter.rho,
        alpha: cfg.filter.alpha,
        gamma: cfg.filter.gamma,
        high_threshold: cfg.filter.high_threshold,
        threshold: Threshold::KeepAll,
        counts: RoundCounts {
            detections: n,
            after_pp: n,
            pseudo_labels: n,
            augmentation_labels: n,
        },
        db_entries: stats.entries,
        db_skipped: stats.skipped,
        seed: cfg.seed,
        complete: true,
        audit,
    };
    write_config_echo(&dirs.dir.join(CONFIG_ECHO), cfg)?;
    manifest.write(&dirs)?;
    Ok(SeedSummary {
        samples: ids.len(),
        seed_labels: n,
        db: stats,
    })
}

fn provenance(round: usize) -> DbProvenance {
    DbProvenance {
        round,
        manifest: Some(format!("round_{round}/manifest.json")),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    /// Skip rounds whose manifest is complete; redo incomplete ones.
    pub resume: bool,
}

fn completed_manifest(dirs: &RoundDirs) -> Option<RoundManifest> {
    if !dirs.manifest().is_file() {
        return None;
    }
    RoundManifest::read(dirs).ok().filter(|m| m.complete)
}

/// Rounds 1..=max_rounds. Every round reads the previous round back from
/// disk, so a resumed run and a fresh run see identical inputs.
pub fn cmd_self_train(cfg: &SelfTrainConfig, opts: RunOptions) -> Result<Vec<RoundManifest>> {
    cmd_self_train_with(cfg, opts, &DetectorRegistry::builtin(), &FilterRegistry::builtin())
}

pub fn cmd_self_train_with(
    cfg: &SelfTrainConfig,
    opts: RunOptions,
    detectors: &DetectorRegistry,
    filters: &FilterRegistry,
) -> Result<Vec<RoundManifest>> {
    cfg.validate()?;
    filters.get(&cfg.filter.algorithm)?;
    let layout = SampleLayout::new(&cfg.data_root);
    let rounds_root = layout.rounds_dir();
    let round0 = RoundDirs::path(&rounds_root, 0);
    if completed_manifest(&round0).is_none() {
        return Err(Error::MissingData(format!(
            "round 0 is missing or incomplete at {}; run seed-generate first",
            round0.dir.display()
        )));
    }
    let mut manifests = Vec::new();
    if cfg.max_rounds == 0 {
        return Ok(manifests);
    }

    let ids = non_empty_sample_ids(&layout)?;
    let scenes = load_pp_scenes(&layout, &ids)?;
    let gt = ground_truth(cfg)?;
    write_config_echo(&rounds_root.join(CONFIG_ECHO), cfg)?;

    for round in 1..=cfg.max_rounds {
        let prev = RoundDirs::path(&rounds_root, round - 1);
        let existing = RoundDirs::path(&rounds_root, round);
        if opts.resume {
            if let Some(m) = completed_manifest(&existing) {
                manifests.push(m);
                continue;
            }
        }
        let dirs = round_layout(&rounds_root, round, opts.force || opts.resume)?;

        let labels = read_label_dir(&prev.pseudo_labels(), round - 1)?;
        let db = read_database(&prev.db())?;
        let mut det = detectors.create(cfg)?;
        let model_dir = dirs.dir.join("model");
        det.train(&TrainInput {
            round,
            scenes: &scenes,
            labels: &labels,
            db: &db,
            points_dir: layout.points_dir(),
            labels_dir: prev.pseudo_labels(),
            db_dir: prev.db(),
            model_dir,
        })?;
        det.infer(&InferInput {
            round,
            sample_ids: &ids,
            points_dir: layout.points_dir(),
            labels_dir: prev.pseudo_labels(),
            db_dir: prev.db(),
            out_dir: dirs.detections(),
        })?;
        let detections = read_detections(&dirs.detections(), &ids, round)?;

        let RoundArtifacts {
            pseudo_labels,
            augmentation_labels,
            threshold_used,
            counts,
        } = round_step_with(filters, &detections, &scenes, &cfg.filter)?;
        write_label_dir(&dirs.pseudo_labels(), &pseudo_labels)?;
        let (db, stats) = build_database(&scenes, &augmentation_labels, provenance(round))?;
        write_database(&dirs.db(), &db)?;

        let audit = match &gt {
            Some(gt) => {
                // Audit what the next round will actually read.
                let pl = read_label_dir(&dirs.pseudo_labels(), round)?;
                Some(audit_round(cfg, gt, &pl, &read_database(&dirs.db())?)?)
            }
            None => None,
        };
        let manifest = RoundManifest {
            round,
            algorithm: cfg.filter.algorithm.clone(),
            detector: cfg.detector.mode.clone(),
            rho: cfg.filter.rho,
            alpha: cfg.filter.alpha,
            gamma: cfg.filter.gamma,
            high_threshold: cfg.filter.high_threshold,
            threshold: threshold_used,
            counts,
            db_entries: stats.entries,
            db_skipped: stats.skipped,
            seed: cfg.seed,
            complete: true,
            audit,
        };
        manifest.write(&dirs)?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

/// Detector output: one scored label file per sample.
fn read_detections(dir: &Path, ids: &[String], round: usize) -> Result<LabelSet> {
    let dets = read_label_dir(dir, round)?;
    for id in ids {
        let Some(boxes) = dets.samples.get(id) else {
            return Err(Error::Detector(format!("no detections file for sample {id} in {}", dir.display())));
        };
        if boxes.iter().any(|b| b.score.is_none()) {
            return Err(Error::Detector(format!("sample {id}: detections must carry a score (16 fields)")));
        }
    }
    if let Some(extra) = dets.samples.keys().find(|k| !ids.contains(k)) {
        return Err(Error::Detector(format!("detections for unknown sample {extra}")));
    }
    Ok(dets)
}

pub fn cmd_eval(dets_dir: &Path, gts_dir: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    for dir in [dets_dir, gts_dir] {
        if !dir.is_dir() {
            return Err(Error::MissingData(format!("no label directory at {}", dir.display())));
        }
    }
    let dets = read_label_dir(dets_dir, 0)?;
    let gts = read_label_dir(gts_dir, 0)?;
    evaluate(&dets, &gts, cfg)
}

fn round_number(name: &str) -> Option<usize> {
    name.strip_prefix("round_")?.parse().ok()
}

pub const REPORT_HEADER: &str = "round,status,algorithm,rho,threshold,detections,after_pp,pseudo_labels,\
augmentation_labels,db_entries,db_skipped,pl_precision,pl_recall,pl_f1,db_precision,db_recall,pseudo_label_ap";

/// One CSV row per `round_<j>` directory; rounds without a complete manifest
/// are flagged `incomplete`.
pub fn cmd_report(rounds_root: &Path) -> Result<String> {
    let mut rounds: Vec<usize> = fs::read_dir(rounds_root)
        .map_err(|e| Error::io(rounds_root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| round_number(&e.file_name().to_string_lossy()))
        .collect();
    rounds.sort_unstable();

    let mut out = format!("{REPORT_HEADER}\n");
    for round in rounds {
        let dirs = RoundDirs::path(rounds_root, round);
        let Some(m) = completed_manifest(&dirs) else {
            let _ = writeln!(out, "{round},incomplete{}", ",".repeat(15));
            continue;
        };
        let threshold = m.threshold.value().map(|t| format!("{t}")).unwrap_or_default();
        let (quality, ap) = match &m.audit {
            Some(a) => (
                format!(
                    "{:.6},{:.6},{:.6},{:.6},{:.6}",
                    a.pseudo_labels.precision,
                    a.pseudo_labels.recall,
                    a.pseudo_labels.f1,
                    a.database.precision,
                    a.database.recall
                ),
                a.pseudo_label_ap
                    .iter()
                    .map(|r| format!("{}@{}:{}-{}={:.6}", r.metric.as_str(), r.iou, r.bin_lo, r.bin_hi, r.ap))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            None => (",,,,".to_string(), String::new()),
        };
        let c = m.counts;
        let _ = writeln!(
            out,
            "{round},complete,{},{},{threshold},{},{},{},{},{},{},{quality},{ap}",
            m.algorithm, m.rho, c.detections, c.after_pp, c.pseudo_labels, c.augmentation_labels, m.db_entries, m.db_skipped
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub threshold: Threshold,
    pub counts: RoundCounts,
}

/// One filtering step over a detections directory. Writes
/// `<out>/pseudo_labels`, `<out>/augmentation_labels` and `<out>/filter.json`.
pub fn cmd_filter(cfg: &SelfTrainConfig, detections_dir: &Path, out: &Path, force: bool) -> Result<FilterSummary> {
    let dets = read_label_dir(detections_dir, 0)?;
    let ids: Vec<String> = dets.samples.keys().cloned().collect();
    let scenes = load_pp_scenes(&SampleLayout::new(&cfg.data_root), &ids)?;
    let art = round_step_with(&FilterRegistry::builtin(), &dets, &scenes, &cfg.filter)?;
    prepare_output_dir(out, force)?;
    write_label_dir(&out.join("pseudo_labels"), &art.pseudo_labels)?;
    write_label_dir(&out.join("augmentation_labels"), &art.augmentation_labels)?;
    let summary = FilterSummary {
        threshold: art.threshold_used,
        counts: art.counts,
    };
    write_json(&out.join("filter.json"), &summary)?;
    Ok(summary)
}

/// Database from a label directory, cropping the data root's reference scans.
pub fn cmd_build_db(cfg: &SelfTrainConfig, labels_dir: &Path, out: &Path, force: bool) -> Result<BuildStats> {
    let labels = read_label_dir(labels_dir, 0)?;
    let ids: Vec<String> = labels.samples.keys().cloned().collect();
    let clouds = load_clouds(&SampleLayout::new(&cfg.data_root), &ids)?;
    let (db, stats) = build_database(&clouds, &labels, DbProvenance::default())?;
    prepare_output_dir(out, force)?;
    write_database(out, &db)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub samples: usize,
    pub inserted: usize,
    pub labels: usize,
}

/// Ground-truth sampling plus global augmentation of every labeled scene.
/// Writes `<out>/points/<id>.bin` and `<out>/labels/<id>.txt`.
pub fn cmd_augment(
    cfg: &SelfTrainConfig,
    labels_dir: &Path,
    db_dir: &Path,
    out: &Path,
    round: usize,
    force: bool,
) -> Result<AugmentSummary> {
    let labels = read_label_dir(labels_dir, round)?;
    let db = read_database(db_dir)?;
    let ids: Vec<String> = labels.samples.keys().cloned().collect();
    let clouds = load_clouds(&SampleLayout::new(&cfg.data_root), &ids)?;
    let round_label = round.to_string();
    let scenes = for_each_sample(&ids, |id| {
        let scene = AugmentedScene {
            cloud: clouds[id].clone(),
            labels: labels.get(id).to_vec(),
        };
        let mut rng = stream(cfg.augment.rng_seed, &["augment", &round_label, id]);
        let ins = sample_insert(&scene, &db, &cfg.augment, &mut rng);
        Ok((ins.inserted.len(), global_augment(&ins.scene, &cfg.augment, &mut rng)))
    })?;
    prepare_output_dir(out, force)?;
    create_dir_all(&out.join("points"))?;
    let mut out_labels = LabelSet::new(round);
    let mut summary = AugmentSummary {
        samples: ids.len(),
        inserted: 0,
        labels: 0,
    };
    for (id, (inserted, scene)) in ids.iter().zip(scenes) {
        write_point_bin(&out.join("points").join(format!("{id}.bin")), &scene.cloud)?;
        summary.inserted += inserted;
        summary.labels += scene.labels.len();
        out_labels.samples.insert(id.clone(), scene.labels);
    }
    write_label_dir(&out.join("labels"), &out_labels)?;
    Ok(summary)
}

/// Synthetic world under the data root.
pub fn cmd_gen_world(cfg: &SelfTrainConfig, force: bool) -> Result<PathBuf> {
    let root = &cfg.data_root;
    let layout = SampleLayout::new(root);
    let generated = [
        layout.points_dir(),
        layout.poses_dir(),
        root.join("traversals"),
        layout.stage_dir(Stage::GroundTruth.dir_name()),
        layout.pp_dir(),
        layout.stage_dir(Stage::Seed.dir_name()),
        layout.rounds_dir(),
    ];
    for dir in &generated {
        if dir.exists() && !force {
            return Err(Error::AlreadyExists(dir.clone()));
        }
    }
    let world = gen_world(&cfg.world)?;
    for dir in &generated {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let meta = root.join(GT_META_FILE);
    if meta.exists() {
        fs::remove_file(&meta).map_err(|e| Error::io(&meta, e))?;
    }
    write_world(root, &world, &cfg.world)?;
    Ok(root.clone())
}
