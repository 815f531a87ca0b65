use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use rayon::prelude::*;

use super::config::SelfTrainConfig;
use crate::error::{Error, Result};
use crate::filtering::{LabelSet, PpScenes};
use crate::gt_database::{global_augment, sample_insert, AugmentConfig, AugmentedScene, GtDatabase, SceneClouds};
use crate::kitti_io::read_label_dir;
use crate::rng::stream;
use crate::sim::{sim_infer, sim_train, SimDetectorModel, SimDetectorParams};

/// What a round's detector sees: the previous round's labels and database,
/// both in memory and on disk.
pub struct TrainInput<'a> {
    pub round: usize,
    pub scenes: &'a PpScenes,
    pub labels: &'a LabelSet,
    pub db: &'a GtDatabase,
    pub points_dir: PathBuf,
    pub labels_dir: PathBuf,
    pub db_dir: PathBuf,
    pub model_dir: PathBuf,
}

pub struct InferInput<'a> {
    pub round: usize,
    pub sample_ids: &'a [String],
    pub points_dir: PathBuf,
    pub labels_dir: PathBuf,
    pub db_dir: PathBuf,
    /// Detections must end up here as one scored label file per sample.
    pub out_dir: PathBuf,
}

/// A detector backend. Each round builds a fresh instance, so no state
/// carries over from earlier rounds.
pub trait Detector {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<()>;

    /// Detections for every requested sample, written under `out_dir`.
    fn infer(&mut self, input: &InferInput<'_>) -> Result<()>;
}

pub type DetectorFactory = fn(&SelfTrainConfig) -> Result<Box<dyn Detector>>;

pub struct DetectorRegistry {
    factories: BTreeMap<&'static str, DetectorFactory>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(SimulatedDetector::NAME, SimulatedDetector::from_config);
        r.register(ExternalDetector::NAME, ExternalDetector::from_config);
        r
    }

    pub fn register(&mut self, name: &'static str, factory: DetectorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn create(&self, cfg: &SelfTrainConfig) -> Result<Box<dyn Detector>> {
        let name = cfg.detector.mode.as_str();
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown detector mode {name:?}; known: {}",
                self.factories.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })?;
        factory(cfg)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

/// Labels of every training scene after ground-truth sampling and global
/// augmentation, in sample order. Scenes come from `labels`.
pub fn augmented_training_labels<S: SceneClouds + Sync + ?Sized>(
    scenes: &S,
    labels: &LabelSet,
    db: &GtDatabase,
    cfg: &AugmentConfig,
    round: usize,
) -> Result<Vec<Vec<crate::geometry::LabeledBox>>> {
    let round = round.to_string();
    labels
        .samples
        .par_iter()
        .map(|(id, boxes)| {
            let cloud = scenes
                .cloud(id)
                .ok_or_else(|| Error::MissingData(format!("no point cloud for sample {id}")))?;
            let scene = AugmentedScene {
                cloud: cloud.clone(),
                labels: boxes.clone(),
            };
            let mut rng = stream(cfg.rng_seed, &["augment", &round, id]);
            let inserted = sample_insert(&scene, db, cfg, &mut rng);
            Ok(global_augment(&inserted.scene, cfg, &mut rng).labels)
        })
        .collect()
}

/// Similarity-memory stand-in driven by the synthetic ground truth under
/// `<data_root>/gt`.
pub struct SimulatedDetector {
    params: SimDetectorParams,
    augment: AugmentConfig,
    gt: LabelSet,
    model: SimDetectorModel,
}

impl SimulatedDetector {
    pub const NAME: &'static str = "simulate";

    pub fn new(params: SimDetectorParams, augment: AugmentConfig, gt: LabelSet) -> Self {
        Self {
            params,
            augment,
            gt,
            model: SimDetectorModel::default(),
        }
    }

    fn from_config(cfg: &SelfTrainConfig) -> Result<Box<dyn Detector>> {
        let gt_dir = cfg.data_root.join(crate::kitti_io::Stage::GroundTruth.dir_name());
        if !gt_dir.is_dir() {
            return Err(Error::MissingData(format!(
                "simulated detector needs ground truth at {}",
                gt_dir.display()
            )));
        }
        let gt = read_label_dir(&gt_dir, 0)?;
        Ok(Box::new(Self::new(cfg.detector.sim.clone(), cfg.augment.clone(), gt)))
    }

    pub fn model(&self) -> &SimDetectorModel {
        &self.model
    }
}

impl Detector for SimulatedDetector {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<()> {
        let scenes = augmented_training_labels(input.scenes, input.labels, input.db, &self.augment, input.round)?;
        self.model = sim_train(scenes.iter().map(Vec::as_slice));
        Ok(())
    }

    fn infer(&mut self, input: &InferInput<'_>) -> Result<()> {
        let round = input.round.to_string();
        let mut dets = LabelSet::new(input.round);
        for id in input.sample_ids {
            let gt: Vec<_> = self.gt.get(id).iter().map(|l| l.bbox).collect();
            let mut rng = stream(self.params.rng_seed, &["infer", &round, id]);
            dets.samples
                .insert(id.clone(), sim_infer(&self.model, &gt, &self.params, &mut rng));
        }
        crate::kitti_io::write_label_dir(&input.out_dir, &dets)
    }
}

/// Runs user command templates through `sh -c`.
pub struct ExternalDetector {
    train_cmd: Option<String>,
    infer_cmd: String,
}

impl ExternalDetector {
    pub const NAME: &'static str = "external";

    fn from_config(cfg: &SelfTrainConfig) -> Result<Box<dyn Detector>> {
        let infer_cmd = cfg
            .detector
            .infer_cmd
            .clone()
            .ok_or_else(|| Error::Config("external detector needs detector.infer_cmd".into()))?;
        Ok(Box::new(Self {
            train_cmd: cfg.detector.train_cmd.clone(),
            infer_cmd,
        }))
    }

    fn run(template: &str, round: usize, dirs: [(&str, &PathBuf); 4]) -> Result<()> {
        let mut cmd = template.replace("{round}", &round.to_string());
        for (key, path) in dirs {
            cmd = cmd.replace(&format!("{{{key}}}"), &path.display().to_string());
        }
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::Detector(format!("cannot run {cmd:?}: {e}")))?;
        if !status.success() {
            return Err(Error::Detector(format!("{cmd:?} exited with {status}")));
        }
        Ok(())
    }
}

impl Detector for ExternalDetector {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<()> {
        let Some(template) = &self.train_cmd else {
            return Ok(());
        };
        crate::kitti_io::create_dir_all(&input.model_dir)?;
        Self::run(
            template,
            input.round,
            [
                ("points_dir", &input.points_dir),
                ("labels_dir", &input.labels_dir),
                ("db_dir", &input.db_dir),
                ("out_dir", &input.model_dir),
            ],
        )
    }

    fn infer(&mut self, input: &InferInput<'_>) -> Result<()> {
        Self::run(
            &self.infer_cmd,
            input.round,
            [
                ("points_dir", &input.points_dir),
                ("labels_dir", &input.labels_dir),
                ("db_dir", &input.db_dir),
                ("out_dir", &input.out_dir),
            ],
        )
    }
}
