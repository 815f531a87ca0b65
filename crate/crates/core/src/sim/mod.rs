//! Synthetic worlds with known ground truth and a detector stand-in whose
//! recall grows with the amount of similar training labels.

mod detector;
mod world;

pub use detector::{
    detection_probability, sim_infer, sim_train, BetaParams, SimDetectorModel, SimDetectorParams,
};
pub use world::{
    gen_world, read_gt_meta, traversal_poses, write_world, SimObject, SimSample, SimWorld, WorldConfig,
    GT_META_FILE,
};
