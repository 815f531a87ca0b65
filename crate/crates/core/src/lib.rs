//! Label pipeline for self-trained LiDAR object detection without human
//! annotation: persistence scoring over repeated traversals, seed boxes,
//! confidence/persistence filtering of detector rounds, ground-truth
//! sampling augmentation and range-binned AP evaluation.

pub mod ephemerality;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod gt_database;
pub mod kitti_io;
pub mod orchestrator;
pub mod quantile;
pub mod rng;
pub mod seed;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
pub use filtering::LabelSet;
