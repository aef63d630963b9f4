//! Synthetic articulated body standing in for a parametric body model.

pub mod io;
pub mod pose;
pub mod sample;
pub mod skeleton;
pub mod template;

pub use io::{read_dataset, write_dataset, DatasetManifest};
pub use pose::{pose_mesh, PosedBody};
pub use sample::{
    check_sample, render_ground_truth, sample_dataset, sample_poses, EvalOnly, GroundTruth, SampleConfig,
    TrainingSample,
};
pub use skeleton::{Skeleton, NUM_JOINTS, NUM_PARTS, PART_NAMES};
pub use template::{build_template, BodyTemplate};
