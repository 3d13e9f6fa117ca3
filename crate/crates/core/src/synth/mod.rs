//! Synthetic scenes with known geometry, and the calibration-noise experiment
//! built on them.

mod experiment;
mod render;
mod scene;

pub use experiment::{
    camera_noise_seed, miscalibration_experiment, perturb_extrinsics, perturb_rig, run_experiment,
    summarize, ExperimentReport, ExperimentRow, CSV_HEADER,
};
pub use render::{cast_ray, pattern_features, render_depth, Surface, FREE_POINT};
pub use scene::{
    depth_file, feature_file, generate_scene, write_scene, NoiseLevel, SceneConfig, SynthScene,
    MIN_VISIBLE_FRACTION, SYNTH_CHANNELS,
};
