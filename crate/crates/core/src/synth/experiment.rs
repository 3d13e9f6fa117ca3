//! Calibration-noise experiment: paint a scene through perturbed extrinsics
//! and measure how the depth discrepancy responds.

use std::fmt::Write as _;

use nalgebra::{Rotation3, Unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scene::{generate_scene, random_unit, SceneConfig, SynthScene};
use crate::error::{LvicError, Result};
use crate::geometry::{CameraRig, Se3Transform};
use crate::painter::{PaintLayout, PaintOptions, PaintedCloud, Painter, PAD};

/// Applies a rotation of exactly `rot_deg` about a random axis and a shift of
/// norm exactly `trans_m` in a random direction, both drawn from `seed`:
/// `R' = ΔR·R`, `t' = ΔR·t + δ`.
pub fn perturb_extrinsics(t: &Se3Transform, rot_deg: f64, trans_m: f64, seed: u64) -> Se3Transform {
    assert!(rot_deg >= 0.0 && trans_m >= 0.0, "noise magnitudes must be non-negative");
    if rot_deg == 0.0 && trans_m == 0.0 {
        return *t;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Unit::new_unchecked(random_unit(&mut rng));
    let shift = random_unit(&mut rng) * trans_m;
    let delta = Rotation3::from_axis_angle(&axis, rot_deg.to_radians());
    let noise = Se3Transform::from_parts_unchecked(*delta.matrix(), shift);
    noise.compose(t)
}

/// Seed for the perturbation of one camera. Fixed across noise levels so that
/// only the magnitude changes between rows.
pub fn camera_noise_seed(seed: u64, camera_id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (camera_id as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

pub fn perturb_rig(rig: &CameraRig, rot_deg: f64, trans_m: f64, seed: u64) -> CameraRig {
    rig.map_extrinsics(|cam| {
        perturb_extrinsics(&cam.extrinsics, rot_deg, trans_m, camera_noise_seed(seed, cam.id))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub noise_rot_deg: f64,
    pub noise_trans_m: f64,
    /// Mean |delta_z| over painted points that have a depth estimate.
    pub mean_abs_dz: f64,
    /// Share of those points with |delta_z| above the threshold.
    pub exceed_frac: f64,
    /// Share of all points that were painted.
    pub painted_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub threshold: f64,
    pub rows: Vec<ExperimentRow>,
}

pub const CSV_HEADER: &str = "noise_rot_deg,noise_trans_m,mean_abs_dz,exceed_frac,painted_frac";

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.noise_rot_deg, r.noise_trans_m, r.mean_abs_dz, r.exceed_frac, r.painted_frac
            );
        }
        out
    }

    /// True when `mean_abs_dz` strictly increases from row to row.
    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_abs_dz > w[0].mean_abs_dz)
    }
}

/// Summary statistics of one painted cloud.
pub fn summarize(painted: &PaintedCloud, threshold: f64) -> (f64, f64, f64) {
    let c = painted.channels();
    let mut sum = 0.0;
    let mut with_depth = 0usize;
    let mut exceed = 0usize;
    for row in painted.rows() {
        let block = &row[c..];
        if block[PaintLayout::U] == PAD && block[PaintLayout::V] == PAD {
            continue;
        }
        if block[PaintLayout::Z_VISUAL] <= 0.0 {
            continue;
        }
        let dz = (block[PaintLayout::DELTA_Z] as f64).abs();
        sum += dz;
        with_depth += 1;
        if dz > threshold {
            exceed += 1;
        }
    }
    let n = painted.len().max(1) as f64;
    let painted_frac = painted.painted_count() as f64 / n;
    if with_depth == 0 {
        return (0.0, 0.0, painted_frac);
    }
    let m = with_depth as f64;
    (sum / m, exceed as f64 / m, painted_frac)
}

/// Paints an already generated scene once per noise level.
pub fn run_experiment(cfg: &SceneConfig, scene: &SynthScene) -> Result<ExperimentReport> {
    if cfg.noise.len() < 2 {
        return Err(LvicError::Config(format!(
            "noise schedule needs at least 2 levels, got {}",
            cfg.noise.len()
        )));
    }
    if !cfg.noise.iter().any(|n| n.rot_deg == 0.0 && n.trans_m == 0.0) {
        return Err(LvicError::Config("noise schedule must include the zero level".into()));
    }
    let layout = cfg.layout();
    let rows = cfg
        .noise
        .iter()
        .map(|level| {
            let rig = perturb_rig(&scene.rig, level.rot_deg, level.trans_m, cfg.seed);
            let painted = Painter::new(&rig, &scene.depths, &scene.features, layout)?
                .paint_cloud(&scene.cloud, PaintOptions::default())?;
            let (mean_abs_dz, exceed_frac, painted_frac) = summarize(&painted, cfg.threshold);
            Ok(ExperimentRow {
                noise_rot_deg: level.rot_deg,
                noise_trans_m: level.trans_m,
                mean_abs_dz,
                exceed_frac,
                painted_frac,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        seed: cfg.seed,
        threshold: cfg.threshold,
        rows,
    })
}

/// Generates the scene for `cfg` and runs the noise schedule on it.
pub fn miscalibration_experiment(cfg: &SceneConfig) -> Result<ExperimentReport> {
    let scene = generate_scene(cfg)?;
    run_experiment(cfg, &scene)
}
