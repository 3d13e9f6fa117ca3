use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::render::{cast_ray, pattern_features, render_depth, Surface};
use crate::error::{LvicError, Result};
use crate::geometry::{in_bounds, project, Camera, CameraIntrinsics, CameraRig, Se3Transform};
use crate::imagery::{DepthMap, FeatureMap, DEFAULT_FEATURE_DIM, DEFAULT_STRIDE};
use crate::io;
use crate::painter::{PaintLayout, PointCloud};

/// One calibration noise level: rotation angle and translation norm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NoiseLevel {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl NoiseLevel {
    pub const fn rotation(rot_deg: f64) -> Self {
        NoiseLevel {
            rot_deg,
            trans_m: 0.0,
        }
    }
}

/// Channels of a synthetic point: x, y, z, intensity.
pub const SYNTH_CHANNELS: usize = 4;

/// Minimum share of points each camera must image.
pub const MIN_VISIBLE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_points: usize,
    pub n_cameras: usize,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view of each camera before jitter (degrees).
    pub hfov_deg: f64,
    /// Outer radius of the enclosing walls (metres).
    pub extent: f64,
    pub occluder_count: usize,
    /// Occluder width range (metres).
    pub occluder_width: (f64, f64),
    /// Occluder height range (metres).
    pub occluder_height: (f64, f64),
    /// Horizontal distance range of occluders from the LiDAR (metres).
    pub occluder_distance: (f64, f64),
    /// Largest camera displacement from the LiDAR origin (metres).
    pub camera_offset: f64,
    /// LiDAR elevation range (degrees).
    pub elevation_deg: (f64, f64),
    pub feature_dim: usize,
    pub stride: usize,
    pub noise: Vec<NoiseLevel>,
    /// |delta_z| above this counts as an exceedance (metres).
    pub threshold: f64,
    /// Rig re-draws allowed when a camera sees too few points.
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 1,
            n_points: 50_000,
            n_cameras: 6,
            width: 1600,
            height: 900,
            hfov_deg: 70.0,
            extent: 40.0,
            occluder_count: 10,
            occluder_width: (1.0, 4.0),
            occluder_height: (1.0, 3.0),
            occluder_distance: (10.0, 24.0),
            camera_offset: 0.01,
            elevation_deg: (-20.0, 10.0),
            feature_dim: DEFAULT_FEATURE_DIM,
            stride: DEFAULT_STRIDE,
            noise: vec![
                NoiseLevel::rotation(0.0),
                NoiseLevel::rotation(0.5),
                NoiseLevel::rotation(1.0),
                NoiseLevel::rotation(2.0),
            ],
            threshold: 0.5,
            max_retries: 8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LvicError::Config(msg));
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if self.n_cameras == 0 {
            return bad("n_cameras must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} must be positive", self.width, self.height));
        }
        if !(self.hfov_deg > 1.0 && self.hfov_deg < 170.0) {
            return bad(format!("hfov {} must lie in (1, 170) degrees", self.hfov_deg));
        }
        if !(self.extent.is_finite() && self.extent >= 10.0) {
            return bad(format!("extent {} must be at least 10 m", self.extent));
        }
        let positive_range = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !positive_range(self.occluder_width) || !positive_range(self.occluder_height) {
            return bad("occluder size ranges must be positive and ordered".into());
        }
        let (near, far) = self.occluder_distance;
        if !(positive_range(self.occluder_distance) && far < 0.75 * self.extent - self.occluder_width.1) {
            return bad(format!(
                "occluder distance range ({near}, {far}) must be positive and stay inside the walls"
            ));
        }
        if !(self.camera_offset >= 0.0 && self.camera_offset < 1.0) {
            return bad(format!("camera offset {} must lie in [0, 1) m", self.camera_offset));
        }
        let (lo, hi) = self.elevation_deg;
        if !(lo < hi && lo > -80.0 && hi < 80.0) {
            return bad(format!("elevation range ({lo}, {hi}) is invalid"));
        }
        if self.feature_dim == 0 || self.stride == 0 {
            return bad("feature dim and stride must be positive".into());
        }
        if self
            .noise
            .iter()
            .any(|n| !(n.rot_deg >= 0.0 && n.trans_m >= 0.0 && n.rot_deg.is_finite() && n.trans_m.is_finite()))
        {
            return bad("noise levels must be finite and non-negative".into());
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return bad(format!("threshold {} must be positive", self.threshold));
        }
        Ok(())
    }

    pub fn layout(&self) -> PaintLayout {
        PaintLayout::new(self.feature_dim)
    }
}

/// A synthetic sweep with its ground-truth rig and rendered camera outputs.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cloud: PointCloud,
    /// Surface each point was sampled from.
    pub point_surfaces: Vec<u32>,
    pub surfaces: Vec<Surface>,
    pub rig: CameraRig,
    pub depths: Vec<DepthMap>,
    pub features: Vec<FeatureMap>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn vertical_quad(id: u32, a: Vector3<f64>, b: Vector3<f64>, z0: f64, z1: f64) -> Surface {
    Surface {
        id,
        corner: Vector3::new(a.x, a.y, z0),
        edge_a: Vector3::new(b.x - a.x, b.y - a.y, 0.0),
        edge_b: Vector3::new(0.0, 0.0, z1 - z0),
    }
}

const WALL_SEGMENTS: usize = 16;
const GROUND_Z: f64 = -2.0;

/// Star-shaped enclosure of vertical walls around the LiDAR, plus free-standing
/// rectangular occluders inside it. The walls reach far below the sensor so
/// that every downward ray hits them; their tops open onto empty sky.
fn build_surfaces(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Surface> {
    let step = TAU / WALL_SEGMENTS as f64;
    let vertices: Vec<Vector3<f64>> = (0..WALL_SEGMENTS)
        .map(|k| {
            let angle = k as f64 * step + rng.random_range(-0.3..0.3) * step;
            let radius = cfg.extent * rng.random_range(0.75..1.0);
            Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0)
        })
        .collect();
    let mut surfaces: Vec<Surface> = (0..WALL_SEGMENTS)
        .map(|k| {
            let top = GROUND_Z + rng.random_range(4.0..12.0);
            vertical_quad(
                k as u32,
                vertices[k],
                vertices[(k + 1) % WALL_SEGMENTS],
                -2.0 * cfg.extent,
                top,
            )
        })
        .collect();

    for i in 0..cfg.occluder_count {
        let azimuth = rng.random_range(0.0..TAU);
        let dist = uniform(rng, cfg.occluder_distance);
        let centre = Vector3::new(dist * azimuth.cos(), dist * azimuth.sin(), 0.0);
        // roughly facing the sensor
        let facing = azimuth + PI / 2.0 + rng.random_range(-1.0..1.0);
        let half = 0.5 * uniform(rng, cfg.occluder_width);
        let along = Vector3::new(facing.cos(), facing.sin(), 0.0) * half;
        let height = uniform(rng, cfg.occluder_height);
        surfaces.push(vertical_quad(
            (WALL_SEGMENTS + i) as u32,
            centre - along,
            centre + along,
            GROUND_Z,
            GROUND_Z + height,
        ));
    }
    surfaces
}

/// Cameras spread evenly in yaw from a random heading, with jittered pose
/// and intrinsics.
fn build_rig(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<CameraRig> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let nominal_f = (w / 2.0) / (cfg.hfov_deg.to_radians() / 2.0).tan();
    let heading = rng.random_range(0.0..TAU);
    let cameras = (0..cfg.n_cameras)
        .map(|id| {
            let yaw = heading
                + TAU * id as f64 / cfg.n_cameras as f64
                + rng.random_range(-3f64..3.0).to_radians();
            let pitch = rng.random_range(-2f64..2.0).to_radians();
            let roll = rng.random_range(-1f64..1.0).to_radians();
            // rows: camera x (right), y (down), z (forward) in the LiDAR frame
            let base = Matrix3::new(
                yaw.sin(), -yaw.cos(), 0.0,
                0.0, 0.0, -1.0,
                yaw.cos(), yaw.sin(), 0.0,
            );
            let tilt = Rotation3::from_axis_angle(&Vector3::z_axis(), roll)
                * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
            let rotation = tilt.matrix() * base;
            let offset = random_unit(rng) * cfg.camera_offset * rng.random_range(0.0..1.0f64).cbrt();
            let f = nominal_f * rng.random_range(0.97..1.03);
            let intrinsics = CameraIntrinsics::new(
                f,
                f * rng.random_range(0.995..1.005),
                w / 2.0 + rng.random_range(-0.01..0.01) * w,
                h / 2.0 + rng.random_range(-0.01..0.01) * h,
                cfg.width,
                cfg.height,
            )?;
            Ok(Camera {
                id,
                intrinsics,
                extrinsics: Se3Transform::new(rotation, -(rotation * offset))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CameraRig::new(cameras)
}

/// Uniform direction on the unit sphere.
pub(crate) fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// LiDAR returns: random beams from the origin, first surface hit.
fn sample_points(
    cfg: &SceneConfig,
    surfaces: &[Surface],
    rng: &mut ChaCha8Rng,
) -> Result<(PointCloud, Vec<u32>)> {
    let (lo, hi) = (cfg.elevation_deg.0.to_radians(), cfg.elevation_deg.1.to_radians());
    let mut values = Vec::with_capacity(cfg.n_points * SYNTH_CHANNELS);
    let mut ids = Vec::with_capacity(cfg.n_points);
    let max_attempts = cfg.n_points.saturating_mul(50);
    let origin = Vector3::zeros();
    let mut attempts = 0usize;
    while ids.len() < cfg.n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(LvicError::Generation(format!(
                "only {} of {} LiDAR beams hit a surface after {max_attempts} attempts",
                ids.len(),
                cfg.n_points
            )));
        }
        let azimuth = rng.random_range(0.0..TAU);
        let elevation = rng.random_range(lo..hi);
        let dir = Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        let Some((t, id)) = cast_ray(surfaces, &origin, &dir) else {
            continue;
        };
        let p = dir * t;
        let intensity = 0.1 + 0.8 * ((id % 7) as f64 / 6.0) + rng.random_range(0.0..0.05);
        values.extend([p.x as f32, p.y as f32, p.z as f32, intensity as f32]);
        ids.push(id);
    }
    Ok((PointCloud::new(SYNTH_CHANNELS, values)?, ids))
}

fn visible_fraction(camera: &Camera, cloud: &PointCloud) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let seen = (0..cloud.len())
        .filter(|&i| {
            let p = camera.extrinsics.transform_point(&cloud.position(i));
            project(&camera.intrinsics, &p)
                .pixel()
                .is_some_and(|px| in_bounds(px.u, px.v, &camera.intrinsics))
        })
        .count();
    seen as f64 / cloud.len() as f64
}

/// Builds a deterministic scene for `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let surfaces = build_surfaces(cfg, &mut rng);
    let (cloud, point_surfaces) = sample_points(cfg, &surfaces, &mut rng)?;

    let mut rig = None;
    for _ in 0..=cfg.max_retries {
        let candidate = build_rig(cfg, &mut rng)?;
        let worst = candidate
            .cameras()
            .iter()
            .map(|c| visible_fraction(c, &cloud))
            .fold(f64::INFINITY, f64::min);
        if worst >= MIN_VISIBLE_FRACTION {
            rig = Some(candidate);
            break;
        }
    }
    let rig = rig.ok_or_else(|| {
        LvicError::Generation(format!(
            "no rig with every camera seeing {:.0}% of points after {} attempts",
            MIN_VISIBLE_FRACTION * 100.0,
            cfg.max_retries + 1
        ))
    })?;

    let depths: Vec<DepthMap> = rig
        .cameras()
        .par_iter()
        .map(|c| render_depth(c, &surfaces, &cloud, &point_surfaces))
        .collect();
    let pattern = pattern_features(
        cfg.feature_dim,
        cfg.width as usize,
        cfg.height as usize,
        cfg.stride,
    );
    let features = vec![pattern; rig.len()];

    Ok(SynthScene {
        cloud,
        point_surfaces,
        surfaces,
        rig,
        depths,
        features,
    })
}

/// File names used when a scene is dumped as a painting fixture.
pub fn depth_file(dir: &Path, camera: usize) -> std::path::PathBuf {
    dir.join(format!("camera_{camera}.lvdm"))
}

pub fn feature_file(dir: &Path, camera: usize) -> std::path::PathBuf {
    dir.join(format!("camera_{camera}.lvfm"))
}

/// Writes `cloud.bin`, `calib.json`, `depth/camera_<id>.lvdm` and
/// `feat/camera_<id>.lvfm` under `dir`.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<()> {
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| LvicError::io(p, e));
    let depth_dir = dir.join("depth");
    let feat_dir = dir.join("feat");
    mkdir(&depth_dir)?;
    mkdir(&feat_dir)?;
    io::write_cloud(&dir.join("cloud.bin"), &scene.cloud)?;
    io::write_calibration(&dir.join("calib.json"), &scene.rig)?;
    for (i, (d, f)) in scene.depths.iter().zip(&scene.features).enumerate() {
        io::write_depth(&depth_file(&depth_dir, i), d)?;
        io::write_features(&feature_file(&feat_dir, i), f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::orthonormality_error;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            seed,
            n_points: 2000,
            width: 320,
            height: 180,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&small(3)).unwrap();
        let b = generate_scene(&small(3)).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.rig, b.rig);
        assert_eq!(a.depths, b.depths);
        let c = generate_scene(&small(4)).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn every_camera_sees_enough_points() {
        let s = generate_scene(&small(7)).unwrap();
        for cam in s.rig.cameras() {
            assert!(visible_fraction(cam, &s.cloud) >= MIN_VISIBLE_FRACTION);
            assert!(orthonormality_error(cam.extrinsics.rotation()) < 1e-12);
            assert!(cam.center().norm() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn points_lie_on_their_surfaces() {
        let s = generate_scene(&small(2)).unwrap();
        for i in 0..s.cloud.len() {
            let p = s.cloud.position(i);
            let surf = s.surfaces[s.point_surfaces[i] as usize];
            let n = surf.edge_a.cross(&surf.edge_b).normalize();
            assert!(n.dot(&(p - surf.corner)).abs() < 1e-4);
        }
    }

    #[test]
    fn impossible_visibility_is_a_generation_error() {
        // cameras with a 2 degree field of view cannot each see 10% of points
        let cfg = SceneConfig {
            hfov_deg: 2.0,
            max_retries: 1,
            ..small(1)
        };
        assert!(matches!(generate_scene(&cfg), Err(LvicError::Generation(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig { n_points: 0, ..small(1) }.validate().is_err());
        assert!(SceneConfig { extent: -1.0, ..small(1) }.validate().is_err());
        assert!(SceneConfig { noise: vec![NoiseLevel::rotation(-1.0)], ..small(1) }
            .validate()
            .is_err());
        assert!(small(1).validate().is_ok());
    }
}
