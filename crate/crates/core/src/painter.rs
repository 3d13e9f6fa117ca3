//! Depth-aware point painting.
//!
//! Every LiDAR point is projected into the rig; the winning camera contributes
//! the pixel coordinate, the visual depth estimate at that pixel, the signed
//! discrepancy between LiDAR depth and visual depth, and the texture feature of
//! the patch. Painted channels are appended after the original `c` channels:
//!
//! ```text
//! [orig_0 .. orig_{c-1}, u, v, z_c, delta_z, tex_0 .. tex_{d-1}]
//! ```
//!
//! A point that lands on no valid pixel in any camera has every painted channel
//! set to `-1`. A point that lands in bounds but on an invalid depth pixel keeps
//! `u`, `v` and texture, with `z_c = delta_z = -1`.

use nalgebra::Vector3;
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{LvicError, Result};
use crate::geometry::{in_bounds, project, CameraRig, PixelCoord};
use crate::imagery::{DepthMap, FeatureMap};

/// Marker written into painted channels that carry no measurement.
pub const PAD: f32 = -1.0;

/// Raw LiDAR sweep: `n × c` row-major, channels 0..3 are x, y, z in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    channels: usize,
    values: Vec<f32>,
}

impl PointCloud {
    pub fn new(channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels < 3 {
            return Err(LvicError::Config(format!(
                "point clouds need at least 3 channels, got {channels}"
            )));
        }
        if !values.len().is_multiple_of(channels) {
            return Err(LvicError::Config(format!(
                "{} values do not split into rows of {channels} channels",
                values.len()
            )));
        }
        if let Some(row) = values
            .chunks_exact(channels)
            .position(|r| r[..3].iter().any(|x| !x.is_finite()))
        {
            return Err(LvicError::Data(format!(
                "point {row} has a non-finite position"
            )));
        }
        Ok(PointCloud { channels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        let r = self.row(i);
        Vector3::new(r[0] as f64, r[1] as f64, r[2] as f64)
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.channels)
    }
}

/// Painted channel block for `d` texture channels: `[u, v, z_c, delta_z, tex..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaintLayout {
    pub texture_dim: usize,
}

impl PaintLayout {
    pub const U: usize = 0;
    pub const V: usize = 1;
    pub const Z_VISUAL: usize = 2;
    pub const DELTA_Z: usize = 3;
    pub const TEXTURE: usize = 4;

    pub fn new(texture_dim: usize) -> Self {
        PaintLayout { texture_dim }
    }

    /// `3 + 1 + d`.
    pub fn painted_width(&self) -> usize {
        Self::TEXTURE + self.texture_dim
    }

    /// `c + 3 + 1 + d`.
    pub fn row_width(&self, channels: usize) -> usize {
        channels + self.painted_width()
    }
}

/// Painted sweep plus the camera each point was painted from (`-1` if none).
#[derive(Debug, Clone, PartialEq)]
pub struct PaintedCloud {
    channels: usize,
    layout: PaintLayout,
    values: Vec<f32>,
    camera_ids: Vec<i32>,
}

impl PaintedCloud {
    pub fn new(
        channels: usize,
        layout: PaintLayout,
        values: Vec<f32>,
        camera_ids: Vec<i32>,
    ) -> Result<Self> {
        let width = layout.row_width(channels);
        if channels < 3 || values.len() != camera_ids.len() * width {
            return Err(LvicError::Config(format!(
                "painted cloud with c={channels}, d={} needs {} values for {} points, got {}",
                layout.texture_dim,
                camera_ids.len() * width,
                camera_ids.len(),
                values.len()
            )));
        }
        Ok(PaintedCloud {
            channels,
            layout,
            values,
            camera_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.camera_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.camera_ids.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layout(&self) -> PaintLayout {
        self.layout
    }

    pub fn row_width(&self) -> usize {
        self.layout.row_width(self.channels)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn camera_ids(&self) -> &[i32] {
        &self.camera_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn painted_block(&self, i: usize) -> &[f32] {
        &self.row(i)[self.channels..]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.row_width())
    }

    pub fn painted_count(&self) -> usize {
        self.camera_ids.iter().filter(|&&id| id >= 0).count()
    }

    /// Per-camera painted point counts for a rig of `n_cameras`.
    pub fn per_camera_counts(&self, n_cameras: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_cameras];
        for &id in &self.camera_ids {
            if id >= 0 && (id as usize) < n_cameras {
                counts[id as usize] += 1;
            }
        }
        counts
    }
}

/// Signed depth discrepancy `z_l - z_c`. Positive when the LiDAR point lies
/// behind the visually estimated surface.
#[inline]
pub fn depth_discrepancy(z_lidar: f64, z_visual: f64) -> f64 {
    z_lidar - z_visual
}

/// A camera in which a point images in bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub camera_id: usize,
    pub pixel: PixelCoord,
    /// Principal point of the candidate camera.
    pub principal: (f64, f64),
    /// Point depth along the candidate camera's z-axis.
    pub z_lidar: f64,
    /// Visual depth at `pixel`, `None` when the depth map has no estimate.
    pub z_visual: Option<f64>,
}

impl Candidate {
    fn centre_distance_sq(&self) -> f64 {
        let du = self.pixel.u - self.principal.0;
        let dv = self.pixel.v - self.principal.1;
        du * du + dv * dv
    }
}

/// Picks the camera whose visual depth agrees best with the LiDAR depth. If
/// no candidate has a depth estimate, picks the one imaging closest to its
/// principal point. Ties go to the lowest camera id.
///
/// Panics on an empty candidate list.
pub fn choose_camera(candidates: &[Candidate]) -> usize {
    assert!(!candidates.is_empty(), "choose_camera needs at least one candidate");
    let with_depth = candidates.iter().filter_map(|c| {
        c.z_visual
            .map(|zc| (depth_discrepancy(c.z_lidar, zc).abs(), c.camera_id))
    });
    let best = argmin(with_depth).or_else(|| {
        argmin(
            candidates
                .iter()
                .map(|c| (c.centre_distance_sq(), c.camera_id)),
        )
    });
    best.expect("non-empty candidates")
}

fn argmin(keys: impl Iterator<Item = (f64, usize)>) -> Option<usize> {
    keys.fold(None, |best: Option<(f64, usize)>, (k, id)| match best {
        Some((bk, bid)) if bk < k || (bk == k && bid < id) => Some((bk, bid)),
        _ => Some((k, id)),
    })
    .map(|(_, id)| id)
}

/// Worker-count policy for [`Painter::paint_cloud`]. Output never depends on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PaintOptions {
    /// `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

/// A validated rig with its per-camera depth and feature maps.
#[derive(Debug, Clone)]
pub struct Painter<'a> {
    rig: &'a CameraRig,
    depths: &'a [DepthMap],
    features: &'a [FeatureMap],
    layout: PaintLayout,
}

impl<'a> Painter<'a> {
    pub fn new(
        rig: &'a CameraRig,
        depths: &'a [DepthMap],
        features: &'a [FeatureMap],
        layout: PaintLayout,
    ) -> Result<Self> {
        if depths.len() != rig.len() || features.len() != rig.len() {
            return Err(LvicError::Config(format!(
                "rig has {} cameras but {} depth maps and {} feature maps were given",
                rig.len(),
                depths.len(),
                features.len()
            )));
        }
        for (cam, (depth, feat)) in rig.cameras().iter().zip(depths.iter().zip(features)) {
            let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
            if depth.width() != w || depth.height() != h {
                return Err(LvicError::Config(format!(
                    "camera {}: depth map is {}x{} but the image is {w}x{h}",
                    cam.id,
                    depth.width(),
                    depth.height()
                )));
            }
            if feat.dim() != layout.texture_dim {
                return Err(LvicError::Config(format!(
                    "camera {}: feature map has d={} but the layout expects d={}",
                    cam.id,
                    feat.dim(),
                    layout.texture_dim
                )));
            }
            if !feat.matches_image(w, h) {
                return Err(LvicError::Config(format!(
                    "camera {}: feature grid {}x{} at stride {} does not cover a {w}x{h} image",
                    cam.id,
                    feat.grid_h(),
                    feat.grid_w(),
                    feat.stride()
                )));
            }
        }
        Ok(Painter {
            rig,
            depths,
            features,
            layout,
        })
    }

    pub fn layout(&self) -> PaintLayout {
        self.layout
    }

    pub fn rig(&self) -> &CameraRig {
        self.rig
    }

    /// Every camera in which `p` (LiDAR frame) images in bounds, in id order.
    pub fn candidates(&self, p: &Vector3<f64>) -> Vec<Candidate> {
        let mut out = Vec::new();
        self.for_each_candidate(p, |c| out.push(c));
        out
    }

    #[inline]
    fn for_each_candidate(&self, p: &Vector3<f64>, mut f: impl FnMut(Candidate)) {
        for (cam, depth) in self.rig.cameras().iter().zip(self.depths) {
            let p_cam = cam.extrinsics.transform_point(p);
            let Some(px) = project(&cam.intrinsics, &p_cam).pixel() else {
                continue;
            };
            if !in_bounds(px.u, px.v, &cam.intrinsics) {
                continue;
            }
            f(Candidate {
                camera_id: cam.id,
                pixel: px,
                principal: (cam.intrinsics.cx, cam.intrinsics.cy),
                z_lidar: p_cam.z,
                z_visual: depth.sample(px.u, px.v),
            });
        }
    }

    /// Writes the `3 + 1 + d` painted channels for `p` into `block` and
    /// returns the winning camera id.
    pub fn paint_point_into(&self, p: &Vector3<f64>, block: &mut [f32]) -> Option<usize> {
        debug_assert_eq!(block.len(), self.layout.painted_width());
        let mut cands: SmallVec<[Candidate; 8]> = SmallVec::new();
        self.for_each_candidate(p, |c| cands.push(c));
        if cands.is_empty() {
            block.fill(PAD);
            return None;
        }
        let id = choose_camera(&cands);
        let winner = cands.iter().find(|c| c.camera_id == id).expect("winner is a candidate");
        self.write_block(winner, block);
        Some(winner.camera_id)
    }

    fn write_block(&self, c: &Candidate, block: &mut [f32]) {
        block[PaintLayout::U] = c.pixel.u as f32;
        block[PaintLayout::V] = c.pixel.v as f32;
        match c.z_visual {
            Some(zc) => {
                block[PaintLayout::Z_VISUAL] = zc as f32;
                block[PaintLayout::DELTA_Z] = depth_discrepancy(c.z_lidar, zc) as f32;
            }
            None => {
                block[PaintLayout::Z_VISUAL] = PAD;
                block[PaintLayout::DELTA_Z] = PAD;
            }
        }
        let texture = self.features[c.camera_id].sample(c.pixel.u, c.pixel.v);
        block[PaintLayout::TEXTURE..].copy_from_slice(texture);
    }

    /// Painted block for a single point and the camera it came from.
    pub fn paint_point(&self, p: &Vector3<f64>) -> (Vec<f32>, Option<usize>) {
        let mut block = vec![0.0f32; self.layout.painted_width()];
        let id = self.paint_point_into(p, &mut block);
        (block, id)
    }

    /// Paints every point. Rows are independent, so the result is identical
    /// for any thread count.
    pub fn paint_cloud(&self, cloud: &PointCloud, options: PaintOptions) -> Result<PaintedCloud> {
        let c = cloud.channels();
        let width = self.layout.row_width(c);
        let n = cloud.len();
        let mut values = vec![0.0f32; n * width];
        let mut camera_ids = vec![-1i32; n];

        let work = |values: &mut [f32], camera_ids: &mut [i32]| {
            values
                .par_chunks_mut(width)
                .zip(camera_ids.par_iter_mut())
                .zip(cloud.values().par_chunks(c))
                .with_min_len(256)
                .for_each(|((out, cam), src)| {
                    out[..c].copy_from_slice(src);
                    let p = Vector3::new(src[0] as f64, src[1] as f64, src[2] as f64);
                    *cam = self
                        .paint_point_into(&p, &mut out[c..])
                        .map_or(-1, |id| id as i32);
                });
        };

        match options.threads {
            Some(threads) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .build()
                    .map_err(|e| LvicError::Config(format!("thread pool: {e}")))?;
                pool.install(|| work(&mut values, &mut camera_ids));
            }
            None => work(&mut values, &mut camera_ids),
        }

        PaintedCloud::new(c, self.layout, values, camera_ids)
    }
}

/// Validates inputs and paints a whole cloud.
pub fn paint_cloud(
    cloud: &PointCloud,
    rig: &CameraRig,
    depths: &[DepthMap],
    features: &[FeatureMap],
    layout: PaintLayout,
    options: PaintOptions,
) -> Result<PaintedCloud> {
    Painter::new(rig, depths, features, layout)?.paint_cloud(cloud, options)
}
