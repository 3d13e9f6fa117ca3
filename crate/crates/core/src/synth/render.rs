//! Ground-truth depth rendering and the synthetic texture pattern.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::geometry::{in_bounds, project, Camera, Z_EPSILON};
use crate::imagery::{DepthMap, FeatureMap};
use crate::painter::PointCloud;

/// Surface id for points that do not lie on any analytic surface.
pub const FREE_POINT: u32 = u32::MAX;

/// Planar rectangle `corner + s·edge_a + t·edge_b`, `s, t ∈ [0, 1]`, in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub id: u32,
    pub corner: Vector3<f64>,
    pub edge_a: Vector3<f64>,
    pub edge_b: Vector3<f64>,
}

impl Surface {
    /// Ray parameter of the first hit with `origin + t·dir`, `t > Z_EPSILON`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let normal = self.edge_a.cross(&self.edge_b);
        let denom = normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = normal.dot(&(self.corner - origin)) / denom;
        if t <= Z_EPSILON {
            return None;
        }
        let rel = origin + dir * t - self.corner;
        let s = rel.dot(&self.edge_a) / self.edge_a.norm_squared();
        let r = rel.dot(&self.edge_b) / self.edge_b.norm_squared();
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)).then_some(t)
    }
}

/// Nearest surface hit along a ray: `(t, surface id)`.
pub fn cast_ray(
    surfaces: &[Surface],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, u32)> {
    surfaces
        .iter()
        .filter_map(|s| s.intersect(origin, dir).map(|t| (t, s.id)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Surface expressed in one camera's frame, with the constants needed to
/// intersect pixel rays `((u - cx)/fx, (v - cy)/fy, 1)` cheaply.
struct CameraSurface {
    id: u32,
    normal: Vector3<f64>,
    plane_offset: f64,
    corner: Vector3<f64>,
    edge_a: Vector3<f64>,
    edge_b: Vector3<f64>,
    inv_a: f64,
    inv_b: f64,
}

impl CameraSurface {
    fn new(s: &Surface, camera: &Camera) -> Self {
        let r = camera.extrinsics.rotation();
        let corner = camera.extrinsics.transform_point(&s.corner);
        let edge_a = r * s.edge_a;
        let edge_b = r * s.edge_b;
        let normal = edge_a.cross(&edge_b);
        CameraSurface {
            id: s.id,
            plane_offset: normal.dot(&corner),
            normal,
            corner,
            edge_a,
            edge_b,
            inv_a: 1.0 / edge_a.norm_squared(),
            inv_b: 1.0 / edge_b.norm_squared(),
        }
    }

    /// Camera-frame depth of the hit along `ray` (whose z component is 1).
    #[inline]
    fn depth_along(&self, ray: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let z = self.plane_offset / denom;
        if z <= Z_EPSILON {
            return None;
        }
        let rel = ray * z - self.corner;
        let s = rel.dot(&self.edge_a) * self.inv_a;
        let t = rel.dot(&self.edge_b) * self.inv_b;
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t)).then_some(z)
    }
}

/// Z-buffer depth map for one camera.
///
/// Analytic surfaces are ray-cast through every pixel centre. Each point then
/// splats its camera-frame depth into the single pixel containing its
/// projection, provided no other surface crosses the segment from the camera
/// to the point. Visible splats replace the analytic value and the nearest
/// splat in a pixel wins, so the result does not depend on point order.
/// Pixels with neither a surface nor a splat are `+inf` (no estimate).
pub fn render_depth(
    camera: &Camera,
    surfaces: &[Surface],
    cloud: &PointCloud,
    point_surfaces: &[u32],
) -> DepthMap {
    assert_eq!(cloud.len(), point_surfaces.len(), "one surface id per point");
    let k = camera.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let cam_surfaces: Vec<CameraSurface> =
        surfaces.iter().map(|s| CameraSurface::new(s, camera)).collect();

    let mut depth = vec![f64::INFINITY; w * h];
    depth.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let y = (row as f64 + 0.5 - k.cy) / k.fy;
        for (col, px) in out.iter_mut().enumerate() {
            let ray = Vector3::new((col as f64 + 0.5 - k.cx) / k.fx, y, 1.0);
            for s in &cam_surfaces {
                if let Some(z) = s.depth_along(&ray) {
                    *px = px.min(z);
                }
            }
        }
    });

    let mut splat = vec![f64::INFINITY; w * h];
    for (i, &sid) in point_surfaces.iter().enumerate() {
        let p_cam = camera.extrinsics.transform_point(&cloud.position(i));
        let Some(px) = project(&k, &p_cam).pixel() else {
            continue;
        };
        if !in_bounds(px.u, px.v, &k) {
            continue;
        }
        let ray = p_cam / p_cam.z;
        let occluded = cam_surfaces
            .iter()
            .filter(|s| s.id != sid)
            .filter_map(|s| s.depth_along(&ray))
            .any(|z| z < p_cam.z * (1.0 - 1e-9));
        if occluded {
            continue;
        }
        let idx = (px.v.floor() as usize).min(h - 1) * w + (px.u.floor() as usize).min(w - 1);
        splat[idx] = splat[idx].min(p_cam.z);
    }

    let values = splat
        .iter()
        .zip(&depth)
        .map(|(&s, &a)| if s.is_finite() { s as f32 } else { a as f32 })
        .collect();
    DepthMap::new(w, h, values).expect("dimensions from intrinsics")
}

/// Channel `k` at grid cell `(r, c)` is `sin(k + 0.1 r + 0.01 c)`.
pub fn pattern_features(dim: usize, width: usize, height: usize, stride: usize) -> FeatureMap {
    FeatureMap::for_image(dim, width, height, stride, |r, c, out| {
        for (k, x) in out.iter_mut().enumerate() {
            *x = (k as f64 + 0.1 * r as f64 + 0.01 * c as f64).sin() as f32;
        }
    })
    .expect("valid feature dimensions")
}
