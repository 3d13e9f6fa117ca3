//! Rigid transforms and pinhole projection between the LiDAR frame and camera frames.
//!
//! Camera frames are z-forward, x-right, y-down. Pixel coordinates have their
//! origin at the top-left image corner with `u` running along the width.

use nalgebra::{Matrix3, Vector3};

use crate::error::{LvicError, Result};

/// Points with camera-frame depth at or below this value cannot image.
pub const Z_EPSILON: f64 = 1e-6;

/// Orthonormality tolerance for rotations held by [`Se3Transform`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Largest deviation of `r` from a proper rotation: max over the entries of
/// `RᵀR - I` and `det(R) - 1`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let gram_err = gram.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    gram_err.max((r.determinant() - 1.0).abs())
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Transform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Se3Transform {
    pub fn identity() -> Self {
        Se3Transform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(LvicError::Calibration(
                "transform has non-finite entries".into(),
            ));
        }
        let err = orthonormality_error(&rotation);
        if err > tolerance {
            return Err(LvicError::Calibration(format!(
                "rotation is not orthonormal (error {err:.3e} > {tolerance:.0e})"
            )));
        }
        Ok(Se3Transform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Se3Transform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Products of valid rotations stay orthonormal to rounding error, so
    /// composition does not re-validate.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Se3Transform {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Se3Transform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Se3Transform) -> Self {
        Se3Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl Default for Se3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn transform_point(t: &Se3Transform, p: &Vector3<f64>) -> Vector3<f64> {
    t.transform_point(p)
}

/// Pinhole intrinsics. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(LvicError::Calibration(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(LvicError::Calibration(format!(
                "image size must be positive ({}x{})",
                self.width, self.height
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(LvicError::Calibration(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(PixelCoord),
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<PixelCoord> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

#[inline]
pub fn project(k: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Projection {
    if p_cam.z <= Z_EPSILON {
        return Projection::BehindCamera;
    }
    Projection::Pixel(PixelCoord {
        u: k.fx * p_cam.x / p_cam.z + k.cx,
        v: k.fy * p_cam.y / p_cam.z + k.cy,
    })
}

/// Inverse of [`project`] for a known camera-frame depth.
pub fn back_project(k: &CameraIntrinsics, px: PixelCoord, depth: f64) -> Vector3<f64> {
    Vector3::new(
        (px.u - k.cx) * depth / k.fx,
        (px.v - k.cy) * depth / k.fy,
        depth,
    )
}

#[inline]
pub fn in_bounds(u: f64, v: f64, k: &CameraIntrinsics) -> bool {
    u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    /// LiDAR frame -> camera frame.
    pub extrinsics: Se3Transform,
}

impl Camera {
    /// Camera centre expressed in the LiDAR frame.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsics.inverse().translation
    }
}

/// Cameras ordered by id; ids are exactly `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(mut cameras: Vec<Camera>) -> Result<Self> {
        cameras.sort_by_key(|c| c.id);
        for (idx, cam) in cameras.iter().enumerate() {
            if cam.id != idx {
                return Err(LvicError::Calibration(format!(
                    "camera ids must be unique and contiguous from 0; expected id {idx}, found {}",
                    cam.id
                )));
            }
            cam.intrinsics
                .validate()
                .map_err(|e| LvicError::Calibration(format!("camera {}: {e}", cam.id)))?;
        }
        Ok(CameraRig { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Camera> {
        self.cameras.get(id)
    }

    /// Same intrinsics, extrinsics replaced camera by camera.
    pub fn map_extrinsics(&self, mut f: impl FnMut(&Camera) -> Se3Transform) -> CameraRig {
        CameraRig {
            cameras: self
                .cameras
                .iter()
                .map(|c| Camera {
                    extrinsics: f(c),
                    ..c.clone()
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nuscenes_like() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 800.0, 450.0, 1600, 900).unwrap()
    }

    fn rotation_from(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    #[test]
    fn identity_transform() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&Se3Transform::identity(), &p), p);
    }

    #[test]
    fn pure_translation() {
        let t = Se3Transform::from_translation(Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(t.transform_point(&Vector3::zeros()), Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let t = Se3Transform::new(r, Vector3::zeros()).unwrap();
        assert_eq!(t.transform_point(&Vector3::new(1.0, 0.0, 0.0)), Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.001;
        assert!(matches!(
            Se3Transform::new(r, Vector3::zeros()),
            Err(LvicError::Calibration(_))
        ));
        // reflection: orthogonal but det = -1
        let refl = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Se3Transform::new(refl, Vector3::zeros()).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = nuscenes_like();
        assert_eq!(
            project(&k, &Vector3::new(0.0, 0.0, 10.0)),
            Projection::Pixel(PixelCoord { u: 800.0, v: 450.0 })
        );
        assert_eq!(
            project(&k, &Vector3::new(1.0, 0.0, 10.0)),
            Projection::Pixel(PixelCoord { u: 900.0, v: 450.0 })
        );
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, -5.0)), Projection::BehindCamera);
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, Z_EPSILON)), Projection::BehindCamera);
    }

    #[test]
    fn bounds_are_half_open() {
        let k = nuscenes_like();
        assert!(in_bounds(0.0, 0.0, &k));
        assert!(!in_bounds(1600.0, 450.0, &k));
        assert!(in_bounds(799.5, 899.999, &k));
        assert!(!in_bounds(-1e-9, 10.0, &k));
        assert!(!in_bounds(10.0, 900.0, &k));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.9, 4, 4).is_ok());
    }

    #[test]
    fn rig_ids_must_be_contiguous() {
        let k = nuscenes_like();
        let cam = |id| Camera {
            id,
            intrinsics: k,
            extrinsics: Se3Transform::identity(),
        };
        let rig = CameraRig::new(vec![cam(1), cam(0)]).unwrap();
        assert_eq!(rig.cameras()[0].id, 0);
        assert!(CameraRig::new(vec![cam(0), cam(2)]).is_err());
        assert!(CameraRig::new(vec![cam(0), cam(0)]).is_err());
    }

    fn arb_transform() -> impl Strategy<Value = Se3Transform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -std::f64::consts::PI..std::f64::consts::PI,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_filter("axis must be non-degenerate", |(a, _, _)| {
                Vector3::from(*a).norm() > 1e-3
            })
            .prop_map(|(axis, angle, t)| {
                Se3Transform::new(rotation_from(axis, angle), Vector3::from(t)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn inverse_round_trip(t in arb_transform(), p in prop::array::uniform3(-100.0f64..100.0)) {
            let p = Vector3::from(p);
            let back = t.inverse().transform_point(&t.transform_point(&p));
            prop_assert!((back - p).amax() < 1e-9);
        }

        #[test]
        fn back_projection_round_trip(
            x in -50.0f64..50.0, y in -50.0f64..50.0, z in 0.01f64..200.0,
        ) {
            let k = nuscenes_like();
            let p = Vector3::new(x, y, z);
            let px = project(&k, &p).pixel().unwrap();
            prop_assert!((back_project(&k, px, z) - p).amax() < 1e-9);
        }

        #[test]
        fn projection_is_scale_covariant(
            x in -50.0f64..50.0, y in -50.0f64..50.0, z in 0.1f64..100.0, alpha in 0.01f64..100.0,
        ) {
            let k = nuscenes_like();
            let a = project(&k, &Vector3::new(x, y, z)).pixel().unwrap();
            let b = project(&k, &Vector3::new(alpha * x, alpha * y, alpha * z)).pixel().unwrap();
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }

        #[test]
        fn composition_matches_sequential_application(
            a in arb_transform(), b in arb_transform(), p in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let p = Vector3::from(p);
            let lhs = a.compose(&b).transform_point(&p);
            let rhs = a.transform_point(&b.transform_point(&p));
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }
    }
}
