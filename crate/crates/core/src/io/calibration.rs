//! Calibration JSON:
//!
//! ```json
//! { "cameras": [ { "id": 0, "width": 1600, "height": 900,
//!                  "fx": 1266.4, "fy": 1266.4, "cx": 816.3, "cy": 491.5,
//!                  "R": [9 floats, row-major LiDAR->camera rotation],
//!                  "t": [3 floats, metres] } ] }
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic, IoLimits};
use crate::error::{LvicError, Result};
use crate::geometry::{
    orthonormality_error, Camera, CameraIntrinsics, CameraRig, Se3Transform, ROTATION_TOLERANCE,
};

/// Rotations further than this from orthonormal are rejected on load.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    cameras: Vec<CameraDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    id: usize,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    rotation: [f64; 9],
    t: [f64; 3],
}

/// Nearest rotation to `r` (polar decomposition through the SVD).
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    u * v_t
}

fn camera_from_doc(doc: &CameraDoc) -> Result<Camera> {
    let rotation = Matrix3::from_row_slice(&doc.rotation);
    let translation = Vector3::from(doc.t);
    let err = |e: LvicError| LvicError::Calibration(format!("camera {}: {e}", doc.id));
    // Accept small drift from text round-off, then snap back onto SO(3).
    Se3Transform::with_tolerance(rotation, translation, CALIBRATION_TOLERANCE).map_err(err)?;
    let rotation = if orthonormality_error(&rotation) > ROTATION_TOLERANCE {
        nearest_rotation(&rotation)
    } else {
        rotation
    };
    Ok(Camera {
        id: doc.id,
        intrinsics: CameraIntrinsics::new(doc.fx, doc.fy, doc.cx, doc.cy, doc.width, doc.height)
            .map_err(err)?,
        extrinsics: Se3Transform::new(rotation, translation).map_err(err)?,
    })
}

pub fn parse_calibration(text: &str) -> Result<CameraRig> {
    let doc: CalibrationDoc = serde_json::from_str(text).map_err(|e| {
        LvicError::format(
            "calibration",
            format!("line {} column {}: {e}", e.line(), e.column()),
        )
    })?;
    if doc.cameras.is_empty() {
        return Err(LvicError::Calibration("no cameras".into()));
    }
    let cameras = doc
        .cameras
        .iter()
        .map(camera_from_doc)
        .collect::<Result<Vec<_>>>()?;
    CameraRig::new(cameras)
}

pub fn render_calibration(rig: &CameraRig) -> String {
    let doc = CalibrationDoc {
        cameras: rig
            .cameras()
            .iter()
            .map(|c| {
                let r = c.extrinsics.rotation();
                let mut rotation = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        rotation[i * 3 + j] = r[(i, j)];
                    }
                }
                let t = c.extrinsics.translation();
                CameraDoc {
                    id: c.id,
                    width: c.intrinsics.width,
                    height: c.intrinsics.height,
                    fx: c.intrinsics.fx,
                    fy: c.intrinsics.fy,
                    cx: c.intrinsics.cx,
                    cy: c.intrinsics.cy,
                    rotation,
                    t: [t.x, t.y, t.z],
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("calibration serialises")
}

pub fn read_calibration(path: &Path) -> Result<CameraRig> {
    let bytes = read_bytes(path, IoLimits::default())?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| LvicError::format("calibration", e.to_string()).in_file(path))?;
    parse_calibration(text).map_err(|e| e.in_file(path))
}

pub fn write_calibration(path: &Path, rig: &CameraRig) -> Result<()> {
    write_atomic(path, render_calibration(rig).as_bytes())
}
