//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use lvic::fusion::Activation;
use lvic::geometry::{Camera, CameraIntrinsics, CameraRig, Se3Transform};
use lvic::imagery::{DepthMap, FeatureMap};
use lvic::painter::{PaintLayout, PointCloud};
use lvic::FusionParams;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;

/// Random rotation from three uniform Euler angles.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let r = Rotation3::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    );
    *r.matrix()
}

pub fn random_intrinsics(rng: &mut impl Rng, width: u32, height: u32) -> CameraIntrinsics {
    let f = rng.random_range(0.5..1.5) * width as f64;
    CameraIntrinsics::new(
        f,
        f * rng.random_range(0.9..1.1),
        width as f64 * rng.random_range(0.4..0.6),
        height as f64 * rng.random_range(0.4..0.6),
        width,
        height,
    )
    .unwrap()
}

/// Cameras with random poses around the origin.
pub fn random_rig(rng: &mut impl Rng, n: usize, width: u32, height: u32) -> CameraRig {
    let cameras = (0..n)
        .map(|id| Camera {
            id,
            intrinsics: random_intrinsics(rng, width, height),
            extrinsics: Se3Transform::new(
                random_rotation(rng),
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
            )
            .unwrap(),
        })
        .collect();
    CameraRig::new(cameras).unwrap()
}

/// Random rig with random depth (some invalid) and feature maps.
pub struct RandomInputs {
    pub rig: CameraRig,
    pub depths: Vec<DepthMap>,
    pub features: Vec<FeatureMap>,
}

pub fn random_inputs(rng: &mut impl Rng, d: usize) -> RandomInputs {
    let n_cams = rng.random_range(1..=6);
    let (w, h) = (rng.random_range(16..96u32), rng.random_range(12..64u32));
    let rig = random_rig(rng, n_cams, w, h);
    let stride = rng.random_range(1..=5);
    let depths = (0..n_cams)
        .map(|_| {
            let values = (0..w * h)
                .map(|_| match rng.random_range(0..10) {
                    0 => f32::NAN,
                    1 => 0.0,
                    2 => f32::INFINITY,
                    _ => rng.random_range(0.5f32..80.0),
                })
                .collect();
            DepthMap::new(w as usize, h as usize, values).unwrap()
        })
        .collect();
    let features = (0..n_cams)
        .map(|_| {
            FeatureMap::for_image(d, w as usize, h as usize, stride, |_, _, out| {
                out.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0))
            })
            .unwrap()
        })
        .collect();
    RandomInputs { rig, depths, features }
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, c: usize) -> PointCloud {
    let values = (0..n * c)
        .map(|k| {
            if k % c < 3 {
                rng.random_range(-20.0f32..20.0)
            } else {
                rng.random_range(-1e3f32..1e3)
            }
        })
        .collect();
    PointCloud::new(c, values).unwrap()
}

/// Projection through the 3x4 matrix `K [R | t]` applied to `(x, y, z, 1)`.
/// Returns `(u, v, z_cam)`.
pub fn homogeneous_project(camera: &Camera, p: [f64; 3]) -> (f64, f64, f64) {
    let k = &camera.intrinsics;
    let kmat = [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
    let r = camera.extrinsics.rotation();
    let t = camera.extrinsics.translation();
    let mut rt = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rt[i][j] = r[(i, j)];
        }
        rt[i][3] = t[i];
    }
    let mut proj = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..4 {
            for m in 0..3 {
                proj[i][j] += kmat[i][m] * rt[m][j];
            }
        }
    }
    let x = [p[0], p[1], p[2], 1.0];
    let mut h = [0.0; 3];
    for i in 0..3 {
        for j in 0..4 {
            h[i] += proj[i][j] * x[j];
        }
    }
    (h[0] / h[2], h[1] / h[2], h[2])
}

/// Bilinear depth sample written out as the explicit 4-term combination over
/// the pixel centres surrounding `(u, v)`. Assumes every map value is valid.
pub fn bilinear_oracle(m: &DepthMap, u: f64, v: f64) -> f64 {
    let x = (u - 0.5).clamp(0.0, (m.width() - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (m.height() - 1) as f64);
    let (c0, r0) = (x.floor() as usize, y.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(m.width() - 1), (r0 + 1).min(m.height() - 1));
    let (a, b) = (x - c0 as f64, y - r0 as f64);
    (1.0 - a) * (1.0 - b) * m.get(r0, c0) as f64
        + a * (1.0 - b) * m.get(r0, c1) as f64
        + (1.0 - a) * b * m.get(r1, c0) as f64
        + a * b * m.get(r1, c1) as f64
}

/// Straight-line painter: one point at a time, one camera at a time, no
/// batching, no shared buffers. Returns row-major values and camera ids.
pub fn reference_paint(
    cloud: &PointCloud,
    rig: &CameraRig,
    depths: &[DepthMap],
    features: &[FeatureMap],
    layout: PaintLayout,
) -> (Vec<f32>, Vec<i32>) {
    let c = cloud.channels();
    let mut values = Vec::new();
    let mut ids = Vec::new();
    for i in 0..cloud.len() {
        let row = cloud.row(i);
        values.extend_from_slice(row);
        let p = Vector3::new(row[0] as f64, row[1] as f64, row[2] as f64);

        // (key, camera, u, v, z_l, z_c)
        let mut best_depth: Option<(f64, usize, f64, f64, f64, f64)> = None;
        let mut best_centre: Option<(f64, usize, f64, f64)> = None;
        for cam in rig.cameras() {
            let q = cam.extrinsics.rotation() * p + cam.extrinsics.translation();
            if q.z <= lvic::geometry::Z_EPSILON {
                continue;
            }
            let k = &cam.intrinsics;
            let u = k.fx * q.x / q.z + k.cx;
            let v = k.fy * q.y / q.z + k.cy;
            if !(u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64) {
                continue;
            }
            let centre = (u - k.cx).powi(2) + (v - k.cy).powi(2);
            if best_centre.is_none_or(|b| centre < b.0) {
                best_centre = Some((centre, cam.id, u, v));
            }
            if let Some(zc) = depths[cam.id].sample(u, v) {
                let key = (q.z - zc).abs();
                if best_depth.is_none_or(|b| key < b.0) {
                    best_depth = Some((key, cam.id, u, v, q.z, zc));
                }
            }
        }

        let block_start = values.len();
        match (best_depth, best_centre) {
            (Some((_, id, u, v, zl, zc)), _) => {
                values.extend([u as f32, v as f32, zc as f32, (zl - zc) as f32]);
                values.extend_from_slice(features[id].sample(u, v));
                ids.push(id as i32);
            }
            (None, Some((_, id, u, v))) => {
                values.extend([u as f32, v as f32, -1.0, -1.0]);
                values.extend_from_slice(features[id].sample(u, v));
                ids.push(id as i32);
            }
            (None, None) => {
                values.extend(std::iter::repeat_n(-1.0f32, layout.painted_width()));
                ids.push(-1);
            }
        }
        assert_eq!(values.len() - block_start, layout.painted_width());
        assert_eq!(values.len(), (i + 1) * (c + layout.painted_width()));
    }
    (values, ids)
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let a = x.abs().min(12.0);
    let n = ((a * 4000.0).ceil() as usize).max(2).next_multiple_of(2);
    let h = a / n as f64;
    let mut acc = pdf(0.0) + pdf(a);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    let half = acc * h / 3.0;
    if x >= 0.0 { 0.5 + half } else { 0.5 - half }
}

pub fn erf_gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let mut acc = bias;
            for c in 0..cols {
                acc += w[r * cols + c] * x[c];
            }
            acc
        })
        .collect()
}

/// Forward pass built from plain loops and an independent erf.
pub fn fusion_oracle(params: &FusionParams, row: &[f64]) -> Vec<f64> {
    let act = |v: Vec<f64>| -> Vec<f64> {
        match params.activation {
            Activation::Gelu => v.into_iter().map(erf_gelu).collect(),
            Activation::Identity => v,
        }
    };
    let d = params.texture_dim;
    let c = row.len() - (4 + d);
    let block = &row[c..];
    let painted = !(block[0] == -1.0 && block[1] == -1.0);
    let has_depth = painted && block[2] > 0.0;

    let [a1, a2, e1, e2, f] = params.layers();
    let geo = dense(&e2.weight, &e2.bias, &act(dense(&e1.weight, &e1.bias, &row[..3])));
    let tex = if painted {
        dense(&a2.weight, &a2.bias, &act(dense(&a1.weight, &a1.bias, &block[4..])))
    } else {
        vec![0.0; 4]
    };
    let cue = if has_depth { block[3] } else { 0.0 };
    let mut fused = geo;
    fused.extend(tex);
    fused.push(cue);
    dense(&f.weight, &f.bias, &fused)
}

/// A painted row with `c` original channels and texture dimension `d`.
pub fn random_painted_row(rng: &mut impl Rng, c: usize, d: usize, with_depth: bool) -> Vec<f64> {
    let mut row: Vec<f64> = (0..c).map(|_| rng.random_range(-30.0..30.0)).collect();
    row.push(rng.random_range(0.0..1600.0));
    row.push(rng.random_range(0.0..900.0));
    if with_depth {
        let zc = rng.random_range(1.0..60.0);
        row.push(zc);
        row.push(rng.random_range(-3.0..3.0));
    } else {
        row.extend([-1.0, -1.0]);
    }
    row.extend((0..d).map(|_| rng.random_range(-1.0..1.0)));
    row
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between reverse-mode gradients and central
/// differences of `upstream · forward` over every parameter and input value.
pub fn gradient_check(params: &FusionParams, row: &[f64], upstream: &[f64], h: f64, floor: f64) -> f64 {
    let layout = PaintLayout::new(params.texture_dim);
    let loss = |p: &FusionParams, r: &[f64]| -> f64 {
        p.forward(r, layout)
            .unwrap()
            .iter()
            .zip(upstream)
            .map(|(y, g)| y * g)
            .sum()
    };
    let grads = params.backward(row, layout, upstream).unwrap();
    let mut worst: f64 = 0.0;

    let flat = params.flatten();
    let analytic = grads.params.flatten();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss(&params.unflatten(&plus).unwrap(), row)
            - loss(&params.unflatten(&minus).unwrap(), row))
            / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric, floor));
    }
    for i in 0..row.len() {
        let mut plus = row.to_vec();
        let mut minus = row.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss(params, &plus) - loss(params, &minus)) / (2.0 * h);
        worst = worst.max(relative_error(grads.input[i], numeric, floor));
    }
    worst
}

/// Half the spacing between `x` and the next representable f32.
pub fn half_ulp(x: f32) -> f64 {
    let next = f32::from_bits(x.abs().to_bits() + 1);
    0.5 * (next as f64 - x.abs() as f64)
}
