//! Dense depth maps and strided texture-feature maps produced by an external
//! visual encoder, plus the samplers the painter uses on them.
//!
//! Pixel-centre convention: the value stored at row `i`, column `j` sits at the
//! continuous coordinate `(u, v) = (j + 0.5, i + 0.5)`.

use crate::error::{LvicError, Result};

/// Default texture width and patch stride of the visual encoder.
pub const DEFAULT_FEATURE_DIM: usize = 16;
pub const DEFAULT_STRIDE: usize = 4;

#[inline]
pub fn is_valid_depth(z: f32) -> bool {
    z.is_finite() && z > 0.0
}

/// Row-major `height × width` metric depth along the camera z-axis.
/// Non-finite or non-positive entries mark pixels without an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(LvicError::Config(format!(
                "depth map must be non-empty ({width}x{height})"
            )));
        }
        if values.len() != width * height {
            return Err(LvicError::Config(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Bilinear depth at `(u, v)`, falling back to the containing pixel when a
    /// pixel with non-zero weight is invalid. `None` if the fallback is invalid too.
    ///
    /// Panics if `(u, v)` lies outside `[0, width) × [0, height)`.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        assert!(
            u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64,
            "depth sample ({u}, {v}) outside {}x{} map",
            self.width,
            self.height
        );
        let (c0, c1, tx) = axis_support(u, self.width);
        let (r0, r1, ty) = axis_support(v, self.height);
        let v00 = self.get(r0, c0);
        let v01 = self.get(r0, c1);
        let v10 = self.get(r1, c0);
        let v11 = self.get(r1, c1);
        if [v00, v01, v10, v11].iter().all(|&z| is_valid_depth(z)) {
            // Lerp form keeps constant fields exact.
            let (v00, v01, v10, v11) = (v00 as f64, v01 as f64, v10 as f64, v11 as f64);
            let top = v00 + tx * (v01 - v00);
            let bottom = v10 + tx * (v11 - v10);
            return Some(top + ty * (bottom - top));
        }
        let nearest = self.get(
            (v.floor() as usize).min(self.height - 1),
            (u.floor() as usize).min(self.width - 1),
        );
        is_valid_depth(nearest).then_some(nearest as f64)
    }
}

/// Lower/upper sample index and interpolation weight along one axis. When the
/// weight on the upper index is zero, the upper index collapses onto the lower
/// one so that an invalid zero-weight neighbour never contributes.
#[inline]
fn axis_support(coord: f64, len: usize) -> (usize, usize, f64) {
    let x = (coord - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = x.floor();
    let t = x - lo;
    let lo = lo as usize;
    if t == 0.0 {
        (lo, lo, 0.0)
    } else {
        (lo, (lo + 1).min(len - 1), t)
    }
}

pub fn sample_depth(m: &DepthMap, u: f64, v: f64) -> Option<f64> {
    m.sample(u, v)
}

/// `d` channels on a `grid_h × grid_w` grid, one vector per `stride × stride`
/// image patch. Stored channel-interleaved so a sample is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    stride: usize,
    grid_h: usize,
    grid_w: usize,
    cells: Vec<f32>,
}

impl FeatureMap {
    /// Builds from `dim` row-major planes of `grid_h × grid_w` values (the file layout).
    pub fn from_planes(
        dim: usize,
        grid_h: usize,
        grid_w: usize,
        stride: usize,
        planes: &[f32],
    ) -> Result<Self> {
        Self::check_dims(dim, grid_h, grid_w, stride)?;
        let cell_count = grid_h * grid_w;
        if planes.len() != dim * cell_count {
            return Err(LvicError::Config(format!(
                "feature map {dim}x{grid_h}x{grid_w} needs {} values, got {}",
                dim * cell_count,
                planes.len()
            )));
        }
        let mut cells = vec![0.0f32; planes.len()];
        for (k, plane) in planes.chunks_exact(cell_count).enumerate() {
            for (idx, &x) in plane.iter().enumerate() {
                cells[idx * dim + k] = x;
            }
        }
        Ok(FeatureMap {
            dim,
            stride,
            grid_h,
            grid_w,
            cells,
        })
    }

    /// Builds from a per-cell function `f(row, col, out)` writing `dim` values.
    pub fn from_fn(
        dim: usize,
        grid_h: usize,
        grid_w: usize,
        stride: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Result<Self> {
        Self::check_dims(dim, grid_h, grid_w, stride)?;
        let mut cells = vec![0.0f32; dim * grid_h * grid_w];
        for (idx, cell) in cells.chunks_exact_mut(dim).enumerate() {
            f(idx / grid_w, idx % grid_w, cell);
        }
        Ok(FeatureMap {
            dim,
            stride,
            grid_h,
            grid_w,
            cells,
        })
    }

    /// Grid sized for a `width × height` image: `ceil(height/stride) × ceil(width/stride)`.
    pub fn for_image(
        dim: usize,
        width: usize,
        height: usize,
        stride: usize,
        f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Result<Self> {
        if stride == 0 {
            return Err(LvicError::Config("feature stride must be >= 1".into()));
        }
        Self::from_fn(dim, height.div_ceil(stride), width.div_ceil(stride), stride, f)
    }

    fn check_dims(dim: usize, grid_h: usize, grid_w: usize, stride: usize) -> Result<()> {
        if stride == 0 {
            return Err(LvicError::Config("feature stride must be >= 1".into()));
        }
        if dim == 0 || grid_h == 0 || grid_w == 0 {
            return Err(LvicError::Config(format!(
                "feature map dimensions must be positive (d={dim}, {grid_h}x{grid_w})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    /// True when the grid is exactly the ceil-divided size of a `width × height` image.
    pub fn matches_image(&self, width: usize, height: usize) -> bool {
        self.grid_h == height.div_ceil(self.stride) && self.grid_w == width.div_ceil(self.stride)
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid_w + col) * self.dim;
        &self.cells[start..start + self.dim]
    }

    /// File layout: `dim` planes, each `grid_h × grid_w` row-major.
    pub fn to_planes(&self) -> Vec<f32> {
        let cell_count = self.grid_h * self.grid_w;
        let mut planes = vec![0.0f32; self.cells.len()];
        for (idx, cell) in self.cells.chunks_exact(self.dim).enumerate() {
            for (k, &x) in cell.iter().enumerate() {
                planes[k * cell_count + idx] = x;
            }
        }
        planes
    }

    /// Nearest-patch lookup: the feature of grid cell `(floor(v/s), floor(u/s))`.
    ///
    /// Panics if the cell falls outside the grid.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> &[f32] {
        assert!(u >= 0.0 && v >= 0.0, "feature sample ({u}, {v}) is negative");
        let s = self.stride as f64;
        let row = (v / s).floor() as usize;
        let col = (u / s).floor() as usize;
        assert!(
            row < self.grid_h && col < self.grid_w,
            "feature sample ({u}, {v}) outside {}x{} grid at stride {}",
            self.grid_h,
            self.grid_w,
            self.stride
        );
        self.cell(row, col)
    }
}

pub fn sample_feature(m: &FeatureMap, u: f64, v: f64) -> Vec<f32> {
    m.sample(u, v).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn indexed_features(dim: usize, grid_h: usize, grid_w: usize, stride: usize) -> FeatureMap {
        FeatureMap::from_fn(dim, grid_h, grid_w, stride, |r, c, out| {
            for (k, x) in out.iter_mut().enumerate() {
                *x = (k * 1_000_000 + r * 1000 + c) as f32;
            }
        })
        .unwrap()
    }

    #[test]
    fn constant_map_samples_constant() {
        let m = DepthMap::filled(16, 9, 10.0).unwrap();
        for &(u, v) in &[(0.0, 0.0), (3.3, 4.7), (15.999, 8.999), (8.0, 4.5)] {
            assert_eq!(m.sample(u, v), Some(10.0));
        }
    }

    #[test]
    fn midpoint_of_two_by_two() {
        let m = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.sample(1.0, 1.0), Some(2.5));
    }

    #[test]
    fn pixel_centre_returns_stored_value() {
        let m = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.sample(0.5, 0.5), Some(1.0));
        assert_eq!(m.sample(1.5, 1.5), Some(4.0));
        // border region clamps to the edge pixel
        assert_eq!(m.sample(0.1, 0.2), Some(1.0));
    }

    #[test]
    fn fully_invalid_map() {
        let m = DepthMap::filled(4, 4, -1.0).unwrap();
        assert_eq!(m.sample(1.3, 2.2), None);
        let m = DepthMap::filled(4, 4, f32::NAN).unwrap();
        assert_eq!(m.sample(0.0, 0.0), None);
    }

    #[test]
    fn invalid_neighbour_falls_back_to_containing_pixel() {
        // 2x2: top-right pixel invalid; query inside top-left pixel but
        // between centres so all four contribute.
        let m = DepthMap::new(2, 2, vec![5.0, f32::INFINITY, 6.0, 7.0]).unwrap();
        assert_eq!(m.sample(0.9, 0.9), Some(5.0));
        // containing pixel invalid -> no estimate
        assert_eq!(m.sample(1.2, 0.9), None);
    }

    #[test]
    fn zero_weight_invalid_neighbour_is_ignored() {
        let m = DepthMap::new(2, 2, vec![5.0, 0.0, 6.0, 0.0]).unwrap();
        // u = 0.5 sits exactly on the first column of centres
        assert_eq!(m.sample(0.5, 1.0), Some(5.5));
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_depth_sample_panics() {
        DepthMap::filled(4, 4, 1.0).unwrap().sample(4.0, 0.0);
    }

    #[test]
    fn feature_lookup_examples() {
        let f = indexed_features(2, 225, 400, 4);
        assert_eq!(f.sample(800.0, 450.0), &[112_200.0, 1_112_200.0]);
        assert_eq!(f.sample(0.0, 0.0), &[0.0, 1_000_000.0]);
        let unit = indexed_features(1, 10, 10, 1);
        assert_eq!(unit.sample(3.0, 7.0), &[7003.0]);
    }

    #[test]
    fn planes_round_trip() {
        let f = indexed_features(3, 5, 7, 2);
        let g = FeatureMap::from_planes(3, 5, 7, 2, &f.to_planes()).unwrap();
        assert_eq!(f, g);
        // plane layout: channel k, row r, col c at k*35 + r*7 + c
        assert_eq!(f.to_planes()[35 + 2 * 7 + 3], 1_002_003.0);
    }

    #[test]
    fn grid_for_image_uses_ceil() {
        let f = FeatureMap::for_image(4, 1601, 901, 4, |_, _, _| {}).unwrap();
        assert_eq!((f.grid_h(), f.grid_w()), (226, 401));
        assert!(f.matches_image(1601, 901));
        assert!(!f.matches_image(1600, 900));
        assert!(FeatureMap::for_image(4, 10, 10, 0, |_, _, _| {}).is_err());
    }

    proptest! {
        #[test]
        fn bilinear_matches_explicit_convex_combination(
            vals in prop::collection::vec(0.5f32..80.0, 6 * 5),
            u in 0.0f64..6.0, v in 0.0f64..5.0,
        ) {
            let m = DepthMap::new(6, 5, vals.clone()).unwrap();
            let got = m.sample(u, v).unwrap();
            // independent form: clamp to the centre grid, four weighted terms
            let x = (u - 0.5).clamp(0.0, 5.0);
            let y = (v - 0.5).clamp(0.0, 4.0);
            let (j0, i0) = (x.floor() as usize, y.floor() as usize);
            let (j1, i1) = ((j0 + 1).min(5), (i0 + 1).min(4));
            let (a, b) = (x - j0 as f64, y - i0 as f64);
            let at = |i: usize, j: usize| vals[i * 6 + j] as f64;
            let want = (1.0 - a) * (1.0 - b) * at(i0, j0)
                + a * (1.0 - b) * at(i0, j1)
                + (1.0 - a) * b * at(i1, j0)
                + a * b * at(i1, j1);
            prop_assert!((got - want).abs() < 1e-6);
        }

        #[test]
        fn features_constant_within_patch(
            stride in 1usize..9, r in 0usize..6, c in 0usize..6,
            du1 in 0.0f64..1.0, dv1 in 0.0f64..1.0, du2 in 0.0f64..1.0, dv2 in 0.0f64..1.0,
        ) {
            let f = indexed_features(3, 6, 6, stride);
            let s = stride as f64;
            let base_u = (c * stride) as f64;
            let base_v = (r * stride) as f64;
            let a = f.sample(base_u + du1 * s * 0.999, base_v + dv1 * s * 0.999);
            let b = f.sample(base_u + du2 * s * 0.999, base_v + dv2 * s * 0.999);
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, f.cell(r, c));
        }
    }
}
