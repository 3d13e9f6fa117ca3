//! Readers and writers for every on-disk format.
//!
//! All binary formats are little-endian and start with a 4-byte magic and a
//! `u32` version (currently 1), followed by format-specific dimensions:
//!
//! | magic  | header after version                 | payload                                   |
//! |--------|--------------------------------------|-------------------------------------------|
//! | `LVDM` | `u32 width, u32 height`              | `height·width` f32, row-major             |
//! | `LVFM` | `u32 d, u32 grid_h, u32 grid_w, u32 stride` | `d` planes of `grid_h·grid_w` f32  |
//! | `LVPC` | `u32 n, u32 c, u32 d`                | `n` rows of `c+3+1+d` f32, then `n` i32 camera ids |
//! | `LVFW` | `u32 d, u32 e`                       | 5 layers: `u32 rows, u32 cols`, weights, biases (f32) |
//! | `LVEM` | `u32 n, u32 e`                       | `n·e` f32, row-major                      |
//!
//! Raw point clouds are headerless `n × c` f32 with `c` supplied by the caller.
//! Readers validate declared sizes against the actual byte count and a size
//! cap before allocating.

mod calibration;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LvicError, Result};
use crate::fusion::{Activation, FusionParams, Linear};
use crate::imagery::{DepthMap, FeatureMap};
use crate::painter::{PaintLayout, PaintedCloud, PointCloud};

pub use calibration::{
    parse_calibration, read_calibration, render_calibration, write_calibration,
    CALIBRATION_TOLERANCE,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_BYTES: u64 = 4 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoLimits {
    /// Largest file (and largest declared payload) a reader will accept.
    pub max_bytes: u64,
}

impl Default for IoLimits {
    fn default() -> Self {
        IoLimits {
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    DepthMap,
    FeatureMap,
    PaintedCloud,
    Weights,
    Embeddings,
}

impl FileKind {
    pub const ALL: [FileKind; 5] = [
        FileKind::DepthMap,
        FileKind::FeatureMap,
        FileKind::PaintedCloud,
        FileKind::Weights,
        FileKind::Embeddings,
    ];

    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            FileKind::DepthMap => b"LVDM",
            FileKind::FeatureMap => b"LVFM",
            FileKind::PaintedCloud => b"LVPC",
            FileKind::Weights => b"LVFW",
            FileKind::Embeddings => b"LVEM",
        }
    }

    pub fn name(self) -> &'static str {
        std::str::from_utf8(self.magic()).expect("ascii magic")
    }

    pub fn detect(bytes: &[u8]) -> Option<FileKind> {
        let head = bytes.get(..4)?;
        FileKind::ALL.into_iter().find(|k| k.magic() == head)
    }
}

/// Per-point embeddings, `n × e` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub embed_dim: usize,
    pub values: Vec<f32>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.embed_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(kind: FileKind, payload_hint: usize) -> Self {
        let mut buf = Vec::with_capacity(8 + payload_hint);
        buf.extend_from_slice(kind.magic());
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Encoder { buf }
    }

    fn u32(&mut self, x: usize) -> Result<()> {
        let x = u32::try_from(x)
            .map_err(|_| LvicError::Config(format!("dimension {x} does not fit in u32")))?;
        self.buf.extend_from_slice(&x.to_le_bytes());
        Ok(())
    }

    fn f32s(&mut self, xs: &[f32]) {
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn f64s_as_f32(&mut self, xs: &[f64]) {
        for &x in xs {
            self.buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }

    fn i32s(&mut self, xs: &[i32]) {
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    limits: IoLimits,
}

impl<'a> Decoder<'a> {
    fn open(bytes: &'a [u8], kind: FileKind, limits: IoLimits) -> Result<Self> {
        if bytes.len() as u64 > limits.max_bytes {
            return Err(LvicError::format(
                "file",
                format!("{} bytes exceeds the {} byte cap", bytes.len(), limits.max_bytes),
            ));
        }
        let mut d = Decoder {
            bytes,
            pos: 0,
            limits,
        };
        let magic = d.take("magic", 4)?;
        if magic != kind.magic() {
            return Err(LvicError::format(
                "magic",
                format!(
                    "expected {:?}, found {:?}",
                    kind.name(),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = d.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(LvicError::format(
                "version",
                format!("unsupported version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        Ok(d)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, field: &str, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(LvicError::format(
                field,
                format!(
                    "truncated: needs {len} bytes at offset {}, {} remain",
                    self.pos,
                    self.remaining()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(field, 4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn dim(&mut self, field: &str) -> Result<usize> {
        Ok(self.u32(field)? as usize)
    }

    fn positive_dim(&mut self, field: &str) -> Result<usize> {
        let x = self.dim(field)?;
        if x == 0 {
            return Err(LvicError::format(field, "must be positive"));
        }
        Ok(x)
    }

    /// Checks that the rest of the file is exactly `count` elements of
    /// `elem_size` bytes, before anything is allocated.
    fn expect_payload(&self, field: &str, counts: &[u64], elem_size: u64) -> Result<()> {
        let declared = counts
            .iter()
            .try_fold(elem_size, |acc, &c| acc.checked_mul(c))
            .filter(|&b| b <= self.limits.max_bytes)
            .ok_or_else(|| {
                LvicError::format(
                    field,
                    format!("declared size exceeds the {} byte cap", self.limits.max_bytes),
                )
            })?;
        if declared != self.remaining() as u64 {
            return Err(LvicError::format(
                field,
                format!(
                    "declared payload is {declared} bytes but {} remain",
                    self.remaining()
                ),
            ));
        }
        Ok(())
    }

    fn f32s(&mut self, field: &str, count: usize) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| LvicError::format(field, "size overflow"))?;
        let b = self.take(field, len)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn i32s(&mut self, field: &str, count: usize) -> Result<Vec<i32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| LvicError::format(field, "size overflow"))?;
        let b = self.take(field, len)?;
        Ok(b.chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(LvicError::format(
                "file",
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub fn encode_depth(m: &DepthMap) -> Result<Vec<u8>> {
    let mut e = Encoder::new(FileKind::DepthMap, m.values().len() * 4 + 8);
    e.u32(m.width())?;
    e.u32(m.height())?;
    e.f32s(m.values());
    Ok(e.buf)
}

pub fn decode_depth(bytes: &[u8], limits: IoLimits) -> Result<DepthMap> {
    let mut d = Decoder::open(bytes, FileKind::DepthMap, limits)?;
    let width = d.positive_dim("width")?;
    let height = d.positive_dim("height")?;
    d.expect_payload("values", &[width as u64, height as u64], 4)?;
    let values = d.f32s("values", width * height)?;
    d.finish()?;
    DepthMap::new(width, height, values)
}

pub fn encode_features(m: &FeatureMap) -> Result<Vec<u8>> {
    let planes = m.to_planes();
    let mut e = Encoder::new(FileKind::FeatureMap, planes.len() * 4 + 16);
    e.u32(m.dim())?;
    e.u32(m.grid_h())?;
    e.u32(m.grid_w())?;
    e.u32(m.stride())?;
    e.f32s(&planes);
    Ok(e.buf)
}

pub fn decode_features(bytes: &[u8], limits: IoLimits) -> Result<FeatureMap> {
    let mut d = Decoder::open(bytes, FileKind::FeatureMap, limits)?;
    let dim = d.positive_dim("d")?;
    let grid_h = d.positive_dim("grid_h")?;
    let grid_w = d.positive_dim("grid_w")?;
    let stride = d.positive_dim("stride")?;
    d.expect_payload("values", &[dim as u64, grid_h as u64, grid_w as u64], 4)?;
    let planes = d.f32s("values", dim * grid_h * grid_w)?;
    d.finish()?;
    FeatureMap::from_planes(dim, grid_h, grid_w, stride, &planes)
}

pub fn encode_painted(p: &PaintedCloud) -> Result<Vec<u8>> {
    let mut e = Encoder::new(FileKind::PaintedCloud, (p.values().len() + p.len()) * 4 + 12);
    e.u32(p.len())?;
    e.u32(p.channels())?;
    e.u32(p.layout().texture_dim)?;
    e.f32s(p.values());
    e.i32s(p.camera_ids());
    Ok(e.buf)
}

pub fn decode_painted(bytes: &[u8], limits: IoLimits) -> Result<PaintedCloud> {
    let mut d = Decoder::open(bytes, FileKind::PaintedCloud, limits)?;
    let n = d.dim("n")?;
    let c = d.dim("c")?;
    if c < 3 {
        return Err(LvicError::format("c", format!("must be at least 3, got {c}")));
    }
    let dim = d.dim("d")?;
    let layout = PaintLayout::new(dim);
    let width = layout.row_width(c) as u64;
    // rows plus one camera id per point
    let per_point = width
        .checked_add(1)
        .ok_or_else(|| LvicError::format("d", "size overflow"))?;
    d.expect_payload("rows", &[n as u64, per_point], 4)?;
    let values = d.f32s("rows", n * layout.row_width(c))?;
    let camera_ids = d.i32s("camera_ids", n)?;
    d.finish()?;
    if let Some(i) = camera_ids.iter().position(|&id| id < -1) {
        return Err(LvicError::Data(format!(
            "point {i} has camera id {}",
            camera_ids[i]
        )));
    }
    PaintedCloud::new(c, layout, values, camera_ids)
}

pub fn encode_weights(p: &FusionParams) -> Result<Vec<u8>> {
    p.validate()?;
    if p.activation != Activation::Gelu {
        return Err(LvicError::Config(
            "only GELU networks can be persisted".into(),
        ));
    }
    let mut e = Encoder::new(FileKind::Weights, p.num_params() * 4 + 48);
    e.u32(p.texture_dim)?;
    e.u32(p.embed_dim)?;
    for layer in p.layers() {
        e.u32(layer.rows)?;
        e.u32(layer.cols)?;
        e.f64s_as_f32(&layer.weight);
        e.f64s_as_f32(&layer.bias);
    }
    Ok(e.buf)
}

pub fn decode_weights(bytes: &[u8], limits: IoLimits) -> Result<FusionParams> {
    let mut d = Decoder::open(bytes, FileKind::Weights, limits)?;
    let dim = d.positive_dim("d")?;
    let embed = d.positive_dim("e")?;
    let shapes = FusionParams::layer_shapes(dim, embed);
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        let got_rows = d.dim(&format!("layer {i} rows"))?;
        let got_cols = d.dim(&format!("layer {i} cols"))?;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(LvicError::format(
                format!("layer {i} shape"),
                format!("expected {rows}x{cols}, found {got_rows}x{got_cols}"),
            ));
        }
        let weight = d.f32s(&format!("layer {i} weights"), rows * cols)?;
        let bias = d.f32s(&format!("layer {i} biases"), rows)?;
        layers.push(Linear {
            rows,
            cols,
            weight: weight.into_iter().map(f64::from).collect(),
            bias: bias.into_iter().map(f64::from).collect(),
        });
    }
    d.finish()?;
    FusionParams::from_layers(dim, embed, layers)
}

pub fn encode_embeddings(m: &Embeddings) -> Result<Vec<u8>> {
    if m.embed_dim == 0 || !m.values.len().is_multiple_of(m.embed_dim) {
        return Err(LvicError::Config(format!(
            "{} values do not split into rows of {}",
            m.values.len(),
            m.embed_dim
        )));
    }
    let mut e = Encoder::new(FileKind::Embeddings, m.values.len() * 4 + 8);
    e.u32(m.len())?;
    e.u32(m.embed_dim)?;
    e.f32s(&m.values);
    Ok(e.buf)
}

pub fn decode_embeddings(bytes: &[u8], limits: IoLimits) -> Result<Embeddings> {
    let mut d = Decoder::open(bytes, FileKind::Embeddings, limits)?;
    let n = d.dim("n")?;
    let embed_dim = d.positive_dim("e")?;
    d.expect_payload("values", &[n as u64, embed_dim as u64], 4)?;
    let values = d.f32s("values", n * embed_dim)?;
    d.finish()?;
    Ok(Embeddings { embed_dim, values })
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(cloud.values().len() * 4);
    for x in cloud.values() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_cloud(bytes: &[u8], channels: usize) -> Result<PointCloud> {
    if channels < 3 {
        return Err(LvicError::Config(format!(
            "point clouds need at least 3 channels, got {channels}"
        )));
    }
    let row_bytes = 4 * channels;
    if !bytes.len().is_multiple_of(row_bytes) {
        return Err(LvicError::format(
            "length",
            format!(
                "{} bytes is not a multiple of {row_bytes} (4 bytes x {channels} channels)",
                bytes.len()
            ),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    PointCloud::new(channels, values)
}

/// Reads a whole file after checking its size against the cap.
pub fn read_bytes(path: &Path, limits: IoLimits) -> Result<Vec<u8>> {
    let meta = fs::metadata(path).map_err(|e| LvicError::io(path, e))?;
    if meta.len() > limits.max_bytes {
        return Err(LvicError::format(
            "file",
            format!("{} bytes exceeds the {} byte cap", meta.len(), limits.max_bytes),
        )
        .in_file(path));
    }
    fs::read(path).map_err(|e| LvicError::io(path, e))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LvicError::io(dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| LvicError::io(tmp.path(), e))?;
    tmp.persist(path)
        .map_err(|e| LvicError::io(path, e.error))?;
    Ok(())
}

fn read_with<T>(
    path: &Path,
    limits: IoLimits,
    decode: impl FnOnce(&[u8], IoLimits) -> Result<T>,
) -> Result<T> {
    let bytes = read_bytes(path, limits)?;
    decode(&bytes, limits).map_err(|e| e.in_file(path))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    read_with(path, IoLimits::default(), decode_depth)
}

pub fn write_depth(path: &Path, m: &DepthMap) -> Result<()> {
    write_atomic(path, &encode_depth(m)?)
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    read_with(path, IoLimits::default(), decode_features)
}

pub fn write_features(path: &Path, m: &FeatureMap) -> Result<()> {
    write_atomic(path, &encode_features(m)?)
}

pub fn read_painted(path: &Path) -> Result<PaintedCloud> {
    read_with(path, IoLimits::default(), decode_painted)
}

pub fn write_painted(path: &Path, p: &PaintedCloud) -> Result<()> {
    write_atomic(path, &encode_painted(p)?)
}

pub fn read_weights(path: &Path) -> Result<FusionParams> {
    read_with(path, IoLimits::default(), decode_weights)
}

pub fn write_weights(path: &Path, p: &FusionParams) -> Result<()> {
    write_atomic(path, &encode_weights(p)?)
}

pub fn read_embeddings(path: &Path) -> Result<Embeddings> {
    read_with(path, IoLimits::default(), decode_embeddings)
}

pub fn write_embeddings(path: &Path, m: &Embeddings) -> Result<()> {
    write_atomic(path, &encode_embeddings(m)?)
}

pub fn read_cloud(path: &Path, channels: usize) -> Result<PointCloud> {
    let bytes = read_bytes(path, IoLimits::default())?;
    decode_cloud(&bytes, channels).map_err(|e| e.in_file(path))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_cloud(cloud))
}

/// Summary of a successfully validated artifact file.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FileSummary {
    pub kind: &'static str,
    /// Header dimensions by name, in header order.
    pub dims: Vec<(&'static str, usize)>,
}

/// Fully decodes a headered artifact file, reporting its kind and dimensions.
pub fn validate_bytes(bytes: &[u8], limits: IoLimits) -> Result<FileSummary> {
    let kind = FileKind::detect(bytes).ok_or_else(|| {
        LvicError::format(
            "magic",
            format!(
                "unknown magic {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            ),
        )
    })?;
    let dims = match kind {
        FileKind::DepthMap => {
            let m = decode_depth(bytes, limits)?;
            vec![("width", m.width()), ("height", m.height())]
        }
        FileKind::FeatureMap => {
            let m = decode_features(bytes, limits)?;
            vec![
                ("d", m.dim()),
                ("grid_h", m.grid_h()),
                ("grid_w", m.grid_w()),
                ("stride", m.stride()),
            ]
        }
        FileKind::PaintedCloud => {
            let p = decode_painted(bytes, limits)?;
            check_padding(&p)?;
            vec![
                ("n", p.len()),
                ("c", p.channels()),
                ("d", p.layout().texture_dim),
            ]
        }
        FileKind::Weights => {
            let p = decode_weights(bytes, limits)?;
            vec![("d", p.texture_dim), ("e", p.embed_dim)]
        }
        FileKind::Embeddings => {
            let m = decode_embeddings(bytes, limits)?;
            vec![("n", m.len()), ("e", m.embed_dim)]
        }
    };
    Ok(FileSummary {
        kind: kind.name(),
        dims,
    })
}

/// Unpainted rows must be fully padded; painted rows must carry pixel coordinates.
fn check_padding(p: &PaintedCloud) -> Result<()> {
    for (i, &id) in p.camera_ids().iter().enumerate() {
        let block = p.painted_block(i);
        let padded = block.iter().all(|&x| x == crate::painter::PAD);
        if id == -1 && !padded {
            return Err(LvicError::Data(format!(
                "point {i} has no camera but carries painted values"
            )));
        }
        if id >= 0 && (block[PaintLayout::U] < 0.0 || block[PaintLayout::V] < 0.0) {
            return Err(LvicError::Data(format!(
                "point {i} is painted from camera {id} with negative pixel coordinates"
            )));
        }
    }
    Ok(())
}
