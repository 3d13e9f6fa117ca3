//! Point-embedding fusion network.
//!
//! Three small blocks:
//!
//! * visual adapter: `d -> 8 -> 4`, GELU after the first layer, applied to the
//!   painted texture channels;
//! * point encoder: `3 -> 4 -> 4`, GELU after the first layer, applied to x, y, z;
//! * fusion layer: `(4 + 4 + 1) -> e` over `concat(geo, tex, delta_z)`.
//!
//! Unpainted rows feed a zero texture vector and a zero depth cue so the `-1`
//! padding never reaches the network as if it were a measurement. Painted rows
//! without a visual depth estimate (`z_c = -1`) keep their texture but also
//! feed a zero depth cue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LvicError, Result};
use crate::painter::{PaintLayout, PaintedCloud, PAD};

pub const ADAPTER_HIDDEN: usize = 8;
pub const ADAPTER_OUT: usize = 4;
pub const ENCODER_HIDDEN: usize = 4;
pub const ENCODER_OUT: usize = 4;
pub const FUSION_IN: usize = ENCODER_OUT + ADAPTER_OUT + 1;
pub const DEFAULT_EMBED_DIM: usize = 16;

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `d/dx [x Φ(x)] = Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Nonlinearity between the two layers of each block. Persisted networks are
/// always GELU; `Identity` exists for linearity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_derivative(x),
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `rows × cols` row-major
/// (`rows` outputs, `cols` inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Uniform in `±sqrt(1/fan_in)` for weights and biases.
    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / cols as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        Linear {
            rows,
            cols,
            weight: (0..rows * cols).map(|_| draw()).collect(),
            bias: (0..rows).map(|_| draw()).collect(),
        }
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let w = &self.weight[r * self.cols..(r + 1) * self.cols];
            *out = self.bias[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `Wᵀ g_y` to `g_x`.
    fn backward(&self, x: &[f64], g_y: &[f64], grad: &mut Linear, g_x: &mut [f64]) {
        g_x.fill(0.0);
        for (r, &g) in g_y.iter().enumerate() {
            grad.bias[r] += g;
            let row = r * self.cols;
            for c in 0..self.cols {
                grad.weight[row + c] += g * x[c];
                g_x[c] += g * self.weight[row + c];
            }
        }
    }

    fn shape_matches(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows
            && self.cols == cols
            && self.weight.len() == rows * cols
            && self.bias.len() == rows
    }

    fn all_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

/// Weights of the fusion network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub texture_dim: usize,
    pub embed_dim: usize,
    pub adapter_in: Linear,
    pub adapter_out: Linear,
    pub encoder_in: Linear,
    pub encoder_out: Linear,
    pub fusion: Linear,
    pub activation: Activation,
}

impl FusionParams {
    /// `(rows, cols)` of every layer in persisted order.
    pub fn layer_shapes(texture_dim: usize, embed_dim: usize) -> [(usize, usize); 5] {
        [
            (ADAPTER_HIDDEN, texture_dim),
            (ADAPTER_OUT, ADAPTER_HIDDEN),
            (ENCODER_HIDDEN, 3),
            (ENCODER_OUT, ENCODER_HIDDEN),
            (embed_dim, FUSION_IN),
        ]
    }

    pub fn zeros(texture_dim: usize, embed_dim: usize) -> Self {
        let [a, b, c, d, e] = Self::layer_shapes(texture_dim, embed_dim);
        FusionParams {
            texture_dim,
            embed_dim,
            adapter_in: Linear::zeros(a.0, a.1),
            adapter_out: Linear::zeros(b.0, b.1),
            encoder_in: Linear::zeros(c.0, c.1),
            encoder_out: Linear::zeros(d.0, d.1),
            fusion: Linear::zeros(e.0, e.1),
            activation: Activation::Gelu,
        }
    }

    /// Seeded uniform `±sqrt(1/fan_in)` initialisation.
    pub fn init(texture_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, c, d, e] = Self::layer_shapes(texture_dim, embed_dim);
        FusionParams {
            texture_dim,
            embed_dim,
            adapter_in: Linear::random(a.0, a.1, &mut rng),
            adapter_out: Linear::random(b.0, b.1, &mut rng),
            encoder_in: Linear::random(c.0, c.1, &mut rng),
            encoder_out: Linear::random(d.0, d.1, &mut rng),
            fusion: Linear::random(e.0, e.1, &mut rng),
            activation: Activation::Gelu,
        }
    }

    /// Builds from layers in persisted order, checking that shapes chain.
    pub fn from_layers(texture_dim: usize, embed_dim: usize, layers: Vec<Linear>) -> Result<Self> {
        let shapes = Self::layer_shapes(texture_dim, embed_dim);
        if layers.len() != shapes.len() {
            return Err(LvicError::Config(format!(
                "fusion network has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(rows, cols))) in layers.iter().zip(&shapes).enumerate() {
            if !layer.shape_matches(rows, cols) {
                return Err(LvicError::Config(format!(
                    "layer {i} is {}x{}, expected {rows}x{cols}",
                    layer.rows, layer.cols
                )));
            }
        }
        let [adapter_in, adapter_out, encoder_in, encoder_out, fusion]: [Linear; 5] =
            layers.try_into().expect("length checked");
        let params = FusionParams {
            texture_dim,
            embed_dim,
            adapter_in,
            adapter_out,
            encoder_in,
            encoder_out,
            fusion,
            activation: Activation::Gelu,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn layers(&self) -> [&Linear; 5] {
        [
            &self.adapter_in,
            &self.adapter_out,
            &self.encoder_in,
            &self.encoder_out,
            &self.fusion,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Linear; 5] {
        [
            &mut self.adapter_in,
            &mut self.adapter_out,
            &mut self.encoder_in,
            &mut self.encoder_out,
            &mut self.fusion,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = Self::layer_shapes(self.texture_dim, self.embed_dim);
        for (i, (layer, &(rows, cols))) in self.layers().iter().zip(&shapes).enumerate() {
            if !layer.shape_matches(rows, cols) {
                return Err(LvicError::Config(format!(
                    "layer {i} is {}x{}, expected {rows}x{cols}",
                    layer.rows, layer.cols
                )));
            }
            if !layer.all_finite() {
                return Err(LvicError::Data(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) onto this network's shapes.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(LvicError::Config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for l in out.layers_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(out)
    }

    fn check_row(&self, row_len: usize, layout: PaintLayout) -> Result<usize> {
        if layout.texture_dim != self.texture_dim {
            return Err(LvicError::Config(format!(
                "painted rows carry d={} texture channels but the network expects d={}",
                layout.texture_dim, self.texture_dim
            )));
        }
        match row_len.checked_sub(layout.painted_width()) {
            Some(c) if c >= 3 => Ok(c),
            _ => Err(LvicError::Config(format!(
                "row of {row_len} values is too short for c >= 3 and d={}",
                layout.texture_dim
            ))),
        }
    }

    fn trace(&self, row: &[f64], layout: PaintLayout) -> Result<Trace> {
        let c = self.check_row(row.len(), layout)?;
        let block = &row[c..];
        // Pixel coordinates are never negative once painted, so the (u, v)
        // markers alone decide; texture values of an unpainted row are ignored.
        let painted =
            !(block[PaintLayout::U] == PAD as f64 && block[PaintLayout::V] == PAD as f64);
        let has_depth = painted && block[PaintLayout::Z_VISUAL] > 0.0;
        let act = self.activation;

        let xyz = [row[0], row[1], row[2]];
        let mut enc_pre = [0.0; ENCODER_HIDDEN];
        self.encoder_in.forward(&xyz, &mut enc_pre);
        let enc_hidden = enc_pre.map(|x| act.apply(x));
        let mut geo = [0.0; ENCODER_OUT];
        self.encoder_out.forward(&enc_hidden, &mut geo);

        let mut adapt_pre = [0.0; ADAPTER_HIDDEN];
        let mut adapt_hidden = [0.0; ADAPTER_HIDDEN];
        let mut tex = [0.0; ADAPTER_OUT];
        if painted {
            self.adapter_in
                .forward(&block[PaintLayout::TEXTURE..], &mut adapt_pre);
            adapt_hidden = adapt_pre.map(|x| act.apply(x));
            self.adapter_out.forward(&adapt_hidden, &mut tex);
        }
        let cue = if has_depth {
            block[PaintLayout::DELTA_Z]
        } else {
            0.0
        };

        let mut fusion_in = [0.0; FUSION_IN];
        fusion_in[..ENCODER_OUT].copy_from_slice(&geo);
        fusion_in[ENCODER_OUT..ENCODER_OUT + ADAPTER_OUT].copy_from_slice(&tex);
        fusion_in[FUSION_IN - 1] = cue;
        let mut out = vec![0.0; self.embed_dim];
        self.fusion.forward(&fusion_in, &mut out);

        Ok(Trace {
            channels: c,
            painted,
            has_depth,
            xyz,
            enc_pre,
            enc_hidden,
            adapt_pre,
            adapt_hidden,
            fusion_in,
            out,
        })
    }

    /// Embedding of one painted row (`c + 3 + 1 + d` values).
    pub fn forward(&self, row: &[f64], layout: PaintLayout) -> Result<Vec<f64>> {
        Ok(self.trace(row, layout)?.out)
    }

    /// Reverse-mode gradients of `upstream · forward(row)` with respect to
    /// every parameter and every input value.
    pub fn backward(
        &self,
        row: &[f64],
        layout: PaintLayout,
        upstream: &[f64],
    ) -> Result<FusionGradients> {
        if upstream.len() != self.embed_dim {
            return Err(LvicError::Config(format!(
                "upstream gradient has {} values, embedding width is {}",
                upstream.len(),
                self.embed_dim
            )));
        }
        let t = self.trace(row, layout)?;
        let act = self.activation;
        let mut grads = FusionParams::zeros(self.texture_dim, self.embed_dim);
        grads.activation = self.activation;
        let mut input = vec![0.0; row.len()];

        let mut g_fusion_in = [0.0; FUSION_IN];
        self.fusion
            .backward(&t.fusion_in, upstream, &mut grads.fusion, &mut g_fusion_in);

        let g_geo = &g_fusion_in[..ENCODER_OUT];
        let mut g_enc_hidden = [0.0; ENCODER_HIDDEN];
        self.encoder_out
            .backward(&t.enc_hidden, g_geo, &mut grads.encoder_out, &mut g_enc_hidden);
        let mut g_enc_pre = [0.0; ENCODER_HIDDEN];
        for i in 0..ENCODER_HIDDEN {
            g_enc_pre[i] = g_enc_hidden[i] * act.derivative(t.enc_pre[i]);
        }
        let mut g_xyz = [0.0; 3];
        self.encoder_in
            .backward(&t.xyz, &g_enc_pre, &mut grads.encoder_in, &mut g_xyz);
        input[..3].copy_from_slice(&g_xyz);

        let block = t.channels;
        if t.painted {
            let g_tex = &g_fusion_in[ENCODER_OUT..ENCODER_OUT + ADAPTER_OUT];
            let mut g_adapt_hidden = [0.0; ADAPTER_HIDDEN];
            self.adapter_out.backward(
                &t.adapt_hidden,
                g_tex,
                &mut grads.adapter_out,
                &mut g_adapt_hidden,
            );
            let mut g_adapt_pre = [0.0; ADAPTER_HIDDEN];
            for i in 0..ADAPTER_HIDDEN {
                g_adapt_pre[i] = g_adapt_hidden[i] * act.derivative(t.adapt_pre[i]);
            }
            let tex_start = block + PaintLayout::TEXTURE;
            let tex_in = &row[tex_start..];
            self.adapter_in.backward(
                tex_in,
                &g_adapt_pre,
                &mut grads.adapter_in,
                &mut input[tex_start..],
            );
        }
        if t.has_depth {
            input[block + PaintLayout::DELTA_Z] = g_fusion_in[FUSION_IN - 1];
        }

        Ok(FusionGradients {
            params: grads,
            input,
        })
    }

    /// Embeds every row of a painted cloud; output is `n × e` row-major.
    pub fn embed_cloud(&self, cloud: &PaintedCloud) -> Result<Vec<f32>> {
        self.check_row(cloud.row_width(), cloud.layout())?;
        let layout = cloud.layout();
        let e = self.embed_dim;
        let mut out = vec![0.0f32; cloud.len() * e];
        out.par_chunks_mut(e.max(1))
            .zip(cloud.values().par_chunks(cloud.row_width()))
            .with_min_len(256)
            .try_for_each(|(dst, src)| -> Result<()> {
                let row: Vec<f64> = src.iter().map(|&x| x as f64).collect();
                let emb = self.trace(&row, layout)?.out;
                for (d, s) in dst.iter_mut().zip(emb) {
                    *d = s as f32;
                }
                Ok(())
            })?;
        Ok(out)
    }
}

struct Trace {
    channels: usize,
    painted: bool,
    has_depth: bool,
    xyz: [f64; 3],
    enc_pre: [f64; ENCODER_HIDDEN],
    enc_hidden: [f64; ENCODER_HIDDEN],
    adapt_pre: [f64; ADAPTER_HIDDEN],
    adapt_hidden: [f64; ADAPTER_HIDDEN],
    fusion_in: [f64; FUSION_IN],
    out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub params: FusionParams,
    /// Gradient with respect to every value of the input row.
    pub input: Vec<f64>,
}

pub fn fusion_forward(params: &FusionParams, row: &[f64], layout: PaintLayout) -> Result<Vec<f64>> {
    params.forward(row, layout)
}

pub fn fusion_backward(
    params: &FusionParams,
    row: &[f64],
    layout: PaintLayout,
    upstream: &[f64],
) -> Result<FusionGradients> {
    params.backward(row, layout, upstream)
}

/// `params - learning_rate * gradients`, elementwise.
pub fn sgd_step(
    params: &FusionParams,
    gradients: &FusionParams,
    learning_rate: f64,
) -> Result<FusionParams> {
    if params.texture_dim != gradients.texture_dim || params.embed_dim != gradients.embed_dim {
        return Err(LvicError::Config(format!(
            "gradient shape (d={}, e={}) does not match parameters (d={}, e={})",
            gradients.texture_dim, gradients.embed_dim, params.texture_dim, params.embed_dim
        )));
    }
    let mut out = params.clone();
    for (p, g) in out.layers_mut().into_iter().zip(gradients.layers()) {
        for (w, gw) in p.weight.iter_mut().zip(&g.weight) {
            *w -= learning_rate * gw;
        }
        for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
            *b -= learning_rate * gb;
        }
    }
    Ok(out)
}
