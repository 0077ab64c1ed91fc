//! The toy conditional denoiser: a small convolutional encoder-decoder
//! over three resolutions with skip connections, conditioned on a
//! sinusoidal timestep embedding plus a linearly mapped prompt embedding.
//!
//! Convolutions run as im2col + GEMM. The backward pass is hand-written
//! layer by layer and verified against central finite differences (see the
//! gradient tests at the bottom), which is why every forward helper
//! returns the activations the reverse pass needs.

use ndarray::{Array1, Array2, Array3, s};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{EmbeddingTable, PromptEmbedding};
use crate::diffusion::{sc, Denoiser, Scalar};
use crate::error::{Error, Result};

/// Architecture hyperparameters. `channels` are the widths at full, half
/// and quarter resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub canvas: usize,
    pub in_channels: usize,
    pub channels: [usize; 3],
    pub embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { canvas: 64, in_channels: 3, channels: [16, 48, 128], embed_dim: 64 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 8 || self.canvas % 4 != 0 {
            return Err(Error::invalid(format!(
                "canvas {} must be at least 8 and divisible by 4",
                self.canvas
            )));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::invalid(format!("embed_dim {} must be even and >= 2", self.embed_dim)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// elementwise pieces
// ---------------------------------------------------------------------------

fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

fn silu_grad<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// Sinusoidal timestep embedding of even dimension `dim`.
fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Array1<T> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (-(10_000.0f64).ln() * exponent).exp();
        let arg = t as f64 * freq;
        out[k] = sc(arg.sin());
        out[half + k] = sc(arg.cos());
    }
    out
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero padding 1, stored as a GEMM-ready
/// `(c_out, c_in * 9)` matrix.
#[derive(Debug, Clone)]
struct Conv3x3<T> {
    w: Array2<T>,
    b: Array1<T>,
    c_in: usize,
    c_out: usize,
}

impl<T: Scalar> Conv3x3<T> {
    fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        let std: T = sc((2.0 / (c_in * 9) as f64).sqrt());
        let w = Array2::from_shape_fn((c_out, c_in * 9), |_| {
            let n: T = StandardNormal.sample(rng);
            n * std
        });
        Conv3x3 { w, b: Array1::zeros(c_out), c_in, c_out }
    }

    fn zeros(c_in: usize, c_out: usize) -> Self {
        Conv3x3 { w: Array2::zeros((c_out, c_in * 9)), b: Array1::zeros(c_out), c_in, c_out }
    }

    fn im2col(&self, x: &Array3<T>) -> Array2<T> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.c_in);
        let mut col = Array2::zeros((c * 9, h * w));
        for ci in 0..c {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let r = ci * 9 + ky * 3 + kx;
                    let mut row = col.row_mut(r);
                    let dst = row.as_slice_mut().expect("standard layout");
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue; // stays zero
                        }
                        let src_row = x.slice(s![ci, sy as usize, ..]);
                        let src = src_row.as_slice().expect("standard layout");
                        let d = &mut dst[y * w..(y + 1) * w];
                        match kx {
                            0 => d[1..].copy_from_slice(&src[..w - 1]),
                            1 => d.copy_from_slice(src),
                            _ => d[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, d_col: &Array2<T>, h: usize, w: usize) -> Array3<T> {
        let c = self.c_in;
        let mut dx = Array3::zeros((c, h, w));
        for ci in 0..c {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let r = ci * 9 + ky * 3 + kx;
                    let row = d_col.row(r);
                    let src = row.as_slice().expect("standard layout");
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let mut dst_row = dx.slice_mut(s![ci, sy as usize, ..]);
                        let dst = dst_row.as_slice_mut().expect("standard layout");
                        let srow = &src[y * w..(y + 1) * w];
                        match kx {
                            0 => {
                                for i in 0..w - 1 {
                                    dst[i] = dst[i] + srow[i + 1];
                                }
                            }
                            1 => {
                                for i in 0..w {
                                    dst[i] = dst[i] + srow[i];
                                }
                            }
                            _ => {
                                for i in 0..w - 1 {
                                    dst[i + 1] = dst[i + 1] + srow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let (_, h, w) = x.dim();
        let col = self.im2col(x);
        let mut y = self.w.dot(&col);
        for (mut row, b) in y.rows_mut().into_iter().zip(self.b.iter()) {
            row.mapv_inplace(|v| v + *b);
        }
        let (vec, _) = y.into_raw_vec_and_offset();
        Array3::from_shape_vec((self.c_out, h, w), vec).expect("gemm output is dense")
    }

    /// Returns `d_x` and accumulates `d_w`, `d_b` into `grads`.
    fn backward(&self, x: &Array3<T>, d_y: &Array3<T>, grads: &mut Conv3x3<T>) -> Array3<T> {
        let (_, h, w) = x.dim();
        let dy_flat = d_y
            .view()
            .into_shape_with_order((self.c_out, h * w))
            .expect("standard layout");
        let col = self.im2col(x);
        grads.w = &grads.w + &dy_flat.dot(&col.t());
        for (o, row) in dy_flat.rows().into_iter().enumerate() {
            grads.b[o] = grads.b[o] + row.sum();
        }
        let d_col = self.w.t().dot(&dy_flat);
        self.col2im(&d_col, h, w)
    }
}

#[derive(Debug, Clone)]
struct Linear<T> {
    w: Array2<T>,
    b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    fn init<R: Rng>(dim_in: usize, dim_out: usize, rng: &mut R) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        let std: T = sc((1.0 / dim_in as f64).sqrt());
        let w = Array2::from_shape_fn((dim_out, dim_in), |_| {
            let n: T = StandardNormal.sample(rng);
            n * std
        });
        Linear { w, b: Array1::zeros(dim_out) }
    }

    fn zeros(dim_in: usize, dim_out: usize) -> Self {
        Linear { w: Array2::zeros((dim_out, dim_in)), b: Array1::zeros(dim_out) }
    }

    fn forward(&self, x: &Array1<T>) -> Array1<T> {
        self.w.dot(x) + &self.b
    }

    /// Returns `d_x` and accumulates parameter gradients.
    fn backward(&self, x: &Array1<T>, d_y: &Array1<T>, grads: &mut Linear<T>) -> Array1<T> {
        for (o, dy) in d_y.iter().enumerate() {
            let mut row = grads.w.row_mut(o);
            row.zip_mut_with(x, |g, xv| *g = *g + *dy * *xv);
            grads.b[o] = grads.b[o] + *dy;
        }
        self.w.t().dot(d_y)
    }
}

fn avg_pool2<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let quarter: T = sc(0.25);
    let mut out = Array3::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let sum = x[[ci, 2 * y, 2 * xx]]
                    + x[[ci, 2 * y, 2 * xx + 1]]
                    + x[[ci, 2 * y + 1, 2 * xx]]
                    + x[[ci, 2 * y + 1, 2 * xx + 1]];
                out[[ci, y, xx]] = sum * quarter;
            }
        }
    }
    out
}

fn avg_pool2_backward<T: Scalar>(d_out: &Array3<T>) -> Array3<T> {
    let (c, h, w) = d_out.dim();
    let quarter: T = sc(0.25);
    let mut dx = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let g = d_out[[ci, y, xx]] * quarter;
                dx[[ci, 2 * y, 2 * xx]] = g;
                dx[[ci, 2 * y, 2 * xx + 1]] = g;
                dx[[ci, 2 * y + 1, 2 * xx]] = g;
                dx[[ci, 2 * y + 1, 2 * xx + 1]] = g;
            }
        }
    }
    dx
}

fn upsample2<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[[ci, y, xx]] = x[[ci, y / 2, xx / 2]];
            }
        }
    }
    out
}

fn upsample2_backward<T: Scalar>(d_out: &Array3<T>) -> Array3<T> {
    let (c, h2, w2) = d_out.dim();
    let mut dx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let idx = [ci, y / 2, xx / 2];
                dx[idx] = dx[idx] + d_out[[ci, y, xx]];
            }
        }
    }
    dx
}

fn concat_channels<T: Scalar>(a: &Array3<T>, b: &Array3<T>) -> Array3<T> {
    let (ca, h, w) = a.dim();
    let (cb, _, _) = b.dim();
    let mut out = Array3::zeros((ca + cb, h, w));
    out.slice_mut(s![..ca, .., ..]).assign(a);
    out.slice_mut(s![ca.., .., ..]).assign(b);
    out
}

fn split_channels<T: Scalar>(x: &Array3<T>, ca: usize) -> (Array3<T>, Array3<T>) {
    (
        x.slice(s![..ca, .., ..]).to_owned(),
        x.slice(s![ca.., .., ..]).to_owned(),
    )
}

// ---------------------------------------------------------------------------
// conditioned conv block
// ---------------------------------------------------------------------------

/// conv -> per-channel conditioning bias -> silu -> conv -> silu
#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv1: Conv3x3<T>,
    cond: Linear<T>,
    conv2: Conv3x3<T>,
}

struct BlockTape<T> {
    x: Array3<T>,
    z1: Array3<T>,
    a1: Array3<T>,
    z2: Array3<T>,
}

impl<T: Scalar> ConvBlock<T> {
    fn init<R: Rng>(c_in: usize, c_out: usize, embed_dim: usize, rng: &mut R) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        // The conditioning projection starts at zero so conditioning fades
        // in during training instead of perturbing the initial field.
        ConvBlock {
            conv1: Conv3x3::init(c_in, c_out, rng),
            cond: Linear::zeros(embed_dim, c_out),
            conv2: Conv3x3::init(c_out, c_out, rng),
        }
    }

    fn zeros(c_in: usize, c_out: usize, embed_dim: usize) -> Self {
        ConvBlock {
            conv1: Conv3x3::zeros(c_in, c_out),
            cond: Linear::zeros(embed_dim, c_out),
            conv2: Conv3x3::zeros(c_out, c_out),
        }
    }

    fn forward(&self, x: &Array3<T>, cvec: &Array1<T>) -> (Array3<T>, BlockTape<T>) {
        let mut z1 = self.conv1.forward(x);
        let bias = self.cond.forward(cvec);
        for (mut plane, b) in z1.outer_iter_mut().zip(bias.iter()) {
            plane.mapv_inplace(|v| v + *b);
        }
        let a1 = z1.mapv(silu);
        let z2 = self.conv2.forward(&a1);
        let out = z2.mapv(silu);
        (out, BlockTape { x: x.clone(), z1, a1, z2 })
    }

    fn backward(
        &self,
        tape: &BlockTape<T>,
        d_out: &Array3<T>,
        cvec: &Array1<T>,
        grads: &mut ConvBlock<T>,
        d_cvec: &mut Array1<T>,
    ) -> Array3<T> {
        let mut d_z2 = d_out.clone();
        d_z2.zip_mut_with(&tape.z2, |g, z| *g = *g * silu_grad(*z));
        let mut d_a1 = self.conv2.backward(&tape.a1, &d_z2, &mut grads.conv2);
        d_a1.zip_mut_with(&tape.z1, |g, z| *g = *g * silu_grad(*z));
        let d_z1 = d_a1;
        let d_bias = Array1::from_iter(d_z1.outer_iter().map(|plane| plane.sum()));
        let d_c = self.cond.backward(cvec, &d_bias, &mut grads.cond);
        *d_cvec = &*d_cvec + &d_c;
        self.conv1.backward(&tape.x, &d_z1, &mut grads.conv1)
    }
}

// ---------------------------------------------------------------------------
// the denoiser
// ---------------------------------------------------------------------------

/// Activation cache from [`ToyDenoiser::forward_with_tape`], consumed by
/// [`ToyDenoiser::backward`].
pub struct Tape<T> {
    e: Array1<T>,
    temb_sum: Array1<T>,
    zm: Array1<T>,
    cvec: Array1<T>,
    t1: BlockTape<T>,
    t2: BlockTape<T>,
    tm: BlockTape<T>,
    m: Array3<T>,
    z_ext: Array3<T>,
    t3: BlockTape<T>,
    t4: BlockTape<T>,
    a4: Array3<T>,
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser<T> {
    cfg: DenoiserConfig,
    emb_map: Linear<T>,
    cond_mlp: Linear<T>,
    b1: ConvBlock<T>,
    b2: ConvBlock<T>,
    mid: ConvBlock<T>,
    mid_extra: Conv3x3<T>,
    d2: ConvBlock<T>,
    d1: ConvBlock<T>,
    out: Conv3x3<T>,
}

/// A mutable view of one named parameter tensor.
pub enum ParamVisitor<'a, T> {
    Matrix(&'a mut Array2<T>),
    Vector(&'a mut Array1<T>),
}

impl<'a, T: Scalar> ParamVisitor<'a, T> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ParamVisitor::Matrix(m) => m.shape().to_vec(),
            ParamVisitor::Vector(v) => v.shape().to_vec(),
        }
    }

    pub fn as_slice_mut(&mut self) -> &mut [T] {
        match self {
            ParamVisitor::Matrix(m) => m.as_slice_mut().expect("standard layout"),
            ParamVisitor::Vector(v) => v.as_slice_mut().expect("standard layout"),
        }
    }
}

impl<T: Scalar> ToyDenoiser<T> {
    pub fn init<R: Rng>(cfg: DenoiserConfig, rng: &mut R) -> Result<Self>
    where
        StandardNormal: Distribution<T>,
    {
        cfg.validate()?;
        let [c0, c1, c2] = cfg.channels;
        let d = cfg.embed_dim;
        Ok(ToyDenoiser {
            cfg,
            emb_map: Linear::init(d, d, rng),
            cond_mlp: Linear::init(d, d, rng),
            b1: ConvBlock::init(cfg.in_channels, c0, d, rng),
            b2: ConvBlock::init(c0, c1, d, rng),
            mid: ConvBlock::init(c1, c2, d, rng),
            mid_extra: Conv3x3::init(c2, c2, rng),
            d2: ConvBlock::init(c2 + c1, c1, d, rng),
            d1: ConvBlock::init(c1 + c0, c0, d, rng),
            // Zero-initialized head: the untrained model predicts zero noise.
            out: Conv3x3::zeros(c0, cfg.in_channels),
        })
    }

    /// A same-shape, all-zero copy, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg).expect("config was validated at init")
    }

    /// An all-zero network of the given architecture (gradient buffers,
    /// checkpoint loading).
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let [c0, c1, c2] = cfg.channels;
        let d = cfg.embed_dim;
        Ok(ToyDenoiser {
            cfg,
            emb_map: Linear::zeros(d, d),
            cond_mlp: Linear::zeros(d, d),
            b1: ConvBlock::zeros(cfg.in_channels, c0, d),
            b2: ConvBlock::zeros(c0, c1, d),
            mid: ConvBlock::zeros(c1, c2, d),
            mid_extra: Conv3x3::zeros(c2, c2),
            d2: ConvBlock::zeros(c2 + c1, c1, d),
            d1: ConvBlock::zeros(c1 + c0, c0, d),
            out: Conv3x3::zeros(c0, cfg.in_channels),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn canvas_shape(&self) -> (usize, usize, usize) {
        (self.cfg.canvas, self.cfg.canvas, self.cfg.in_channels)
    }

    /// Named parameter tensors in a fixed order shared by gradients,
    /// the optimizer and checkpoints.
    pub fn visit_params(&mut self) -> Vec<(String, ParamVisitor<'_, T>)> {
        use ParamVisitor::{Matrix, Vector};
        let mut v: Vec<(String, ParamVisitor<'_, T>)> = Vec::with_capacity(40);
        v.push(("emb_map.w".into(), Matrix(&mut self.emb_map.w)));
        v.push(("emb_map.b".into(), Vector(&mut self.emb_map.b)));
        v.push(("cond_mlp.w".into(), Matrix(&mut self.cond_mlp.w)));
        v.push(("cond_mlp.b".into(), Vector(&mut self.cond_mlp.b)));
        for (name, block) in [
            ("b1", &mut self.b1),
            ("b2", &mut self.b2),
            ("mid", &mut self.mid),
            ("d2", &mut self.d2),
            ("d1", &mut self.d1),
        ] {
            v.push((format!("{name}.conv1.w"), Matrix(&mut block.conv1.w)));
            v.push((format!("{name}.conv1.b"), Vector(&mut block.conv1.b)));
            v.push((format!("{name}.cond.w"), Matrix(&mut block.cond.w)));
            v.push((format!("{name}.cond.b"), Vector(&mut block.cond.b)));
            v.push((format!("{name}.conv2.w"), Matrix(&mut block.conv2.w)));
            v.push((format!("{name}.conv2.b"), Vector(&mut block.conv2.b)));
        }
        v.push(("mid_extra.w".into(), Matrix(&mut self.mid_extra.w)));
        v.push(("mid_extra.b".into(), Vector(&mut self.mid_extra.b)));
        v.push(("out.w".into(), Matrix(&mut self.out.w)));
        v.push(("out.b".into(), Vector(&mut self.out.b)));
        v
    }

    fn check_input(&self, z: &Array3<T>, e: &PromptEmbedding<T>) -> Result<()> {
        let want = (self.cfg.canvas, self.cfg.canvas, self.cfg.in_channels);
        if z.dim() != want {
            return Err(Error::shape(format!("denoiser input {:?}, expected {want:?}", z.dim())));
        }
        if e.dim() != self.cfg.embed_dim {
            return Err(Error::shape(format!(
                "embedding dim {}, expected {}",
                e.dim(),
                self.cfg.embed_dim
            )));
        }
        Ok(())
    }

    fn cond_vector(&self, t: usize, e: &Array1<T>) -> (Array1<T>, Array1<T>, Array1<T>) {
        let temb = time_embedding::<T>(t, self.cfg.embed_dim);
        let ev = self.emb_map.forward(e);
        let temb_sum = &temb + &ev;
        let zm = self.cond_mlp.forward(&temb_sum);
        let cvec = zm.mapv(silu);
        (temb_sum, zm, cvec)
    }

    /// Forward pass returning the activation tape for a subsequent
    /// [`Self::backward`]. Input and output are `(H, W, C)`.
    pub fn forward_with_tape(
        &self,
        z_hwc: &Array3<T>,
        t: usize,
        e: &PromptEmbedding<T>,
    ) -> Result<(Array3<T>, Tape<T>)> {
        self.check_input(z_hwc, e)?;
        let x = hwc_to_chw(z_hwc);
        let e_vec = e.values().to_owned();
        let (temb_sum, zm, cvec) = self.cond_vector(t, &e_vec);

        let (a1, t1) = self.b1.forward(&x, &cvec);
        let p1 = avg_pool2(&a1);
        let (a2, t2) = self.b2.forward(&p1, &cvec);
        let p2 = avg_pool2(&a2);
        let (m, tm) = self.mid.forward(&p2, &cvec);
        let z_ext = self.mid_extra.forward(&m);
        let m2 = z_ext.mapv(silu);
        let u2 = upsample2(&m2);
        let cat2 = concat_channels(&u2, &a2);
        let (a3, t3) = self.d2.forward(&cat2, &cvec);
        let u1 = upsample2(&a3);
        let cat1 = concat_channels(&u1, &a1);
        let (a4, t4) = self.d1.forward(&cat1, &cvec);
        let out = self.out.forward(&a4);

        let tape = Tape { e: e_vec, temb_sum, zm, cvec, t1, t2, tm, m, z_ext, t3, t4, a4 };
        Ok((chw_to_hwc(&out), tape))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the `(H, W, C)` output),
    /// accumulating parameter gradients into `grads` and returning the
    /// gradient w.r.t. the prompt embedding.
    pub fn backward(&self, tape: &Tape<T>, d_out_hwc: &Array3<T>, grads: &mut Self) -> Array1<T> {
        let d_out = hwc_to_chw(d_out_hwc);
        let cvec = &tape.cvec;
        let mut d_cvec = Array1::zeros(self.cfg.embed_dim);

        let d_a4 = self.out.backward(&tape.a4, &d_out, &mut grads.out);
        let d_cat1 = self.d1.backward(&tape.t4, &d_a4, cvec, &mut grads.d1, &mut d_cvec);
        let (d_u1, d_a1_skip) = split_channels(&d_cat1, self.cfg.channels[1]);
        let d_a3 = upsample2_backward(&d_u1);
        let d_cat2 = self.d2.backward(&tape.t3, &d_a3, cvec, &mut grads.d2, &mut d_cvec);
        let (d_u2, d_a2_skip) = split_channels(&d_cat2, self.cfg.channels[2]);
        let mut d_m2 = upsample2_backward(&d_u2);
        d_m2.zip_mut_with(&tape.z_ext, |g, z| *g = *g * silu_grad(*z));
        let d_m = self.mid_extra.backward(&tape.m, &d_m2, &mut grads.mid_extra);
        let d_p2 = self.mid.backward(&tape.tm, &d_m, cvec, &mut grads.mid, &mut d_cvec);
        let d_a2 = &avg_pool2_backward(&d_p2) + &d_a2_skip;
        let d_p1 = self.b2.backward(&tape.t2, &d_a2, cvec, &mut grads.b2, &mut d_cvec);
        let d_a1 = &avg_pool2_backward(&d_p1) + &d_a1_skip;
        let _ = self.b1.backward(&tape.t1, &d_a1, cvec, &mut grads.b1, &mut d_cvec);

        // conditioning pathway
        let mut d_zm = d_cvec;
        d_zm.zip_mut_with(&tape.zm, |g, z| *g = *g * silu_grad(*z));
        let d_sum = self.cond_mlp.backward(&tape.temb_sum, &d_zm, &mut grads.cond_mlp);
        self.emb_map.backward(&tape.e, &d_sum, &mut grads.emb_map)
    }
}

impl<T: Scalar> Denoiser<T> for ToyDenoiser<T> {
    fn forward(&self, z_t: &Array3<T>, t: usize, embedding: &PromptEmbedding<T>) -> Array3<T> {
        let (out, _tape) = self
            .forward_with_tape(z_t, t, embedding)
            .expect("denoiser input shape mismatch");
        out
    }
}

fn hwc_to_chw<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (h, w, c) = x.dim();
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[[ci, y, xx]] = x[[y, xx, ci]];
            }
        }
    }
    out
}

fn chw_to_hwc<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((h, w, c));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[[y, xx, ci]] = x[[ci, y, xx]];
            }
        }
    }
    out
}

/// The trainable unit: the denoiser plus the jointly learned prompt
/// embedding table.
#[derive(Debug, Clone)]
pub struct SceneModel<T> {
    pub table: EmbeddingTable<T>,
    pub net: ToyDenoiser<T>,
}

impl<T: Scalar> SceneModel<T> {
    pub fn init<R: Rng>(cfg: DenoiserConfig, vocab_len: usize, rng: &mut R) -> Result<Self>
    where
        StandardNormal: Distribution<T>,
    {
        let table = EmbeddingTable::init(vocab_len, cfg.embed_dim, 0.2, rng);
        let net = ToyDenoiser::init(cfg, rng)?;
        Ok(SceneModel { table, net })
    }

    pub fn zeros_like(&self) -> Self {
        SceneModel {
            table: EmbeddingTable::new(Array2::zeros(self.table.rows().dim())),
            net: self.net.zeros_like(),
        }
    }

    /// An all-zero model of the given architecture (checkpoint loading).
    pub fn zeros(cfg: DenoiserConfig, vocab_len: usize) -> Result<Self> {
        Ok(SceneModel {
            table: EmbeddingTable::new(Array2::zeros((vocab_len, cfg.embed_dim))),
            net: ToyDenoiser::zeros(cfg)?,
        })
    }

    /// Parameter enumeration: the embedding table first, then the network.
    pub fn visit_params(&mut self) -> Vec<(String, ParamVisitor<'_, T>)> {
        let mut v = vec![(
            "table.rows".to_string(),
            ParamVisitor::Matrix(self.table.rows_mut()),
        )];
        v.extend(self.net.visit_params());
        v
    }
}
