//! Per-category conditional GAN refinement. The generator G is a small
//! U-Net over (coarse image + noise channel); the discriminator D is a
//! patch classifier over concatenated (coarse, candidate) channels. D
//! ascends l_cgan while G descends the adversarial + L1 objective.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::io::image::ImageRGB;
use crate::nn::loss::{self, PROB_EPS};
use crate::nn::{
    net_forward_f64, Adam, Conv2d, ConvT2d, Layer, Net, NetCache, NetGrads, ShadowTensor,
};
use crate::tensor::TensorF32;

/// Coarse RGB plus one noise channel.
pub const GEN_IN_CHANNELS: usize = 4;
/// Coarse RGB concatenated with candidate RGB.
pub const DISC_IN_CHANNELS: usize = 6;

/// The objective reading recorded in every registry's config echo: the
/// combined loss is minimized over G (not over a separate network), and the
/// L1 term compares G's output against the ground-truth image.
pub const OBJECTIVE_NOTE: &str = "G minimizes the adversarial term plus lambda_l1 * \
     L1(G output, ground-truth image); theta_recon weights the otherwise frozen \
     reconstruction stage's loss during optional joint fine-tuning";

// -- channel concat helpers (CHW layout keeps channels contiguous) ----------

/// Stacks two CHW tensors along the channel axis; spatial dims must match.
pub fn concat_channels(a: &TensorF32, b: &TensorF32) -> Result<TensorF32> {
    if a.ndim() != 3 || b.ndim() != 3 || a.dims()[1..] != b.dims()[1..] {
        return Err(Error::shape("concat_channels", a.dims(), b.dims()));
    }
    let dims = vec![a.dims()[0] + b.dims()[0], a.dims()[1], a.dims()[2]];
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    TensorF32::new(dims, data)
}

/// Splits a CHW tensor into its first `c_first` channels and the rest.
pub fn split_channels(t: &TensorF32, c_first: usize) -> Result<(TensorF32, TensorF32)> {
    if t.ndim() != 3 || t.dims()[0] <= c_first {
        return Err(Error::shape("split_channels", &[c_first + 1, 0, 0], t.dims()));
    }
    let (h, w) = (t.dims()[1], t.dims()[2]);
    let cut = c_first * h * w;
    let first = TensorF32::new(vec![c_first, h, w], t.data()[..cut].to_vec())?;
    let second = TensorF32::new(
        vec![t.dims()[0] - c_first, h, w],
        t.data()[cut..].to_vec(),
    )?;
    Ok((first, second))
}

/// [`concat_channels`] for the f64 shadow used in gradient checks.
pub fn concat_channels64(a: &ShadowTensor, b: &ShadowTensor) -> ShadowTensor {
    debug_assert_eq!(a.dims[1..], b.dims[1..]);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    ShadowTensor::new(vec![a.dims[0] + b.dims[0], a.dims[1], a.dims[2]], data)
}

// -- noise -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Fresh standard-normal noise channel per sample per step (seeded).
    Gaussian,
    /// All-zero noise channel; the generator becomes deterministic in its
    /// image input.
    Zero,
}

/// The noise input w: one [H, W, 1] plane of standard normal draws.
#[derive(Debug, Clone)]
pub struct NoiseSample(TensorF32);

impl NoiseSample {
    pub fn standard_normal(h: usize, w: usize, rng: &mut ChaCha12Rng) -> Self {
        let data = (0..h * w)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                e as f32
            })
            .collect();
        NoiseSample(TensorF32::new(vec![h, w, 1], data).expect("consistent dims"))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        NoiseSample(TensorF32::zeros(&[h, w, 1]))
    }

    pub fn tensor(&self) -> &TensorF32 {
        &self.0
    }

    /// [H,W,1] and [1,H,W] share the same row-major layout.
    pub fn to_chw(&self) -> TensorF32 {
        let (h, w) = (self.0.dims()[0], self.0.dims()[1]);
        self.0.clone().reshape(&[1, h, w]).expect("same length")
    }
}

// -- generator ----------------------------------------------------------------

/// U-Net layout: `enc_channels` stride-2 conv levels (LeakyReLU), then
/// mirrored stride-2 deconv levels (ReLU) with skip concatenation from each
/// encoder level, a top deconv back to full resolution, and a 1x1 conv +
/// sigmoid to 3 channels. Output dims always equal input dims.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub image_size: usize,
    pub enc_channels: Vec<usize>,
}

impl GenSpec {
    pub fn desk_scale(image_size: usize) -> Self {
        GenSpec {
            image_size,
            enc_channels: vec![16, 32],
        }
    }

    pub fn full_scale() -> Self {
        GenSpec {
            image_size: 128,
            enc_channels: vec![64, 128, 256, 512],
        }
    }

    pub fn output_dims(&self) -> [usize; 3] {
        [self.image_size, self.image_size, 3]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.enc_channels.len();
        if l == 0 {
            return Err(Error::InvalidConfig("generator needs >= 1 encoder level".into()));
        }
        if self.enc_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("generator channels must be positive".into()));
        }
        if self.image_size % (1 << l) != 0 || self.image_size >> l == 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {} not divisible by 2^{l}",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn build(&self, rng: &mut ChaCha12Rng) -> Result<GenParams> {
        self.validate()?;
        let ch = &self.enc_channels;
        let l = ch.len();
        let mut enc = Vec::with_capacity(l);
        let mut in_ch = GEN_IN_CHANNELS;
        for &c in ch {
            enc.push(Net::new(vec![
                Layer::Conv2d(Conv2d::new(in_ch, c, 4, 2, 1, rng)),
                Layer::LeakyRelu(0.2),
            ]));
            in_ch = c;
        }
        let mut dec = Vec::with_capacity(l.saturating_sub(1));
        let mut cur_ch = ch[l - 1];
        for j in 0..l - 1 {
            let i = l - 2 - j;
            dec.push(Net::new(vec![
                Layer::ConvT2d(ConvT2d::new(cur_ch, ch[i], 4, 2, 1, rng)),
                Layer::Relu,
            ]));
            cur_ch = 2 * ch[i]; // concat with the skip from enc level i
        }
        let top = Net::new(vec![
            Layer::ConvT2d(ConvT2d::new(cur_ch, ch[0], 4, 2, 1, rng)),
            Layer::Relu,
        ]);
        let out = Net::new(vec![
            Layer::Conv2d(Conv2d::new(ch[0], 3, 1, 1, 0, rng)),
            Layer::Sigmoid,
        ]);
        Ok(GenParams {
            spec: self.clone(),
            enc,
            dec,
            top,
            out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GenParams {
    pub spec: GenSpec,
    enc: Vec<Net>,
    dec: Vec<Net>,
    top: Net,
    out: Net,
}

/// Forward activations needed to backpropagate through the skip topology.
pub struct GenCache {
    enc_caches: Vec<NetCache>,
    dec_caches: Vec<NetCache>,
    top_cache: NetCache,
    out_cache: NetCache,
}

/// Gradient buffers mirroring `GenParams::params()` order.
pub struct GenGrads {
    enc: Vec<NetGrads>,
    dec: Vec<NetGrads>,
    top: NetGrads,
    out: NetGrads,
}

impl GenGrads {
    pub fn zeros_like(g: &GenParams) -> Self {
        GenGrads {
            enc: g.enc.iter().map(NetGrads::zeros_like).collect(),
            dec: g.dec.iter().map(NetGrads::zeros_like).collect(),
            top: NetGrads::zeros_like(&g.top),
            out: NetGrads::zeros_like(&g.out),
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.enc {
            g.reset();
        }
        for g in &mut self.dec {
            g.reset();
        }
        self.top.reset();
        self.out.reset();
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.enc {
            g.scale(s);
        }
        for g in &mut self.dec {
            g.scale(s);
        }
        self.top.scale(s);
        self.out.scale(s);
    }

    pub fn flat(&self) -> Vec<&TensorF32> {
        let mut out = Vec::new();
        for g in &self.enc {
            out.extend(g.flat());
        }
        for g in &self.dec {
            out.extend(g.flat());
        }
        out.extend(self.top.flat());
        out.extend(self.out.flat());
        out
    }
}

impl GenParams {
    fn blocks(&self) -> Vec<(String, &Net)> {
        let mut v = Vec::new();
        for (i, n) in self.enc.iter().enumerate() {
            v.push((format!("gen_enc{i}_"), n));
        }
        for (j, n) in self.dec.iter().enumerate() {
            v.push((format!("gen_dec{j}_"), n));
        }
        v.push(("gen_top_".to_string(), &self.top));
        v.push(("gen_out_".to_string(), &self.out));
        v
    }

    pub fn params(&self) -> Vec<&TensorF32> {
        self.blocks().into_iter().flat_map(|(_, n)| n.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut TensorF32> {
        let mut v: Vec<&mut TensorF32> = Vec::new();
        for n in &mut self.enc {
            v.extend(n.params_mut());
        }
        for n in &mut self.dec {
            v.extend(n.params_mut());
        }
        v.extend(self.top.params_mut());
        v.extend(self.out.params_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Raw CHW forward with caches for training.
    pub fn forward_cached(&self, input: &TensorF32) -> Result<(TensorF32, GenCache)> {
        let l = self.enc.len();
        let mut enc_caches = Vec::with_capacity(l);
        let mut enc_outs = Vec::with_capacity(l);
        let mut cur = input.clone();
        for blk in &self.enc {
            let (y, c) = blk.forward_cached(&cur)?;
            enc_caches.push(c);
            enc_outs.push(y.clone());
            cur = y;
        }
        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for (j, blk) in self.dec.iter().enumerate() {
            let i = l - 2 - j;
            let (y, c) = blk.forward_cached(&cur)?;
            dec_caches.push(c);
            cur = concat_channels(&y, &enc_outs[i])?;
        }
        let (t, top_cache) = self.top.forward_cached(&cur)?;
        let (y, out_cache) = self.out.forward_cached(&t)?;
        Ok((
            y,
            GenCache {
                enc_caches,
                dec_caches,
                top_cache,
                out_cache,
            },
        ))
    }

    /// Unclamped CHW forward; [`gen_forward`] wraps this for inference.
    pub fn forward_raw(&self, input: &TensorF32) -> Result<TensorF32> {
        Ok(self.forward_cached(input)?.0)
    }

    /// Backpropagates dy through the U-Net, accumulating into `grads`;
    /// returns the gradient on the 4-channel input.
    pub fn backward(&self, cache: &GenCache, dy: &TensorF32, grads: &mut GenGrads) -> Result<TensorF32> {
        let l = self.enc.len();
        let mut g = self.out.backward(&cache.out_cache, dy, &mut grads.out)?;
        g = self.top.backward(&cache.top_cache, &g, &mut grads.top)?;
        let mut skip: Vec<Option<TensorF32>> = (0..l).map(|_| None).collect();
        for j in (0..self.dec.len()).rev() {
            let i = l - 2 - j;
            let c = self.spec.enc_channels[i];
            let (g_dec, g_skip) = split_channels(&g, c)?;
            skip[i] = Some(g_skip);
            g = self.dec[j].backward(&cache.dec_caches[j], &g_dec, &mut grads.dec[j])?;
        }
        // g now sits on enc_outs[l-1]; walk the encoder down, folding in
        // the skip gradients
        let mut upstream = g;
        for i in (0..l).rev() {
            let total = match skip[i].take() {
                Some(mut s) => {
                    for (a, &b) in s.data_mut().iter_mut().zip(upstream.data()) {
                        *a += b;
                    }
                    s
                }
                None => upstream,
            };
            upstream = self.enc[i].backward(&cache.enc_caches[i], &total, &mut grads.enc[i])?;
        }
        Ok(upstream)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut params: Vec<(String, &TensorF32)> = Vec::new();
        for (prefix, net) in self.blocks() {
            params.extend(net.named_params(&prefix));
        }
        checkpoint::save(
            dir,
            &params,
            serde_json::json!({ "kind": "gan_generator", "spec": self.spec }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ckpt = checkpoint::load(dir)?;
        let spec: GenSpec = serde_json::from_value(
            ckpt.meta
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::BadCheckpoint {
                    path: dir.to_path_buf(),
                    reason: "missing generator spec in metadata".to_string(),
                })?,
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut g = spec.build(&mut rng)?;
        for (i, n) in g.enc.iter_mut().enumerate() {
            n.load_named_params(&format!("gen_enc{i}_"), |name| ckpt.take(name))?;
        }
        for (j, n) in g.dec.iter_mut().enumerate() {
            n.load_named_params(&format!("gen_dec{j}_"), |name| ckpt.take(name))?;
        }
        g.top.load_named_params("gen_top_", |name| ckpt.take(name))?;
        g.out.load_named_params("gen_out_", |name| ckpt.take(name))?;
        Ok(g)
    }
}

/// Builds the 4-channel CHW generator input from a coarse image and a noise
/// plane.
pub fn gen_input(spec: &GenSpec, coarse: &ImageRGB, w: &NoiseSample) -> Result<TensorF32> {
    let s = spec.image_size;
    coarse
        .tensor()
        .check_dims("generator coarse input", &[s, s, 3])?;
    w.tensor().check_dims("generator noise", &[s, s, 1])?;
    concat_channels(&coarse.to_chw(), &w.to_chw())
}

/// G(coarse, w): the refined image, same dims as the coarse input. Output
/// values are nudged off exact 0/1 like the reconstruction network's.
pub fn gen_forward(g: &GenParams, coarse: &ImageRGB, w: &NoiseSample) -> Result<ImageRGB> {
    let mut y = g.forward_raw(&gen_input(&g.spec, coarse, w)?)?;
    let (lo, hi) = (PROB_EPS as f32, 1.0 - PROB_EPS as f32);
    for v in y.data_mut() {
        *v = v.clamp(lo, hi);
    }
    ImageRGB::from_chw(&y)
}

/// Double-precision replay of the generator with parameters from `flat`
/// (ordered like `GenParams::params()`); the finite-difference oracle.
pub fn gen_forward_f64(g: &GenParams, flat: &[f64], x: &ShadowTensor) -> Result<ShadowTensor> {
    let mut off = 0usize;
    let mut slice_for = |net: &Net| -> Result<std::ops::Range<usize>> {
        let n = net.num_params();
        if off + n > flat.len() {
            return Err(Error::InvalidConfig(format!(
                "shadow parameter vector too short: need {} more values, have {}",
                n,
                flat.len() - off
            )));
        }
        let r = off..off + n;
        off += n;
        Ok(r)
    };
    let l = g.enc.len();
    let mut enc_outs: Vec<ShadowTensor> = Vec::with_capacity(l);
    let mut cur = x.clone();
    for blk in &g.enc {
        let r = slice_for(blk)?;
        cur = net_forward_f64(blk, &flat[r], &cur)?;
        enc_outs.push(cur.clone());
    }
    for (j, blk) in g.dec.iter().enumerate() {
        let i = l - 2 - j;
        let r = slice_for(blk)?;
        let y = net_forward_f64(blk, &flat[r], &cur)?;
        cur = concat_channels64(&y, &enc_outs[i]);
    }
    let r = slice_for(&g.top)?;
    cur = net_forward_f64(&g.top, &flat[r], &cur)?;
    let r = slice_for(&g.out)?;
    cur = net_forward_f64(&g.out, &flat[r], &cur)?;
    if off != flat.len() {
        return Err(Error::InvalidConfig(format!(
            "shadow parameter vector too long: {} values unused",
            flat.len() - off
        )));
    }
    Ok(cur)
}

// -- discriminator -------------------------------------------------------------

/// Patch discriminator: stride-2 convs (LeakyReLU) over the 6-channel
/// (coarse, candidate) stack, then a stride-1 conv to one channel and
/// sigmoid; the output is a grid of per-patch probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscSpec {
    pub image_size: usize,
    pub channels: Vec<usize>,
}

impl DiscSpec {
    pub fn desk_scale(image_size: usize) -> Self {
        DiscSpec {
            image_size,
            channels: vec![16, 32],
        }
    }

    pub fn full_scale() -> Self {
        DiscSpec {
            image_size: 128,
            channels: vec![64, 128, 256],
        }
    }

    /// Spatial dims of the patch probability grid.
    pub fn patch_dims(&self) -> [usize; 2] {
        let s = self.image_size >> self.channels.len();
        [s, s]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.channels.len();
        if l == 0 {
            return Err(Error::InvalidConfig("discriminator needs >= 1 conv level".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("discriminator channels must be positive".into()));
        }
        if self.image_size % (1 << l) != 0 || self.image_size >> l == 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {} not divisible by 2^{l}",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn build(&self, rng: &mut ChaCha12Rng) -> Result<DiscParams> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut in_ch = DISC_IN_CHANNELS;
        for &c in &self.channels {
            layers.push(Layer::Conv2d(Conv2d::new(in_ch, c, 4, 2, 1, rng)));
            layers.push(Layer::LeakyRelu(0.2));
            in_ch = c;
        }
        layers.push(Layer::Conv2d(Conv2d::new(in_ch, 1, 3, 1, 1, rng)));
        layers.push(Layer::Sigmoid);
        Ok(DiscParams {
            spec: self.clone(),
            net: Net::new(layers),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiscParams {
    pub spec: DiscSpec,
    pub net: Net,
}

impl DiscParams {
    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(
            dir,
            &self.net.named_params("disc"),
            serde_json::json!({ "kind": "gan_discriminator", "spec": self.spec }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ckpt = checkpoint::load(dir)?;
        let spec: DiscSpec = serde_json::from_value(
            ckpt.meta
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::BadCheckpoint {
                    path: dir.to_path_buf(),
                    reason: "missing discriminator spec in metadata".to_string(),
                })?,
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut d = spec.build(&mut rng)?;
        d.net.load_named_params("disc", |name| ckpt.take(name))?;
        Ok(d)
    }
}

fn disc_input(spec: &DiscSpec, coarse: &ImageRGB, candidate: &ImageRGB) -> Result<TensorF32> {
    let s = spec.image_size;
    coarse
        .tensor()
        .check_dims("discriminator coarse input", &[s, s, 3])?;
    candidate
        .tensor()
        .check_dims("discriminator candidate input", &[s, s, 3])?;
    concat_channels(&coarse.to_chw(), &candidate.to_chw())
}

/// D(coarse, candidate): per-patch probabilities [1, ph, pw], strictly
/// inside (0, 1).
pub fn disc_forward(d: &DiscParams, coarse: &ImageRGB, candidate: &ImageRGB) -> Result<TensorF32> {
    let mut p = d.net.forward(&disc_input(&d.spec, coarse, candidate)?)?;
    let (lo, hi) = (PROB_EPS as f32, 1.0 - PROB_EPS as f32);
    for v in p.data_mut() {
        *v = v.clamp(lo, hi);
    }
    Ok(p)
}

// -- losses ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GLossMode {
    /// mean log(1 - d_fake) + lambda * l_l1: the literal minimax objective.
    Minimax,
    /// -mean log(d_fake) + lambda * l_l1: the non-saturating variant.
    NonSaturating,
}

impl Default for GLossMode {
    fn default() -> Self {
        GLossMode::Minimax
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GanLosses {
    pub l_cgan: f64,
    pub l_l1: f64,
    pub g_objective: f64,
    pub d_objective: f64,
    /// Probabilities that had to be clamped away from 0/1 before the logs.
    pub clamped: usize,
}

impl GanLosses {
    pub fn all_finite(&self) -> bool {
        self.l_cgan.is_finite()
            && self.l_l1.is_finite()
            && self.g_objective.is_finite()
            && self.d_objective.is_finite()
    }
}

pub fn gan_losses(
    d_real: &TensorF32,
    d_fake: &TensorF32,
    target: &ImageRGB,
    x_prime: &ImageRGB,
    lambda: f64,
) -> Result<GanLosses> {
    gan_losses_with(d_real, d_fake, target, x_prime, lambda, GLossMode::Minimax)
}

pub fn gan_losses_with(
    d_real: &TensorF32,
    d_fake: &TensorF32,
    target: &ImageRGB,
    x_prime: &ImageRGB,
    lambda: f64,
    mode: GLossMode,
) -> Result<GanLosses> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_l1 must be >= 0, got {lambda}")));
    }
    x_prime
        .tensor()
        .check_dims("gan_losses x_prime", target.tensor().dims())?;
    let (log_real, c_real) = loss::mean_log(d_real.data());
    let (log_one_minus_fake, c_fake) = loss::mean_log_one_minus(d_fake.data());
    let l_cgan = log_real + log_one_minus_fake;
    let l_l1 = loss::l1(x_prime.data(), target.data());
    let g_objective = match mode {
        GLossMode::Minimax => log_one_minus_fake + lambda * l_l1,
        GLossMode::NonSaturating => {
            let (log_fake, _) = loss::mean_log(d_fake.data());
            -log_fake + lambda * l_l1
        }
    };
    Ok(GanLosses {
        l_cgan,
        l_l1,
        g_objective,
        d_objective: -l_cgan,
        clamped: c_real + c_fake,
    })
}

fn average_losses(per: &[GanLosses]) -> GanLosses {
    let n = per.len().max(1) as f64;
    GanLosses {
        l_cgan: per.iter().map(|l| l.l_cgan).sum::<f64>() / n,
        l_l1: per.iter().map(|l| l.l_l1).sum::<f64>() / n,
        g_objective: per.iter().map(|l| l.g_objective).sum::<f64>() / n,
        d_objective: per.iter().map(|l| l.d_objective).sum::<f64>() / n,
        clamped: per.iter().map(|l| l.clamped).sum(),
    }
}

// -- training -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub lambda_l1: f64,
    /// Weight of the reconstruction loss in optional joint fine-tuning;
    /// staged training (the default) keeps R frozen and ignores it.
    pub theta_recon: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub noise: NoiseMode,
    pub g_loss: GLossMode,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_l1: 100.0,
            theta_recon: 0.0,
            lr: 1e-3,
            batch: 8,
            epochs: 200,
            noise: NoiseMode::Gaussian,
            g_loss: GLossMode::Minimax,
            seed: 7,
        }
    }
}

impl GanConfig {
    pub fn full_scale() -> Self {
        GanConfig {
            batch: 256,
            epochs: 500,
            lr: 1e-3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1.is_finite() && self.lambda_l1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_l1 must be >= 0, got {}",
                self.lambda_l1
            )));
        }
        if !(self.theta_recon.is_finite() && self.theta_recon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "theta_recon must be >= 0, got {}",
                self.theta_recon
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (coarse, target) training pair tagged with its category.
#[derive(Debug, Clone)]
pub struct GanPair {
    pub category: usize,
    pub coarse: ImageRGB,
    pub target: ImageRGB,
}

/// One discriminator update: ascend l_cgan (descend d_objective) on the
/// batch, with fakes produced by the frozen generator. Returns the batch
/// loss record evaluated before the update.
pub fn gan_d_step(
    g: &GenParams,
    d: &mut DiscParams,
    items: &[(&ImageRGB, &ImageRGB)],
    noises: &[NoiseSample],
    cfg: &GanConfig,
    opt_d: &mut Adam,
) -> Result<GanLosses> {
    debug_assert_eq!(items.len(), noises.len());
    if items.is_empty() {
        return Err(Error::EmptyInput("gan_d_step batch".to_string()));
    }
    let b = items.len() as f32;
    let mut grads = NetGrads::zeros_like(&d.net);
    let mut per = Vec::with_capacity(items.len());
    for ((coarse, target), w) in items.iter().zip(noises) {
        let x_raw = g.forward_raw(&gen_input(&g.spec, coarse, w)?)?;
        let real_in = disc_input(&d.spec, coarse, target)?;
        let (p_real, cache_r) = d.net.forward_cached(&real_in)?;
        let fake_in = concat_channels(&coarse.to_chw(), &x_raw)?;
        let (p_fake, cache_f) = d.net.forward_cached(&fake_in)?;

        let x_img = ImageRGB::from_chw(&x_raw)?;
        per.push(gan_losses_with(
            &p_real,
            &p_fake,
            target,
            &x_img,
            cfg.lambda_l1,
            cfg.g_loss,
        )?);

        // d_objective = -(mean log p_real + mean log(1 - p_fake))
        let mut d_real = loss::mean_log_grad(p_real.data());
        for v in &mut d_real {
            *v = -*v / b;
        }
        let mut d_fake = loss::mean_log_one_minus_grad(p_fake.data());
        for v in &mut d_fake {
            *v = -*v / b;
        }
        let dy_r = TensorF32::new(p_real.dims().to_vec(), d_real)?;
        let dy_f = TensorF32::new(p_fake.dims().to_vec(), d_fake)?;
        d.net.backward(&cache_r, &dy_r, &mut grads)?;
        d.net.backward(&cache_f, &dy_f, &mut grads)?;
    }
    opt_d.step(cfg.lr, &mut d.net.params_mut(), &grads.flat())?;
    Ok(average_losses(&per))
}

/// One generator update: descend g_objective against the (frozen) current
/// discriminator. Returns the batch g_objective evaluated before the update.
pub fn gan_g_step(
    g: &mut GenParams,
    d: &DiscParams,
    items: &[(&ImageRGB, &ImageRGB)],
    noises: &[NoiseSample],
    cfg: &GanConfig,
    opt_g: &mut Adam,
) -> Result<f64> {
    debug_assert_eq!(items.len(), noises.len());
    if items.is_empty() {
        return Err(Error::EmptyInput("gan_g_step batch".to_string()));
    }
    let b = items.len() as f64;
    let mut grads = GenGrads::zeros_like(g);
    let mut scratch = NetGrads::zeros_like(&d.net); // D grads discarded
    let mut objective = 0.0f64;
    for ((coarse, target), w) in items.iter().zip(noises) {
        let input = gen_input(&g.spec, coarse, w)?;
        let (x_raw, gcache) = g.forward_cached(&input)?;
        let fake_in = concat_channels(&coarse.to_chw(), &x_raw)?;
        let (p_fake, dcache) = d.net.forward_cached(&fake_in)?;
        let t = target.to_chw();

        let l1 = loss::l1(x_raw.data(), t.data());
        let (adv, mut dprobs) = match cfg.g_loss {
            GLossMode::Minimax => (
                loss::mean_log_one_minus(p_fake.data()).0,
                loss::mean_log_one_minus_grad(p_fake.data()),
            ),
            GLossMode::NonSaturating => {
                let (lf, _) = loss::mean_log(p_fake.data());
                let mut grad = loss::mean_log_grad(p_fake.data());
                for v in &mut grad {
                    *v = -*v;
                }
                (-lf, grad)
            }
        };
        objective += (adv + cfg.lambda_l1 * l1) / b;

        for v in &mut dprobs {
            *v /= b as f32;
        }
        scratch.reset();
        let dy = TensorF32::new(p_fake.dims().to_vec(), dprobs)?;
        let d_in = d.net.backward(&dcache, &dy, &mut scratch)?;
        let (_, mut dx) = split_channels(&d_in, 3)?;
        let l1g = loss::l1_grad(x_raw.data(), t.data());
        let scale = (cfg.lambda_l1 / b) as f32;
        for (a, &s) in dx.data_mut().iter_mut().zip(&l1g) {
            *a += scale * s;
        }
        g.backward(&gcache, &dx, &mut grads)?;
    }
    opt_g.step(cfg.lr, &mut g.params_mut(), &grads.flat())?;
    Ok(objective)
}

/// One alternating step: D update, then G update, sharing one noise draw
/// per sample. Returns the pre-update loss record.
pub fn gan_step(
    g: &mut GenParams,
    d: &mut DiscParams,
    items: &[(&ImageRGB, &ImageRGB)],
    cfg: &GanConfig,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    rng: &mut ChaCha12Rng,
) -> Result<GanLosses> {
    let s = g.spec.image_size;
    let noises: Vec<NoiseSample> = items
        .iter()
        .map(|_| match cfg.noise {
            NoiseMode::Gaussian => NoiseSample::standard_normal(s, s, rng),
            NoiseMode::Zero => NoiseSample::zeros(s, s),
        })
        .collect();
    let record = gan_d_step(g, d, items, &noises, cfg, opt_d)?;
    gan_g_step(g, d, items, &noises, cfg, opt_g)?;
    Ok(record)
}

#[derive(Debug)]
pub struct TrainedGan {
    pub category: usize,
    pub gen: GenParams,
    pub disc: DiscParams,
    pub history: Vec<GanLosses>,
}

/// Trains one per-category GAN by alternating D/G updates over seeded
/// shuffled batches. All pairs must share one category id.
pub fn train_gan(
    pairs: &[GanPair],
    gen_spec: &GenSpec,
    disc_spec: &DiscSpec,
    cfg: &GanConfig,
) -> Result<TrainedGan> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("gan training needs >= 1 pair".to_string()));
    }
    let category = pairs[0].category;
    for p in pairs {
        if p.category != category {
            return Err(Error::MixedCategories(category, p.category));
        }
    }
    if gen_spec.image_size != disc_spec.image_size {
        return Err(Error::InvalidConfig(format!(
            "generator image size {} != discriminator image size {}",
            gen_spec.image_size, disc_spec.image_size
        )));
    }
    let s = gen_spec.image_size;
    for p in pairs {
        p.coarse.tensor().check_dims("gan coarse", &[s, s, 3])?;
        p.target.tensor().check_dims("gan target", &[s, s, 3])?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut g = gen_spec.build(&mut rng)?;
    let mut d = disc_spec.build(&mut rng)?;
    let mut opt_g = Adam::for_params(&g.params());
    let mut opt_d = Adam::for_params(&d.net.params());

    let mut history = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let items: Vec<(&ImageRGB, &ImageRGB)> = chunk
                .iter()
                .map(|&i| (&pairs[i].coarse, &pairs[i].target))
                .collect();
            let record = gan_step(&mut g, &mut d, &items, cfg, &mut opt_g, &mut opt_d, &mut rng)?;
            if !record.all_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: record.g_objective,
                });
            }
            history.push(record);
            step += 1;
        }
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            if let Some(r) = history.last() {
                log::info!(
                    "gan category {category} epoch {epoch}: l_cgan {:.4}, l_l1 {:.4}",
                    r.l_cgan,
                    r.l_l1
                );
            }
        }
    }
    Ok(TrainedGan {
        category,
        gen: g,
        disc: d,
        history,
    })
}

// -- registry --------------------------------------------------------------------

/// Per-category trained models; written once after training, read-only at
/// reconstruction time.
#[derive(Debug, Default)]
pub struct GanRegistry {
    pub models: BTreeMap<usize, (GenParams, DiscParams)>,
}

impl GanRegistry {
    pub fn new() -> Self {
        GanRegistry {
            models: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, category: usize, gen: GenParams, disc: DiscParams) {
        self.models.insert(category, (gen, disc));
    }

    pub fn get(&self, category: usize) -> Option<&(GenParams, DiscParams)> {
        self.models.get(&category)
    }

    pub fn categories(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Layout: `<dir>/<category>/gen`, `<dir>/<category>/disc`, plus a
    /// `config.json` echo of the training configuration and the objective
    /// reading it was trained under.
    pub fn save(&self, dir: &Path, cfg: &GanConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut echo = serde_json::to_string_pretty(&serde_json::json!({
            "config": cfg,
            "objective_note": OBJECTIVE_NOTE,
        }))?;
        echo.push('\n');
        std::fs::write(dir.join("config.json"), echo)?;
        for (cat, (g, d)) in &self.models {
            let base = dir.join(cat.to_string());
            g.save(&base.join("gen"))?;
            d.save(&base.join("disc"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut models = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name();
            let Ok(cat) = name.to_string_lossy().parse::<usize>() else {
                continue;
            };
            let g = GenParams::load(&entry.path().join("gen"))?;
            let d = DiscParams::load(&entry.path().join("disc"))?;
            models.insert(cat, (g, d));
        }
        Ok(GanRegistry { models })
    }
}
