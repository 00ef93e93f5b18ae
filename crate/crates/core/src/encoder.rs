//! The encoder E: a small convolutional classifier over the toy images.
//! Its first fully-connected activation is the feature vector z that the
//! voxel decoder regresses onto; the logits carry category information.
//! Precomputed features (e.g. exported from a large pretrained network)
//! can be imported from a DCTF matrix instead.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::io::image::ImageRGB;
use crate::io::manifest::{DatasetManifest, Split};
use crate::io::read_tensor;
use crate::nn::{loss, Adam, Conv2d, Layer, Linear, Net, NetGrads};
use crate::tensor::TensorF32;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture: conv stack (each layer ReLU, padding kernel/2), flatten,
/// then fully-connected widths `fc` whose first entry is the feature dim F
/// (the tap) and whose last entry is the category count K (the logits).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_size: usize,
    pub conv: Vec<ConvSpec>,
    pub fc: Vec<usize>,
}

impl EncoderSpec {
    pub fn desk_scale(num_categories: usize) -> Self {
        EncoderSpec {
            input_size: 32,
            conv: vec![
                ConvSpec { channels: 8, kernel: 3, stride: 2 },
                ConvSpec { channels: 16, kernel: 3, stride: 2 },
            ],
            fc: vec![64, num_categories],
        }
    }

    /// VGG-like proportions with the 4096-wide feature tap. For shape
    /// arithmetic; never instantiated in tests (hundreds of MB of weights).
    pub fn full_scale() -> Self {
        EncoderSpec {
            input_size: 224,
            conv: vec![
                ConvSpec { channels: 64, kernel: 3, stride: 2 },
                ConvSpec { channels: 128, kernel: 3, stride: 2 },
                ConvSpec { channels: 256, kernel: 3, stride: 2 },
                ConvSpec { channels: 512, kernel: 3, stride: 2 },
                ConvSpec { channels: 512, kernel: 3, stride: 2 },
            ],
            fc: vec![4096, 1000],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc[0]
    }

    pub fn num_categories(&self) -> usize {
        *self.fc.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 1 {
            return Err(Error::InvalidConfig("encoder input_size must be >= 1".into()));
        }
        if self.fc.len() < 2 {
            return Err(Error::InvalidConfig(
                "encoder fc widths must end in [feature_dim, num_categories]".into(),
            ));
        }
        if self.fc.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("encoder fc widths must be positive".into()));
        }
        if self.num_categories() < 2 {
            return Err(Error::InvalidConfig(
                "encoder needs at least 2 output categories".into(),
            ));
        }
        self.conv_output_dims()?;
        Ok(())
    }

    /// (channels, height, width) after the conv stack.
    pub fn conv_output_dims(&self) -> Result<(usize, usize, usize)> {
        let mut ch = 3usize;
        let mut hw = self.input_size;
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.channels == 0 {
                return Err(Error::InvalidConfig(format!(
                    "conv layer {i} has zero kernel/stride/channels"
                )));
            }
            let pad = c.kernel / 2;
            if hw + 2 * pad < c.kernel {
                return Err(Error::InvalidConfig(format!(
                    "conv layer {i} kernel {} exceeds padded input {hw}",
                    c.kernel
                )));
            }
            hw = (hw + 2 * pad - c.kernel) / c.stride + 1;
            if hw == 0 {
                return Err(Error::InvalidConfig(format!(
                    "conv layer {i} collapses spatial dims to zero"
                )));
            }
            ch = c.channels;
        }
        Ok((ch, hw, hw))
    }

    /// Builds freshly initialized parameters for this architecture.
    pub fn build(&self, rng: &mut ChaCha12Rng) -> Result<EncoderParams> {
        self.validate()?;
        let (ch, h, w) = self.conv_output_dims()?;
        let mut layers = Vec::new();
        let mut in_ch = 3usize;
        for c in &self.conv {
            layers.push(Layer::Conv2d(Conv2d::new(
                in_ch, c.channels, c.kernel, c.stride, c.kernel / 2, rng,
            )));
            layers.push(Layer::Relu);
            in_ch = c.channels;
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Linear(Linear::new(ch * h * w, self.fc[0], rng)));
        layers.push(Layer::Relu);
        let head_start = layers.len();
        for i in 1..self.fc.len() {
            layers.push(Layer::Linear(Linear::new(self.fc[i - 1], self.fc[i], rng)));
            if i + 1 < self.fc.len() {
                layers.push(Layer::Relu);
            }
        }
        Ok(EncoderParams {
            spec: self.clone(),
            net: Net::new(layers),
            head_start,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub spec: EncoderSpec,
    pub net: Net,
    /// Index of the first head layer; the activation entering it is the
    /// feature tap z.
    head_start: usize,
}

impl EncoderParams {
    /// Maps an image to (feature vector z, category logits).
    pub fn encode(&self, img: &ImageRGB) -> Result<(TensorF32, TensorF32)> {
        if img.height() != self.spec.input_size || img.width() != self.spec.input_size {
            return Err(Error::shape(
                "encoder input image",
                &[self.spec.input_size, self.spec.input_size, 3],
                img.tensor().dims(),
            ));
        }
        let (logits, cache) = self.net.forward_cached(&img.to_chw())?;
        let z = cache.inputs[self.head_start].clone();
        Ok((z, logits))
    }

    /// Recomputes logits from a feature vector through the head layers
    /// alone; by construction encode().1 == logits_from_features(encode().0).
    pub fn logits_from_features(&self, z: &TensorF32) -> Result<TensorF32> {
        let mut cur = z.clone();
        for layer in &self.net.layers[self.head_start..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn predict_category(&self, img: &ImageRGB) -> Result<usize> {
        let (_, logits) = self.encode(img)?;
        Ok(argmax(logits.data()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let named = self.net.named_params("enc");
        let params: Vec<(String, &TensorF32)> = named;
        checkpoint::save(
            dir,
            &params,
            serde_json::json!({
                "kind": "encoder",
                "spec": self.spec,
                "head_start": self.head_start,
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ckpt = checkpoint::load(dir)?;
        let spec: EncoderSpec = serde_json::from_value(
            ckpt.meta
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::BadCheckpoint {
                    path: dir.to_path_buf(),
                    reason: "missing encoder spec in metadata".to_string(),
                })?,
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut params = spec.build(&mut rng)?;
        params.net.load_named_params("enc", |name| ckpt.take(name))?;
        Ok(params)
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderHyper {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderHyper {
    fn default() -> Self {
        EncoderHyper {
            steps: 500,
            batch: 16,
            lr: 1e-3,
            seed: 7,
        }
    }
}

/// Trains the classifier on the manifest's train split by softmax
/// cross-entropy. Batch order is a seeded shuffle per epoch; the loss
/// history is logged. With steps = 0 the returned parameters equal the
/// initialization.
pub fn train_encoder(
    manifest: &DatasetManifest,
    spec: &EncoderSpec,
    hyper: &EncoderHyper,
) -> Result<EncoderParams> {
    let train: Vec<_> = manifest.split_records(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptyInput("no train split records".to_string()));
    }
    let mut cats: Vec<usize> = train.iter().map(|r| r.category).collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.len() < 2 {
        return Err(Error::SingleCategory);
    }
    manifest.validate_categories(spec.num_categories())?;
    if hyper.batch == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(hyper.seed);
    let mut params = spec.build(&mut rng)?;

    // load the whole train split once (desk-scale data)
    let mut inputs = Vec::with_capacity(train.len());
    for r in &train {
        let img = crate::io::load_image(&manifest.resolve(&r.image))?;
        if img.height() != spec.input_size || img.width() != spec.input_size {
            return Err(Error::shape(
                "train image",
                &[spec.input_size, spec.input_size, 3],
                img.tensor().dims(),
            ));
        }
        inputs.push((img.to_chw(), r.category));
    }

    let mut grads = NetGrads::zeros_like(&params.net);
    let mut opt = Adam::for_params(&params.net.params());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut cursor = order.len(); // force shuffle on first step

    for step in 0..hyper.steps {
        grads.reset();
        let mut batch_loss = 0.0f64;
        let mut correct = 0usize;
        let bsz = hyper.batch.min(inputs.len());
        for _ in 0..bsz {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (x, label) = &inputs[order[cursor]];
            cursor += 1;
            let (logits, cache) = params.net.forward_cached(x)?;
            let (ce, dlogits) = loss::softmax_cross_entropy(logits.data(), *label);
            batch_loss += ce;
            if argmax(logits.data()) == *label {
                correct += 1;
            }
            let dy = TensorF32::new(logits.dims().to_vec(), dlogits)?;
            params.net.backward(&cache, &dy, &mut grads)?;
        }
        batch_loss /= bsz as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                value: batch_loss,
            });
        }
        grads.scale(1.0 / bsz as f32);
        let grad_refs: Vec<&TensorF32> = grads.flat();
        opt.step(hyper.lr, &mut params.net.params_mut(), &grad_refs)?;
        if step % 50 == 0 || step + 1 == hyper.steps {
            log::info!(
                "encoder step {step}: ce {batch_loss:.4}, batch accuracy {:.2}",
                correct as f64 / bsz as f64
            );
        }
    }
    Ok(params)
}

/// Fraction of records in the split whose predicted category matches.
pub fn classification_accuracy(
    params: &EncoderParams,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in manifest.split_records(split) {
        let img = crate::io::load_image(&manifest.resolve(&r.image))?;
        if params.predict_category(&img)? == r.category {
            correct += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput("no records in split".to_string()));
    }
    Ok(correct as f64 / total as f64)
}

/// Reads a precomputed feature matrix [N, F] and validates it against the
/// manifest: one row per record, in record order.
pub fn import_features(
    path: &Path,
    manifest: &DatasetManifest,
    feature_dim: usize,
) -> Result<TensorF32> {
    let t = read_tensor(path)?;
    t.check_dims("imported features", &[manifest.records.len(), feature_dim])?;
    if !t.all_finite() {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: "imported features contain non-finite values".to_string(),
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_tensor;
    use crate::nn::{gradcheck, net_forward_f64, ShadowTensor};
    use crate::synth::{gen_toy_dataset, SynthConfig};

    fn toy_manifest(dir: &Path) -> DatasetManifest {
        let cfg = SynthConfig {
            num_categories: 2,
            samples_per_category: 50,
            image_size: 32,
            feature_dim: 8,
            num_voxels: 8,
            sigma_v: 0.0,
            seed: 5,
        };
        gen_toy_dataset(&cfg, dir).unwrap().manifest
    }

    #[test]
    fn spec_shapes() {
        let spec = EncoderSpec::desk_scale(4);
        assert_eq!(spec.feature_dim(), 64);
        assert_eq!(spec.num_categories(), 4);
        assert_eq!(spec.conv_output_dims().unwrap(), (16, 8, 8));

        let full = EncoderSpec::full_scale();
        assert_eq!(full.feature_dim(), 4096);
        assert_eq!(full.conv_output_dims().unwrap(), (512, 7, 7));
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let spec = EncoderSpec::desk_scale(3);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let params = spec.build(&mut rng).unwrap();
        let img = ImageRGB::filled(32, 32, 0.4);
        let (z, logits) = params.encode(&img).unwrap();
        assert_eq!(z.dims(), &[64]);
        assert_eq!(logits.dims(), &[3]);
        let (z2, logits2) = params.encode(&img).unwrap();
        assert_eq!(z.data(), z2.data());
        assert_eq!(logits.data(), logits2.data());
    }

    #[test]
    fn head_consistency() {
        let spec = EncoderSpec {
            input_size: 16,
            conv: vec![ConvSpec { channels: 4, kernel: 3, stride: 2 }],
            fc: vec![10, 6, 3], // an extra hidden head layer
        };
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let params = spec.build(&mut rng).unwrap();
        let img = ImageRGB::filled(16, 16, 0.7);
        let (z, logits) = params.encode(&img).unwrap();
        let recomputed = params.logits_from_features(&z).unwrap();
        assert_eq!(logits.data(), recomputed.data());
    }

    #[test]
    fn wrong_input_size_rejected() {
        let spec = EncoderSpec::desk_scale(2);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let params = spec.build(&mut rng).unwrap();
        let img = ImageRGB::filled(16, 16, 0.5);
        assert!(params.encode(&img).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = EncoderSpec::desk_scale(2);
        spec.fc = vec![64]; // no category layer
        assert!(spec.validate().is_err());
        let mut spec = EncoderSpec::desk_scale(2);
        spec.fc = vec![64, 1]; // single category
        assert!(spec.validate().is_err());
        let mut spec = EncoderSpec::desk_scale(2);
        spec.conv[0].stride = 40; // collapses 32x32 to zero... floor((32+2-3)/40)+1 = 1, fine
        assert!(spec.validate().is_ok());
        spec.input_size = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn training_learns_toy_data() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = toy_manifest(dir.path());
        let spec = EncoderSpec::desk_scale(2);
        let hyper = EncoderHyper { steps: 500, batch: 16, lr: 1e-3, seed: 7 };
        let params = train_encoder(&manifest, &spec, &hyper).unwrap();
        let acc = classification_accuracy(&params, &manifest, Split::Train).unwrap();
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = toy_manifest(dir.path());
        let spec = EncoderSpec::desk_scale(2);
        let hyper = EncoderHyper { steps: 0, ..Default::default() };
        let trained = train_encoder(&manifest, &spec, &hyper).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(hyper.seed);
        let init = spec.build(&mut rng).unwrap();
        for (a, b) in trained.net.params().iter().zip(init.net.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn single_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = toy_manifest(dir.path());
        manifest.records.retain(|r| r.category == 0);
        let spec = EncoderSpec::desk_scale(2);
        assert!(matches!(
            train_encoder(&manifest, &spec, &EncoderHyper::default()),
            Err(Error::SingleCategory)
        ));
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        // 8x8 input, one conv + tap + logits; exhaustive coordinate check
        // against the f64 shadow oracle
        let spec = EncoderSpec {
            input_size: 8,
            conv: vec![ConvSpec { channels: 3, kernel: 3, stride: 2 }],
            fc: vec![5, 2],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let params = spec.build(&mut rng).unwrap();
        let img = ImageRGB::new(TensorF32::from_fn(&[8, 8, 3], |i| {
            ((i * 41) % 17) as f32 / 17.0
        }))
        .unwrap();
        let label = 1usize;

        let x = img.to_chw();
        let (logits, cache) = params.net.forward_cached(&x).unwrap();
        let (_, dlogits) = loss::softmax_cross_entropy(logits.data(), label);
        let mut grads = NetGrads::zeros_like(&params.net);
        let dy = TensorF32::new(logits.dims().to_vec(), dlogits).unwrap();
        params.net.backward(&cache, &dy, &mut grads).unwrap();

        let theta = gradcheck::flatten(&params.net.params());
        let grad_flat = gradcheck::flatten(&grads.flat());
        let x64 = ShadowTensor::from(&x);
        let mut eval = |flat: &[f64]| {
            let y = net_forward_f64(&params.net, flat, &x64).unwrap();
            loss::softmax_cross_entropy64(&y.data, label)
        };

        // every parameter coordinate
        let h = gradcheck::DEFAULT_H;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let diff = (grad_flat[i] - numeric).abs();
            assert!(
                diff <= 1e-3 * numeric.abs().max(grad_flat[i].abs()).max(1e-3),
                "coordinate {i}: analytic {} vs numeric {numeric}",
                grad_flat[i]
            );
        }
        // plus random directions
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let worst = gradcheck::check_many(&mut eval, &theta, &grad_flat, 60, h, &mut rng);
        assert!(worst < 1e-3, "worst rel err {worst}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = EncoderSpec::desk_scale(2);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let params = spec.build(&mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        params.save(dir.path()).unwrap();
        let loaded = EncoderParams::load(dir.path()).unwrap();
        let img = ImageRGB::filled(32, 32, 0.3);
        let (z1, l1) = params.encode(&img).unwrap();
        let (z2, l2) = loaded.encode(&img).unwrap();
        assert_eq!(z1.data(), z2.data());
        assert_eq!(l1.data(), l2.data());
    }

    #[test]
    fn feature_import_validates_shape() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = toy_manifest(dir.path());
        let n = manifest.records.len();
        let good = TensorF32::from_fn(&[n, 6], |i| i as f32 * 0.01);
        let p = dir.path().join("feat.dctf");
        write_tensor(&good, &p).unwrap();
        assert!(import_features(&p, &manifest, 6).is_ok());
        assert!(import_features(&p, &manifest, 7).is_err());
        let bad = TensorF32::from_fn(&[n + 1, 6], |_| 0.0);
        write_tensor(&bad, &p).unwrap();
        assert!(import_features(&p, &manifest, 6).is_err());
    }
}
