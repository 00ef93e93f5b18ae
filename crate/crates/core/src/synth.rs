//! Synthetic data: toy labeled shape images plus a ground-truth linear
//! voxel forward model. Stands in for real fMRI recordings so every
//! downstream stage can be verified against a known generative process.
//!
//! Determinism contract: every random quantity is drawn from a ChaCha12
//! stream derived from (seed, sample index), so regeneration is
//! byte-identical and order-independent.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::io::image::{resize_bilinear, save_image, ImageRGB};
use crate::io::manifest::{save_manifest, DatasetManifest, SampleRecord, Split};
use crate::io::write_tensor;
use crate::tensor::TensorF32;

/// Thumbnail edge used by the synthetic feature projection.
pub const THUMB_SIZE: usize = 8;

// Seed offsets keeping the forward model, the feature projection, and the
// voxel noise on unrelated ChaCha keys even though they share cfg.seed.
const MODEL_SEED_OFFSET: u64 = 0x4D4F_4445_4C00;
const PROJ_SEED_OFFSET: u64 = 0x5052_4F4A_0000;
const VOXEL_SEED_OFFSET: u64 = 0x564F_5845_4C00;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub samples_per_category: usize,
    pub image_size: usize,
    pub feature_dim: usize,
    pub num_voxels: usize,
    pub sigma_v: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_categories: 4,
            samples_per_category: 30,
            image_size: 32,
            feature_dim: 64,
            num_voxels: 128,
            sigma_v: 0.05,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_categories must be at least 2, got {}",
                self.num_categories
            )));
        }
        for (name, v) in [
            ("samples_per_category", self.samples_per_category),
            ("image_size", self.image_size),
            ("feature_dim", self.feature_dim),
            ("num_voxels", self.num_voxels),
        ] {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.sigma_v.is_finite() && self.sigma_v >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma_v must be finite and non-negative, got {}",
                self.sigma_v
            )));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_categories * self.samples_per_category
    }
}

// ---------------------------------------------------------------------------

/// Ground-truth linear map from features to voxels:
/// x = M z + b0 + sigma_v * eps.
#[derive(Debug, Clone)]
pub struct VoxelForwardModel {
    pub m: TensorF32,  // [V, F]
    pub b0: TensorF32, // [V]
    pub sigma_v: f64,
}

impl VoxelForwardModel {
    /// M entries i.i.d. normal with scale 1/sqrt(F); b0 uniform in
    /// [-0.1, 0.1]. Keeps voxel magnitudes O(1) for unit-scale features.
    pub fn generate(num_voxels: usize, feature_dim: usize, sigma_v: f64, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let m = TensorF32::from_fn(&[num_voxels, feature_dim], |_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (n * scale) as f32
        });
        let b0 = TensorF32::from_fn(&[num_voxels], |_| rng.gen_range(-0.1..0.1) as f32);
        VoxelForwardModel { m, b0, sigma_v }
    }

    pub fn num_voxels(&self) -> usize {
        self.m.dims()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.m.dims()[1]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(
            dir,
            &[("m".to_string(), &self.m), ("b0".to_string(), &self.b0)],
            serde_json::json!({ "kind": "voxel_forward_model", "sigma_v": self.sigma_v }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ckpt = checkpoint::load(dir)?;
        let sigma_v = ckpt
            .meta
            .get("sigma_v")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: "missing sigma_v in metadata".to_string(),
            })?;
        let m = ckpt.take("m")?;
        let b0 = ckpt.take("b0")?;
        if m.ndim() != 2 || b0.ndim() != 1 || b0.len() != m.dims()[0] {
            return Err(Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: format!(
                    "inconsistent forward model dims m={:?} b0={:?}",
                    m.dims(),
                    b0.dims()
                ),
            });
        }
        Ok(VoxelForwardModel { m, b0, sigma_v })
    }
}

/// X = Z M^T + b0 + sigma_v * eps, eps standard normal. Row n of Z uses the
/// RNG stream (seed, n) so any subset simulates identically.
pub fn simulate_voxels(z: &TensorF32, model: &VoxelForwardModel, seed: u64) -> Result<TensorF32> {
    if z.ndim() != 2 || z.cols() != model.feature_dim() {
        return Err(Error::shape(
            "simulate_voxels features",
            &[0, model.feature_dim()],
            z.dims(),
        ));
    }
    let n = z.rows();
    let v = model.num_voxels();
    let f = model.feature_dim();
    let md = model.m.data();
    let b0 = model.b0.data();
    let mut x = TensorF32::zeros(&[n, v]);
    for row in 0..n {
        let zrow = z.row(row);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        for col in 0..v {
            let mrow = &md[col * f..(col + 1) * f];
            let mut acc = b0[col] as f64;
            for (mv, zv) in mrow.iter().zip(zrow) {
                acc += (*mv as f64) * (*zv as f64);
            }
            if model.sigma_v > 0.0 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                acc += model.sigma_v * eps;
            }
            x.data_mut()[row * v + col] = acc as f32;
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------

/// Random projection [F, 3*THUMB^2] with scale 1/sqrt(input dim); maps
/// centered thumbnails to synthetic "ground truth" feature vectors.
pub fn feature_projection(feature_dim: usize, seed: u64) -> TensorF32 {
    let input = 3 * THUMB_SIZE * THUMB_SIZE;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / (input as f64).sqrt();
    TensorF32::from_fn(&[feature_dim, input], |_| {
        let n: f64 = StandardNormal.sample(&mut rng);
        (n * scale) as f32
    })
}

/// Synthetic feature vector: project the centered 8x8 thumbnail of the
/// image through a fixed random projection. Deterministic in (img, proj).
pub fn image_features(img: &ImageRGB, proj: &TensorF32) -> Result<TensorF32> {
    let input = 3 * THUMB_SIZE * THUMB_SIZE;
    if proj.ndim() != 2 || proj.cols() != input {
        return Err(Error::shape("feature projection", &[0, input], proj.dims()));
    }
    let thumb = resize_bilinear(img, THUMB_SIZE, THUMB_SIZE)?;
    let centered: Vec<f64> = thumb.data().iter().map(|&v| v as f64 - 0.5).collect();
    let f = proj.rows();
    let mut z = TensorF32::zeros(&[f]);
    for (i, zi) in z.data_mut().iter_mut().enumerate() {
        let prow = &proj.data()[i * input..(i + 1) * input];
        let acc: f64 = prow
            .iter()
            .zip(&centered)
            .map(|(&p, &t)| p as f64 * t)
            .sum();
        *zi = acc as f32;
    }
    Ok(z)
}

// ---------------------------------------------------------------------------

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.80, 0.25],
    [0.25, 0.35, 0.90],
    [0.90, 0.85, 0.20],
    [0.85, 0.25, 0.80],
    [0.20, 0.80, 0.85],
    [0.95, 0.55, 0.15],
    [0.90, 0.90, 0.90],
];

const BACKGROUND: f32 = 0.06;
const NUM_SHAPES: usize = 6;

fn inside_shape(kind: usize, dy: f64, dx: f64, r: f64) -> bool {
    match kind {
        0 => dy * dy + dx * dx <= r * r,                      // circle
        1 => dy.abs() <= r && dx.abs() <= r,                  // square
        2 => {
            // upward triangle: vertex at (-r, 0), base at +r
            let t = (dy + r) / (2.0 * r);
            (0.0..=1.0).contains(&t) && dx.abs() <= t * r
        }
        3 => (dx.abs() <= r / 3.0 || dy.abs() <= r / 3.0) && dx.abs() <= r && dy.abs() <= r, // cross
        4 => dy.abs() + dx.abs() <= r,                        // diamond
        _ => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)      // ring
        }
    }
}

/// One sample image for a category: fixed (color, shape) pair per category
/// with per-sample position, scale, and brightness jitter.
pub fn draw_sample(size: usize, category: usize, rng: &mut ChaCha12Rng) -> ImageRGB {
    let s = size as f64;
    let jx: f64 = rng.gen_range(-0.15..0.15);
    let jy: f64 = rng.gen_range(-0.15..0.15);
    let ju: f64 = rng.gen_range(0.0..1.0);
    let brightness: f64 = rng.gen_range(0.85..1.15);

    let cy = s * (0.5 + jy);
    let cx = s * (0.5 + jx);
    let r = (s * (0.22 + 0.08 * ju)).max(0.5);
    let color = PALETTE[category % PALETTE.len()];
    let kind = category % NUM_SHAPES;

    let mut img = ImageRGB::filled(size, size, BACKGROUND);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            if inside_shape(kind, dy, dx, r) {
                for c in 0..3 {
                    let v = (color[c] as f64 * brightness).clamp(0.0, 1.0) as f32;
                    img.set(y, x, c, v);
                }
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ToyDataset {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub model: VoxelForwardModel,
}

/// Generates the full synthetic dataset under `out_dir`: shape PNGs,
/// per-sample feature and voxel DCTF files, the forward model checkpoint,
/// and `manifest.json` with an 80/20 train/test split per category.
pub fn gen_toy_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<ToyDataset> {
    cfg.validate()?;
    let images_dir = out_dir.join("images");
    let features_dir = out_dir.join("features");
    let voxels_dir = out_dir.join("voxels");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&features_dir)?;
    fs::create_dir_all(&voxels_dir)?;

    let model = VoxelForwardModel::generate(
        cfg.num_voxels,
        cfg.feature_dim,
        cfg.sigma_v,
        cfg.seed.wrapping_add(MODEL_SEED_OFFSET),
    );
    let proj = feature_projection(cfg.feature_dim, cfg.seed.wrapping_add(PROJ_SEED_OFFSET));

    let n_total = cfg.num_samples();
    let test_per_cat = cfg.samples_per_category / 5;
    let train_per_cat = cfg.samples_per_category - test_per_cat;

    let mut records = Vec::with_capacity(n_total);
    let mut z = TensorF32::zeros(&[n_total, cfg.feature_dim]);
    let mut index = 0usize;
    for cat in 0..cfg.num_categories {
        for i in 0..cfg.samples_per_category {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64 + 1);
            let img = draw_sample(cfg.image_size, cat, &mut rng);

            let stem = format!("cat{cat:03}_{i:04}");
            let image_rel = PathBuf::from("images").join(format!("{stem}.png"));
            let feature_rel = PathBuf::from("features").join(format!("{stem}.dctf"));
            let voxel_rel = PathBuf::from("voxels").join(format!("{stem}.dctf"));

            save_image(&img, &out_dir.join(&image_rel))?;
            let zi = image_features(&img, &proj)?;
            z.data_mut()[index * cfg.feature_dim..(index + 1) * cfg.feature_dim]
                .copy_from_slice(zi.data());
            write_tensor(&zi, &out_dir.join(&feature_rel))?;

            records.push(SampleRecord {
                image: image_rel,
                category: cat,
                voxels: Some(voxel_rel),
                features: Some(feature_rel),
                split: if i < train_per_cat { Split::Train } else { Split::Test },
            });
            index += 1;
        }
    }

    let x = simulate_voxels(&z, &model, cfg.seed.wrapping_add(VOXEL_SEED_OFFSET))?;
    for (n, record) in records.iter().enumerate() {
        let row = TensorF32::new(vec![cfg.num_voxels], x.row(n).to_vec())?;
        let rel = record.voxels.as_ref().expect("voxel path set above");
        write_tensor(&row, &out_dir.join(rel))?;
    }

    model.save(&out_dir.join("forward_model"))?;
    write_tensor(&proj, &out_dir.join("forward_model").join("projection.dctf"))?;

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    };
    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&manifest, &manifest_path)?;
    log::info!(
        "synthetic dataset: {} samples, {} categories, images {}x{}, F={}, V={}",
        n_total,
        cfg.num_categories,
        cfg.image_size,
        cfg.image_size,
        cfg.feature_dim,
        cfg.num_voxels
    );
    Ok(ToyDataset {
        manifest,
        manifest_path,
        model,
    })
}
