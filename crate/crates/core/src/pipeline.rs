//! End-to-end reconstruction (voxels -> decoded features -> coarse image ->
//! per-category refinement) and the evaluation reports behind the decoding
//! table and comparison grids.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::cgan::{
    gan_step, gen_forward, DiscParams, GanConfig, GanLosses, GanRegistry, GenParams, NoiseMode,
    NoiseSample,
};
use crate::encoder::argmax;
use crate::error::{Error, Result};
use crate::io::dctf::read_tensor;
use crate::io::image::{resize_bilinear, save_image, ImageRGB};
use crate::io::manifest::{DatasetManifest, Split};
use crate::nn::{loss, Adam, NetGrads};
use crate::recon::{recon_forward, ReconParams};
use crate::ridge::{
    fit_ridge_with, predict_features, regression_metrics, RidgeModel, RidgeOptions,
};
use crate::tensor::TensorF32;

/// Near-zero penalty standing in for the unregularized linear baseline.
pub const BASELINE_ALPHA: f64 = 1e-8;
/// Gutter width between grid cells, in pixels.
pub const GRID_GUTTER: usize = 2;

// -- dataset loading -----------------------------------------------------------

/// One split's tensors stacked into matrices, rows in manifest order.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub x: TensorF32, // [N, V] voxels
    pub z: TensorF32, // [N, F] features
    pub categories: Vec<usize>,
    pub images: Vec<PathBuf>, // resolved against the manifest root
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Loads and stacks the voxel and feature files of one split. Every record
/// must carry both paths and all rows must agree on V and F.
pub fn load_split_data(manifest: &DatasetManifest, split: Split) -> Result<SplitData> {
    let records: Vec<_> = manifest.split_records(split).collect();
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("manifest has no {split:?} records")));
    }
    let mut x_rows: Vec<TensorF32> = Vec::with_capacity(records.len());
    let mut z_rows: Vec<TensorF32> = Vec::with_capacity(records.len());
    let mut categories = Vec::with_capacity(records.len());
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        let vox = r
            .voxels
            .as_ref()
            .ok_or_else(|| Error::DanglingPath(r.image.clone()))?;
        let feat = r
            .features
            .as_ref()
            .ok_or_else(|| Error::DanglingPath(r.image.clone()))?;
        let xv = read_tensor(manifest.resolve(vox))?;
        let zv = read_tensor(manifest.resolve(feat))?;
        if xv.ndim() != 1 {
            return Err(Error::shape("voxel file", &[0], xv.dims()));
        }
        if zv.ndim() != 1 {
            return Err(Error::shape("feature file", &[0], zv.dims()));
        }
        if let Some(prev) = x_rows.first() {
            xv.check_dims("voxel file", prev.dims())?;
        }
        if let Some(prev) = z_rows.first() {
            zv.check_dims("feature file", prev.dims())?;
        }
        x_rows.push(xv);
        z_rows.push(zv);
        categories.push(r.category);
        images.push(manifest.resolve(&r.image));
    }
    let x = TensorF32::from_rows(&x_rows.iter().map(|t| t.data()).collect::<Vec<_>>())?;
    let z = TensorF32::from_rows(&z_rows.iter().map(|t| t.data()).collect::<Vec<_>>())?;
    Ok(SplitData {
        x,
        z,
        categories,
        images,
    })
}

/// Leakage guard: the same image file must never sit in both splits.
pub fn check_split_disjoint(manifest: &DatasetManifest) -> Result<()> {
    let train: BTreeSet<&Path> = manifest
        .split_records(Split::Train)
        .map(|r| r.image.as_path())
        .collect();
    for r in manifest.split_records(Split::Test) {
        if train.contains(r.image.as_path()) {
            return Err(Error::InvalidConfig(format!(
                "image {} appears in both train and test splits",
                r.image.display()
            )));
        }
    }
    Ok(())
}

// -- category source -------------------------------------------------------------

/// Linear category decoder: ridge regression from voxels to one-hot
/// targets, argmax at prediction time.
#[derive(Debug, Clone)]
pub struct VoxelClassifier {
    pub model: RidgeModel,
    pub num_categories: usize,
}

impl VoxelClassifier {
    pub fn fit(
        x: &TensorF32,
        categories: &[usize],
        num_categories: usize,
        alpha: f64,
    ) -> Result<Self> {
        if x.ndim() != 2 || x.rows() != categories.len() {
            return Err(Error::shape("classifier voxels", &[categories.len(), 0], x.dims()));
        }
        if num_categories < 2 {
            return Err(Error::SingleCategory);
        }
        if let Some(&bad) = categories.iter().find(|&&c| c >= num_categories) {
            return Err(Error::CategoryOutOfRange {
                id: bad,
                count: num_categories,
            });
        }
        let mut onehot = TensorF32::zeros(&[categories.len(), num_categories]);
        for (row, &c) in categories.iter().enumerate() {
            onehot.set2(row, c, 1.0);
        }
        let model = fit_ridge_with(x, &onehot, alpha, RidgeOptions::default())?;
        Ok(VoxelClassifier {
            model,
            num_categories,
        })
    }

    pub fn predict(&self, x: &TensorF32) -> Result<Vec<usize>> {
        let scores = predict_features(&self.model, x)?;
        Ok((0..scores.rows()).map(|r| argmax(scores.row(r))).collect())
    }

    pub fn accuracy(&self, x: &TensorF32, categories: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != categories.len() {
            return Err(Error::shape("classifier labels", &[pred.len()], &[categories.len()]));
        }
        let hits = pred.iter().zip(categories).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / pred.len() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(&dir.join("model"))?;
        std::fs::write(
            dir.join("classifier.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "num_categories": self.num_categories
            }))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(dir.join("classifier.json"))?;
        let meta: serde_json::Value = serde_json::from_str(&raw)?;
        let num_categories = meta
            .get("num_categories")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: "missing num_categories".to_string(),
            })? as usize;
        Ok(VoxelClassifier {
            model: RidgeModel::load(&dir.join("model"))?,
            num_categories,
        })
    }
}

/// Where the per-sample category id comes from at reconstruction time.
#[derive(Debug, Clone)]
pub enum CategorySource {
    /// The caller passes ground-truth labels.
    Given,
    /// Categories are decoded from the voxels themselves.
    Classifier(VoxelClassifier),
}

// -- pipeline bundle -------------------------------------------------------------

pub struct PipelineBundle {
    pub ridge: RidgeModel,
    pub recon: ReconParams,
    pub gans: GanRegistry,
    pub category_source: CategorySource,
    pub noise: NoiseMode,
    /// Use the resized coarse output when a category has no trained GAN;
    /// when false such categories are an error.
    pub fallback_to_coarse: bool,
}

impl PipelineBundle {
    pub fn validate(&self) -> Result<()> {
        if self.ridge.feature_dim() != self.recon.spec.feature_dim {
            return Err(Error::shape(
                "ridge output vs recon input",
                &[self.recon.spec.feature_dim],
                &[self.ridge.feature_dim()],
            ));
        }
        let mut sizes = self.gans.models.values().map(|(g, _)| g.spec.image_size);
        if let Some(first) = sizes.next() {
            if sizes.any(|s| s != first) {
                return Err(Error::InvalidConfig(
                    "GAN registry mixes image sizes".to_string(),
                ));
            }
        }
        if let CategorySource::Classifier(c) = &self.category_source {
            if c.model.num_voxels() != self.ridge.num_voxels() {
                return Err(Error::shape(
                    "classifier voxels vs ridge voxels",
                    &[self.ridge.num_voxels()],
                    &[c.model.num_voxels()],
                ));
            }
        }
        Ok(())
    }

    fn gan_size(&self) -> Option<usize> {
        self.gans.models.values().next().map(|(g, _)| g.spec.image_size)
    }
}

/// One decoded sample: the coarse render, its resize to GAN dims, and the
/// refined output (equal to the resized coarse image when `fell_back`).
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub category: usize,
    pub coarse: ImageRGB,
    pub coarse_resized: ImageRGB,
    pub refined: ImageRGB,
    pub fell_back: bool,
}

/// Full pipeline on a voxel matrix [N, V]: decode features, render coarse
/// images, refine each through its category's generator with seeded noise.
pub fn reconstruct_from_voxels(
    bundle: &PipelineBundle,
    x: &TensorF32,
    categories: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<Reconstruction>> {
    bundle.validate()?;
    if x.ndim() != 2 || x.cols() != bundle.ridge.num_voxels() {
        return Err(Error::shape(
            "reconstruction voxels",
            &[0, bundle.ridge.num_voxels()],
            x.dims(),
        ));
    }
    let n = x.rows();
    let cats: Vec<usize> = match &bundle.category_source {
        CategorySource::Given => {
            let c = categories.ok_or_else(|| {
                Error::InvalidConfig(
                    "category source is `given` but no labels were supplied".to_string(),
                )
            })?;
            if c.len() != n {
                return Err(Error::shape("category labels", &[n], &[c.len()]));
            }
            c.to_vec()
        }
        CategorySource::Classifier(clf) => clf.predict(x)?,
    };

    let z_hat = predict_features(&bundle.ridge, x)?;
    let f = bundle.ridge.feature_dim();
    let gan_size = bundle.gan_size();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (i, &category) in cats.iter().enumerate() {
        let z = TensorF32::new(vec![f], z_hat.row(i).to_vec())?;
        let coarse = recon_forward(&bundle.recon, &z)?;
        let (coarse_resized, noise) = match gan_size {
            Some(s) => {
                let resized = if coarse.height() == s && coarse.width() == s {
                    coarse.clone()
                } else {
                    resize_bilinear(&coarse, s, s)?
                };
                let w = match bundle.noise {
                    NoiseMode::Gaussian => NoiseSample::standard_normal(s, s, &mut rng),
                    NoiseMode::Zero => NoiseSample::zeros(s, s),
                };
                (resized, Some(w))
            }
            None => (coarse.clone(), None),
        };
        let (refined, fell_back) = match (bundle.gans.get(category), &noise) {
            (Some((g, _)), Some(w)) => (gen_forward(g, &coarse_resized, w)?, false),
            _ => {
                if !bundle.fallback_to_coarse {
                    return Err(Error::UnknownCategory(category));
                }
                (coarse_resized.clone(), true)
            }
        };
        out.push(Reconstruction {
            category,
            coarse,
            coarse_resized,
            refined,
            fell_back,
        });
    }
    Ok(out)
}

// -- decoding evaluation ------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodingRow {
    pub alpha: f64,
    pub baseline: bool,
    pub r_squared: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodingReport {
    pub rows: Vec<DecodingRow>,
    pub best_alpha: f64,
    pub num_train: usize,
    pub num_test: usize,
}

impl DecodingReport {
    pub fn all_finite(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.r_squared.is_finite() && r.rmse.is_finite())
    }

    /// Best ridge row by held-out R^2, excluding the baseline.
    pub fn best_row(&self) -> &DecodingRow {
        self.rows
            .iter()
            .filter(|r| !r.baseline)
            .max_by(|a, b| a.r_squared.total_cmp(&b.r_squared))
            .expect("report always holds >= 1 ridge row")
    }

    pub fn baseline_row(&self) -> &DecodingRow {
        self.rows
            .iter()
            .find(|r| r.baseline)
            .expect("report always holds the baseline row")
    }
}

/// Fits ridge on the train matrices at each alpha plus the near-zero
/// baseline, and reports held-out R^2/RMSE per fit.
pub fn evaluate_decoding_matrices(
    train: &SplitData,
    test: &SplitData,
    alphas: &[f64],
    opts: RidgeOptions,
) -> Result<DecodingReport> {
    if alphas.is_empty() {
        return Err(Error::EmptyInput("alpha grid".to_string()));
    }
    let mut rows = Vec::with_capacity(alphas.len() + 1);
    for &alpha in alphas {
        let model = fit_ridge_with(&train.x, &train.z, alpha, opts)?;
        let z_hat = predict_features(&model, &test.x)?;
        let m = regression_metrics(&test.z, &z_hat)?;
        rows.push(DecodingRow {
            alpha,
            baseline: false,
            r_squared: m.r_squared,
            rmse: m.rmse,
        });
    }
    let model = fit_ridge_with(&train.x, &train.z, BASELINE_ALPHA, opts)?;
    let z_hat = predict_features(&model, &test.x)?;
    let m = regression_metrics(&test.z, &z_hat)?;
    rows.push(DecodingRow {
        alpha: BASELINE_ALPHA,
        baseline: true,
        r_squared: m.r_squared,
        rmse: m.rmse,
    });
    let best_alpha = rows
        .iter()
        .filter(|r| !r.baseline)
        .max_by(|a, b| a.r_squared.total_cmp(&b.r_squared))
        .map(|r| r.alpha)
        .expect("alphas checked non-empty");
    Ok(DecodingReport {
        rows,
        best_alpha,
        num_train: train.len(),
        num_test: test.len(),
    })
}

/// Manifest-level decoding evaluation: loads both splits' voxel and feature
/// files, guards against split leakage, and runs the alpha sweep.
pub fn evaluate_decoding(
    manifest: &DatasetManifest,
    alphas: &[f64],
    opts: RidgeOptions,
) -> Result<DecodingReport> {
    check_split_disjoint(manifest)?;
    let train = load_split_data(manifest, Split::Train)?;
    let test = load_split_data(manifest, Split::Test)?;
    evaluate_decoding_matrices(&train, &test, alphas, opts)
}

// -- reconstruction evaluation ---------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub l1: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReconReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_l1: f64,
    pub mean_mse: f64,
    /// Samples whose category had no trained GAN.
    pub fallbacks: usize,
    pub grid: Option<PathBuf>,
}

impl ReconReport {
    pub fn all_finite(&self) -> bool {
        self.mean_l1.is_finite()
            && self.mean_mse.is_finite()
            && self
                .per_image
                .iter()
                .all(|m| m.l1.is_finite() && m.mse.is_finite())
    }
}

/// The full evaluation document the CLI serializes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoding: Option<DecodingReport>,
    pub reconstruction: Option<ReconReport>,
}

impl EvalReport {
    pub fn all_finite(&self) -> bool {
        self.decoding.as_ref().map_or(true, |d| d.all_finite())
            && self.reconstruction.as_ref().map_or(true, |r| r.all_finite())
    }
}

/// Tiles equally sized images into a grid with white 2-pixel gutters.
/// All rows must have the same number of columns.
pub fn build_grid(rows: &[Vec<ImageRGB>]) -> Result<ImageRGB> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::EmptyInput("image grid".to_string()));
    }
    let cols = rows[0].len();
    let (h, w) = (rows[0][0].height(), rows[0][0].width());
    for row in rows {
        if row.len() != cols {
            return Err(Error::InvalidConfig("ragged image grid".to_string()));
        }
        for img in row {
            img.tensor().check_dims("grid cell", &[h, w, 3])?;
        }
    }
    let gh = rows.len() * h + (rows.len() - 1) * GRID_GUTTER;
    let gw = cols * w + (cols - 1) * GRID_GUTTER;
    let mut canvas = ImageRGB::filled(gh, gw, 1.0);
    for (r, row) in rows.iter().enumerate() {
        let y0 = r * (h + GRID_GUTTER);
        for (c, img) in row.iter().enumerate() {
            let x0 = c * (w + GRID_GUTTER);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        canvas.set(y0 + y, x0 + x, ch, img.get(y, x, ch));
                    }
                }
            }
        }
    }
    Ok(canvas)
}

/// Per-image L1/MSE of the refined outputs against the originals (resized
/// to the refined dims first), plus an optional comparison grid PNG with
/// rows (original, coarse, refined).
pub fn evaluate_reconstruction(
    originals: &[ImageRGB],
    recons: &[Reconstruction],
    grid_path: Option<&Path>,
) -> Result<ReconReport> {
    if originals.len() != recons.len() {
        return Err(Error::shape(
            "originals vs reconstructions",
            &[recons.len()],
            &[originals.len()],
        ));
    }
    if recons.is_empty() {
        return Err(Error::EmptyInput("reconstruction evaluation".to_string()));
    }
    let mut per_image = Vec::with_capacity(recons.len());
    let mut resized_originals = Vec::with_capacity(recons.len());
    for (orig, rec) in originals.iter().zip(recons) {
        let (h, w) = (rec.refined.height(), rec.refined.width());
        let resized = if orig.height() == h && orig.width() == w {
            orig.clone()
        } else {
            resize_bilinear(orig, h, w)?
        };
        per_image.push(ImageMetrics {
            l1: loss::l1(rec.refined.data(), resized.data()),
            mse: loss::mse(rec.refined.data(), resized.data()),
        });
        resized_originals.push(resized);
    }
    let n = per_image.len() as f64;
    let mean_l1 = per_image.iter().map(|m| m.l1).sum::<f64>() / n;
    let mean_mse = per_image.iter().map(|m| m.mse).sum::<f64>() / n;

    let grid = match grid_path {
        Some(path) => {
            let grid_rows = vec![
                resized_originals,
                recons.iter().map(|r| r.coarse_resized.clone()).collect(),
                recons.iter().map(|r| r.refined.clone()).collect(),
            ];
            let canvas = build_grid(&grid_rows)?;
            save_image(&canvas, path)?;
            Some(path.to_path_buf())
        }
        None => None,
    };

    Ok(ReconReport {
        per_image,
        mean_l1,
        mean_mse,
        fallbacks: recons.iter().filter(|r| r.fell_back).count(),
        grid,
    })
}

// -- joint fine-tuning ----------------------------------------------------------------

/// One fine-tuning sample: decoded features plus the ground-truth image at
/// both working resolutions.
#[derive(Debug, Clone)]
pub struct FinetunePair {
    pub z: TensorF32,
    pub target_recon: ImageRGB,
    pub target_gan: ImageRGB,
}

/// Joint fine-tune honoring `theta_recon` > 0: each step runs one GAN
/// update on R's current coarse outputs, then one supervised update on R
/// weighted by theta. The resize between R and G is treated as a constant,
/// so the adversarial gradient stops at G's input and R descends only its
/// own reconstruction loss.
pub fn joint_finetune(
    recon: &mut ReconParams,
    gen: &mut GenParams,
    disc: &mut DiscParams,
    pairs: &[FinetunePair],
    cfg: &GanConfig,
    epochs: usize,
) -> Result<Vec<GanLosses>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("joint fine-tuning needs >= 1 pair".to_string()));
    }
    let s = gen.spec.image_size;
    let recon_dims = recon.spec.output_dims();
    let f = recon.spec.feature_dim;
    for p in pairs {
        p.z.check_dims("fine-tune features", &[f])?;
        p.target_recon
            .tensor()
            .check_dims("fine-tune recon target", &recon_dims)?;
        p.target_gan
            .tensor()
            .check_dims("fine-tune GAN target", &[s, s, 3])?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut opt_g = Adam::for_params(&gen.params());
    let mut opt_d = Adam::for_params(&disc.net.params());
    let mut opt_r = Adam::for_params(&recon.net.params());
    let mut r_grads = NetGrads::zeros_like(&recon.net);
    let mut history = Vec::new();
    let mut step = 0usize;

    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let mut coarse = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let img = recon_forward(recon, &pairs[i].z)?;
                coarse.push(if img.height() == s && img.width() == s {
                    img
                } else {
                    resize_bilinear(&img, s, s)?
                });
            }
            let items: Vec<(&ImageRGB, &ImageRGB)> = chunk
                .iter()
                .zip(&coarse)
                .map(|(&i, c)| (c, &pairs[i].target_gan))
                .collect();
            let record = gan_step(gen, disc, &items, cfg, &mut opt_g, &mut opt_d, &mut rng)?;
            if !record.all_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: record.g_objective,
                });
            }
            history.push(record);

            if cfg.theta_recon > 0.0 {
                r_grads.reset();
                let mut batch_loss = 0.0f64;
                for &i in chunk {
                    let (y, cache) = recon.net.forward_cached(&pairs[i].z)?;
                    let t = pairs[i].target_recon.to_chw();
                    batch_loss += loss::mse(y.data(), t.data());
                    let dy = TensorF32::new(y.dims().to_vec(), loss::mse_grad(y.data(), t.data()))?;
                    recon.net.backward(&cache, &dy, &mut r_grads)?;
                }
                batch_loss *= cfg.theta_recon / chunk.len() as f64;
                if !batch_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        value: batch_loss,
                    });
                }
                r_grads.scale((cfg.theta_recon / chunk.len() as f64) as f32);
                opt_r.step(cfg.lr, &mut recon.net.params_mut(), &r_grads.flat())?;
            }
            step += 1;
        }
    }
    Ok(history)
}
