//! One function per subcommand. Every artifact lands under the run's --out
//! directory; metric files are JSON with paths relative to that directory
//! so identical runs serialize byte-identically.

use std::path::{Path, PathBuf};

use serde::Serialize;

use neurodecode::cgan::{train_gan, GanPair, GanRegistry};
use neurodecode::encoder::{classification_accuracy, train_encoder};
use neurodecode::io::dctf::write_tensor;
use neurodecode::io::image::{load_image, resize_bilinear, save_image, ImageRGB};
use neurodecode::io::manifest::{load_manifest, save_manifest, DatasetManifest, Split};
use neurodecode::pipeline::{
    check_split_disjoint, evaluate_decoding, evaluate_reconstruction, joint_finetune,
    load_split_data, reconstruct_from_voxels, CategorySource, EvalReport, FinetunePair,
    PipelineBundle, SplitData, VoxelClassifier,
};
use neurodecode::recon::{recon_forward, train_recon, ReconParams};
use neurodecode::ridge::{fit_ridge_with, predict_features, regression_metrics, RidgeModel};
use neurodecode::synth::gen_toy_dataset;
use neurodecode::tensor::TensorF32;
use neurodecode::{Error, Result};

use crate::config::{CategorySourceKind, RunConfig};

fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

fn manifest_path(out: &Path) -> PathBuf {
    dataset_dir(out).join("manifest.json")
}

fn load_run_manifest(out: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(out);
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "no dataset manifest at {}; run `synth` first",
            path.display()
        )));
    }
    load_manifest(&path)
}

fn require_checkpoint(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing checkpoint {}; run `{produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.synth_config();
    let ds = gen_toy_dataset(&sc, &dataset_dir(out))?;
    write_json(
        &out.join("synth").join("metrics.json"),
        &serde_json::json!({
            "num_samples": ds.manifest.records.len(),
            "num_categories": sc.num_categories,
            "image_size": sc.image_size,
            "feature_dim": sc.feature_dim,
            "num_voxels": sc.num_voxels,
            "sigma_v": sc.sigma_v,
        }),
    )?;
    log::info!(
        "synth: {} samples under {}",
        ds.manifest.records.len(),
        dataset_dir(out).display()
    );
    Ok(())
}

pub fn run_train_encoder(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut manifest = load_run_manifest(out)?;
    let spec = cfg.encoder_spec(manifest.num_categories());
    let params = train_encoder(&manifest, &spec, &cfg.encoder_hyper())?;
    params.save(&out.join("encoder").join("checkpoint"))?;

    let train_acc = classification_accuracy(&params, &manifest, Split::Train)?;
    let test_acc = classification_accuracy(&params, &manifest, Split::Test)?;

    // export features for every record and repoint the manifest at them;
    // the synthetic feature files stay on disk untouched
    let root = manifest.root.clone();
    std::fs::create_dir_all(root.join("features_enc"))?;
    for r in &mut manifest.records {
        let img = load_image(&root.join(&r.image))?;
        let (z, _) = params.encode(&img)?;
        let stem = r
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidConfig(format!("bad image path {}", r.image.display())))?;
        let rel = PathBuf::from("features_enc").join(format!("{stem}.dctf"));
        write_tensor(&z, &root.join(&rel))?;
        r.features = Some(rel);
    }
    save_manifest(&manifest, &manifest_path(out))?;

    write_json(
        &out.join("encoder").join("metrics.json"),
        &serde_json::json!({
            "steps": cfg.encoder.steps,
            "feature_dim": spec.feature_dim(),
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
        }),
    )?;
    log::info!("encoder: train accuracy {train_acc:.3}, test accuracy {test_acc:.3}");
    Ok(())
}

pub fn run_fit_decoder(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_run_manifest(out)?;
    check_split_disjoint(&manifest)?;
    let train = load_split_data(&manifest, Split::Train)?;
    let test = load_split_data(&manifest, Split::Test)?;

    let opts = cfg.ridge_options();
    let model = fit_ridge_with(&train.x, &train.z, cfg.decoder.alpha, opts)?;
    model.save(&out.join("decoder").join("model"))?;

    let clf = VoxelClassifier::fit(
        &train.x,
        &train.categories,
        manifest.num_categories(),
        cfg.eval.classifier_alpha,
    )?;
    clf.save(&out.join("decoder").join("classifier"))?;

    let z_hat = predict_features(&model, &test.x)?;
    let m = regression_metrics(&test.z, &z_hat)?;
    let clf_acc = clf.accuracy(&test.x, &test.categories)?;
    write_json(
        &out.join("decoder").join("metrics.json"),
        &serde_json::json!({
            "alpha": cfg.decoder.alpha,
            "standardize": cfg.decoder.standardize,
            "r_squared": m.r_squared,
            "rmse": m.rmse,
            "classifier_accuracy": clf_acc,
            "num_train": train.len(),
            "num_test": test.len(),
        }),
    )?;
    log::info!(
        "decoder: alpha {} held-out R^2 {:.4}, RMSE {:.4}",
        cfg.decoder.alpha,
        m.r_squared,
        m.rmse
    );
    Ok(())
}

/// Training pairs for R: each train record's feature vector against its
/// image, resized to R's output dims when they differ.
fn recon_pairs(train: &SplitData, out_dims: [usize; 3]) -> Result<Vec<(TensorF32, ImageRGB)>> {
    let f = train.z.cols();
    let mut pairs = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let z = TensorF32::new(vec![f], train.z.row(i).to_vec())?;
        let img = load_image(&train.images[i])?;
        let img = if img.height() == out_dims[0] && img.width() == out_dims[1] {
            img
        } else {
            resize_bilinear(&img, out_dims[0], out_dims[1])?
        };
        pairs.push((z, img));
    }
    Ok(pairs)
}

pub fn run_train_recon(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_run_manifest(out)?;
    let train = load_split_data(&manifest, Split::Train)?;
    let spec = cfg.recon_spec();
    let pairs = recon_pairs(&train, spec.output_dims())?;
    let outcome = train_recon(&pairs, &spec, &cfg.recon_hyper())?;

    let dir = out.join("recon").join("checkpoint");
    outcome
        .params
        .save(&dir, Some((&outcome.optimizer, outcome.steps)))?;
    write_json(
        &out.join("recon").join("metrics.json"),
        &serde_json::json!({
            "epochs": cfg.recon.epochs,
            "steps": outcome.steps,
            "initial_loss": outcome.loss_history.first(),
            "final_loss": outcome.loss_history.last(),
            "diverged": outcome.diverged,
        }),
    )?;
    if let Some((step, value)) = outcome.diverged {
        return Err(Error::NonFiniteLoss { step, value });
    }
    log::info!(
        "recon: {} steps, final batch loss {:?}",
        outcome.steps,
        outcome.loss_history.last()
    );
    Ok(())
}

pub fn run_train_gan(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_run_manifest(out)?;
    let train = load_split_data(&manifest, Split::Train)?;
    let recon_dir = out.join("recon").join("checkpoint");
    require_checkpoint(&recon_dir, "train-recon")?;
    let (mut recon, _) = ReconParams::load(&recon_dir)?;

    let gen_spec = cfg.gen_spec();
    let disc_spec = cfg.disc_spec();
    let s = gen_spec.image_size;

    let cats: Vec<usize> = match cfg.gan.category {
        Some(c) => vec![c],
        None => {
            let mut cs: Vec<usize> = train.categories.clone();
            cs.sort_unstable();
            cs.dedup();
            cs
        }
    };
    if cfg.gan.theta_recon > 0.0 && cats.len() != 1 {
        return Err(Error::InvalidConfig(
            "joint fine-tuning (theta_recon > 0) updates the shared reconstruction net; \
             restrict the run to one category with --category"
                .to_string(),
        ));
    }

    let gan_dir = out.join("gan");
    let mut registry = if gan_dir.exists() {
        GanRegistry::load(&gan_dir)?
    } else {
        GanRegistry::new()
    };

    let mut metrics = serde_json::Map::new();
    for &cat in &cats {
        let mut pairs = Vec::new();
        for i in 0..train.len() {
            if train.categories[i] != cat {
                continue;
            }
            let z = TensorF32::new(vec![train.z.cols()], train.z.row(i).to_vec())?;
            let coarse = recon_forward(&recon, &z)?;
            let coarse = if coarse.height() == s && coarse.width() == s {
                coarse
            } else {
                resize_bilinear(&coarse, s, s)?
            };
            let target = load_image(&train.images[i])?;
            let target = if target.height() == s && target.width() == s {
                target
            } else {
                resize_bilinear(&target, s, s)?
            };
            pairs.push(GanPair {
                category: cat,
                coarse,
                target,
            });
        }
        if pairs.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no train samples for category {cat}"
            )));
        }
        let gcfg = cfg.gan_config(cat);
        let trained = train_gan(&pairs, &gen_spec, &disc_spec, &gcfg)?;
        let mut gen = trained.gen;
        let mut disc = trained.disc;
        let mut history = trained.history;

        if cfg.gan.theta_recon > 0.0 {
            let ft_pairs: Vec<FinetunePair> = train
                .images
                .iter()
                .enumerate()
                .filter(|(i, _)| train.categories[*i] == cat)
                .map(|(i, img_path)| {
                    let z = TensorF32::new(vec![train.z.cols()], train.z.row(i).to_vec())?;
                    let img = load_image(img_path)?;
                    let dims = recon.spec.output_dims();
                    let target_recon = if img.height() == dims[0] && img.width() == dims[1] {
                        img.clone()
                    } else {
                        resize_bilinear(&img, dims[0], dims[1])?
                    };
                    let target_gan = if img.height() == s && img.width() == s {
                        img
                    } else {
                        resize_bilinear(&img, s, s)?
                    };
                    Ok(FinetunePair {
                        z,
                        target_recon,
                        target_gan,
                    })
                })
                .collect::<Result<_>>()?;
            let joint =
                joint_finetune(&mut recon, &mut gen, &mut disc, &ft_pairs, &gcfg, cfg.gan.epochs)?;
            history.extend(joint);
            recon.save(&recon_dir, None)?;
        }

        metrics.insert(
            cat.to_string(),
            serde_json::json!({
                "steps": history.len(),
                "pairs": pairs.len(),
                "first": history.first(),
                "final": history.last(),
                "clamped_total": history.iter().map(|h| h.clamped).sum::<usize>(),
            }),
        );
        registry.insert(cat, gen, disc);
    }

    registry.save(&gan_dir, &cfg.gan_config(0))?;
    write_json(&out.join("gan").join("metrics.json"), &metrics)?;
    log::info!("gan: trained categories {cats:?}");
    Ok(())
}

fn load_bundle(cfg: &RunConfig, out: &Path) -> Result<PipelineBundle> {
    let decoder_dir = out.join("decoder");
    require_checkpoint(&decoder_dir.join("model"), "fit-decoder")?;
    let recon_dir = out.join("recon").join("checkpoint");
    require_checkpoint(&recon_dir, "train-recon")?;

    let ridge = RidgeModel::load(&decoder_dir.join("model"))?;
    let (recon, _) = ReconParams::load(&recon_dir)?;
    let gan_dir = out.join("gan");
    let gans = if gan_dir.exists() {
        GanRegistry::load(&gan_dir)?
    } else {
        log::warn!("no trained GANs under {}; falling back to coarse output", gan_dir.display());
        GanRegistry::new()
    };
    let category_source = match cfg.eval.category_source {
        CategorySourceKind::Given => CategorySource::Given,
        CategorySourceKind::Classifier => {
            CategorySource::Classifier(VoxelClassifier::load(&decoder_dir.join("classifier"))?)
        }
    };
    Ok(PipelineBundle {
        ridge,
        recon,
        gans,
        category_source,
        noise: cfg.eval.noise,
        fallback_to_coarse: cfg.eval.fallback_to_coarse,
    })
}

pub fn run_reconstruct(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_run_manifest(out)?;
    let test = load_split_data(&manifest, Split::Test)?;
    let bundle = load_bundle(cfg, out)?;
    let labels = matches!(bundle.category_source, CategorySource::Given)
        .then_some(test.categories.as_slice());
    let recs = reconstruct_from_voxels(&bundle, &test.x, labels, cfg.pipeline_seed())?;

    let dir = out.join("reconstructions");
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        let refined_rel = PathBuf::from("reconstructions").join(format!("refined_{i:04}.png"));
        let coarse_rel = PathBuf::from("reconstructions").join(format!("coarse_{i:04}.png"));
        save_image(&r.refined, &out.join(&refined_rel))?;
        save_image(&r.coarse_resized, &out.join(&coarse_rel))?;
        files.push(refined_rel);
    }
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "num_samples": recs.len(),
            "fallbacks": recs.iter().filter(|r| r.fell_back).count(),
            "categories": recs.iter().map(|r| r.category).collect::<Vec<_>>(),
            "refined": files,
        }),
    )?;
    log::info!("reconstruct: {} refined images under {}", recs.len(), dir.display());
    Ok(())
}

pub fn run_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_run_manifest(out)?;
    let decoding = evaluate_decoding(&manifest, &cfg.decoder.alphas, cfg.ridge_options())?;

    let test = load_split_data(&manifest, Split::Test)?;
    let bundle = load_bundle(cfg, out)?;
    let labels = matches!(bundle.category_source, CategorySource::Given)
        .then_some(test.categories.as_slice());
    let recs = reconstruct_from_voxels(&bundle, &test.x, labels, cfg.pipeline_seed())?;
    let originals: Vec<ImageRGB> = test
        .images
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<_>>()?;

    let mut reconstruction = evaluate_reconstruction(&originals, &recs, None)?;
    let n = cfg.eval.grid_samples.min(recs.len()).max(1);
    let grid_rel = PathBuf::from("eval").join("grid.png");
    std::fs::create_dir_all(out.join("eval"))?;
    evaluate_reconstruction(&originals[..n], &recs[..n], Some(&out.join(&grid_rel)))?;
    reconstruction.grid = Some(grid_rel);

    let report = EvalReport {
        decoding: Some(decoding),
        reconstruction: Some(reconstruction),
    };
    if !report.all_finite() {
        return Err(Error::InvalidConfig(
            "evaluation produced a non-finite metric".to_string(),
        ));
    }
    write_json(&out.join("eval").join("metrics.json"), &report)?;
    log::info!(
        "evaluate: best alpha {}, mean refined MSE {:.5}",
        report.decoding.as_ref().map(|d| d.best_alpha).unwrap_or(f64::NAN),
        report.reconstruction.as_ref().map(|r| r.mean_mse).unwrap_or(f64::NAN),
    );
    Ok(())
}
