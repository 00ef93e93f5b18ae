//! Multi-output ridge regression decoding voxel patterns into feature
//! vectors, solved in closed form on mean-centered data:
//!
//!   W = (Xc' Xc + alpha I)^-1 Xc' Zc          (primal, V <= N)
//!   W = Xc' (Xc Xc' + alpha I)^-1 Zc          (dual, V > N)
//!   b = z_mean - x_mean W
//!
//! The bias is excluded from the penalty via centering. Input columns are
//! optionally z-scored with train statistics (default on; voxel scales are
//! arbitrary); the fitted weights are mapped back to raw input space, so
//! prediction never needs the statistics. With standardization on, alpha
//! penalizes the standardized-space weights.
//!
//! All solver arithmetic is f64; results are stored f32.

use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::TensorF32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Dual iff V > N.
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeOptions {
    pub standardize: bool,
    pub solver: Solver,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            standardize: true,
            solver: Solver::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub w: TensorF32, // [V, F], raw input space
    pub b: TensorF32, // [F]
    pub alpha: f64,
    /// Column statistics recorded when the fit standardized its inputs
    /// (mean, population std). Informational: w/b already include them.
    pub x_mean: Option<TensorF32>,
    pub x_std: Option<TensorF32>,
}

impl RidgeModel {
    pub fn num_voxels(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut params: Vec<(String, &TensorF32)> = vec![
            ("w".to_string(), &self.w),
            ("b".to_string(), &self.b),
        ];
        if let (Some(m), Some(s)) = (&self.x_mean, &self.x_std) {
            params.push(("x_mean".to_string(), m));
            params.push(("x_std".to_string(), s));
        }
        checkpoint::save(
            dir,
            &params,
            serde_json::json!({
                "kind": "ridge_model",
                "alpha": self.alpha,
                "num_voxels": self.num_voxels(),
                "feature_dim": self.feature_dim(),
                "standardized": self.x_mean.is_some(),
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ckpt = checkpoint::load(dir)?;
        let alpha = ckpt
            .meta
            .get("alpha")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: "missing alpha in metadata".to_string(),
            })?;
        let standardized = ckpt
            .meta
            .get("standardized")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        let w = ckpt.take("w")?;
        let b = ckpt.take("b")?;
        if w.ndim() != 2 || b.ndim() != 1 || b.len() != w.dims()[1] {
            return Err(Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: format!("inconsistent ridge dims w={:?} b={:?}", w.dims(), b.dims()),
            });
        }
        let (x_mean, x_std) = if standardized {
            (Some(ckpt.take("x_mean")?), Some(ckpt.take("x_std")?))
        } else {
            (None, None)
        };
        Ok(RidgeModel {
            w,
            b,
            alpha,
            x_mean,
            x_std,
        })
    }
}

// ---------------------------------------------------------------------------

fn check_fit_inputs(x: &TensorF32, z: &TensorF32, alpha: f64) -> Result<()> {
    if x.ndim() != 2 {
        return Err(Error::shape("ridge X", &[0, 0], x.dims()));
    }
    if z.ndim() != 2 {
        return Err(Error::shape("ridge Z", &[0, 0], z.dims()));
    }
    if x.rows() != z.rows() {
        return Err(Error::shape("ridge Z rows", &[x.rows(), z.cols()], z.dims()));
    }
    if x.rows() < 2 {
        return Err(Error::EmptyInput(
            "ridge fit needs at least 2 samples".to_string(),
        ));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

/// In-place Cholesky factorization A = L L' (lower triangle); fails on a
/// non-positive pivot, which is how rank deficiency at alpha=0 surfaces.
fn cholesky(a: &mut [f64], d: usize, alpha: f64) -> Result<()> {
    let max_diag = (0..d).map(|i| a[i * d + i].abs()).fold(0.0f64, f64::max);
    let tol = 1e-12 * max_diag.max(1.0);
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= a[j * d + k] * a[j * d + k];
        }
        if pivot <= tol {
            return Err(Error::SingularSystem { alpha });
        }
        let ljj = pivot.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
    }
    Ok(())
}

/// Solves L L' x = rhs for one column, in place.
fn cholesky_solve_col(l: &[f64], d: usize, rhs: &mut [f64]) {
    for i in 0..d {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * d + k] * rhs[k];
        }
        rhs[i] = s / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * rhs[k];
        }
        rhs[i] = s / l[i * d + i];
    }
}

pub fn fit_ridge(x: &TensorF32, z: &TensorF32, alpha: f64) -> Result<RidgeModel> {
    fit_ridge_with(x, z, alpha, RidgeOptions::default())
}

pub fn fit_ridge_with(
    x: &TensorF32,
    z: &TensorF32,
    alpha: f64,
    opts: RidgeOptions,
) -> Result<RidgeModel> {
    check_fit_inputs(x, z, alpha)?;
    let n = x.rows();
    let v = x.cols();
    let f = z.cols();

    // column means and population stds
    let mut x_mean = vec![0.0f64; v];
    for row in 0..n {
        for (col, m) in x_mean.iter_mut().enumerate() {
            *m += x.at2(row, col) as f64;
        }
    }
    for m in &mut x_mean {
        *m /= n as f64;
    }
    let mut z_mean = vec![0.0f64; f];
    for row in 0..n {
        for (col, m) in z_mean.iter_mut().enumerate() {
            *m += z.at2(row, col) as f64;
        }
    }
    for m in &mut z_mean {
        *m /= n as f64;
    }

    let mut x_scale = vec![1.0f64; v];
    if opts.standardize {
        for col in 0..v {
            let mut ss = 0.0f64;
            for row in 0..n {
                let d = x.at2(row, col) as f64 - x_mean[col];
                ss += d * d;
            }
            let std = (ss / n as f64).sqrt();
            // zero-variance columns carry no signal; leave them unscaled so
            // centering alone zeroes them out
            x_scale[col] = if std > 0.0 { std } else { 1.0 };
        }
    }

    // centered (and scaled) design matrix, row-major [n, v]
    let mut xs = vec![0.0f64; n * v];
    for row in 0..n {
        for col in 0..v {
            xs[row * v + col] = (x.at2(row, col) as f64 - x_mean[col]) / x_scale[col];
        }
    }
    let mut zc = vec![0.0f64; n * f];
    for row in 0..n {
        for col in 0..f {
            zc[row * f + col] = z.at2(row, col) as f64 - z_mean[col];
        }
    }

    let use_dual = match opts.solver {
        Solver::Primal => false,
        Solver::Dual => true,
        Solver::Auto => v > n,
    };

    // standardized-space weights [v, f]
    let ws: Vec<f64> = if !use_dual {
        // A = Xs' Xs + alpha I  (v x v)
        let mut a = vec![0.0f64; v * v];
        for row in 0..n {
            let xr = &xs[row * v..(row + 1) * v];
            for i in 0..v {
                let xi = xr[i];
                if xi == 0.0 {
                    continue;
                }
                for j in i..v {
                    a[i * v + j] += xi * xr[j];
                }
            }
        }
        for i in 0..v {
            for j in 0..i {
                a[i * v + j] = a[j * v + i];
            }
            a[i * v + i] += alpha;
        }
        cholesky(&mut a, v, alpha)?;
        // rhs = Xs' Zc  (v x f), solved column by column
        let mut ws = vec![0.0f64; v * f];
        let mut col = vec![0.0f64; v];
        for fj in 0..f {
            col.iter_mut().for_each(|c| *c = 0.0);
            for row in 0..n {
                let zv = zc[row * f + fj];
                if zv == 0.0 {
                    continue;
                }
                let xr = &xs[row * v..(row + 1) * v];
                for (ci, xv) in col.iter_mut().zip(xr) {
                    *ci += xv * zv;
                }
            }
            cholesky_solve_col(&a, v, &mut col);
            for i in 0..v {
                ws[i * f + fj] = col[i];
            }
        }
        ws
    } else {
        // G = Xs Xs' + alpha I  (n x n)
        let mut g = vec![0.0f64; n * n];
        for i in 0..n {
            let xi = &xs[i * v..(i + 1) * v];
            for j in i..n {
                let xj = &xs[j * v..(j + 1) * v];
                let dot: f64 = xi.iter().zip(xj).map(|(&a, &b)| a * b).sum();
                g[i * n + j] = dot;
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[i * n + j] = g[j * n + i];
            }
            g[i * n + i] += alpha;
        }
        cholesky(&mut g, n, alpha)?;
        // C = G^-1 Zc (n x f), then W = Xs' C
        let mut c = vec![0.0f64; n * f];
        let mut col = vec![0.0f64; n];
        for fj in 0..f {
            for row in 0..n {
                col[row] = zc[row * f + fj];
            }
            cholesky_solve_col(&g, n, &mut col);
            for row in 0..n {
                c[row * f + fj] = col[row];
            }
        }
        let mut ws = vec![0.0f64; v * f];
        for row in 0..n {
            let xr = &xs[row * v..(row + 1) * v];
            let cr = &c[row * f..(row + 1) * f];
            for i in 0..v {
                let xv = xr[i];
                if xv == 0.0 {
                    continue;
                }
                for j in 0..f {
                    ws[i * f + j] += xv * cr[j];
                }
            }
        }
        ws
    };

    // map back to raw input space: w_raw = w_s / scale, b = z_mean - x_mean w_raw
    let mut w = TensorF32::zeros(&[v, f]);
    for i in 0..v {
        for j in 0..f {
            w.data_mut()[i * f + j] = (ws[i * f + j] / x_scale[i]) as f32;
        }
    }
    let mut b = TensorF32::zeros(&[f]);
    for j in 0..f {
        let mut acc = z_mean[j];
        for i in 0..v {
            acc -= x_mean[i] * (ws[i * f + j] / x_scale[i]);
        }
        b.data_mut()[j] = acc as f32;
    }
    if !w.all_finite() || !b.all_finite() {
        return Err(Error::SingularSystem { alpha });
    }

    let (x_mean_t, x_std_t) = if opts.standardize {
        (
            Some(TensorF32::new(vec![v], x_mean.iter().map(|&m| m as f32).collect())?),
            Some(TensorF32::new(vec![v], x_scale.iter().map(|&s| s as f32).collect())?),
        )
    } else {
        (None, None)
    };
    Ok(RidgeModel {
        w,
        b,
        alpha,
        x_mean: x_mean_t,
        x_std: x_std_t,
    })
}

/// Reference minimizer of the same objective,
/// ||Z - (XW + b)||^2 + alpha ||W||^2, by plain full-batch gradient descent
/// in f64 with a step size from a power-iteration bound. Slow; exists to
/// cross-validate the closed-form solver through an independent algorithm.
/// Always operates in raw input space (no standardization).
pub fn fit_ridge_gd(x: &TensorF32, z: &TensorF32, alpha: f64, steps: usize) -> Result<RidgeModel> {
    check_fit_inputs(x, z, alpha)?;
    let n = x.rows();
    let v = x.cols();
    let f = z.cols();
    let x64: Vec<f64> = x.data().iter().map(|&a| a as f64).collect();
    let z64: Vec<f64> = z.data().iter().map(|&a| a as f64).collect();

    // spectral norm of X'X by power iteration
    let mut vec_v: Vec<f64> = (0..v).map(|i| 1.0 + (i as f64) * 0.01).collect();
    let mut lam = 1.0f64;
    for _ in 0..100 {
        // u = X v ; w = X' u
        let mut u = vec![0.0f64; n];
        for row in 0..n {
            u[row] = x64[row * v..(row + 1) * v]
                .iter()
                .zip(&vec_v)
                .map(|(&a, &b)| a * b)
                .sum();
        }
        let mut w = vec![0.0f64; v];
        for row in 0..n {
            let ur = u[row];
            for (wi, xv) in w.iter_mut().zip(&x64[row * v..(row + 1) * v]) {
                *wi += xv * ur;
            }
        }
        lam = w.iter().map(|&a| a * a).sum::<f64>().sqrt();
        if lam == 0.0 {
            break;
        }
        for (vi, wi) in vec_v.iter_mut().zip(&w) {
            *vi = wi / lam;
        }
    }
    // curvature: 2 (lambda_max + alpha) for W, 2 n for b
    let lipschitz = (2.0 * (lam + alpha)).max(2.0 * n as f64);
    let lr = 0.95 / lipschitz;

    let mut w = vec![0.0f64; v * f];
    let mut b = vec![0.0f64; f];
    let mut resid = vec![0.0f64; n * f];
    for _ in 0..steps {
        // resid = XW + b - Z
        for row in 0..n {
            let xr = &x64[row * v..(row + 1) * v];
            for j in 0..f {
                let mut acc = b[j] - z64[row * f + j];
                for i in 0..v {
                    acc += xr[i] * w[i * f + j];
                }
                resid[row * f + j] = acc;
            }
        }
        // grad_W = 2 X' resid + 2 alpha W ; grad_b = 2 colsum(resid)
        for j in 0..f {
            let mut g = 0.0f64;
            for row in 0..n {
                g += resid[row * f + j];
            }
            b[j] -= lr * 2.0 * g;
        }
        for i in 0..v {
            for j in 0..f {
                let mut g = alpha * w[i * f + j];
                for row in 0..n {
                    g += x64[row * v + i] * resid[row * f + j];
                }
                w[i * f + j] -= lr * 2.0 * g;
            }
        }
    }

    Ok(RidgeModel {
        w: TensorF32::new(vec![v, f], w.iter().map(|&a| a as f32).collect())?,
        b: TensorF32::new(vec![f], b.iter().map(|&a| a as f32).collect())?,
        alpha,
        x_mean: None,
        x_std: None,
    })
}

/// Z_hat = X W + b, row-wise.
pub fn predict_features(model: &RidgeModel, x: &TensorF32) -> Result<TensorF32> {
    let v = model.num_voxels();
    let f = model.feature_dim();
    if x.ndim() != 2 || x.cols() != v {
        return Err(Error::shape("predict X", &[0, v], x.dims()));
    }
    let n = x.rows();
    let wd = model.w.data();
    let bd = model.b.data();
    let mut out = TensorF32::zeros(&[n, f]);
    for row in 0..n {
        for j in 0..f {
            let mut acc = bd[j] as f64;
            for i in 0..v {
                acc += (x.at2(row, i) as f64) * (wd[i * f + j] as f64);
            }
            out.data_mut()[row * f + j] = acc as f32;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RegressionMetrics {
    pub r_squared: f64,
    pub rmse: f64,
    /// Target dimensions with zero variance, excluded from the R^2 average.
    pub excluded_dims: Vec<usize>,
}

/// Root-mean-square error over all N*F entries. Defined for any matching
/// shapes (unlike R^2, which needs target variance).
pub fn rmse(z_true: &TensorF32, z_hat: &TensorF32) -> Result<f64> {
    z_hat.check_dims("rmse prediction", z_true.dims())?;
    let n = z_true.len().max(1) as f64;
    let ss: f64 = z_true
        .data()
        .iter()
        .zip(z_hat.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok((ss / n).sqrt())
}

/// Decoding accuracy: per-dimension R^2 = 1 - SSres/SStot averaged
/// uniformly over target dims (zero-variance dims excluded and reported),
/// plus RMSE over all entries.
pub fn regression_metrics(z_true: &TensorF32, z_hat: &TensorF32) -> Result<RegressionMetrics> {
    if z_true.ndim() != 2 {
        return Err(Error::shape("metrics target", &[0, 0], z_true.dims()));
    }
    z_hat.check_dims("metrics prediction", z_true.dims())?;
    let n = z_true.rows();
    let f = z_true.cols();
    if n < 2 {
        return Err(Error::EmptyInput(
            "regression metrics need at least 2 samples".to_string(),
        ));
    }

    let mut r2_sum = 0.0f64;
    let mut included = 0usize;
    let mut excluded = Vec::new();
    for j in 0..f {
        let mean: f64 = (0..n).map(|row| z_true.at2(row, j) as f64).sum::<f64>() / n as f64;
        let mut ss_tot = 0.0f64;
        let mut ss_res = 0.0f64;
        for row in 0..n {
            let t = z_true.at2(row, j) as f64;
            let p = z_hat.at2(row, j) as f64;
            ss_tot += (t - mean) * (t - mean);
            ss_res += (t - p) * (t - p);
        }
        if ss_tot == 0.0 {
            excluded.push(j);
        } else {
            r2_sum += 1.0 - ss_res / ss_tot;
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::UndefinedRSquared);
    }
    Ok(RegressionMetrics {
        r_squared: r2_sum / included as f64,
        rmse: rmse(z_true, z_hat)?,
        excluded_dims: excluded,
    })
}

// ---------------------------------------------------------------------------
