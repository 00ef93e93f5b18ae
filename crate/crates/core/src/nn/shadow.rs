//! Double-precision shadow forward pass. Replays a `Net`'s architecture
//! with all arithmetic and storage in f64, taking parameter values from a
//! caller-supplied flat vector instead of the stored f32 tensors.
//!
//! This exists for finite-difference gradient checking: perturbing f32
//! parameters directly drowns small directional derivatives in storage
//! rounding noise, while the shadow pass is smooth to f64 precision. It
//! doubles as an independent check of the f32 forward implementations.

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

use super::layers::Layer;
use super::net::Net;

#[derive(Debug, Clone)]
pub struct ShadowTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl ShadowTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        ShadowTensor { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        ShadowTensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }
}

impl From<&TensorF32> for ShadowTensor {
    fn from(t: &TensorF32) -> Self {
        ShadowTensor {
            dims: t.dims().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

struct Cursor<'a> {
    flat: &'a [f64],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.off + n > self.flat.len() {
            return Err(Error::InvalidConfig(format!(
                "shadow parameter vector too short: need {} more values, have {}",
                n,
                self.flat.len() - self.off
            )));
        }
        let s = &self.flat[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }
}

#[inline]
fn idx3(c: usize, y: usize, x: usize, h: usize, w: usize) -> usize {
    (c * h + y) * w + x
}

/// Forward pass of `net` in f64 with parameters read from `flat_params`
/// (ordered exactly like `gradcheck::flatten(&net.params())`).
pub fn net_forward_f64(net: &Net, flat_params: &[f64], x: &ShadowTensor) -> Result<ShadowTensor> {
    let mut cur = Cursor {
        flat: flat_params,
        off: 0,
    };
    let mut v = x.clone();
    for layer in &net.layers {
        v = layer_forward_f64(layer, &mut cur, &v)?;
    }
    if cur.off != flat_params.len() {
        return Err(Error::InvalidConfig(format!(
            "shadow parameter vector too long: {} values unused",
            flat_params.len() - cur.off
        )));
    }
    Ok(v)
}

fn layer_forward_f64(layer: &Layer, cur: &mut Cursor, x: &ShadowTensor) -> Result<ShadowTensor> {
    match layer {
        Layer::Linear(l) => {
            let (out_dim, in_dim) = (l.out_dim(), l.in_dim());
            let w = cur.take(out_dim * in_dim)?;
            let b = cur.take(out_dim)?;
            let mut y = ShadowTensor::zeros(&[out_dim]);
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                y.data[o] = b[o]
                    + row
                        .iter()
                        .zip(&x.data)
                        .map(|(&wv, &xv)| wv * xv)
                        .sum::<f64>();
            }
            Ok(y)
        }
        Layer::Conv2d(l) => {
            let (ic, oc, k) = (l.in_ch(), l.out_ch(), l.kernel());
            let w = cur.take(oc * ic * k * k)?;
            let b = cur.take(oc)?;
            let (h, wd) = (x.dims[1], x.dims[2]);
            let (oh, ow) = l.out_hw(h, wd)?;
            let mut y = ShadowTensor::zeros(&[oc, oh, ow]);
            for o in 0..oc {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ic {
                            for i in 0..k {
                                let iy = (yy * l.stride + i) as isize - l.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for j in 0..k {
                                    let ix = (xx * l.stride + j) as isize - l.pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((o * ic + c) * k + i) * k + j]
                                        * x.data[idx3(c, iy as usize, ix as usize, h, wd)];
                                }
                            }
                        }
                        y.data[idx3(o, yy, xx, oh, ow)] = acc;
                    }
                }
            }
            Ok(y)
        }
        Layer::ConvT2d(l) => {
            let (ic, oc, k) = (l.in_ch(), l.out_ch(), l.kernel());
            let w = cur.take(ic * oc * k * k)?;
            let b = cur.take(oc)?;
            let (h, wd) = (x.dims[1], x.dims[2]);
            let (oh, ow) = l.out_hw(h, wd);
            let mut y = ShadowTensor::zeros(&[oc, oh, ow]);
            for c in 0..ic {
                for iy in 0..h {
                    for ix in 0..wd {
                        let v = x.data[idx3(c, iy, ix, h, wd)];
                        if v == 0.0 {
                            continue;
                        }
                        for o in 0..oc {
                            for i in 0..k {
                                let oy = (iy * l.stride + i) as isize - l.pad as isize;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                for j in 0..k {
                                    let ox = (ix * l.stride + j) as isize - l.pad as isize;
                                    if ox < 0 || ox >= ow as isize {
                                        continue;
                                    }
                                    y.data[idx3(o, oy as usize, ox as usize, oh, ow)] +=
                                        v * w[((c * oc + o) * k + i) * k + j];
                                }
                            }
                        }
                    }
                }
            }
            for o in 0..oc {
                for yy in 0..oh {
                    for xx in 0..ow {
                        y.data[idx3(o, yy, xx, oh, ow)] += b[o];
                    }
                }
            }
            Ok(y)
        }
        Layer::Relu => Ok(ShadowTensor::new(
            x.dims.clone(),
            x.data.iter().map(|&v| v.max(0.0)).collect(),
        )),
        Layer::LeakyRelu(a) => {
            let a = *a as f64;
            Ok(ShadowTensor::new(
                x.dims.clone(),
                x.data
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { a * v })
                    .collect(),
            ))
        }
        Layer::Sigmoid => Ok(ShadowTensor::new(
            x.dims.clone(),
            x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        )),
        Layer::Reshape(dims) => Ok(ShadowTensor::new(dims.clone(), x.data.clone())),
        Layer::Flatten => Ok(ShadowTensor::new(vec![x.data.len()], x.data.clone())),
    }
}
