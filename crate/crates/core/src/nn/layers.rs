//! Network layers with explicit forward and backward passes. Everything
//! operates on single samples (channel-first [C, H, W] for spatial layers);
//! batching is a loop plus gradient accumulation in the callers.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

/// Centered uniform with fan-in scaling: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_uniform(dims: &[usize], fan_in: usize, rng: &mut ChaCha12Rng) -> TensorF32 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    TensorF32::from_fn(dims, |_| rng.gen_range(-bound..bound) as f32)
}

#[inline]
fn idx3(c: usize, y: usize, x: usize, h: usize, w: usize) -> usize {
    (c * h + y) * w + x
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: TensorF32, // [out, in]
    pub b: TensorF32, // [out]
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        // biases share the fan-in init: exact-zero biases park post-ReLU
        // units exactly on the kink, which breaks finite-difference checks
        Linear {
            w: init_uniform(&[out_dim, in_dim], in_dim, rng),
            b: init_uniform(&[out_dim], in_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn forward(&self, x: &TensorF32) -> Result<TensorF32> {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        if x.len() != in_dim {
            return Err(Error::shape("Linear input", &[in_dim], x.dims()));
        }
        let xd = x.data();
        let wd = self.w.data();
        let mut y = TensorF32::zeros(&[out_dim]);
        for (o, yo) in y.data_mut().iter_mut().enumerate() {
            let row = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = self.b.data()[o] as f64;
            for (wv, xv) in row.iter().zip(xd) {
                acc += (*wv as f64) * (*xv as f64);
            }
            *yo = acc as f32;
        }
        Ok(y)
    }

    /// Accumulates into dw/db, returns dx.
    pub fn backward(
        &self,
        x: &TensorF32,
        dy: &TensorF32,
        dw: &mut TensorF32,
        db: &mut TensorF32,
    ) -> TensorF32 {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let xd = x.data();
        let dyd = dy.data();
        let wd = self.w.data();
        let mut dx = TensorF32::zeros(&[in_dim]);
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        for o in 0..out_dim {
            let g = dyd[o];
            db.data_mut()[o] += g;
            let row = &wd[o * in_dim..(o + 1) * in_dim];
            let drow = &mut dwd[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                drow[i] += g * xd[i];
                dxd[i] += g * row[i];
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: TensorF32, // [oc, ic, k, k]
    pub b: TensorF32, // [oc]
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            w: init_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            b: init_uniform(&[out_ch], fan_in, rng),
            stride,
            pad,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn out_ch(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.w.dims()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::InvalidConfig(format!(
                "conv kernel {k} larger than padded input {h}x{w}"
            )));
        }
        Ok((
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        ))
    }

    pub fn forward(&self, x: &TensorF32) -> Result<TensorF32> {
        let (ic, oc, k) = (self.in_ch(), self.out_ch(), self.kernel());
        if x.ndim() != 3 || x.dims()[0] != ic {
            return Err(Error::shape("Conv2d input", &[ic, 0, 0], x.dims()));
        }
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (oh, ow) = self.out_hw(h, w)?;
        let xd = x.data();
        let wd = self.w.data();
        let bd = self.b.data();
        let mut y = TensorF32::zeros(&[oc, oh, ow]);
        let yd = y.data_mut();
        for o in 0..oc {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut acc = bd[o] as f64;
                    for c in 0..ic {
                        for i in 0..k {
                            let iy = (yy * self.stride + i) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..k {
                                let ix = (xx * self.stride + j) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv = wd[((o * ic + c) * k + i) * k + j];
                                let xv = xd[idx3(c, iy as usize, ix as usize, h, w)];
                                acc += (wv as f64) * (xv as f64);
                            }
                        }
                    }
                    yd[idx3(o, yy, xx, oh, ow)] = acc as f32;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &TensorF32,
        dy: &TensorF32,
        dw: &mut TensorF32,
        db: &mut TensorF32,
    ) -> TensorF32 {
        let (ic, oc, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (oh, ow) = (dy.dims()[1], dy.dims()[2]);
        let xd = x.data();
        let wd = self.w.data();
        let dyd = dy.data();
        let mut dx = TensorF32::zeros(&[ic, h, w]);
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for o in 0..oc {
            for yy in 0..oh {
                for xx in 0..ow {
                    let g = dyd[idx3(o, yy, xx, oh, ow)];
                    if g == 0.0 {
                        continue;
                    }
                    dbd[o] += g;
                    for c in 0..ic {
                        for i in 0..k {
                            let iy = (yy * self.stride + i) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..k {
                                let ix = (xx * self.stride + j) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wi = ((o * ic + c) * k + i) * k + j;
                                let xi = idx3(c, iy as usize, ix as usize, h, w);
                                dwd[wi] += g * xd[xi];
                                dxd[xi] += g * wd[wi];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------

/// Transposed convolution (deconvolution). Weight layout [ic, oc, k, k];
/// output spatial size is (in - 1) * stride + kernel - 2 * pad, which for
/// kernel 4, stride 2, pad 1 is an exact x2 upsampling.
#[derive(Debug, Clone)]
pub struct ConvT2d {
    pub w: TensorF32, // [ic, oc, k, k]
    pub b: TensorF32, // [oc]
    pub stride: usize,
    pub pad: usize,
}

impl ConvT2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        ConvT2d {
            w: init_uniform(&[in_ch, out_ch, kernel, kernel], fan_in, rng),
            b: init_uniform(&[out_ch], fan_in, rng),
            stride,
            pad,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn out_ch(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.dims()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel() - 2 * self.pad,
            (w - 1) * self.stride + self.kernel() - 2 * self.pad,
        )
    }

    pub fn forward(&self, x: &TensorF32) -> Result<TensorF32> {
        let (ic, oc, k) = (self.in_ch(), self.out_ch(), self.kernel());
        if x.ndim() != 3 || x.dims()[0] != ic {
            return Err(Error::shape("ConvT2d input", &[ic, 0, 0], x.dims()));
        }
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (oh, ow) = self.out_hw(h, w);
        let xd = x.data();
        let wd = self.w.data();
        let mut y = TensorF32::zeros(&[oc, oh, ow]);
        {
            let yd = y.data_mut();
            for c in 0..ic {
                for iy in 0..h {
                    for ix in 0..w {
                        let v = xd[idx3(c, iy, ix, h, w)];
                        if v == 0.0 {
                            continue;
                        }
                        for o in 0..oc {
                            for i in 0..k {
                                let oy = (iy * self.stride + i) as isize - self.pad as isize;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                for j in 0..k {
                                    let ox = (ix * self.stride + j) as isize - self.pad as isize;
                                    if ox < 0 || ox >= ow as isize {
                                        continue;
                                    }
                                    let wv = wd[((c * oc + o) * k + i) * k + j];
                                    yd[idx3(o, oy as usize, ox as usize, oh, ow)] += v * wv;
                                }
                            }
                        }
                    }
                }
            }
            for o in 0..oc {
                let bv = self.b.data()[o];
                for yy in 0..oh {
                    for xx in 0..ow {
                        yd[idx3(o, yy, xx, oh, ow)] += bv;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &TensorF32,
        dy: &TensorF32,
        dw: &mut TensorF32,
        db: &mut TensorF32,
    ) -> TensorF32 {
        let (ic, oc, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (oh, ow) = (dy.dims()[1], dy.dims()[2]);
        let xd = x.data();
        let wd = self.w.data();
        let dyd = dy.data();
        let mut dx = TensorF32::zeros(&[ic, h, w]);
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for o in 0..oc {
            let mut acc = 0.0f64;
            for yy in 0..oh {
                for xx in 0..ow {
                    acc += dyd[idx3(o, yy, xx, oh, ow)] as f64;
                }
            }
            dbd[o] += acc as f32;
        }
        for c in 0..ic {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = xd[idx3(c, iy, ix, h, w)];
                    let mut dxv = 0.0f64;
                    for o in 0..oc {
                        for i in 0..k {
                            let oy = (iy * self.stride + i) as isize - self.pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for j in 0..k {
                                let ox = (ix * self.stride + j) as isize - self.pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let wi = ((c * oc + o) * k + i) * k + j;
                                let g = dyd[idx3(o, oy as usize, ox as usize, oh, ow)];
                                dwd[wi] += g * xv;
                                dxv += (g as f64) * (wd[wi] as f64);
                            }
                        }
                    }
                    dxd[idx3(c, iy, ix, h, w)] += dxv as f32;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    ConvT2d(ConvT2d),
    Relu,
    LeakyRelu(f32),
    Sigmoid,
    /// Reinterpret the value under fixed dims.
    Reshape(Vec<usize>),
    Flatten,
}

impl Layer {
    pub fn forward(&self, x: &TensorF32) -> Result<TensorF32> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::ConvT2d(l) => l.forward(x),
            Layer::Relu => Ok(map(x, |v| v.max(0.0))),
            Layer::LeakyRelu(a) => {
                let a = *a;
                Ok(map(x, move |v| if v > 0.0 { v } else { a * v }))
            }
            Layer::Sigmoid => Ok(map(x, sigmoid)),
            Layer::Reshape(dims) => x.clone().reshape(dims),
            Layer::Flatten => {
                let n = x.len();
                x.clone().reshape(&[n])
            }
        }
    }

    /// Gradient of the layer: `x` is the cached forward input, `dy` the
    /// upstream gradient. Parameter gradients accumulate into `grads`
    /// (w then b for parameterized layers).
    pub fn backward(
        &self,
        x: &TensorF32,
        dy: &TensorF32,
        grads: &mut [TensorF32],
    ) -> Result<TensorF32> {
        match self {
            Layer::Linear(l) => {
                let (dw, db) = split_wb(grads);
                Ok(l.backward(x, dy, dw, db))
            }
            Layer::Conv2d(l) => {
                let (dw, db) = split_wb(grads);
                Ok(l.backward(x, dy, dw, db))
            }
            Layer::ConvT2d(l) => {
                let (dw, db) = split_wb(grads);
                Ok(l.backward(x, dy, dw, db))
            }
            Layer::Relu => Ok(zip_map(x, dy, |xv, g| if xv > 0.0 { g } else { 0.0 })),
            Layer::LeakyRelu(a) => {
                let a = *a;
                Ok(zip_map(x, dy, move |xv, g| if xv > 0.0 { g } else { a * g }))
            }
            Layer::Sigmoid => Ok(zip_map(x, dy, |xv, g| {
                let s = sigmoid(xv);
                g * s * (1.0 - s)
            })),
            Layer::Reshape(_) | Layer::Flatten => dy.clone().reshape(x.dims()),
        }
    }

    /// Parameter tensors in update order (w, b), empty for stateless layers.
    pub fn params(&self) -> Vec<&TensorF32> {
        match self {
            Layer::Linear(l) => vec![&l.w, &l.b],
            Layer::Conv2d(l) => vec![&l.w, &l.b],
            Layer::ConvT2d(l) => vec![&l.w, &l.b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut TensorF32> {
        match self {
            Layer::Linear(l) => vec![&mut l.w, &mut l.b],
            Layer::Conv2d(l) => vec![&mut l.w, &mut l.b],
            Layer::ConvT2d(l) => vec![&mut l.w, &mut l.b],
            _ => vec![],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Conv2d(_) => "conv",
            Layer::ConvT2d(_) => "deconv",
            Layer::Relu => "relu",
            Layer::LeakyRelu(_) => "leaky_relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Reshape(_) => "reshape",
            Layer::Flatten => "flatten",
        }
    }
}

fn split_wb(grads: &mut [TensorF32]) -> (&mut TensorF32, &mut TensorF32) {
    let (a, b) = grads.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn map(x: &TensorF32, f: impl Fn(f32) -> f32) -> TensorF32 {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = f(*v);
    }
    y
}

fn zip_map(x: &TensorF32, dy: &TensorF32, f: impl Fn(f32, f32) -> f32) -> TensorF32 {
    debug_assert_eq!(x.len(), dy.len());
    let mut out = TensorF32::zeros(x.dims());
    for ((o, &xv), &g) in out.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
        *o = f(xv, g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_forward_hand_value() {
        let l = Linear {
            w: TensorF32::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            b: TensorF32::new(vec![2], vec![0.5, -0.5]).unwrap(),
        };
        let x = TensorF32::new(vec![3], vec![1.0, 1.0, 2.0]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0 + 2.0 + 6.0 + 0.5, -1.0 + 2.0 - 0.5]);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel, single channel, weight 1 -> identity
        let c = Conv2d {
            w: TensorF32::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            b: TensorF32::zeros(&[1]),
            stride: 1,
            pad: 0,
        };
        let x = TensorF32::from_fn(&[1, 3, 3], |i| i as f32);
        assert_eq!(c.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn conv_shape_k3s2p1() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let c = Conv2d::new(3, 8, 3, 2, 1, &mut rng);
        let x = TensorF32::zeros(&[3, 32, 32]);
        let y = c.forward(&x).unwrap();
        assert_eq!(y.dims(), &[8, 16, 16]);
    }

    #[test]
    fn deconv_doubles_k4s2p1() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let d = ConvT2d::new(4, 2, 4, 2, 1, &mut rng);
        let x = TensorF32::zeros(&[4, 7, 7]);
        let y = d.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 14, 14]);
    }

    #[test]
    fn deconv_matches_manual_scatter() {
        // single input pixel scatters the kernel, minus the padding ring
        let d = ConvT2d {
            w: TensorF32::from_fn(&[1, 1, 4, 4], |i| i as f32),
            b: TensorF32::zeros(&[1]),
            stride: 2,
            pad: 1,
        };
        let mut x = TensorF32::zeros(&[1, 2, 2]);
        x.data_mut()[0] = 1.0; // pixel (0,0)
        let y = d.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 4, 4]);
        // output (oy, ox) receives w[oy+1, ox+1] for iy=ix=0 (offset by pad)
        for oy in 0..3 {
            for ox in 0..3 {
                let expected = ((oy + 1) * 4 + (ox + 1)) as f32;
                assert_eq!(y.data()[oy * 4 + ox], expected, "at ({oy},{ox})");
            }
        }
        assert_eq!(y.data()[3], 0.0); // column 3 untouched by pixel (0,0)
    }

    #[test]
    fn activations() {
        let x = TensorF32::new(vec![4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        assert_eq!(
            Layer::Relu.forward(&x).unwrap().data(),
            &[0.0, 0.0, 0.0, 3.0]
        );
        assert_eq!(
            Layer::LeakyRelu(0.2).forward(&x).unwrap().data(),
            &[-0.4, -0.1, 0.0, 3.0]
        );
        let s = Layer::Sigmoid.forward(&x).unwrap();
        assert!((s.data()[2] - 0.5).abs() < 1e-7);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
