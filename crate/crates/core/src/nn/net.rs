//! Sequential container: runs layers in order, caches per-layer inputs on
//! the forward pass and replays them in reverse for gradients.

use crate::error::Result;
use crate::tensor::TensorF32;

use super::layers::Layer;

#[derive(Debug, Clone)]
pub struct Net {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs captured during `forward_cached`; consumed by `backward`.
#[derive(Debug)]
pub struct NetCache {
    pub inputs: Vec<TensorF32>,
}

/// Parameter gradients mirroring `Net::params()` order. Accumulates across
/// calls so batches sum naturally; callers scale and reset.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<Vec<TensorF32>>,
}

impl NetGrads {
    pub fn zeros_like(net: &Net) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| l.params().iter().map(|p| TensorF32::zeros(p.dims())).collect())
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            for g in layer {
                g.data_mut().fill(0.0);
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for layer in &mut self.layers {
            for g in layer {
                for v in g.data_mut() {
                    *v *= s;
                }
            }
        }
    }

    pub fn flat(&self) -> Vec<&TensorF32> {
        self.layers.iter().flatten().collect()
    }
}

impl Net {
    pub fn new(layers: Vec<Layer>) -> Self {
        Net { layers }
    }

    pub fn forward(&self, x: &TensorF32) -> Result<TensorF32> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &TensorF32) -> Result<(TensorF32, NetCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            cur = layer.forward(&cur)?;
        }
        Ok((cur, NetCache { inputs }))
    }

    /// Backpropagates `dy` through the cached pass; returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, cache: &NetCache, dy: &TensorF32, grads: &mut NetGrads) -> Result<TensorF32> {
        debug_assert_eq!(cache.inputs.len(), self.layers.len());
        let mut cur = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            cur = layer.backward(&cache.inputs[i], &cur, &mut grads.layers[i])?;
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&TensorF32> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut TensorF32> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Stable names for checkpointing: `<prefix><index>_<kind>_{w,b}`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &TensorF32)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let names = ["w", "b"];
            for (j, p) in layer.params().into_iter().enumerate() {
                out.push((format!("{prefix}{i}_{}_{}", layer.kind_name(), names[j]), p));
            }
        }
        out
    }

    /// Loads tensors produced by `named_params` back into the layers.
    pub fn load_named_params(
        &mut self,
        prefix: &str,
        mut lookup: impl FnMut(&str) -> Result<TensorF32>,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind_name();
            let names = ["w", "b"];
            for (j, p) in layer.params_mut().into_iter().enumerate() {
                let name = format!("{prefix}{i}_{}_{}", kind, names[j]);
                let t = lookup(&name)?;
                t.check_dims(&name, p.dims())?;
                *p = t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;

    fn tiny_net() -> Net {
        Net::new(vec![
            Layer::Linear(Linear {
                w: TensorF32::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                b: TensorF32::new(vec![2], vec![1.0, -1.0]).unwrap(),
            }),
            Layer::Relu,
        ])
    }

    #[test]
    fn forward_composes() {
        let net = tiny_net();
        let x = TensorF32::new(vec![2], vec![0.5, 0.5]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 0.0]);
    }

    #[test]
    fn backward_through_relu_masks() {
        let net = tiny_net();
        let x = TensorF32::new(vec![2], vec![0.5, 0.5]).unwrap();
        let (y, cache) = net.forward_cached(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 0.0]);
        let mut grads = NetGrads::zeros_like(&net);
        let dy = TensorF32::new(vec![2], vec![1.0, 1.0]).unwrap();
        let dx = net.backward(&cache, &dy, &mut grads).unwrap();
        // second unit is clamped at zero, so only the first row contributes
        assert_eq!(dx.data(), &[1.0, 0.0]);
        assert_eq!(grads.layers[0][1].data(), &[1.0, 0.0]); // db
    }

    #[test]
    fn named_params_roundtrip() {
        let net = tiny_net();
        let named = net.named_params("g");
        assert_eq!(named.len(), 2);
        assert_eq!(named[0].0, "g0_linear_w");
        assert_eq!(named[1].0, "g0_linear_b");

        let stored: Vec<(String, TensorF32)> = named
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let mut other = tiny_net();
        other.params_mut()[0].data_mut()[0] = 99.0;
        other
            .load_named_params("g", |name| {
                stored
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| crate::error::Error::InvalidConfig(name.to_string()))
            })
            .unwrap();
        assert_eq!(other.params()[0].data()[0], 1.0);
    }
}
