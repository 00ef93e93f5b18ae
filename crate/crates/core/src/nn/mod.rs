//! Minimal neural-network toolkit: layers with hand-written backward
//! passes, a sequential container, Adam, scalar losses, a double-precision
//! shadow forward pass, and a finite-difference gradient checker built on
//! it.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod net;
pub mod shadow;

pub use adam::Adam;
pub use layers::{Conv2d, ConvT2d, Layer, Linear};
pub use net::{Net, NetCache, NetGrads};
pub use shadow::{net_forward_f64, ShadowTensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorF32;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Worst relative error of d(mse(net(x), target))/d(params) against the
    /// f64 shadow oracle over random directions.
    fn gradcheck_params(net: &Net, input: &TensorF32, n_dirs: usize) -> f64 {
        let (y0, cache) = net.forward_cached(input).unwrap();
        let target = TensorF32::from_fn(y0.dims(), |i| 0.1 * (i as f32 % 7.0) - 0.3);
        let target64: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();

        let mut grads = NetGrads::zeros_like(net);
        let dy = TensorF32::new(
            y0.dims().to_vec(),
            loss::mse_grad(y0.data(), target.data()),
        )
        .unwrap();
        net.backward(&cache, &dy, &mut grads).unwrap();

        let theta = gradcheck::flatten(&net.params());
        let grad_flat = gradcheck::flatten(&grads.flat());
        let x64 = ShadowTensor::from(input);
        let mut eval = |flat: &[f64]| {
            let y = net_forward_f64(net, flat, &x64).unwrap();
            loss::mse64(&y.data, &target64)
        };
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        gradcheck::check_many(
            &mut eval,
            &theta,
            &grad_flat,
            n_dirs,
            gradcheck::DEFAULT_H,
            &mut rng,
        )
    }

    #[test]
    fn gradcheck_linear_relu_linear() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let net = Net::new(vec![
            Layer::Linear(Linear::new(6, 5, &mut rng)),
            Layer::Relu,
            Layer::Linear(Linear::new(5, 3, &mut rng)),
        ]);
        let input = TensorF32::from_fn(&[6], |i| 0.3 * i as f32 - 0.8);
        let worst = gradcheck_params(&net, &input, 20);
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn gradcheck_conv_leaky_sigmoid() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let net = Net::new(vec![
            Layer::Conv2d(Conv2d::new(2, 3, 3, 2, 1, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv2d(Conv2d::new(3, 1, 1, 1, 0, &mut rng)),
            Layer::Sigmoid,
        ]);
        let input = TensorF32::from_fn(&[2, 6, 6], |i| ((i * 37) % 11) as f32 / 11.0 - 0.5);
        let worst = gradcheck_params(&net, &input, 20);
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn gradcheck_deconv_stack() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let net = Net::new(vec![
            Layer::Linear(Linear::new(4, 2 * 2 * 2, &mut rng)),
            Layer::Relu,
            Layer::Reshape(vec![2, 2, 2]),
            Layer::ConvT2d(ConvT2d::new(2, 2, 4, 2, 1, &mut rng)),
            Layer::Relu,
            Layer::ConvT2d(ConvT2d::new(2, 1, 4, 2, 1, &mut rng)),
            Layer::Sigmoid,
        ]);
        let input = TensorF32::from_fn(&[4], |i| 0.4 * i as f32 - 0.7);
        let worst = gradcheck_params(&net, &input, 20);
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn gradcheck_input_gradient() {
        // also validate d(loss)/d(input), needed by the GAN generator update
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let net = Net::new(vec![
            Layer::Conv2d(Conv2d::new(1, 2, 3, 1, 1, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Flatten,
            Layer::Linear(Linear::new(2 * 4 * 4, 1, &mut rng)),
            Layer::Sigmoid,
        ]);
        let input = TensorF32::from_fn(&[1, 4, 4], |i| (i as f32 / 16.0) - 0.5);
        let target = [1.0f64];

        let (y0, cache) = net.forward_cached(&input).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        let dy = TensorF32::new(vec![1], loss::mse_grad(y0.data(), &[1.0])).unwrap();
        let dx = net.backward(&cache, &dy, &mut grads).unwrap();

        let theta_x = gradcheck::flatten(&[&input]);
        let grad_x = gradcheck::flatten(&[&dx]);
        let params = gradcheck::flatten(&net.params());
        let mut eval = |flat: &[f64]| {
            let x = ShadowTensor::new(input.dims().to_vec(), flat.to_vec());
            let y = net_forward_f64(&net, &params, &x).unwrap();
            loss::mse64(&y.data, &target)
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let worst = gradcheck::check_many(
            &mut eval,
            &theta_x,
            &grad_x,
            10,
            gradcheck::DEFAULT_H,
            &mut rng,
        );
        assert!(worst < 1e-4, "worst rel err {worst}");
    }
}
