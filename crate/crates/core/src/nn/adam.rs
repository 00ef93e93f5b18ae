//! Adam optimizer with bias-corrected first and second moments. State is
//! kept per parameter tensor in registration order and can be exported for
//! checkpointing so training resumes bit-for-bit.

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<TensorF32>,
    v: Vec<TensorF32>,
    t: u64,
}

impl Adam {
    pub fn new(param_dims: &[Vec<usize>]) -> Self {
        Adam {
            m: param_dims.iter().map(|d| TensorF32::zeros(d)).collect(),
            v: param_dims.iter().map(|d| TensorF32::zeros(d)).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &[&TensorF32]) -> Self {
        Adam::new(&params.iter().map(|p| p.dims().to_vec()).collect::<Vec<_>>())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with the given learning rate. `params` and `grads` must
    /// match the registered tensors in order and shape.
    pub fn step(&mut self, lr: f64, params: &mut [&mut TensorF32], grads: &[&TensorF32]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer state covers {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            g.check_dims("adam grad", p.dims())?;
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = gd[i] as f64;
                let mi = BETA1 * md[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * vd[i] as f64 + (1.0 - BETA2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                pd[i] = (pd[i] as f64 - lr * mhat / (vhat.sqrt() + EPS)) as f32;
            }
        }
        Ok(())
    }

    /// State tensors for checkpointing: moment arrays plus the step counter.
    pub fn export_state(&self) -> (Vec<(String, TensorF32)>, u64) {
        let mut out = Vec::new();
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("adam_m{i}"), m.clone()));
            out.push((format!("adam_v{i}"), v.clone()));
        }
        (out, self.t)
    }

    pub fn import_state(
        &mut self,
        mut lookup: impl FnMut(&str) -> Result<TensorF32>,
        t: u64,
    ) -> Result<()> {
        for i in 0..self.m.len() {
            let m = lookup(&format!("adam_m{i}"))?;
            m.check_dims("adam_m", self.m[i].dims())?;
            let v = lookup(&format!("adam_v{i}"))?;
            v.check_dims("adam_v", self.v[i].dims())?;
            self.m[i] = m;
            self.v[i] = v;
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with zero state, bias correction makes |delta| = lr / (1 + eps/|g|)
        let mut p = TensorF32::new(vec![1], vec![1.0]).unwrap();
        let g = TensorF32::new(vec![1], vec![0.5]).unwrap();
        let mut opt = Adam::for_params(&[&p]);
        opt.step(0.1, &mut [&mut p], &[&g]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn descends_quadratic() {
        // minimize (x - 3)^2 from 0
        let mut p = TensorF32::new(vec![1], vec![0.0]).unwrap();
        let mut opt = Adam::for_params(&[&p]);
        for _ in 0..2000 {
            let x = p.data()[0];
            let g = TensorF32::new(vec![1], vec![2.0 * (x - 3.0)]).unwrap();
            opt.step(0.05, &mut [&mut p], &[&g]).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2, "got {}", p.data()[0]);
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let mut p1 = TensorF32::new(vec![2], vec![1.0, -1.0]).unwrap();
        let mut p2 = p1.clone();
        let g = TensorF32::new(vec![2], vec![0.3, -0.7]).unwrap();

        let mut opt1 = Adam::for_params(&[&p1]);
        opt1.step(0.01, &mut [&mut p1], &[&g]).unwrap();
        let (state, t) = opt1.export_state();

        let mut opt2 = Adam::for_params(&[&p2]);
        opt2.step(0.01, &mut [&mut p2], &[&g]).unwrap();
        opt2.import_state(
            |name| {
                state
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::InvalidConfig(name.to_string()))
            },
            t,
        )
        .unwrap();

        opt1.step(0.01, &mut [&mut p1], &[&g]).unwrap();
        opt2.step(0.01, &mut [&mut p2], &[&g]).unwrap();
        assert_eq!(p1.data(), p2.data());
    }
}
