use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-7,
        }
    }
}

/// AdamW with bias-corrected moments:
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * lambda * theta`.
#[derive(Clone, Debug)]
pub struct AdamW<S: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

fn check_grads<S: Scalar>(params: &[Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {i} is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} is not finite; step rejected"
            )));
        }
    }
    Ok(())
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    /// One update; non-finite gradients reject the whole step.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.len() != params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one, eps, lr, wd) = (S::one(), S::of(c.eps), S::of(lr), S::of(c.weight_decay));
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *theta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_update() {
        let mut p = vec![Tensor::<f64>::full([3], 2.0)];
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Tensor::zeros([3])], 1e-3).unwrap();
        for &v in p[0].data() {
            assert!((v - 2.0 * (1.0 - 1e-10)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::<f64>::new([2], vec![1.0, 1.0]).unwrap()];
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[Tensor::new([2], vec![0.3, -5.0]).unwrap()], 1e-3).unwrap();
        assert!((p[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[0].data()[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut p = vec![Tensor::<f64>::new([3], vec![1.0, -2.0, 0.5]).unwrap()];
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        let f = |t: &Tensor<f64>| t.data().iter().map(|x| x * x).sum::<f64>();
        let mut last = f(&p[0]);
        for _ in 0..5 {
            let g = p[0].map(|x| 2.0 * x);
            opt.step(&mut p, &[g], 0.1).unwrap();
            let now = f(&p[0]);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![Tensor::<f32>::zeros([2])];
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        let g = Tensor::new([2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(opt.step(&mut p, &[g], 1e-3), Err(Error::NonFinite(_))));
        assert_eq!(opt.step, 0);
        assert_eq!(p[0].data(), &[0.0, 0.0]);
    }
}
