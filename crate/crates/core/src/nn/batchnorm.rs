//! Per-channel batch normalization.
//!
//! Train mode normalizes with the biased batch variance over `n*h*w` and
//! folds the batch statistics into the running estimates with `momentum`;
//! eval mode uses the running estimates.

use super::Tensor4;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor4,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.c != self.channels() {
            return Err(Error::Dimension(format!(
                "batch norm expects {} channels, got {}",
                self.channels(),
                x.c
            )));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, BnCache)> {
        self.check(x)?;
        let hw = x.plane();
        let count = x.n * hw;
        if count <= 1 {
            return Err(Error::DegenerateBatch(
                "train-mode batch norm needs more than one value per channel".into(),
            ));
        }
        let mut out = x.zeros_like();
        let mut x_hat = x.zeros_like();
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mut sum = 0.0;
            for n in 0..x.n {
                let off = (n * x.c + c) * hw;
                sum += x.data[off..off + hw].iter().sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut ss = 0.0;
            for n in 0..x.n {
                let off = (n * x.c + c) * hw;
                ss += x.data[off..off + hw].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            let var = ss / count as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = is;
            for n in 0..x.n {
                let off = (n * x.c + c) * hw;
                for i in off..off + hw {
                    let xh = (x.data[i] - mean) * is;
                    x_hat.data[i] = xh;
                    out.data[i] = self.gamma[c] * xh + self.beta[c];
                }
            }
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * var;
        }
        Ok((out, BnCache { x_hat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let hw = x.plane();
        let mut out = x.zeros_like();
        for c in 0..x.c {
            let is = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let (scale, shift) = (self.gamma[c] * is, self.beta[c] - self.gamma[c] * self.running_mean[c] * is);
            for n in 0..x.n {
                let off = (n * x.c + c) * hw;
                for i in off..off + hw {
                    out.data[i] = x.data[i] * scale + shift;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor4) -> Result<(Tensor4, BnGrads)> {
        if !grad_out.same_shape(&cache.x_hat) {
            return Err(Error::Dimension("batch norm backward: gradient shape differs from cache".into()));
        }
        let xh = &cache.x_hat;
        let hw = xh.plane();
        let m = (xh.n * hw) as f64;
        let mut gin = grad_out.zeros_like();
        let mut gg = vec![0.0; xh.c];
        let mut gbeta = vec![0.0; xh.c];
        for c in 0..xh.c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for n in 0..xh.n {
                let off = (n * xh.c + c) * hw;
                for i in off..off + hw {
                    sg += grad_out.data[i];
                    sgx += grad_out.data[i] * xh.data[i];
                }
            }
            gg[c] = sgx;
            gbeta[c] = sg;
            let k = self.gamma[c] * cache.inv_std[c] / m;
            for n in 0..xh.n {
                let off = (n * xh.c + c) * hw;
                for i in off..off + hw {
                    gin.data[i] = k * (m * grad_out.data[i] - sg - xh.data[i] * sgx);
                }
            }
        }
        Ok((gin, BnGrads { gamma: gg, beta: gbeta }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rel_err;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut impl Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-3.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut x = random(&mut rng, 3, 2, 4, 5);
        x.data.iter_mut().for_each(|v| *v *= 4.0);
        let mut bn = BatchNorm2d::new(2);
        let (y, _) = bn.forward_train(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..20).map(move |i| (n, i)))
                .map(|(n, i)| y.data[(n * 2 + c) * 20 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / 60.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-6);
            // epsilon shrinks the variance by eps/var, below 1e-6 at this spread
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn eval_with_unit_running_stats_is_near_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 2, 3, 3, 3);
        let bn = BatchNorm2d::new(3);
        let y = bn.forward_eval(&x).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() <= b.abs() * 1e-5);
        }
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let mut bn = BatchNorm2d::new(1);
        assert!(matches!(
            bn.forward_train(&Tensor4::zeros(1, 1, 1, 1)),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn running_stats_track_batch_with_full_momentum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 2, 2, 3, 3);
        let mut bn = BatchNorm2d::new(2);
        bn.momentum = 1.0;
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![-0.2, 0.4];
        let (train, _) = bn.forward_train(&x).unwrap();
        let eval = bn.forward_eval(&x).unwrap();
        for (a, b) in train.data.iter().zip(&eval.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(bn.running_var.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 2, 3, 3, 4);
        let probe = random(&mut rng, 2, 3, 3, 4);
        let mut bn = BatchNorm2d::new(3);
        bn.gamma = vec![0.5, 1.5, -1.0];
        bn.beta = vec![0.1, 0.2, 0.3];
        let loss = |bn: &BatchNorm2d, x: &Tensor4| -> f64 {
            let mut b = bn.clone();
            let (y, _) = b.forward_train(x).unwrap();
            y.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let (gi, g) = bn.backward(&cache, &probe).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            assert!(rel_err(gi.data[i], fd) < 1e-4, "x[{i}]: {} vs {fd}", gi.data[i]);
        }
        for c in 0..3 {
            let mut p = bn.clone();
            p.gamma[c] += h;
            let mut m = bn.clone();
            m.gamma[c] -= h;
            assert!(rel_err(g.gamma[c], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) < 1e-4);
            let mut p = bn.clone();
            p.beta[c] += h;
            let mut m = bn.clone();
            m.beta[c] -= h;
            assert!(rel_err(g.beta[c], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) < 1e-4);
        }
    }
}
