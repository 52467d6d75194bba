//! Residual block: conv3x3 -> BN -> ReLU -> dropout -> conv3x3 -> BN,
//! added to the skip path (identity, or a 1x1 projection when the channel
//! count changes), then ReLU.

use rand::Rng;

use super::batchnorm::{BatchNorm2d, BnCache};
use super::conv::Conv2d;
use super::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub projection: Option<Conv2d>,
    pub dropout: f64,
}

pub(crate) struct BlockCache {
    input: Tensor4,
    bn1: BnCache,
    relu1: Tensor4,
    drop_mask: Option<Vec<f64>>,
    dropped: Tensor4,
    bn2: BnCache,
    output: Tensor4,
}

impl ResidualBlock {
    pub fn new(in_channels: usize, out_channels: usize, dropout: f64, mut draw: impl FnMut() -> f64) -> Self {
        let conv1 = Conv2d::init_uniform(in_channels, out_channels, 3, &mut draw);
        let conv2 = Conv2d::init_uniform(out_channels, out_channels, 3, &mut draw);
        let projection = (in_channels != out_channels).then(|| Conv2d::init_uniform(in_channels, out_channels, 1, &mut draw));
        Self {
            conv1,
            bn1: BatchNorm2d::new(out_channels),
            conv2,
            bn2: BatchNorm2d::new(out_channels),
            projection,
            dropout,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.out_channels
    }

    fn skip(&self, x: &Tensor4) -> Result<Tensor4> {
        match &self.projection {
            Some(p) => p.forward(x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = self.bn1.forward_eval(&self.conv1.forward(x)?)?;
        relu_in_place(&mut h);
        let mut y = self.bn2.forward_eval(&self.conv2.forward(&h)?)?;
        y.add_assign(&self.skip(x)?);
        relu_in_place(&mut y);
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor4, rng: &mut impl Rng) -> Result<(Tensor4, BlockCache)> {
        let (mut relu1, bn1) = self.bn1.forward_train(&self.conv1.forward(x)?)?;
        relu_in_place(&mut relu1);
        let (dropped, drop_mask) = if self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let mask: Vec<f64> = (0..relu1.data.len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mut d = relu1.clone();
            d.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            (d, Some(mask))
        } else {
            (relu1.clone(), None)
        };
        let (mut y, bn2) = self.bn2.forward_train(&self.conv2.forward(&dropped)?)?;
        y.add_assign(&self.skip(x)?);
        relu_in_place(&mut y);
        let cache = BlockCache {
            input: x.clone(),
            bn1,
            relu1,
            drop_mask,
            dropped,
            bn2,
            output: y.clone(),
        };
        Ok((y, cache))
    }

    /// Returns the input gradient (when requested) and appends parameter
    /// gradients to `grads` in [`ResidualBlock::param_names`] order.
    pub(crate) fn backward(
        &self,
        cache: &BlockCache,
        grad_out: &Tensor4,
        need_input_grad: bool,
        grads: &mut Vec<Vec<f64>>,
    ) -> Result<Option<Tensor4>> {
        if !grad_out.same_shape(&cache.output) {
            return Err(Error::Dimension("block backward: gradient shape differs from forward output".into()));
        }
        let mut gs = grad_out.clone();
        relu_backward(&mut gs, &cache.output);
        let (gz2, bn2g) = self.bn2.backward(&cache.bn2, &gs)?;
        let (gd, conv2g) = self.conv2.backward(&cache.dropped, &gz2, true)?;
        let mut gr1 = gd.expect("requested");
        if let Some(mask) = &cache.drop_mask {
            gr1.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        relu_backward(&mut gr1, &cache.relu1);
        let (gz1, bn1g) = self.bn1.backward(&cache.bn1, &gr1)?;
        let (gx1, conv1g) = self.conv1.backward(&cache.input, &gz1, need_input_grad)?;

        grads.push(conv1g.weight);
        grads.push(conv1g.bias);
        grads.push(bn1g.gamma);
        grads.push(bn1g.beta);
        grads.push(conv2g.weight);
        grads.push(conv2g.bias);
        grads.push(bn2g.gamma);
        grads.push(bn2g.beta);

        let gx_skip = match &self.projection {
            Some(p) => {
                let (gx, pg) = p.backward(&cache.input, &gs, need_input_grad)?;
                grads.push(pg.weight);
                grads.push(pg.bias);
                gx
            }
            None => need_input_grad.then(|| gs.clone()),
        };
        Ok(match (gx1, gx_skip) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        })
    }

    /// Trainable tensors with their shapes, in gradient order.
    pub fn param_names(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (i, o) = (self.in_channels(), self.out_channels());
        let mut v = vec![
            ("conv1.weight", vec![o, i, 3, 3]),
            ("conv1.bias", vec![o]),
            ("bn1.gamma", vec![o]),
            ("bn1.beta", vec![o]),
            ("conv2.weight", vec![o, o, 3, 3]),
            ("conv2.bias", vec![o]),
            ("bn2.gamma", vec![o]),
            ("bn2.beta", vec![o]),
        ];
        if self.projection.is_some() {
            v.push(("proj.weight", vec![o, i, 1, 1]));
            v.push(("proj.bias", vec![o]));
        }
        v
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
        ];
        if let Some(p) = &self.projection {
            v.push(&p.weight);
            v.push(&p.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ];
        if let Some(p) = &mut self.projection {
            v.push(&mut p.weight);
            v.push(&mut p.bias);
        }
        v
    }

    /// Non-trainable running statistics.
    pub fn buffer_names(&self) -> [&'static str; 4] {
        ["bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var"]
    }

    pub fn buffers(&self) -> [&Vec<f64>; 4] {
        [&self.bn1.running_mean, &self.bn1.running_var, &self.bn2.running_mean, &self.bn2.running_var]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.bn1.running_mean,
            &mut self.bn1.running_var,
            &mut self.bn2.running_mean,
            &mut self.bn2.running_var,
        ]
    }
}

pub(crate) fn relu_in_place(t: &mut Tensor4) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_backward(grad: &mut Tensor4, output: &Tensor4) {
    grad.data
        .iter_mut()
        .zip(&output.data)
        .for_each(|(g, y)| if *y <= 0.0 { *g = 0.0 });
}
