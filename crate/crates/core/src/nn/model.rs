//! The bed-topography CNN: five residual blocks followed by a 1x1
//! convolution to a single channel and a fixed output de-normalization
//! `offset + scale * y`, so predictions come out in elevation units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, ResidualBlock};
use super::checkpoint::{CheckpointTable, TableEntry};
use super::conv::Conv2d;
use super::Tensor4;
use crate::error::{Error, Result};

pub const BLOCK_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub filters: [usize; BLOCK_COUNT],
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 20,
            filters: [32, 64, 128, 256, 256],
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Narrower filter schedule for desk-scale experiments and gradient checks.
    pub fn reduced(input_channels: usize) -> Self {
        Self {
            input_channels,
            filters: [8, 16, 32, 64, 64],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Parameter gradients in [`ModelState::param_entries`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    head_input: Tensor4,
}

pub struct ModelState {
    config: ModelConfig,
    blocks: Vec<ResidualBlock>,
    head: Conv2d,
    output_offset: f64,
    output_scale: f64,
    mode: Mode,
    dropout_rng: ChaCha8Rng,
    cache: Option<ForwardCache>,
}

impl Clone for ModelState {
    /// Clones parameters and statistics; a pending forward cache is not copied.
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            output_offset: self.output_offset,
            output_scale: self.output_scale,
            mode: self.mode,
            dropout_rng: self.dropout_rng.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for ModelState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelState")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .field("output_offset", &self.output_offset)
            .field("output_scale", &self.output_scale)
            .field("mode", &self.mode)
            .finish()
    }
}

impl ModelState {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.input_channels == 0 || config.filters.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = || rng.random::<f64>();
        let mut blocks = Vec::with_capacity(BLOCK_COUNT);
        let mut c_in = config.input_channels;
        for &c_out in &config.filters {
            blocks.push(ResidualBlock::new(c_in, c_out, config.dropout, &mut draw));
            c_in = c_out;
        }
        let head = Conv2d::init_uniform(c_in, 1, 1, &mut draw);
        let dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            config,
            blocks,
            head,
            output_offset: 0.0,
            output_scale: 1.0,
            mode: Mode::Eval,
            dropout_rng,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ResidualBlock] {
        &mut self.blocks
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output_normalization(&self) -> (f64, f64) {
        (self.output_offset, self.output_scale)
    }

    /// Fixes the affine map from network output to elevation units.
    pub fn set_output_normalization(&mut self, offset: f64, scale: f64) -> Result<()> {
        if !(offset.is_finite() && scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "output normalization needs finite offset and positive scale, got {offset}, {scale}"
            )));
        }
        self.output_offset = offset;
        self.output_scale = scale;
        Ok(())
    }

    /// Restarts the dropout mask stream, making train-mode forwards repeatable.
    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.config.dropout = rate;
        for b in &mut self.blocks {
            b.dropout = rate;
        }
    }

    pub fn forward(&mut self, input: &Tensor4, mode: Mode) -> Result<Tensor4> {
        if input.c != self.config.input_channels {
            return Err(Error::Dimension(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, input.c
            )));
        }
        self.mode = mode;
        self.cache = None;
        let mut out = match mode {
            Mode::Eval => {
                let mut h = input.clone();
                for b in &self.blocks {
                    h = b.forward_eval(&h)?;
                }
                self.head.forward(&h)?
            }
            Mode::Train => {
                let mut caches = Vec::with_capacity(BLOCK_COUNT);
                let mut h = input.clone();
                for b in &mut self.blocks {
                    let (y, c) = b.forward_train(&h, &mut self.dropout_rng)?;
                    caches.push(c);
                    h = y;
                }
                let out = self.head.forward(&h)?;
                self.cache = Some(ForwardCache {
                    blocks: caches,
                    head_input: h,
                });
                out
            }
        };
        let (a, s) = (self.output_offset, self.output_scale);
        out.data.iter_mut().for_each(|v| *v = a + s * *v);
        Ok(out)
    }

    /// Gradients of every trainable parameter for the cached train-mode
    /// forward. Consumes the cache.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<ModelGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached train-mode forward".into()))?;
        let hi = &cache.head_input;
        if grad_out.shape() != [hi.n, 1, hi.h, hi.w] {
            return Err(Error::Dimension(format!(
                "output gradient {:?} does not match forward output {:?}",
                grad_out.shape(),
                [hi.n, 1, hi.h, hi.w]
            )));
        }
        let mut g = grad_out.clone();
        g.data.iter_mut().for_each(|v| *v *= self.output_scale);
        let (gh, head_grads) = self.head.backward(hi, &g, true)?;
        let mut g = gh.expect("requested");

        let mut per_block: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.blocks.len()];
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let need = i > 0;
            let gi = b.backward(c, &g, need, &mut per_block[i])?;
            if let Some(gi) = gi {
                g = gi;
            }
        }
        let mut tensors: Vec<Vec<f64>> = per_block.into_iter().flatten().collect();
        tensors.push(head_grads.weight);
        tensors.push(head_grads.bias);
        Ok(ModelGrads { tensors })
    }

    /// Names and shapes of trainable tensors; this is the gradient,
    /// optimizer-state and checkpoint order.
    pub fn param_entries(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, dims) in b.param_names() {
                v.push((format!("block{}.{name}", i + 1), dims));
            }
        }
        v.push(("head.weight".into(), vec![1, self.head.in_channels, 1, 1]));
        v.push(("head.bias".into(), vec![1]));
        v
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.push(&self.head.weight);
        v.push(&self.head.bias);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            tensors: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn to_table(&self) -> CheckpointTable {
        let c = &self.config;
        let mut t = CheckpointTable::default();
        t.push("meta.input_channels", vec![1], vec![c.input_channels as f64]);
        t.push("meta.filters", vec![BLOCK_COUNT], c.filters.iter().map(|f| *f as f64).collect());
        t.push("meta.dropout", vec![1], vec![c.dropout]);
        t.push("output.offset", vec![1], vec![self.output_offset]);
        t.push("output.scale", vec![1], vec![self.output_scale]);
        for ((name, dims), p) in self.param_entries().into_iter().zip(self.params()) {
            t.push(&name, dims, p.clone());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, buf) in b.buffer_names().iter().zip(b.buffers()) {
                t.push(&format!("block{}.{name}", i + 1), vec![buf.len()], buf.clone());
            }
            t.push(&format!("block{}.bn.config", i + 1), vec![2], vec![b.bn1.momentum, b.bn1.eps]);
        }
        t
    }

    pub fn from_table(table: &CheckpointTable) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> {
            let e = table.require(name)?;
            e.data.first().copied().ok_or_else(|| Error::Format(format!("entry `{name}` is empty")))
        };
        let filters_entry = table.require("meta.filters")?;
        let filters: [usize; BLOCK_COUNT] = filters_entry
            .data
            .iter()
            .map(|f| *f as usize)
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|_| Error::Format("meta.filters must hold five entries".into()))?;
        let config = ModelConfig {
            input_channels: scalar("meta.input_channels")? as usize,
            filters,
            dropout: scalar("meta.dropout")?,
            seed: 0,
        };
        let mut model = Self::new(config)?;
        model.set_output_normalization(scalar("output.offset")?, scalar("output.scale")?)?;
        let entries = model.param_entries();
        for ((name, dims), p) in entries.iter().zip(model.params_mut()) {
            let e = table.require(name)?;
            check_entry(e, dims)?;
            p.copy_from_slice(&e.data);
        }
        for i in 0..model.blocks.len() {
            let names = model.blocks[i].buffer_names();
            let cfg = table.require(&format!("block{}.bn.config", i + 1))?;
            for (name, buf) in names.iter().zip(model.blocks[i].buffers_mut()) {
                let e = table.require(&format!("block{}.{name}", i + 1))?;
                check_entry(e, &[buf.len()])?;
                buf.copy_from_slice(&e.data);
            }
            let b = &mut model.blocks[i];
            for bn in [&mut b.bn1, &mut b.bn2] {
                bn.momentum = cfg.data[0];
                bn.eps = cfg.data[1];
            }
        }
        Ok(model)
    }
}

fn check_entry(e: &TableEntry, dims: &[usize]) -> Result<()> {
    if e.dims != dims {
        return Err(Error::Format(format!(
            "entry `{}` has dims {:?}, expected {:?}",
            e.name, e.dims, dims
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        let data = (0..n * c * h * w).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn full_model_maps_to_single_channel() {
        let mut m = ModelState::new(ModelConfig::default()).unwrap();
        assert_eq!(m.blocks().len(), 5);
        let y = m.forward(&input(4, 20, 16, 16), Mode::Eval).unwrap();
        assert_eq!(y.shape(), [4, 1, 16, 16]);
        assert!(y.all_finite());
    }

    #[test]
    fn eval_is_deterministic() {
        let mut m = ModelState::new(ModelConfig::reduced(20)).unwrap();
        let x = input(2, 20, 8, 8);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut m = ModelState::new(ModelConfig::reduced(20)).unwrap();
        assert!(matches!(m.forward(&input(1, 5, 8, 8), Mode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut m = ModelState::new(ModelConfig::reduced(5)).unwrap();
        assert!(matches!(m.backward(&Tensor4::zeros(1, 1, 4, 4)), Err(Error::State(_))));
        m.forward(&input(1, 5, 4, 4), Mode::Eval).unwrap();
        assert!(matches!(m.backward(&Tensor4::zeros(1, 1, 4, 4)), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut m = ModelState::new(ModelConfig::reduced(5)).unwrap();
        m.forward(&input(2, 5, 6, 6), Mode::Train).unwrap();
        let g = m.backward(&Tensor4::zeros(2, 1, 6, 6)).unwrap();
        assert_eq!(g.tensors.len(), m.param_entries().len());
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_layout_matches_parameter_layout() {
        let mut m = ModelState::new(ModelConfig::reduced(3)).unwrap();
        m.forward(&input(2, 3, 4, 4), Mode::Train).unwrap();
        let g = m.backward(&input(2, 1, 4, 4)).unwrap();
        for ((name, dims), (gt, p)) in m.param_entries().iter().zip(g.tensors.iter().zip(m.params())) {
            assert_eq!(gt.len(), p.len(), "{name}");
            assert_eq!(dims.iter().product::<usize>(), p.len(), "{name}");
        }
    }

    #[test]
    fn train_without_dropout_matches_eval_with_batch_statistics() {
        let mut cfg = ModelConfig::reduced(4);
        cfg.dropout = 0.0;
        let mut m = ModelState::new(cfg).unwrap();
        for b in m.blocks_mut() {
            b.bn1.momentum = 1.0;
            b.bn2.momentum = 1.0;
        }
        let x = input(3, 4, 6, 6);
        let train = m.forward(&x, Mode::Train).unwrap();
        let eval = m.forward(&x, Mode::Eval).unwrap();
        for (a, b) in train.data.iter().zip(&eval.data) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_examples_contribute_equally() {
        let mut cfg = ModelConfig::reduced(3);
        cfg.dropout = 0.0;
        let mut m = ModelState::new(cfg).unwrap();
        let one = input(1, 3, 5, 5);
        let mut two = Tensor4::zeros(2, 3, 5, 5);
        two.data[..75].copy_from_slice(&one.data);
        two.data[75..].copy_from_slice(&one.data);
        let probe1 = input(1, 1, 5, 5);
        let mut probe2 = Tensor4::zeros(2, 1, 5, 5);
        probe2.data[..25].copy_from_slice(&probe1.data);
        probe2.data[25..].copy_from_slice(&probe1.data);
        // Batch statistics of a duplicated batch equal those of the single
        // example, so the doubled batch yields exactly twice the gradient.
        m.forward(&one, Mode::Train).unwrap();
        let g1 = m.backward(&probe1).unwrap().flatten();
        m.forward(&two, Mode::Train).unwrap();
        let g2 = m.backward(&probe2).unwrap().flatten();
        let scale = g1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-9 * scale, "{a} {b}");
        }
    }
}
