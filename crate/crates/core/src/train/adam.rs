//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::CheckpointTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Gradients are scanned for non-finite entries before any
    /// parameter is touched.
    pub fn step(
        &mut self,
        params: &mut [&mut Vec<f64>],
        grads: &[Vec<f64>],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (t, g) in grads.iter().enumerate() {
            if g.len() != self.m[t].len() || params[t].len() != g.len() {
                return Err(Error::Dimension(format!(
                    "tensor {t}: optimizer state {}, parameter {}, gradient {}",
                    self.m[t].len(),
                    params[t].len(),
                    g.len()
                )));
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: names.get(t).cloned().unwrap_or_else(|| format!("tensor{t}")),
                    index,
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (t, g) in grads.iter().enumerate() {
            let (m, v, p) = (&mut self.m[t], &mut self.v[t], &mut *params[t]);
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Moments stored as `adam.m.{name}` / `adam.v.{name}` plus `adam.step`.
    pub fn to_table(&self, names: &[String]) -> CheckpointTable {
        let mut t = CheckpointTable::default();
        t.push("adam.step", vec![1], vec![self.step as f64]);
        for (i, name) in names.iter().enumerate() {
            t.push(&format!("adam.m.{name}"), vec![self.m[i].len()], self.m[i].clone());
            t.push(&format!("adam.v.{name}"), vec![self.v[i].len()], self.v[i].clone());
        }
        t
    }

    pub fn from_table(config: AdamConfig, table: &CheckpointTable, names: &[String]) -> Result<Self> {
        let step = table.require("adam.step")?.data[0];
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(Error::Format(format!("invalid adam.step {step}")));
        }
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in names {
            m.push(table.require(&format!("adam.m.{name}"))?.data.clone());
            v.push(table.require(&format!("adam.v.{name}"))?.data.clone());
        }
        Ok(Self {
            config,
            step: step as u64,
            m,
            v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["w".to_string()]
    }

    #[test]
    fn first_step_magnitude() {
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut p = vec![0.0];
        adam.step(&mut [&mut p], &[vec![1.0]], &names(), 0.01).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut [&mut p], &[vec![3.0, 1.0]], &names(), 0.1).unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moment()[0].clone();
        adam.step(&mut [&mut p], &[vec![0.0, 0.0]], &names(), 0.0).unwrap();
        assert_eq!(p, after_first);
        assert_eq!(adam.first_moment()[0][0], 0.9 * m_before[0]);
    }

    #[test]
    fn two_step_hand_trace() {
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 0.05, 0.3);
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        let mut p = vec![1.0];
        adam.step(&mut [&mut p], &[vec![g]], &names(), lr).unwrap();
        adam.step(&mut [&mut p], &[vec![g]], &names(), lr).unwrap();
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - x).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        let mut p = vec![0.0; 3];
        let err = adam
            .step(&mut [&mut p], &[vec![0.0, f64::NAN, 0.0]], &names(), 0.1)
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { name, index } => {
                assert_eq!(name, "w");
                assert_eq!(index, 1);
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(p, vec![0.0; 3]);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn table_round_trip() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 2];
        adam.step(&mut [&mut p], &[vec![1.0, -1.0]], &names(), 0.1).unwrap();
        let back = Adam::from_table(AdamConfig::default(), &adam.to_table(&names()), &names()).unwrap();
        assert_eq!(back, adam);
    }
}
