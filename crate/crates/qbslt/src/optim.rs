//! SGD with classical momentum and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::config::OptimConfig;
use crate::params::ParameterStore;

pub struct SgdMomentum {
    cfg: OptimConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(cfg: OptimConfig) -> SgdMomentum {
        SgdMomentum {
            cfg,
            velocity: BTreeMap::new(),
        }
    }

    /// One update over all trainable parameters: clip the global gradient
    /// norm to `grad_clip`, then v ← μv + g and p ← p − lr·v. The caller
    /// zeroes gradients afterwards.
    pub fn step(&mut self, params: &ParameterStore) {
        let trainable = params.trainable();
        let mut sq_norm = 0.0;
        for (_, t) in &trainable {
            for g in t.grad_vec() {
                sq_norm += g * g;
            }
        }
        let norm = sq_norm.sqrt();
        let scale = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        };
        for (name, t) in &trainable {
            let g = t.grad_vec();
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            t.update_data(|data| {
                for i in 0..data.len() {
                    v[i] = self.cfg.momentum * v[i] + g[i] * scale;
                    data[i] -= self.cfg.lr * v[i];
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(name: &str, data: Vec<f64>) -> ParameterStore {
        let mut store = ParameterStore::new();
        let shape = vec![data.len()];
        store
            .register(name, Tensor::from_vec(shape, data).unwrap().trainable())
            .unwrap();
        store
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        let store = store_with("p", vec![0.0]);
        let p = store.get("p").unwrap();
        let mut opt = SgdMomentum::new(OptimConfig {
            lr: 1.0,
            momentum: 0.5,
            grad_clip: 0.0,
        });
        // Constant unit gradient: steps are 1, then 1.5, then 1.75.
        p.accumulate_grad(&[1.0]);
        opt.step(&store);
        assert_eq!(p.data_vec(), vec![-1.0]);
        opt.step(&store);
        assert_eq!(p.data_vec(), vec![-2.5]);
        opt.step(&store);
        assert_eq!(p.data_vec(), vec![-4.25]);
    }

    #[test]
    fn global_norm_clipping_rescales() {
        let store = store_with("p", vec![0.0, 0.0]);
        let p = store.get("p").unwrap();
        let mut opt = SgdMomentum::new(OptimConfig {
            lr: 1.0,
            momentum: 0.0,
            grad_clip: 1.0,
        });
        p.accumulate_grad(&[3.0, 4.0]);
        opt.step(&store);
        let d = p.data_vec();
        // Norm 5 clipped to 1.
        assert!((d[0] + 0.6).abs() < 1e-12 && (d[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn non_trainable_tensors_are_untouched() {
        let mut store = ParameterStore::new();
        store
            .register("buf.running_mean", Tensor::from_vec(vec![1], vec![2.0]).unwrap())
            .unwrap();
        let buf = store.get("buf.running_mean").unwrap();
        buf.accumulate_grad(&[5.0]);
        let mut opt = SgdMomentum::new(OptimConfig::default());
        opt.step(&store);
        assert_eq!(buf.data_vec(), vec![2.0]);
    }
}
