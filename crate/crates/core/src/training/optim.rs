use std::collections::BTreeMap;

use ndarray::Array2;

use crate::descriptor::DescriptorParams;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adaptive-moment optimizer with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &DescriptorParams) -> Self {
        let zeros: BTreeMap<_, _> = params
            .tensors()
            .iter()
            .map(|(k, t)| (k.clone(), Array2::zeros(t.raw_dim())))
            .collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Tensors missing from `grads` are left untouched
    /// but their moments still decay.
    pub fn step(&mut self, params: &mut DescriptorParams, grads: &BTreeMap<String, Array2<f64>>) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let lr = self.lr;
        for (name, p) in params.iter_mut() {
            let m = self.m.get_mut(name).expect("moment per tensor");
            let v = self.v.get_mut(name).expect("moment per tensor");
            match grads.get(name) {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = BETA1 * *m + (1.0 - BETA1) * g);
                    v.zip_mut_with(g, |v, &g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
                }
                None => {
                    m.mapv_inplace(|x| BETA1 * x);
                    v.mapv_inplace(|x| BETA2 * x);
                }
            }
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + EPS);
            });
        }
    }

    /// Moments and step counter as named arrays for checkpointing.
    pub fn state(&self) -> BTreeMap<String, Array2<f64>> {
        let mut out = BTreeMap::new();
        out.insert("adam.step".into(), Array2::from_elem((1, 1), self.step as f64));
        for (k, t) in &self.m {
            out.insert(format!("adam.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("adam.v.{k}"), t.clone());
        }
        out
    }

    /// Restores state written by [`Adam::state`].
    pub fn restore(lr: f64, params: &DescriptorParams, state: &BTreeMap<String, Array2<f64>>) -> Result<Self> {
        let mut opt = Self::new(lr, params);
        let missing = |k: &str| Error::Compatibility(format!("optimizer state lacks '{k}'"));
        opt.step = state.get("adam.step").ok_or_else(|| missing("adam.step"))?[[0, 0]] as u64;
        for (name, t) in params.tensors() {
            for (prefix, slot) in [("adam.m.", &mut opt.m), ("adam.v.", &mut opt.v)] {
                let key = format!("{prefix}{name}");
                let s = state.get(&key).ok_or_else(|| missing(&key))?;
                if s.dim() != t.dim() {
                    return Err(Error::Compatibility(format!("optimizer state '{key}' has the wrong shape")));
                }
                slot.insert(name.clone(), s.clone());
            }
        }
        Ok(opt)
    }
}
