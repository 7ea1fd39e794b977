use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

/// Architecture hyperparameters. Fully determines every parameter shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Widths of the per-point layers in the alignment net.
    pub align_conv: Vec<usize>,
    /// Widths of the hidden fully connected layers; a 9-wide output follows.
    pub align_fc: Vec<usize>,
    /// Output widths of the EdgeConv layers.
    pub edge_widths: Vec<usize>,
    /// Neighbours per point in the EdgeConv graph.
    pub k_edge: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            align_conv: vec![64, 128, 1024],
            align_fc: vec![512, 256],
            edge_widths: vec![64, 128, 256],
            k_edge: 20,
            d_model: 256,
            heads: 4,
            ff_width: 512,
        }
    }
}

impl DescriptorConfig {
    /// A very small network, handy for tests and quick experiments.
    pub fn tiny() -> Self {
        Self {
            align_conv: vec![8, 8, 16],
            align_fc: vec![8, 8],
            edge_widths: vec![8, 8],
            k_edge: 4,
            d_model: 8,
            heads: 2,
            ff_width: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(Error::Config(format!("{name} must be a non-empty list of positive widths")))
            } else {
                Ok(())
            }
        };
        positive("align_conv", &self.align_conv)?;
        positive("edge_widths", &self.edge_widths)?;
        if self.align_fc.contains(&0) {
            return Err(Error::Config("align_fc widths must be positive".into()));
        }
        if self.k_edge == 0 || self.d_model == 0 || self.heads == 0 || self.ff_width == 0 {
            return Err(Error::Config("k_edge, d_model, heads and ff_width must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Name and shape of every parameter tensor, in canonical order.
    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: (usize, usize)| out.push((name, shape));

        let mut width = 3;
        for (i, &w) in self.align_conv.iter().enumerate() {
            push(format!("align.conv{i}.w"), (width, w));
            width = w;
        }
        for (i, &w) in self.align_fc.iter().enumerate() {
            push(format!("align.fc{i}.w"), (width, w));
            push(format!("align.fc{i}.b"), (1, w));
            width = w;
        }
        push("align.out.w".into(), (width, 9));
        push("align.out.b".into(), (1, 9));

        let mut width = 3;
        for (i, &w) in self.edge_widths.iter().enumerate() {
            push(format!("edge{i}.theta"), (width, w));
            push(format!("edge{i}.phi"), (width, w));
            width = w;
        }
        let concat: usize = self.edge_widths.iter().sum();
        push("embed.w".into(), (concat, self.d_model));
        push("embed.b".into(), (1, self.d_model));

        let d = self.d_model;
        let attention = |prefix: &str, push: &mut dyn FnMut(String, (usize, usize))| {
            for m in ["wq", "wk", "wv", "wo"] {
                push(format!("{prefix}.{m}"), (d, d));
            }
        };
        let norm = |prefix: &str, push: &mut dyn FnMut(String, (usize, usize))| {
            push(format!("{prefix}.g"), (1, d));
            push(format!("{prefix}.b"), (1, d));
        };
        let ff = |prefix: &str, push: &mut dyn FnMut(String, (usize, usize))| {
            push(format!("{prefix}.w1"), (d, self.ff_width));
            push(format!("{prefix}.b1"), (1, self.ff_width));
            push(format!("{prefix}.w2"), (self.ff_width, d));
            push(format!("{prefix}.b2"), (1, d));
        };
        attention("enc.self", &mut push);
        norm("enc.norm1", &mut push);
        ff("enc.ff", &mut push);
        norm("enc.norm2", &mut push);
        attention("dec.self", &mut push);
        norm("dec.norm1", &mut push);
        attention("dec.cross", &mut push);
        norm("dec.norm2", &mut push);
        ff("dec.ff", &mut push);
        norm("dec.norm3", &mut push);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// Named parameter tensors for the whole descriptor stack.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorParams {
    config: DescriptorConfig,
    tensors: BTreeMap<String, Array2<f64>>,
}

impl DescriptorParams {
    /// Seeded initialization. The alignment net's output layer starts at
    /// zero weight and identity bias, so the initial transform is `I`.
    pub fn init(config: &DescriptorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, (r, c)) in config.shapes() {
            let is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
            let tensor = if name == "align.out.w" || is_bias {
                Array2::zeros((r, c))
            } else if name.ends_with(".g") {
                Array2::ones((r, c))
            } else {
                // He scaling where a ReLU follows, unit-variance scaling otherwise.
                let feeds_relu = name.starts_with("align") || name.starts_with("edge") || name.ends_with(".w1");
                let std = if feeds_relu {
                    (2.0 / r as f64).sqrt()
                } else {
                    (1.0 / r as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng))
            };
            tensors.insert(name, tensor);
        }
        let mut eye = Array2::zeros((1, 9));
        for d in 0..3 {
            eye[[0, d * 4]] = 1.0;
        }
        tensors.insert("align.out.b".into(), eye);
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Builds params from explicit tensors, checking names and shapes.
    pub fn from_tensors(config: DescriptorConfig, tensors: BTreeMap<String, Array2<f64>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Compatibility(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Compatibility(format!("missing tensor '{name}'")))?;
            if t.dim() != *shape {
                return Err(Error::Compatibility(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("tensor '{name}' has non-finite entries")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &DescriptorConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.tensors[name]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.tensors
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    /// Coarse parameter groups: `align`, `edge`, `embed`, `enc`, `dec`.
    pub fn group_of(name: &str) -> &str {
        let head = name.split('.').next().unwrap_or(name);
        head.trim_end_matches(|c: char| c.is_ascii_digit())
    }

    /// Sets every transformer tensor (projections, feedforward, norm affine
    /// parameters) to zero.
    pub fn zero_transformer(&mut self) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with("enc.") || name.starts_with("dec.") {
                t.fill(0.0);
            }
        }
    }

    /// Places every tensor on the tape as a leaf.
    pub fn attach(&self, graph: &mut Graph) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles for each named tensor.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("no parameter named '{name}'"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
