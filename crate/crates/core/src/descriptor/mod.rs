//! Per-point descriptors: a learned alignment transform, a dynamic-graph
//! EdgeConv stack and an encoder/decoder transformer that conditions each
//! cloud's features on the other's.
//!
//! The functions here are plain-array entry points. Each builds a private
//! tape; [`layers`] exposes the same computations for use inside a larger
//! differentiable graph (training).

mod checkpoint;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use params::{DescriptorConfig, DescriptorParams, ParamVars};

use nalgebra::Matrix3;
use ndarray::Array2;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::geometry::{KnnTable, PointCloud};

/// Per-point descriptor rows for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    features: Array2<f64>,
}

impl FeatureField {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature field has non-finite entries".into()));
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn into_array(self) -> Array2<f64> {
        self.features
    }
}

/// EdgeConv weights for one layer, stored `input width × output width`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConvWeights {
    pub theta: Array2<f64>,
    pub phi: Array2<f64>,
}

/// Projection matrices of one multi-head attention layer (`d_model × d_model`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub heads: usize,
}

/// Predicted `3 × 3` alignment matrix; the aligned cloud is `p ↦ M p`.
pub fn alignment_transform(cloud: &PointCloud, params: &DescriptorParams) -> Result<Matrix3<f64>> {
    if cloud.len() < 2 {
        return Err(Error::Input(
            "alignment transform needs at least two points".into(),
        ));
    }
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let x = g.leaf(cloud.to_array());
    let m = layers::alignment(&mut g, &p, params.config(), x);
    let v = g.value(m);
    Ok(Matrix3::from_fn(|r, c| v[[r, c]]))
}

pub fn edgeconv_layer(
    features: &Array2<f64>,
    neighbours: &KnnTable,
    weights: &EdgeConvWeights,
) -> Result<Array2<f64>> {
    let n = features.nrows();
    if neighbours.rows() != n {
        return Err(Error::Dimension(format!(
            "neighbour table has {} rows for {n} points",
            neighbours.rows()
        )));
    }
    if let Some(&bad) = neighbours.as_slice().iter().find(|&&j| j >= n) {
        return Err(Error::Dimension(format!("neighbour index {bad} out of range for {n} points")));
    }
    if weights.theta.nrows() != features.ncols() || weights.theta.dim() != weights.phi.dim() {
        return Err(Error::Dimension(format!(
            "layer expects width {} (θ {:?}, φ {:?}), features have width {}",
            weights.theta.nrows(),
            weights.theta.dim(),
            weights.phi.dim(),
            features.ncols()
        )));
    }
    let mut g = Graph::new();
    let x = g.leaf(features.clone());
    let theta = g.leaf(weights.theta.clone());
    let phi = g.leaf(weights.phi.clone());
    let out = layers::edgeconv(&mut g, x, neighbours, theta, phi);
    Ok(g.value(out).clone())
}

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::Dimension(format!(
            "query width {} differs from key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Dimension(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let out = layers::attention(&mut g, qv, kv, vv);
    Ok(g.value(out).clone())
}

pub fn multi_head(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    weights: &MultiHeadWeights,
) -> Result<Array2<f64>> {
    let d_model = weights.wq.ncols();
    if weights.heads == 0 || d_model % weights.heads != 0 {
        return Err(Error::Config(format!(
            "model width {d_model} is not divisible by {} heads",
            weights.heads
        )));
    }
    let width_ok = q.ncols() == weights.wq.nrows()
        && k.ncols() == weights.wk.nrows()
        && v.ncols() == weights.wv.nrows()
        && weights.wk.ncols() == d_model
        && weights.wv.ncols() == d_model
        && weights.wo.nrows() == d_model;
    if !width_ok || k.nrows() != v.nrows() {
        return Err(Error::Dimension("multi-head input and projection widths disagree".into()));
    }
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let w = layers::HeadProjections {
        wq: g.leaf(weights.wq.clone()),
        wk: g.leaf(weights.wk.clone()),
        wv: g.leaf(weights.wv.clone()),
        wo: g.leaf(weights.wo.clone()),
    };
    let out = layers::multi_head(&mut g, qv, kv, vv, w, weights.heads);
    Ok(g.value(out).clone())
}

/// Cross-conditions two feature fields: `(F_X + φ(F_X, F_Y), F_Y + φ(F_Y, F_X))`.
pub fn transformer_fuse(
    fx: &FeatureField,
    fy: &FeatureField,
    params: &DescriptorParams,
) -> Result<(FeatureField, FeatureField)> {
    let d = params.config().d_model;
    if fx.width() != d || fy.width() != d {
        return Err(Error::Dimension(format!(
            "feature widths {} and {} must both equal d_model = {d}",
            fx.width(),
            fy.width()
        )));
    }
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let a = g.leaf(fx.as_array().clone());
    let b = g.leaf(fy.as_array().clone());
    let (pa, pb) = layers::fuse(&mut g, &p, params.config(), a, b);
    Ok((FeatureField::new(g.value(pa).clone())?, FeatureField::new(g.value(pb).clone())?))
}

/// Descriptors `(Φ_X, Φ_Y)` for a source/target pair.
pub fn describe(
    source: &PointCloud,
    target: &PointCloud,
    params: &DescriptorParams,
) -> Result<(FeatureField, FeatureField)> {
    if source.len() < 2 || target.len() < 2 {
        return Err(Error::Input("descriptor needs at least two points per cloud".into()));
    }
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let x = g.leaf(source.to_array());
    let y = g.leaf(target.to_array());
    let (fx, fy) = layers::describe(&mut g, &p, params.config(), x, y);
    Ok((FeatureField::new(g.value(fx).clone())?, FeatureField::new(g.value(fy).clone())?))
}

/// EdgeConv-stack features for one cloud, before transformer fusion.
pub fn embed(cloud: &PointCloud, params: &DescriptorParams) -> Result<FeatureField> {
    if cloud.len() < 2 {
        return Err(Error::Input("descriptor needs at least two points".into()));
    }
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let x = g.leaf(cloud.to_array());
    let (f, _) = layers::embed_cloud(&mut g, &p, params.config(), x);
    FeatureField::new(g.value(f).clone())
}
