//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough bookkeeping to push gradients back to its inputs. Inference
//! uses the same tape and simply never calls [`Graph::backward`].
//!
//! Operations with discrete choices (ReLU gates, max pooling, neighbour
//! maxima, argmin routing in custom ops) fold those choices into a branch
//! signature. Two evaluations with equal signatures lie on the same smooth
//! piece, which is what finite-difference checks use to exclude ties.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation with a hand-written backward pass, owned by the tape.
pub trait CustomOp: Send + Sync {
    fn inputs(&self) -> Vec<Var>;
    /// Gradients with respect to each input, in [`CustomOp::inputs`] order.
    fn backward(&self, grad: ArrayView2<'_, f64>, graph: &Graph) -> Vec<Array2<f64>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    RowNorm { input: Var, inv_std: Array1<f64> },
    ColNorm { input: Var, inv_std: Array1<f64> },
    MaxRows { input: Var, argmax: Vec<usize> },
    GatherMax { input: Var, argmax: Array2<usize> },
    GatherRows { input: Var, index: Vec<usize> },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    MeanSquaredRowNorm(Var),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient store returned by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to `v`, if any
    /// path reached it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    branch: u64,
    eps: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Normalization epsilon used by [`Graph::layer_norm`] and [`Graph::instance_norm`].
    pub const NORM_EPS: f64 = 1e-5;

    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            branch: 0,
            eps: Self::NORM_EPS,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Hash of every discrete decision taken so far.
    pub fn branch_signature(&self) -> u64 {
        self.branch
    }

    /// Folds an externally made discrete choice (e.g. a neighbour table)
    /// into the branch signature.
    pub fn record_branch<T: Hash + ?Sized>(&mut self, choice: &T) {
        let mut h = DefaultHasher::new();
        self.branch.hash(&mut h);
        choice.hash(&mut h);
        self.branch = h.finish();
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let mask: Vec<bool> = self.value(a).iter().map(|&x| x > 0.0).collect();
        self.record_branch(&mask);
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a).view());
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (v, inv_std) = normalize_lanes(self.value(a).view(), Axis(1), self.eps);
        self.push(v, Op::RowNorm { input: a, inv_std })
    }

    /// Normalizes each column over the rows (per-channel instance norm).
    pub fn instance_norm(&mut self, a: Var) -> Var {
        let (v, inv_std) = normalize_lanes(self.value(a).view(), Axis(0), self.eps);
        self.push(v, Op::ColNorm { input: a, inv_std })
    }

    /// Column-wise maximum over all rows, as a `1 × d` row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut argmax = vec![0usize; x.ncols()];
        let mut out = Array2::zeros((1, x.ncols()));
        for (c, col) in x.columns().into_iter().enumerate() {
            let (best, val) = first_argmax(col.iter().copied());
            argmax[c] = best;
            out[[0, c]] = val;
        }
        self.record_branch(&argmax);
        self.push(out, Op::MaxRows { input: a, argmax })
    }

    /// `out[i, l] = max over j in neighbours[i] of a[j, l]`.
    pub fn gather_max(&mut self, a: Var, neighbours: &[usize], k: usize) -> Var {
        let x = self.value(a);
        let rows = neighbours.len() / k;
        let d = x.ncols();
        let mut out = Array2::zeros((rows, d));
        let mut argmax = Array2::zeros((rows, d));
        for i in 0..rows {
            let nbrs = &neighbours[i * k..(i + 1) * k];
            for l in 0..d {
                let mut best = nbrs[0];
                let mut val = x[[best, l]];
                for &j in &nbrs[1..] {
                    if x[[j, l]] > val {
                        val = x[[j, l]];
                        best = j;
                    }
                }
                out[[i, l]] = val;
                argmax[[i, l]] = best;
            }
        }
        self.record_branch(argmax.as_slice().unwrap());
        self.push(out, Op::GatherMax { input: a, argmax })
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), index);
        self.push(
            v,
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { input: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape keeps element count");
        self.push(v, Op::Reshape(a))
    }

    /// `(1/n) Σ_i ||a_i||²` as a `1 × 1` node.
    pub fn mean_squared_row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.iter().map(|e| e * e).sum::<f64>() / x.nrows() as f64;
        self.push(Array2::from_elem((1, 1), v), Op::MeanSquaredRowNorm(a))
    }

    /// Appends a node computed outside the tape together with its backward.
    pub fn custom(&mut self, value: Array2<f64>, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(op))
    }

    /// Back-propagates from the `1 × 1` node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Array2::ones(self.nodes[output.0].value.raw_dim()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, contrib: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                match &mut grads[v.0] {
                    Some(existing) => *existing += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()), &mut grads);
                    acc(*b, self.value(*a).t().dot(&g), &mut grads);
                }
                Op::MatMulBt(a, b) => {
                    acc(*a, g.dot(self.value(*b)), &mut grads);
                    acc(*b, g.t().dot(self.value(*a)), &mut grads);
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned(), &mut grads),
                Op::Add(a, b) => {
                    acc(*b, g.clone(), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g, &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*row, gr, &mut grads);
                    acc(*a, &g * self.value(*row), &mut grads);
                }
                Op::Scale(a, f) => acc(*a, g * *f, &mut grads),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| if x <= 0.0 { *gi = 0.0 });
                    acc(*a, ga, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        row.zip_mut_with(&yr, |r, &yv| *r -= yv * dot);
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::RowNorm { input, inv_std } => {
                    let ga = normalize_backward(&g, &node.value, inv_std, Axis(1));
                    acc(*input, ga, &mut grads);
                }
                Op::ColNorm { input, inv_std } => {
                    let ga = normalize_backward(&g, &node.value, inv_std, Axis(0));
                    acc(*input, ga, &mut grads);
                }
                Op::MaxRows { input, argmax } => {
                    let mut ga = Array2::zeros(self.value(*input).raw_dim());
                    for (c, &r) in argmax.iter().enumerate() {
                        ga[[r, c]] += g[[0, c]];
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::GatherMax { input, argmax } => {
                    let mut ga = Array2::zeros(self.value(*input).raw_dim());
                    for ((i, l), &j) in argmax.indexed_iter() {
                        ga[[j, l]] += g[[i, l]];
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::GatherRows { input, index } => {
                    let mut ga = Array2::zeros(self.value(*input).raw_dim());
                    for (r, &src) in index.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::SliceCols { input, start } => {
                    let mut ga = Array2::zeros(self.value(*input).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*input, ga, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, g.slice(s![.., offset..offset + w]).to_owned(), &mut grads);
                        offset += w;
                    }
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let ga = Array2::from_shape_vec(self.value(*a).raw_dim(), flat)
                        .expect("reshape keeps element count");
                    acc(*a, ga, &mut grads);
                }
                Op::MeanSquaredRowNorm(a) => {
                    let x = self.value(*a);
                    let factor = 2.0 * g[[0, 0]] / x.nrows() as f64;
                    acc(*a, x * factor, &mut grads);
                }
                Op::Custom(op) => {
                    for (v, ga) in op.inputs().into_iter().zip(op.backward(g.view(), self)) {
                        acc(v, ga, &mut grads);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn first_argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Zero-mean, unit-variance normalization of each lane along `axis`
/// (`Axis(1)` normalizes rows, `Axis(0)` columns). Returns the output and
/// the per-lane inverse standard deviation.
fn normalize_lanes(x: ArrayView2<'_, f64>, axis: Axis, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let mut out = x.to_owned();
    let lanes = if axis == Axis(1) { x.nrows() } else { x.ncols() };
    let mut inv_std = Array1::zeros(lanes);
    for (k, mut lane) in out.lanes_mut(axis).into_iter().enumerate() {
        let n = lane.len() as f64;
        let mean = lane.sum() / n;
        let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        lane.mapv_inplace(|v| (v - mean) * inv);
        inv_std[k] = inv;
    }
    (out, inv_std)
}

fn normalize_backward(g: &Array2<f64>, y: &Array2<f64>, inv_std: &Array1<f64>, axis: Axis) -> Array2<f64> {
    let mut out = g.clone();
    for (k, (mut lane, y_lane)) in out
        .lanes_mut(axis)
        .into_iter()
        .zip(y.lanes(axis))
        .enumerate()
    {
        let n = lane.len() as f64;
        let mean_g = lane.sum() / n;
        let mean_gy = lane.iter().zip(y_lane.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let inv = inv_std[k];
        lane.zip_mut_with(&y_lane, |gv, &yv| *gv = inv * (*gv - mean_g - yv * mean_gy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, input: Array2<f64>) {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let out = build(&mut g, x);
        let grads = g.backward(out);
        let analytic = grads.get(x).unwrap().clone();
        let sig = g.branch_signature();
        let h = 1e-6;
        for idx in 0..input.len() {
            let eval = |delta: f64| {
                let mut p = input.clone();
                p.as_slice_mut().unwrap()[idx] += delta;
                let mut g = Graph::new();
                let x = g.leaf(p);
                let o = build(&mut g, x);
                (g.scalar(o), g.branch_signature())
            };
            let (plus, sp) = eval(h);
            let (minus, sm) = eval(-h);
            if sp != sig || sm != sig {
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!(
                (a - fd).abs() <= 1e-6 * (1.0 + a.abs().max(fd.abs())),
                "coordinate {idx}: analytic {a} vs numeric {fd}"
            );
        }
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&mut rng, 4, 3);
        let v = random(&mut rng, 5, 3);
        check(
            |g, x| {
                let w = g.leaf(w.clone());
                let v = g.leaf(v.clone());
                let a = g.matmul(x, w);
                let b = g.matmul_bt(a, v);
                let t = g.transpose(b);
                g.mean_squared_row_norm(t)
            },
            random(&mut rng, 6, 4),
        );
    }

    #[test]
    fn norms_softmax_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = random(&mut rng, 1, 5);
        check(
            |g, x| {
                let r = g.leaf(row.clone());
                let a = g.layer_norm(x);
                let b = g.mul_row(a, r);
                let c = g.add_row(b, r);
                let d = g.instance_norm(c);
                let e = g.softmax_rows(d);
                let f = g.scale(e, 3.0);
                g.mean_squared_row_norm(f)
            },
            random(&mut rng, 7, 5),
        );
    }

    #[test]
    fn selection_ops_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nbrs = vec![0, 1, 2, 1, 2, 3, 3, 0, 1, 2, 3, 0];
        check(
            |g, x| {
                let r = g.relu(x);
                let m = g.gather_max(r, &nbrs, 3);
                let p = g.max_rows(x);
                let q = g.gather_rows(x, &[3, 3, 0, 1]);
                let s1 = g.slice_cols(q, 1, 2);
                let s2 = g.slice_cols(m, 0, 2);
                let cat = g.concat_cols(&[s1, s2]);
                let rs = g.reshape(cat, 8, 2);
                let pm = g.reshape(p, 2, 2);
                let a = g.mean_squared_row_norm(rs);
                let b = g.mean_squared_row_norm(pm);
                let s = g.add(a, b);
                g.sub(s, b)
            },
            random(&mut rng, 4, 4),
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = softmax_rows(random(&mut rng, 6, 9).view());
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn relu_signature_tracks_sign_changes() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::from_elem((1, 1), 1.0));
        g.relu(x);
        let mut h = Graph::new();
        let y = h.leaf(Array2::from_elem((1, 1), -1.0));
        h.relu(y);
        assert_ne!(g.branch_signature(), h.branch_signature());
    }
}
