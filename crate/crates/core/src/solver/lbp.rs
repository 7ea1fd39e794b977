//! Synchronous min-sum message passing over a candidate-label MRF.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::autograd::{CustomOp, Graph, Var};
use crate::geometry::Vec3;

/// Directed edge list of an undirected graph, with reverse-edge and
/// incoming-edge lookups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageGraph {
    nodes: usize,
    /// `(from, to)` for each directed edge.
    edges: Vec<(usize, usize)>,
    reverse: Vec<usize>,
    incoming: Vec<Vec<usize>>,
}

impl MessageGraph {
    /// Builds both directions of every undirected edge; duplicates and
    /// self-loops are dropped.
    pub fn from_undirected(nodes: usize, undirected: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = undirected
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        let mut reverse = Vec::with_capacity(pairs.len() * 2);
        for (a, b) in pairs {
            let e = edges.len();
            edges.push((a, b));
            edges.push((b, a));
            reverse.push(e + 1);
            reverse.push(e);
        }
        let mut incoming = vec![Vec::new(); nodes];
        for (e, &(_, to)) in edges.iter().enumerate() {
            incoming[to].push(e);
        }
        Self {
            nodes,
            edges,
            reverse,
            incoming,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn reverse(&self, e: usize) -> usize {
        self.reverse[e]
    }

    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }
}

/// Pairwise penalty `||(c_i^p − x_i) − (c_j^q − x_j)||²` for every directed
/// edge, stored `[e][p * k + q]`.
pub(crate) fn pairwise_tables(graph: &MessageGraph, displacements: &[Vec3], k: usize) -> Vec<Vec<f64>> {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let mut table = Vec::with_capacity(k * k);
            for p in 0..k {
                let dp = displacements[i * k + p];
                for q in 0..k {
                    table.push((dp - displacements[j * k + q]).norm_squared());
                }
            }
            table
        })
        .collect()
}

/// How each message entry was selected during one sweep.
#[derive(Debug, Clone)]
pub(crate) enum Routing {
    /// Minimizing candidate `p` for each `(edge, q)`, flattened `e * k + q`.
    Hard(Vec<u32>),
    /// Soft-min weights over `p` for each `(edge, q)`, flattened `(e * k + q) * k + p`.
    Soft(Vec<f64>),
}

#[derive(Debug, Clone)]
pub(crate) struct SweepRecord {
    routing: Routing,
    /// Entry `q` whose value was subtracted during normalization, per edge.
    shift: Vec<u32>,
}

/// One synchronous sweep. Returns new messages (`E × k`) and the record
/// needed to differentiate through it.
pub(crate) fn sweep(
    graph: &MessageGraph,
    pairwise: &[Vec<f64>],
    unary: ArrayView2<'_, f64>,
    messages: &Array2<f64>,
    alpha: f64,
    softmin: Option<f64>,
) -> (Array2<f64>, SweepRecord) {
    let k = unary.ncols();
    let n = unary.nrows();
    let edge_count = graph.edge_count();

    // Σ over all incoming messages, per node.
    let mut incoming_sum = Array2::<f64>::zeros((n, k));
    for (e, &(_, to)) in graph.edges().iter().enumerate() {
        let mut row = incoming_sum.row_mut(to);
        row += &messages.row(e);
    }

    let mut out = Array2::zeros((edge_count, k));
    let mut shift = vec![0u32; edge_count];
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    match softmin {
        None => hard.reserve(edge_count * k),
        Some(_) => soft.reserve(edge_count * k * k),
    }

    let mut base = vec![0.0; k];
    for (e, &(i, _)) in graph.edges().iter().enumerate() {
        let back = messages.row(graph.reverse(e));
        for p in 0..k {
            base[p] = unary[[i, p]] + incoming_sum[[i, p]] - back[p];
        }
        let table = &pairwise[e];
        for q in 0..k {
            let value = match softmin {
                None => {
                    let mut best = 0usize;
                    let mut best_val = f64::INFINITY;
                    for p in 0..k {
                        let v = base[p] + alpha * table[p * k + q];
                        if v < best_val {
                            best_val = v;
                            best = p;
                        }
                    }
                    hard.push(best as u32);
                    best_val
                }
                Some(tau) => {
                    let vals: Vec<f64> = (0..k).map(|p| base[p] + alpha * table[p * k + q]).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let weights: Vec<f64> = vals.iter().map(|v| (-(v - lo) / tau).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    soft.extend(weights.iter().map(|w| w / total));
                    lo - tau * total.ln()
                }
            };
            out[[e, q]] = value;
        }
        let mut row = out.row_mut(e);
        let (q_min, m) = row
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |acc, (q, &v)| if v < acc.1 { (q, v) } else { acc });
        row.mapv_inplace(|v| v - m);
        shift[e] = q_min as u32;
    }
    let routing = match softmin {
        None => Routing::Hard(hard),
        Some(_) => Routing::Soft(soft),
    };
    (out, SweepRecord { routing, shift })
}

/// `belief(i, p) = d_i^p + Σ_{h→i} m_{h→i}[p]`.
pub(crate) fn beliefs_from(graph: &MessageGraph, unary: ArrayView2<'_, f64>, messages: &Array2<f64>) -> Array2<f64> {
    let mut b = unary.to_owned();
    for (e, &(_, to)) in graph.edges().iter().enumerate() {
        let mut row = b.row_mut(to);
        row += &messages.row(e);
    }
    b
}

/// Runs `iterations` sweeps from zero messages, returning final messages
/// and every sweep's routing record.
pub(crate) fn run(
    graph: &MessageGraph,
    pairwise: &[Vec<f64>],
    unary: ArrayView2<'_, f64>,
    alpha: f64,
    iterations: usize,
    softmin: Option<f64>,
) -> (Array2<f64>, Vec<SweepRecord>) {
    let mut messages = Array2::zeros((graph.edge_count(), unary.ncols()));
    let mut records = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, rec) = sweep(graph, pairwise, unary, &messages, alpha, softmin);
        messages = next;
        records.push(rec);
    }
    (messages, records)
}

/// Tape node mapping unary costs (`n × k`) to beliefs after a fixed number
/// of sweeps. Gradients follow the recorded min branches.
struct BeliefOp {
    unary: Var,
    graph: Arc<MessageGraph>,
    records: Vec<SweepRecord>,
}

impl CustomOp for BeliefOp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.unary]
    }

    fn backward(&self, grad: ArrayView2<'_, f64>, _graph: &Graph) -> Vec<Array2<f64>> {
        let graph = &*self.graph;
        let k = grad.ncols();
        let mut g_unary = grad.to_owned();
        let mut g_msg = Array2::<f64>::zeros((graph.edge_count(), k));
        for (e, &(_, to)) in graph.edges().iter().enumerate() {
            g_msg.row_mut(e).assign(&grad.row(to));
        }
        for rec in self.records.iter().rev() {
            let mut g_prev = Array2::<f64>::zeros(g_msg.raw_dim());
            for (e, &(i, _)) in graph.edges().iter().enumerate() {
                let mut g_raw: Vec<f64> = g_msg.row(e).to_vec();
                let total: f64 = g_raw.iter().sum();
                g_raw[rec.shift[e] as usize] -= total;
                let back = graph.reverse(e);
                for (q, &c) in g_raw.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let mut route = |p: usize, c: f64| {
                        g_unary[[i, p]] += c;
                        for &f in graph.incoming(i) {
                            g_prev[[f, p]] += c;
                        }
                        g_prev[[back, p]] -= c;
                    };
                    match &rec.routing {
                        Routing::Hard(argmin) => route(argmin[e * k + q] as usize, c),
                        Routing::Soft(weights) => {
                            let w = &weights[(e * k + q) * k..(e * k + q + 1) * k];
                            for (p, &wp) in w.iter().enumerate() {
                                route(p, c * wp);
                            }
                        }
                    }
                }
            }
            g_msg = g_prev;
        }
        vec![g_unary]
    }
}

/// Beliefs after `iterations` sweeps as a differentiable function of `unary`.
pub(crate) fn beliefs_on(
    g: &mut Graph,
    unary: Var,
    graph: Arc<MessageGraph>,
    pairwise: &[Vec<f64>],
    alpha: f64,
    iterations: usize,
    softmin: Option<f64>,
) -> Var {
    let u = g.value(unary).clone();
    let (messages, records) = run(&graph, pairwise, u.view(), alpha, iterations, softmin);
    for rec in &records {
        if let Routing::Hard(argmin) = &rec.routing {
            g.record_branch(argmin);
        }
        g.record_branch(&rec.shift);
    }
    let value = beliefs_from(&graph, u.view(), &messages);
    g.custom(
        value,
        Box::new(BeliefOp {
            unary,
            graph,
            records,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_has_both_directions() {
        let g = MessageGraph::from_undirected(3, [(0, 1), (1, 0), (2, 1), (1, 1)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        for e in 0..g.edge_count() {
            let (a, b) = g.edges()[e];
            assert_eq!(g.edges()[g.reverse(e)], (b, a));
        }
        assert_eq!(g.incoming(1), &[0, 3]);
    }

    #[test]
    fn belief_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5;
        let k = 3;
        let graph = Arc::new(MessageGraph::from_undirected(n, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]));
        let disp: Vec<Vec3> = (0..n * k)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let pairwise = pairwise_tables(&graph, &disp, k);
        let unary = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() * 2.0);
        let weights = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() - 0.5);

        for softmin in [None, Some(0.3)] {
            let eval = |u: &Array2<f64>| {
                let mut g = Graph::new();
                let uv = g.leaf(u.clone());
                let b = beliefs_on(&mut g, uv, graph.clone(), &pairwise, 0.7, 3, softmin);
                let val = (g.value(b) * &weights).sum();
                (val, g.branch_signature())
            };
            let mut g = Graph::new();
            let uv = g.leaf(unary.clone());
            let op = BeliefOp {
                unary: uv,
                graph: graph.clone(),
                records: run(&graph, &pairwise, unary.view(), 0.7, 3, softmin).1,
            };
            let analytic = op.backward(weights.view(), &g).remove(0);
            let sig = eval(&unary).1;
            let h = 1e-6;
            for idx in 0..n * k {
                let mut up = unary.clone();
                up.as_slice_mut().unwrap()[idx] += h;
                let mut dn = unary.clone();
                dn.as_slice_mut().unwrap()[idx] -= h;
                let (fp, sp) = eval(&up);
                let (fm, sm) = eval(&dn);
                if softmin.is_none() && (sp != sig || sm != sig) {
                    continue;
                }
                let fd = (fp - fm) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                assert!((a - fd).abs() < 1e-6, "{softmin:?} idx {idx}: {a} vs {fd}");
            }
        }
    }
}
