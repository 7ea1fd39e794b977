//! Tape-level building blocks of the descriptor network.

use crate::autograd::{Graph, Var};
use crate::geometry::{knn_rows, KnnTable};

use super::params::{DescriptorConfig, ParamVars};

/// Alignment net: per-point layers with instance norm and ReLU, max-pool,
/// fully connected layers, 9 outputs reshaped to a `3 × 3` matrix.
pub fn alignment(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, points: Var) -> Var {
    let mut h = points;
    for i in 0..cfg.align_conv.len() {
        let z = g.matmul(h, p.get(&format!("align.conv{i}.w")));
        let z = g.instance_norm(z);
        h = g.relu(z);
    }
    let mut h = g.max_rows(h);
    for i in 0..cfg.align_fc.len() {
        h = linear(g, h, p.get(&format!("align.fc{i}.w")), p.get(&format!("align.fc{i}.b")));
        h = g.relu(h);
    }
    let out = linear(g, h, p.get("align.out.w"), p.get("align.out.b"));
    g.reshape(out, 3, 3)
}

/// `x · W + b` with `b` broadcast over rows.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let z = g.matmul(x, w);
    g.add_row(z, b)
}

/// One EdgeConv layer:
/// `out[i][l] = max_j ReLU(θ_l·(x_j − x_i) + φ_l·x_i)` over the neighbours of `i`.
///
/// Evaluated as `ReLU(x_i·(φ − θ) + max_j x_j·θ)`, which is equal because
/// ReLU is monotone.
pub fn edgeconv(g: &mut Graph, x: Var, neighbours: &KnnTable, theta: Var, phi: Var) -> Var {
    let a = g.matmul(x, theta);
    let b = g.matmul(x, phi);
    let centre = g.sub(b, a);
    let pooled = g.gather_max(a, neighbours.as_slice(), neighbours.k());
    let pre = g.add(centre, pooled);
    g.relu(pre)
}

/// Neighbour table over the current feature rows, self included.
pub fn feature_graph(g: &mut Graph, x: Var, k_edge: usize) -> KnnTable {
    let values = g.value(x);
    let k = k_edge.min(values.nrows());
    let table = knn_rows(values.view(), values.view(), k).expect("k is clamped to the row count");
    g.record_branch(table.as_slice());
    table
}

/// Shared EdgeConv stack followed by a linear embedding of the concatenated
/// layer outputs. The graph is rebuilt from the current features per layer.
pub fn edge_stack(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, points: Var) -> Var {
    let mut h = points;
    let mut outputs = Vec::with_capacity(cfg.edge_widths.len());
    for i in 0..cfg.edge_widths.len() {
        let graph = feature_graph(g, h, cfg.k_edge);
        h = edgeconv(g, h, &graph, p.get(&format!("edge{i}.theta")), p.get(&format!("edge{i}.phi")));
        outputs.push(h);
    }
    let cat = g.concat_cols(&outputs);
    linear(g, cat, p.get("embed.w"), p.get("embed.b"))
}

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Var {
    let d_k = g.value(q).ncols() as f64;
    let logits = g.matmul_bt(q, k);
    let logits = g.scale(logits, 1.0 / d_k.sqrt());
    let weights = g.softmax_rows(logits);
    g.matmul(weights, v)
}

/// Handles to the four projection matrices of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct HeadProjections {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

impl HeadProjections {
    pub fn named(p: &ParamVars, prefix: &str) -> Self {
        Self {
            wq: p.get(&format!("{prefix}.wq")),
            wk: p.get(&format!("{prefix}.wk")),
            wv: p.get(&format!("{prefix}.wv")),
            wo: p.get(&format!("{prefix}.wo")),
        }
    }
}

/// `Concat(head_1 … head_h) W^O` with `head_i = Attention(Q W^Q_i, K W^K_i, V W^V_i)`.
///
/// The per-head matrices `W^Q_i` are the column blocks of `wq` (likewise
/// for keys and values).
pub fn multi_head(g: &mut Graph, q: Var, k: Var, v: Var, w: HeadProjections, heads: usize) -> Var {
    let qp = g.matmul(q, w.wq);
    let kp = g.matmul(k, w.wk);
    let vp = g.matmul(v, w.wv);
    let d_model = g.value(qp).ncols();
    let d_head = d_model / heads;
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = g.slice_cols(qp, h * d_head, d_head);
            let kh = g.slice_cols(kp, h * d_head, d_head);
            let vh = g.slice_cols(vp, h * d_head, d_head);
            attention(g, qh, kh, vh)
        })
        .collect();
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
    g.matmul(cat, w.wo)
}

fn norm(g: &mut Graph, p: &ParamVars, prefix: &str, x: Var) -> Var {
    let y = g.layer_norm(x);
    let y = g.mul_row(y, p.get(&format!("{prefix}.g")));
    g.add_row(y, p.get(&format!("{prefix}.b")))
}

fn feed_forward(g: &mut Graph, p: &ParamVars, prefix: &str, x: Var) -> Var {
    let h = linear(g, x, p.get(&format!("{prefix}.w1")), p.get(&format!("{prefix}.b1")));
    let h = g.relu(h);
    linear(g, h, p.get(&format!("{prefix}.w2")), p.get(&format!("{prefix}.b2")))
}

/// Encoder block: self-attention and feedforward, each followed by a
/// residual add and layer norm.
pub fn encoder(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, x: Var) -> Var {
    let att = multi_head(g, x, x, x, HeadProjections::named(p, "enc.self"), cfg.heads);
    let h = g.add(x, att);
    let h = norm(g, p, "enc.norm1", h);
    let ff = feed_forward(g, p, "enc.ff", h);
    let h2 = g.add(h, ff);
    norm(g, p, "enc.norm2", h2)
}

/// Decoder block: self-attention, cross-attention over `memory`, feedforward.
pub fn decoder(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, x: Var, memory: Var) -> Var {
    let att = multi_head(g, x, x, x, HeadProjections::named(p, "dec.self"), cfg.heads);
    let h = g.add(x, att);
    let h = norm(g, p, "dec.norm1", h);
    let cross = multi_head(g, h, memory, memory, HeadProjections::named(p, "dec.cross"), cfg.heads);
    let h2 = g.add(h, cross);
    let h2 = norm(g, p, "dec.norm2", h2);
    let ff = feed_forward(g, p, "dec.ff", h2);
    let h3 = g.add(h2, ff);
    norm(g, p, "dec.norm3", h3)
}

/// `φ(A, B)`: encoder over `B`, decoder over `A` attending to the encoding.
pub fn conditioning(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, a: Var, b: Var) -> Var {
    let memory = encoder(g, p, cfg, b);
    decoder(g, p, cfg, a, memory)
}

/// `(F_X + φ(F_X, F_Y), F_Y + φ(F_Y, F_X))`.
pub fn fuse(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, fx: Var, fy: Var) -> (Var, Var) {
    let phi_x = conditioning(g, p, cfg, fx, fy);
    let phi_y = conditioning(g, p, cfg, fy, fx);
    (g.add(fx, phi_x), g.add(fy, phi_y))
}

/// Full per-cloud path: align, then EdgeConv stack. Returns `(features, alignment matrix)`.
pub fn embed_cloud(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, points: Var) -> (Var, Var) {
    let m = alignment(g, p, cfg, points);
    let aligned = g.matmul_bt(points, m);
    (edge_stack(g, p, cfg, aligned), m)
}

/// Source and target descriptors on the tape.
pub fn describe(g: &mut Graph, p: &ParamVars, cfg: &DescriptorConfig, source: Var, target: Var) -> (Var, Var) {
    let (fx, _) = embed_cloud(g, p, cfg, source);
    let (fy, _) = embed_cloud(g, p, cfg, target);
    fuse(g, p, cfg, fx, fy)
}
