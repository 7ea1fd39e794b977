//! Displacement solver.
//!
//! For each source point the `k_cand` nearest target points are candidate
//! correspondents. Feature distances give unary costs, a k-NN graph over
//! the source couples neighbouring points through the squared difference
//! of their candidate displacements, and min-sum loopy belief propagation
//! refines the costs. A softmax over negated beliefs weights the candidate
//! displacements into the final per-point displacement.

mod lbp;

pub use lbp::MessageGraph;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::descriptor::FeatureField;
use crate::error::{Error, Result};
use crate::geometry::{knn_graph_excluding_self, knn_indices, DeformationField, KnnTable, PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub k_cand: usize,
    pub k_reg: usize,
    pub alpha: f64,
    pub lbp_iterations: usize,
    pub softmax_temperature: f64,
    /// Experimental: replaces the hard minimum in the message update by a
    /// soft minimum at this temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmin_temperature: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k_cand: 16,
            k_reg: 8,
            alpha: 1.0,
            lbp_iterations: 5,
            softmax_temperature: 1.0,
            softmin_temperature: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_cand == 0 || self.k_reg == 0 {
            return Err(Error::Config("k_cand and k_reg must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.softmax_temperature > 0.0 && self.softmax_temperature.is_finite()) {
            return Err(Error::Config("softmax_temperature must be positive".into()));
        }
        if let Some(t) = self.softmin_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("softmin_temperature must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Candidates, costs, message state and beliefs for one registration.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    k: usize,
    candidates: Vec<usize>,
    displacements: Vec<Vec3>,
    source_graph: Option<KnnTable>,
    graph: Arc<MessageGraph>,
    pairwise: Vec<Vec<f64>>,
    unary: Option<Array2<f64>>,
    messages: Array2<f64>,
    sweeps: usize,
}

impl CandidateSet {
    /// Candidate set over an explicit graph. `displacements` holds
    /// `c_i^p − x_i` row-major (`n × k`); `candidates` the matching target
    /// indices.
    pub fn from_parts(
        k: usize,
        candidates: Vec<usize>,
        displacements: Vec<Vec3>,
        graph: MessageGraph,
    ) -> Result<Self> {
        let n = graph.nodes();
        if k == 0 || candidates.len() != n * k || displacements.len() != n * k {
            return Err(Error::Dimension(format!(
                "expected {n} × {k} candidates and displacements, got {} and {}",
                candidates.len(),
                displacements.len()
            )));
        }
        let pairwise = lbp::pairwise_tables(&graph, &displacements, k);
        let messages = Array2::zeros((graph.edge_count(), k));
        Ok(Self {
            k,
            candidates,
            displacements,
            source_graph: None,
            graph: Arc::new(graph),
            pairwise,
            unary: None,
            messages,
            sweeps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.graph.nodes()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.nodes() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn candidate(&self, i: usize, p: usize) -> usize {
        self.candidates[i * self.k + p]
    }

    /// `c_i^p − x_i`.
    pub fn displacement(&self, i: usize, p: usize) -> Vec3 {
        self.displacements[i * self.k + p]
    }

    pub fn source_graph(&self) -> Option<&KnnTable> {
        self.source_graph.as_ref()
    }

    pub fn message_graph(&self) -> &MessageGraph {
        &self.graph
    }

    pub fn unary(&self) -> Option<&Array2<f64>> {
        self.unary.as_ref()
    }

    /// Messages, one row per directed edge of [`CandidateSet::message_graph`].
    pub fn messages(&self) -> &Array2<f64> {
        &self.messages
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Installs unary costs and resets messages to zero.
    pub fn set_unary(&mut self, unary: Array2<f64>) -> Result<()> {
        if unary.dim() != (self.len(), self.k) {
            return Err(Error::Dimension(format!(
                "unary costs are {:?}, expected ({}, {})",
                unary.dim(),
                self.len(),
                self.k
            )));
        }
        if unary.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input("unary costs must be finite and nonnegative".into()));
        }
        self.unary = Some(unary);
        self.messages.fill(0.0);
        self.sweeps = 0;
        Ok(())
    }

    /// `Σ_i d_i^{p_i} + α Σ_{edges} r_ij^{p_i p_j}` for a full labelling.
    pub fn energy(&self, labels: &[usize], alpha: f64) -> Result<f64> {
        let unary = self.unary.as_ref().ok_or_else(|| Error::State("unary costs not set".into()))?;
        let mut e: f64 = labels.iter().enumerate().map(|(i, &p)| unary[[i, p]]).sum();
        for (idx, &(i, j)) in self.graph.edges().iter().enumerate() {
            if i < j {
                e += alpha * self.pairwise[idx][labels[i] * self.k + labels[j]];
            }
        }
        Ok(e)
    }
}

/// Candidate skeleton: `k_cand` nearest targets per source point and the
/// `k_reg`-NN source graph (self excluded, symmetrized for messaging).
pub fn build_candidates(source: &PointCloud, target: &PointCloud, cfg: &SolverConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    if cfg.k_cand > target.len() {
        return Err(Error::Parameter(format!(
            "k_cand = {} exceeds target size {}",
            cfg.k_cand,
            target.len()
        )));
    }
    if cfg.k_reg >= source.len() {
        return Err(Error::Parameter(format!(
            "k_reg = {} must be below source size {}",
            cfg.k_reg,
            source.len()
        )));
    }
    let table = knn_indices(source, target, cfg.k_cand)?;
    let source_graph = knn_graph_excluding_self(source, cfg.k_reg)?;
    let displacements = table
        .iter_rows()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&c| (i, c)))
        .map(|(i, c)| target.point(c) - source.point(i))
        .collect();
    let edges = source_graph
        .iter_rows()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&j| (i, j)));
    let graph = MessageGraph::from_undirected(source.len(), edges);
    let mut cs = CandidateSet::from_parts(cfg.k_cand, table.as_slice().to_vec(), displacements, graph)?;
    cs.source_graph = Some(source_graph);
    Ok(cs)
}

/// `d_i^p = ||Φ_X[i] − Φ_Y[c_i^p]||²`.
pub fn unary_costs(phi_x: &FeatureField, phi_y: &FeatureField, cs: &CandidateSet) -> Result<Array2<f64>> {
    check_features(phi_x.as_array().view(), phi_y.as_array().view(), cs)?;
    Ok(unary_values(phi_x.as_array().view(), phi_y.as_array().view(), cs))
}

fn check_features(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cs: &CandidateSet) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "feature widths differ: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.nrows() != cs.len() {
        return Err(Error::Dimension(format!(
            "{} source features for {} source points",
            x.nrows(),
            cs.len()
        )));
    }
    if let Some(&c) = cs.candidates.iter().find(|&&c| c >= y.nrows()) {
        return Err(Error::Dimension(format!(
            "candidate {c} has no row among {} target features",
            y.nrows()
        )));
    }
    Ok(())
}

fn unary_values(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cs: &CandidateSet) -> Array2<f64> {
    Array2::from_shape_fn((cs.len(), cs.k), |(i, p)| {
        let c = cs.candidate(i, p);
        x.row(i)
            .iter()
            .zip(y.row(c).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// `r_ij^pq = ||(c_i^p − x_i) − (c_j^q − x_j)||²`.
pub fn pairwise_cost(x_i: &Vec3, x_j: &Vec3, c_ip: &Vec3, c_jq: &Vec3) -> f64 {
    ((c_ip - x_i) - (c_jq - x_j)).norm_squared()
}

/// One synchronous min-sum sweep over every directed edge, followed by
/// shifting each message so its minimum entry is zero.
pub fn lbp_sweep(cs: &mut CandidateSet, cfg: &SolverConfig) -> Result<()> {
    let unary = cs
        .unary
        .as_ref()
        .ok_or_else(|| Error::State("unary costs must be set before message passing".into()))?;
    let (next, _) = lbp::sweep(
        &cs.graph,
        &cs.pairwise,
        unary.view(),
        &cs.messages,
        cfg.alpha,
        cfg.softmin_temperature,
    );
    cs.messages = next;
    cs.sweeps += 1;
    Ok(())
}

/// `belief(i, p) = d_i^p + Σ_{h→i} m_{h→i}[p]`.
pub fn beliefs(cs: &CandidateSet) -> Result<Array2<f64>> {
    let unary = cs
        .unary
        .as_ref()
        .ok_or_else(|| Error::State("unary costs must be set before reading beliefs".into()))?;
    Ok(lbp::beliefs_from(&cs.graph, unary.view(), &cs.messages))
}

/// Per-node argmin of the beliefs (lowest index on ties).
pub fn belief_argmin(beliefs: &Array2<f64>) -> Vec<usize> {
    beliefs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (p, &v)| if v < acc.1 { (p, v) } else { acc })
                .0
        })
        .collect()
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: DeformationField,
    /// Softmax weights, `n × k_cand`; each row sums to 1.
    pub weights: Array2<f64>,
    pub beliefs: Array2<f64>,
    pub candidates: CandidateSet,
}

/// Full solve: candidates, costs, `lbp_iterations` sweeps, softmax weights
/// `w_i = softmax(−belief_i / T)` and `u_i = Σ_p w_i^p (c_i^p − x_i)`.
pub fn solve(
    source: &PointCloud,
    target: &PointCloud,
    phi_x: &FeatureField,
    phi_y: &FeatureField,
    cfg: &SolverConfig,
) -> Result<Solution> {
    if phi_x.len() != source.len() || phi_y.len() != target.len() {
        return Err(Error::Dimension(format!(
            "features ({}, {}) do not match cloud sizes ({}, {})",
            phi_x.len(),
            phi_y.len(),
            source.len(),
            target.len()
        )));
    }
    let mut cs = build_candidates(source, target, cfg)?;
    let mut g = Graph::new();
    let x = g.leaf(phi_x.as_array().clone());
    let y = g.leaf(phi_y.as_array().clone());
    let out = solve_on(&mut g, x, y, &cs, cfg)?;
    let weights = g.value(out.weights).clone();
    let field = field_from_array(g.value(out.displacement))?;
    let beliefs = g.value(out.beliefs).clone();

    cs.set_unary(g.value(out.unary).clone())?;
    for _ in 0..cfg.lbp_iterations {
        lbp_sweep(&mut cs, cfg)?;
    }
    Ok(Solution {
        field,
        weights,
        beliefs,
        candidates: cs,
    })
}

pub(crate) fn field_from_array(a: &Array2<f64>) -> Result<DeformationField> {
    DeformationField::new(a.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}

/// Tape handles produced by [`solve_on`].
#[derive(Debug, Clone, Copy)]
pub struct SolveVars {
    pub unary: Var,
    pub beliefs: Var,
    pub weights: Var,
    /// `n × 3` displacement field.
    pub displacement: Var,
}

/// Differentiable solve from feature nodes to the displacement node.
pub fn solve_on(g: &mut Graph, phi_x: Var, phi_y: Var, cs: &CandidateSet, cfg: &SolverConfig) -> Result<SolveVars> {
    cfg.validate()?;
    check_features(g.value(phi_x).view(), g.value(phi_y).view(), cs)?;
    let unary_value = unary_values(g.value(phi_x).view(), g.value(phi_y).view(), cs);
    let unary = g.custom(
        unary_value,
        Box::new(UnaryOp {
            phi_x,
            phi_y,
            k: cs.k,
            candidates: cs.candidates.clone(),
        }),
    );
    let beliefs = lbp::beliefs_on(
        g,
        unary,
        cs.graph.clone(),
        &cs.pairwise,
        cfg.alpha,
        cfg.lbp_iterations,
        cfg.softmin_temperature,
    );
    let logits = g.scale(beliefs, -1.0 / cfg.softmax_temperature);
    let weights = g.softmax_rows(logits);
    let value = weighted_displacements(g.value(weights), cs);
    let displacement = g.custom(
        value,
        Box::new(DisplacementOp {
            weights,
            k: cs.k,
            displacements: cs.displacements.clone(),
        }),
    );
    Ok(SolveVars {
        unary,
        beliefs,
        weights,
        displacement,
    })
}

fn weighted_displacements(weights: &Array2<f64>, cs: &CandidateSet) -> Array2<f64> {
    let mut out = Array2::zeros((cs.len(), 3));
    for i in 0..cs.len() {
        let mut u = Vec3::zeros();
        for p in 0..cs.k {
            u += cs.displacement(i, p) * weights[[i, p]];
        }
        for a in 0..3 {
            out[[i, a]] = u[a];
        }
    }
    out
}

struct UnaryOp {
    phi_x: Var,
    phi_y: Var,
    k: usize,
    candidates: Vec<usize>,
}

impl CustomOp for UnaryOp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.phi_x, self.phi_y]
    }

    fn backward(&self, grad: ArrayView2<'_, f64>, graph: &Graph) -> Vec<Array2<f64>> {
        let x = graph.value(self.phi_x);
        let y = graph.value(self.phi_y);
        let mut gx = Array2::zeros(x.raw_dim());
        let mut gy = Array2::zeros(y.raw_dim());
        for ((i, p), &g) in grad.indexed_iter() {
            if g == 0.0 {
                continue;
            }
            let c = self.candidates[i * self.k + p];
            for d in 0..x.ncols() {
                let diff = 2.0 * g * (x[[i, d]] - y[[c, d]]);
                gx[[i, d]] += diff;
                gy[[c, d]] -= diff;
            }
        }
        vec![gx, gy]
    }
}

struct DisplacementOp {
    weights: Var,
    k: usize,
    displacements: Vec<Vec3>,
}

impl CustomOp for DisplacementOp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.weights]
    }

    fn backward(&self, grad: ArrayView2<'_, f64>, graph: &Graph) -> Vec<Array2<f64>> {
        let mut gw = Array2::zeros(graph.value(self.weights).raw_dim());
        for ((i, p), slot) in gw.indexed_iter_mut() {
            let d = self.displacements[i * self.k + p];
            *slot = grad[[i, 0]] * d[0] + grad[[i, 1]] * d[1] + grad[[i, 2]] * d[2];
        }
        vec![gw]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mean_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_arrays(points).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap()
    }

    fn cfg(k_cand: usize, k_reg: usize) -> SolverConfig {
        SolverConfig {
            k_cand,
            k_reg,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn self_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 20);
        let cs = build_candidates(&c, &c, &cfg(1, 3)).unwrap();
        for i in 0..20 {
            assert_eq!(cs.candidate(i, 0), i);
        }
    }

    #[test]
    fn collinear_source_graph() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let cs = build_candidates(&c, &c, &cfg(1, 1)).unwrap();
        assert_eq!(cs.source_graph().unwrap().row(1), &[0]);
    }

    #[test]
    fn candidate_parameter_errors() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(matches!(build_candidates(&c, &c, &cfg(4, 1)), Err(Error::Parameter(_))));
        assert!(matches!(build_candidates(&c, &c, &cfg(1, 3)), Err(Error::Parameter(_))));
    }

    #[test]
    fn candidates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_cloud(&mut rng, 200);
        let t = random_cloud(&mut rng, 200);
        let cs = build_candidates(&s, &t, &cfg(16, 8)).unwrap();
        for i in 0..200 {
            let mut all: Vec<(f64, usize)> = (0..200).map(|j| ((s.point(i) - t.point(j)).norm_squared(), j)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<usize> = all[..16].iter().map(|e| e.1).collect();
            assert_eq!(&cs.candidates()[i * 16..(i + 1) * 16], &expected[..]);
        }
    }

    #[test]
    fn unary_examples() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let cs = build_candidates(&c, &c, &cfg(1, 1)).unwrap();
        let f = FeatureField::new(Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let d = unary_costs(&f, &f, &cs).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));

        let fx = FeatureField::new(Array2::from_elem((2, 1), 1.0)).unwrap();
        let fy = FeatureField::new(Array2::from_elem((2, 1), 3.0)).unwrap();
        assert_eq!(unary_costs(&fx, &fy, &cs).unwrap()[[0, 0]], 4.0);

        let wide = FeatureField::new(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(unary_costs(&fx, &wide, &cs), Err(Error::Dimension(_))));
    }

    #[test]
    fn unary_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_cloud(&mut rng, 30);
        let t = random_cloud(&mut rng, 25);
        let cs = build_candidates(&s, &t, &cfg(5, 3)).unwrap();
        let fx = Array2::from_shape_fn((30, 6), |_| rng.random::<f64>());
        let fy = Array2::from_shape_fn((25, 6), |_| rng.random::<f64>());
        let d = unary_costs(&FeatureField::new(fx.clone()).unwrap(), &FeatureField::new(fy.clone()).unwrap(), &cs).unwrap();
        for i in 0..30 {
            for p in 0..5 {
                let c = cs.candidate(i, p);
                let mut acc = 0.0;
                for k in 0..6 {
                    let diff = fx[[i, k]] - fy[[c, k]];
                    acc += diff * diff;
                }
                assert!((d[[i, p]] - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pairwise_examples() {
        let z = Vec3::zeros();
        let xi = Vec3::new(1.0, 2.0, 3.0);
        let xj = Vec3::new(-1.0, 0.5, 2.0);
        let shift = Vec3::new(0.25, 0.5, 0.125);
        assert_eq!(pairwise_cost(&xi, &xj, &(xi + shift), &(xj + shift)), 0.0);
        assert_eq!(pairwise_cost(&z, &z, &Vec3::new(1.0, 0.0, 0.0), &z), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let mut expected = 0.0;
        for a in 0..3 {
            let d = (v[2][a] - v[0][a]) - (v[3][a] - v[1][a]);
            expected += d * d;
        }
        assert!((pairwise_cost(&v[0], &v[1], &v[2], &v[3]) - expected).abs() < 1e-12);
    }

    #[test]
    fn sweep_requires_unary() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let mut cs = build_candidates(&c, &c, &cfg(1, 1)).unwrap();
        assert!(matches!(lbp_sweep(&mut cs, &SolverConfig::default()), Err(Error::State(_))));
        assert!(matches!(beliefs(&cs), Err(Error::State(_))));
    }

    fn two_node_set() -> CandidateSet {
        // Displacements chosen so that r_12^pq = 0 on the diagonal, 1 off it.
        let d = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        CandidateSet::from_parts(
            2,
            vec![0, 1, 0, 1],
            vec![d[0], d[1], d[0], d[1]],
            MessageGraph::from_undirected(2, [(0, 1)]),
        )
        .unwrap()
    }

    #[test]
    fn alpha_zero_first_sweep_is_flat() {
        let mut cs = two_node_set();
        cs.set_unary(Array2::from_shape_vec((2, 2), vec![0.0, 10.0, 5.0, 0.0]).unwrap()).unwrap();
        let c = SolverConfig {
            alpha: 0.0,
            ..SolverConfig::default()
        };
        lbp_sweep(&mut cs, &c).unwrap();
        assert!(cs.messages().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn two_node_sweep_by_hand() {
        let mut cs = two_node_set();
        cs.set_unary(Array2::from_shape_vec((2, 2), vec![0.0, 10.0, 5.0, 0.0]).unwrap()).unwrap();
        lbp_sweep(&mut cs, &SolverConfig::default()).unwrap();
        // m_{1→2}[q] = min_p d_1^p + r^{pq}: q=0: min(0, 11) = 0, q=1: min(1, 10) = 1.
        // m_{2→1}[q] = min_p d_2^p + r^{pq}: q=0: min(5, 1) = 1, q=1: min(6, 0) = 0.
        let graph = cs.message_graph().clone();
        let e12 = graph.edges().iter().position(|&e| e == (0, 1)).unwrap();
        let e21 = graph.edges().iter().position(|&e| e == (1, 0)).unwrap();
        assert_eq!(cs.messages().row(e12).to_vec(), vec![0.0, 1.0]);
        assert_eq!(cs.messages().row(e21).to_vec(), vec![1.0, 0.0]);
        let b = beliefs(&cs).unwrap();
        assert_eq!(b.row(0).to_vec(), vec![1.0, 10.0]);
        assert_eq!(b.row(1).to_vec(), vec![5.0, 1.0]);
    }

    #[test]
    fn zero_sweeps_beliefs_are_unary_and_shift_linearly() {
        let mut cs = two_node_set();
        let d = Array2::from_shape_vec((2, 2), vec![0.5, 2.0, 3.0, 1.0]).unwrap();
        cs.set_unary(d.clone()).unwrap();
        assert_eq!(beliefs(&cs).unwrap(), d);
        let mut shifted = d.clone();
        shifted.row_mut(1).mapv_inplace(|v| v + 7.0);
        cs.set_unary(shifted).unwrap();
        let b = beliefs(&cs).unwrap();
        assert_eq!(b.row(1).to_vec(), vec![10.0, 8.0]);
        assert_eq!(b.row(0).to_vec(), vec![0.5, 2.0]);
    }

    fn brute_force_map(cs: &CandidateSet, alpha: f64) -> f64 {
        let n = cs.len();
        let k = cs.k();
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        loop {
            best = best.min(cs.energy(&labels, alpha).unwrap());
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                labels[pos] += 1;
                if labels[pos] < k {
                    break;
                }
                labels[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn chain_converges_to_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let disp: Vec<Vec3> = (0..12).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
            let mut cs = CandidateSet::from_parts(3, vec![0; 12], disp, MessageGraph::from_undirected(4, [(0, 1), (1, 2), (2, 3)])).unwrap();
            cs.set_unary(Array2::from_shape_fn((4, 3), |_| rng.random::<f64>())).unwrap();
            let c = SolverConfig::default();
            for _ in 0..4 {
                lbp_sweep(&mut cs, &c).unwrap();
            }
            let labels = belief_argmin(&beliefs(&cs).unwrap());
            let energy = cs.energy(&labels, c.alpha).unwrap();
            assert!((energy - brute_force_map(&cs, c.alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_candidate_moves_onto_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_cloud(&mut rng, 10);
        let t = random_cloud(&mut rng, 12);
        let fx = FeatureField::new(Array2::from_shape_fn((10, 4), |_| rng.random::<f64>())).unwrap();
        let fy = FeatureField::new(Array2::from_shape_fn((12, 4), |_| rng.random::<f64>())).unwrap();
        let sol = solve(&s, &t, &fx, &fy, &cfg(1, 2)).unwrap();
        for i in 0..10 {
            assert_eq!(sol.weights[[i, 0]], 1.0);
            let c = sol.candidates.candidate(i, 0);
            assert_eq!(sol.field.displacements()[i], t.point(c) - s.point(i));
        }
    }

    #[test]
    fn one_hot_features_register_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_cloud(&mut rng, 60);
        let t = PointCloud::new(s.points().iter().map(|p| p + Vec3::new(0.01, -0.02, 0.015)).collect()).unwrap();
        let eye = FeatureField::new(Array2::eye(60) * 10.0).unwrap();
        let c = SolverConfig {
            alpha: 0.0,
            ..SolverConfig::default()
        };
        let sol = solve(&s, &t, &eye, &eye, &c).unwrap();
        let moved = crate::geometry::apply_deformation(&s, &sol.field).unwrap();
        assert!(mean_distance(&moved, &t).unwrap() < 1e-9);
        for row in sol.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}
