//! Temporal contrastive graphs: chain adjacency over temporal ranks,
//! stochastic view generation, symmetric-normalized graph convolution, and
//! the hybrid contrastive objective.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TcglError};
use crate::numcore::{Tape, Tensor, Var};

/// Node features (tape var, N x F) plus the {0,1} chain adjacency.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    pub x: Var,
    pub adj: Tensor,
}

/// Corrupted copy of a temporal graph. Edges are only ever removed and the
/// adjacency stays symmetric; feature masking zeroes whole dimensions
/// identically across nodes.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub x: Var,
    pub adj: Tensor,
}

/// View corruption strategies (the last three are ablation variants).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewVariant {
    EdgesAndNodes,
    EdgesOnly,
    NodesOnly,
    GaussianNoise,
}

impl ViewVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "edges+nodes" => Ok(ViewVariant::EdgesAndNodes),
            "edges-only" => Ok(ViewVariant::EdgesOnly),
            "nodes-only" => Ok(ViewVariant::NodesOnly),
            "noise" => Ok(ViewVariant::GaussianNoise),
            other => Err(TcglError::InvalidConfig(format!(
                "unknown view variant '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ViewVariant::EdgesAndNodes => "edges+nodes",
            ViewVariant::EdgesOnly => "edges-only",
            ViewVariant::NodesOnly => "nodes-only",
            ViewVariant::GaussianNoise => "noise",
        }
    }
}

/// Per-GCN parameters: one weight/bias pair per propagation layer. The
/// intra and inter GCNs are distinct instances of this struct.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl GcnParams {
    pub fn init(f_in: usize, f_out: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth);
        let mut d_in = f_in;
        for _ in 0..depth {
            layers.push((
                Tensor::init_kaiming(vec![d_in, f_out], d_in, &mut rng),
                Tensor::init_uniform(vec![f_out], d_in, &mut rng),
            ));
            d_in = f_out;
        }
        GcnParams { layers }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), w));
            out.push((format!("{prefix}.{i}.b"), b));
        }
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), w));
            out.push((format!("{prefix}.{i}.b"), b));
        }
        out
    }

    pub fn track(&self, tape: &Tape) -> GcnVars {
        GcnVars {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnVars {
    pub layers: Vec<(Var, Var)>,
}

/// Projection head (two-layer MLP) and temperature for the contrastive loss.
#[derive(Debug, Clone)]
pub struct ContrastiveParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub tau: f64,
}

impl ContrastiveParams {
    pub fn init(f: usize, tau: f64, seed: u64) -> Self {
        assert!(tau > 0.0, "temperature must be positive");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ContrastiveParams {
            w1: Tensor::init_kaiming(vec![f, f], f, &mut rng),
            b1: Tensor::init_uniform(vec![f], f, &mut rng),
            w2: Tensor::init_kaiming(vec![f, f], f, &mut rng),
            b2: Tensor::init_uniform(vec![f], f, &mut rng),
            tau,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("proj.w1".into(), &self.w1),
            ("proj.b1".into(), &self.b1),
            ("proj.w2".into(), &self.w2),
            ("proj.b2".into(), &self.b2),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("proj.w1".into(), &mut self.w1),
            ("proj.b1".into(), &mut self.b1),
            ("proj.w2".into(), &mut self.w2),
            ("proj.b2".into(), &mut self.b2),
        ]
    }

    pub fn track(&self, tape: &Tape) -> ProjVars {
        ProjVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub tau: f64,
}

/// Chain adjacency over N temporal ranks: A[i][j] = 1 iff |i - j| == 1.
pub fn chain_adjacency(n: usize) -> Tensor {
    let mut a = Tensor::zeros(vec![n, n]);
    for i in 0..n.saturating_sub(1) {
        a.data[i * n + i + 1] = 1.0;
        a.data[(i + 1) * n + i] = 1.0;
    }
    a
}

/// Build the temporal chain graph from node features listed in true
/// temporal order.
pub fn build_chain_graph(tape: &Tape, rows: &[Var]) -> Result<TemporalGraph> {
    if rows.len() < 2 {
        return Err(TcglError::InvalidConfig(format!(
            "chain graph needs at least 2 nodes, got {}",
            rows.len()
        )));
    }
    let x = tape.stack_rows(rows)?;
    Ok(TemporalGraph { x, adj: chain_adjacency(rows.len()) })
}

/// Stochastically corrupt a graph: each undirected edge kept with
/// probability 1 - p_r (drawn once on the upper triangle and mirrored),
/// each feature dimension zeroed with probability p_m via a mask shared by
/// all nodes.
pub fn generate_view(
    tape: &Tape,
    graph: &TemporalGraph,
    p_r: f64,
    p_m: f64,
    seed: u64,
    variant: ViewVariant,
) -> Result<GraphView> {
    if !(0.0..=1.0).contains(&p_r) || !(0.0..=1.0).contains(&p_m) {
        return Err(TcglError::InvalidConfig(format!(
            "corruption probabilities must be in [0,1], got p_r={p_r}, p_m={p_m}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = graph.adj.shape[0];
    let f = tape.shape(graph.x)[1];

    let drop_edges = matches!(variant, ViewVariant::EdgesAndNodes | ViewVariant::EdgesOnly);
    let mask_nodes = matches!(variant, ViewVariant::EdgesAndNodes | ViewVariant::NodesOnly);

    let mut adj = graph.adj.clone();
    if drop_edges && p_r > 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                if adj.data[i * n + j] != 0.0 && rng.gen::<f64>() < p_r {
                    adj.data[i * n + j] = 0.0;
                    adj.data[j * n + i] = 0.0;
                }
            }
        }
    }

    let x = match variant {
        ViewVariant::GaussianNoise => {
            // feature-level corruption only: X + eps, eps ~ N(0, 0.1^2)
            let mut noise = Tensor::zeros(vec![n, f]);
            for v in noise.data.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = 0.1 * e;
            }
            let nc = tape.constant(noise);
            tape.add(graph.x, nc)?
        }
        _ if mask_nodes && p_m > 0.0 => {
            let mask: Vec<f64> = (0..f)
                .map(|_| if rng.gen::<f64>() < p_m { 0.0 } else { 1.0 })
                .collect();
            let mc = tape.constant(Tensor::vector(mask));
            tape.mul(graph.x, mc)?
        }
        _ => graph.x,
    };

    Ok(GraphView { x, adj })
}

/// Symmetric-normalized propagation operator with self-loops:
/// S = D^(-1/2) (A + I) D^(-1/2), D the degree matrix of A + I.
pub fn normalized_operator(adj: &Tensor) -> Tensor {
    let n = adj.shape[0];
    let mut hat = adj.clone();
    for i in 0..n {
        hat.data[i * n + i] += 1.0;
    }
    let mut dinv = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = hat.data[i * n..(i + 1) * n].iter().sum();
        dinv[i] = 1.0 / deg.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            hat.data[i * n + j] *= dinv[i] * dinv[j];
        }
    }
    hat
}

/// One or more propagation layers: H = relu(S . X . W + b) per layer.
pub fn gcn_forward(tape: &Tape, view: &GraphView, params: &GcnVars) -> Result<Var> {
    let s = tape.constant(normalized_operator(&view.adj));
    let mut h = view.x;
    for (w, b) in &params.layers {
        let xw = tape.matmul(h, *w)?;
        let sxw = tape.matmul(s, xw)?;
        let biased = tape.add(sxw, *b)?;
        h = tape.relu(biased);
    }
    Ok(h)
}

/// Project each row of an N x F matrix through the two-layer head and
/// l2-normalize it.
pub fn project_rows(tape: &Tape, x: Var, proj: &ProjVars) -> Result<Vec<Var>> {
    let n = tape.shape(x)[0];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r = tape.row(x, i)?;
        let h = tape.affine_vec(r, proj.w1, proj.b1)?;
        let h = tape.relu(h);
        let z = tape.affine_vec(h, proj.w2, proj.b2)?;
        out.push(tape.l2_normalize(z)?);
    }
    Ok(out)
}

/// Pairwise contrastive loss for positive pair i given the projected and
/// normalized rows of both views:
/// -log( e^(s_ii/tau) / (e^(s_ii/tau) + sum_{k!=i} e^(s_ik/tau)
///       + sum_{k!=i} e^(u_i.u_k/tau)) ).
fn pair_loss_normed(tape: &Tape, i: usize, nu: &[Var], nv: &[Var], tau: f64) -> Result<Var> {
    let n = nu.len();
    let pos = tape.dot(nu[i], nv[i])?;
    let pos_scaled = tape.scale(pos, 1.0 / tau);
    let mut terms = vec![pos_scaled];
    for k in 0..n {
        if k != i {
            let d = tape.dot(nu[i], nv[k])?;
            terms.push(tape.scale(d, 1.0 / tau));
        }
    }
    for k in 0..n {
        if k != i {
            let d = tape.dot(nu[i], nu[k])?;
            terms.push(tape.scale(d, 1.0 / tau));
        }
    }
    let sims = tape.concat(&terms)?;
    let exps = tape.exp(sims);
    let denom = tape.sum_all(exps);
    let log_denom = tape.log(denom);
    tape.sub(log_denom, pos_scaled)
}

/// Pairwise contrastive loss for positive pair (u_i, v_i) given raw
/// embedding rows of the two views.
pub fn pair_loss(
    tape: &Tape,
    i: usize,
    u_rows: Var,
    v_rows: Var,
    proj: &ProjVars,
) -> Result<Var> {
    let nu = project_rows(tape, u_rows, proj)?;
    let nv = project_rows(tape, v_rows, proj)?;
    pair_loss_normed(tape, i, &nu, &nv, proj.tau)
}

/// Symmetrized graph contrastive loss (1/2N) sum_i [l(u_i,v_i) + l(v_i,u_i)].
pub fn graph_contrastive_loss(tape: &Tape, u: Var, v: Var, proj: &ProjVars) -> Result<Var> {
    let su = tape.shape(u);
    let sv = tape.shape(v);
    if su != sv {
        return Err(TcglError::ShapeMismatch(format!(
            "graph_contrastive_loss: {su:?} vs {sv:?}"
        )));
    }
    let n = su[0];
    let nu = project_rows(tape, u, proj)?;
    let nv = project_rows(tape, v, proj)?;
    let mut losses = Vec::with_capacity(2 * n);
    for i in 0..n {
        losses.push(pair_loss_normed(tape, i, &nu, &nv, proj.tau)?);
        losses.push(pair_loss_normed(tape, i, &nv, &nu, proj.tau)?);
    }
    let total = tape.sum_scalars(&losses)?;
    Ok(tape.scale(total, 1.0 / (2.0 * n as f64)))
}

/// Overall temporal contrastive graph loss:
/// J_g = alpha * sum_k J_intra^k + beta * J_inter.
pub fn tcg_total_loss(
    tape: &Tape,
    intra_losses: &[Var],
    inter_loss: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(intra_losses.len() + 1);
    if !intra_losses.is_empty() {
        let intra = tape.sum_scalars(intra_losses)?;
        terms.push(tape.scale(intra, alpha));
    }
    terms.push(tape.scale(inter_loss, beta));
    tape.sum_scalars(&terms)
}

/// Reference implementation of the symmetrized contrastive loss computed
/// with plain scalar arithmetic, bypassing the tape entirely. Used to
/// cross-check the differentiable path; not meant for training.
pub fn reference_contrastive_loss(u: &Tensor, v: &Tensor, proj: &ContrastiveParams) -> f64 {
    let n = u.shape[0];
    let f = u.shape[1];
    let project = |row: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; f];
        for j in 0..f {
            let mut s = proj.b1.data[j];
            for i in 0..f {
                s += row[i] * proj.w1.data[i * f + j];
            }
            h[j] = s.max(0.0);
        }
        let mut z = vec![0.0; f];
        for j in 0..f {
            let mut s = proj.b2.data[j];
            for i in 0..f {
                s += h[i] * proj.w2.data[i * f + j];
            }
            z[j] = s;
        }
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        z.iter().map(|x| x / norm).collect()
    };
    let zu: Vec<Vec<f64>> = (0..n).map(|i| project(&u.data[i * f..(i + 1) * f])).collect();
    let zv: Vec<Vec<f64>> = (0..n).map(|i| project(&v.data[i * f..(i + 1) * f])).collect();
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let ell = |a: &[Vec<f64>], b: &[Vec<f64>], i: usize| -> f64 {
        let pos = (cos(&a[i], &b[i]) / proj.tau).exp();
        let mut denom = pos;
        for k in 0..n {
            if k != i {
                denom += (cos(&a[i], &b[k]) / proj.tau).exp();
                denom += (cos(&a[i], &a[k]) / proj.tau).exp();
            }
        }
        -(pos / denom).ln()
    };
    let mut total = 0.0;
    for i in 0..n {
        total += ell(&zu, &zv, i) + ell(&zv, &zu, i);
    }
    total / (2.0 * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_rows(tape: &Tape, n: usize, f: usize, seed: u64) -> Vec<Var> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                tape.leaf(Tensor::vector(
                    (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ))
            })
            .collect()
    }

    fn rand_pos_rows(tape: &Tape, n: usize, f: usize, seed: u64) -> Vec<Var> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                tape.leaf(Tensor::vector(
                    (0..f).map(|_| rng.gen_range(0.1..1.0)).collect(),
                ))
            })
            .collect()
    }

    #[test]
    fn chain_graph_structure() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 4, 3, 1);
        let g = build_chain_graph(&tape, &rows).unwrap();
        let a = &g.adj;
        assert_eq!(a.data.iter().filter(|v| **v != 0.0).count(), 6);
        for i in 0..4 {
            assert_eq!(a.data[i * 4 + i], 0.0);
            for j in 0..4 {
                assert_eq!(a.data[i * 4 + j], a.data[j * 4 + i]);
                let expect = if i.abs_diff(j) == 1 { 1.0 } else { 0.0 };
                assert_eq!(a.data[i * 4 + j], expect);
            }
        }

        let two = rand_rows(&tape, 2, 3, 2);
        let g2 = build_chain_graph(&tape, &two).unwrap();
        assert_eq!(g2.adj.data, vec![0.0, 1.0, 1.0, 0.0]);

        let one = rand_rows(&tape, 1, 3, 3);
        assert!(build_chain_graph(&tape, &one).is_err());
    }

    #[test]
    fn view_identity_when_uncorrupted() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 4, 5, 4);
        let g = build_chain_graph(&tape, &rows).unwrap();
        let view = generate_view(&tape, &g, 0.0, 0.0, 7, ViewVariant::EdgesAndNodes).unwrap();
        assert_eq!(view.adj, g.adj);
        assert_eq!(tape.value(view.x).data, tape.value(g.x).data);
    }

    #[test]
    fn view_edge_removal_bounds() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 5, 4, 5);
        let g = build_chain_graph(&tape, &rows).unwrap();
        // p_r = 1 removes every edge
        let view = generate_view(&tape, &g, 1.0, 0.0, 3, ViewVariant::EdgesAndNodes).unwrap();
        assert!(view.adj.data.iter().all(|v| *v == 0.0));
        // corrupted adjacency stays within the original and symmetric
        for seed in 0..50 {
            let v = generate_view(&tape, &g, 0.5, 0.5, seed, ViewVariant::EdgesAndNodes).unwrap();
            let n = 5;
            for i in 0..n {
                for j in 0..n {
                    assert!(v.adj.data[i * n + j] <= g.adj.data[i * n + j]);
                    assert_eq!(v.adj.data[i * n + j], v.adj.data[j * n + i]);
                }
            }
        }
        assert!(generate_view(&tape, &g, 1.5, 0.0, 0, ViewVariant::EdgesAndNodes).is_err());
    }

    #[test]
    fn view_edge_survival_rate() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 5, 4, 6);
        let g = build_chain_graph(&tape, &rows).unwrap();
        let total_edges = 4.0;
        let mut surviving = 0.0;
        let draws = 20_000;
        for seed in 0..draws {
            let v = generate_view(&tape, &g, 0.2, 0.0, seed, ViewVariant::EdgesOnly).unwrap();
            surviving += v.adj.data.iter().sum::<f64>() / 2.0;
        }
        let rate = surviving / (total_edges * draws as f64);
        assert!((rate - 0.8).abs() < 0.01, "survival rate {rate}");
    }

    #[test]
    fn feature_mask_is_shared_across_nodes() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 4, 8, 7);
        let g = build_chain_graph(&tape, &rows).unwrap();
        let view = generate_view(&tape, &g, 0.0, 0.5, 11, ViewVariant::NodesOnly).unwrap();
        let orig = tape.value(g.x);
        let masked = tape.value(view.x);
        for j in 0..8 {
            let zeroed = (0..4).all(|i| masked.data[i * 8 + j] == 0.0);
            let intact = (0..4).all(|i| masked.data[i * 8 + j] == orig.data[i * 8 + j]);
            assert!(zeroed || intact, "dimension {j} not uniformly masked");
        }
        // adjacency untouched in nodes-only mode
        assert_eq!(view.adj, g.adj);
    }

    #[test]
    fn gcn_two_node_mean_operator() {
        // normalized operator of the 2-chain is [[0.5,0.5],[0.5,0.5]]
        let s = normalized_operator(&chain_adjacency(2));
        for v in &s.data {
            assert!((v - 0.5).abs() < 1e-12);
        }
        // with W = I, b = 0 and non-negative X, each output row is the mean
        let tape = Tape::new();
        let r0 = tape.leaf(Tensor::vector(vec![0.2, 0.8]));
        let r1 = tape.leaf(Tensor::vector(vec![0.6, 0.4]));
        let g = build_chain_graph(&tape, &[r0, r1]).unwrap();
        let view = generate_view(&tape, &g, 0.0, 0.0, 0, ViewVariant::EdgesAndNodes).unwrap();
        let params = GcnVars {
            layers: vec![(tape.leaf(Tensor::eye(2)), tape.leaf(Tensor::zeros(vec![2])))],
        };
        let h = tape.value(gcn_forward(&tape, &view, &params).unwrap());
        assert!((h.data[0] - 0.4).abs() < 1e-12);
        assert!((h.data[1] - 0.6).abs() < 1e-12);
        assert!((h.data[2] - 0.4).abs() < 1e-12);
        assert!((h.data[3] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn gcn_isolated_nodes_pass_through() {
        let tape = Tape::new();
        let rows = rand_rows(&tape, 3, 3, 9);
        let g = build_chain_graph(&tape, &rows).unwrap();
        let view = generate_view(&tape, &g, 1.0, 0.0, 1, ViewVariant::EdgesOnly).unwrap();
        let params = GcnVars {
            layers: vec![(tape.leaf(Tensor::eye(3)), tape.leaf(Tensor::zeros(vec![3])))],
        };
        let h = tape.value(gcn_forward(&tape, &view, &params).unwrap());
        for (i, row) in rows.iter().enumerate() {
            let x = tape.value(*row);
            for j in 0..3 {
                assert!((h.data[i * 3 + j] - x.data[j].max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_permutation_equivariance() {
        for n in 3..=8 {
            let tape = Tape::new();
            let rows = rand_rows(&tape, n, 4, n as u64);
            let g = build_chain_graph(&tape, &rows).unwrap();
            let params = GcnParams::init(4, 4, 1, 42).track(&tape);
            let view = GraphView { x: g.x, adj: g.adj.clone() };
            let h = tape.value(gcn_forward(&tape, &view, &params).unwrap());

            // apply a node permutation to both X and A
            let mut rng = ChaCha12Rng::seed_from_u64(100 + n as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let permuted_rows: Vec<Var> = perm.iter().map(|&p| rows[p]).collect();
            let px = tape.stack_rows(&permuted_rows).unwrap();
            let mut pa = Tensor::zeros(vec![n, n]);
            for i in 0..n {
                for j in 0..n {
                    pa.data[i * n + j] = g.adj.data[perm[i] * n + perm[j]];
                }
            }
            let ph = tape.value(
                gcn_forward(&tape, &GraphView { x: px, adj: pa }, &params).unwrap(),
            );
            for i in 0..n {
                for j in 0..4 {
                    assert!(
                        (ph.data[i * 4 + j] - h.data[perm[i] * 4 + j]).abs() < 1e-9,
                        "equivariance violated at n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn pair_loss_edge_cases() {
        let tape = Tape::new();
        let proj = identity_proj(&tape, 3, 0.5);

        // N = 1: denominator equals numerator, loss 0
        let u = tape.stack_rows(&[tape.leaf(Tensor::vector(vec![1.0, 0.0, 0.0]))]).unwrap();
        let v = tape.stack_rows(&[tape.leaf(Tensor::vector(vec![1.0, 0.0, 0.0]))]).unwrap();
        let l = pair_loss(&tape, 0, u, v, &proj).unwrap();
        assert!(tape.scalar_value(l).abs() < 1e-12);

        // identical embeddings, N = 3: ratio 1/5, loss ln 5
        let row = || tape.leaf(Tensor::vector(vec![0.3, 0.4, 0.5]));
        let u3 = tape.stack_rows(&[row(), row(), row()]).unwrap();
        let v3 = tape.stack_rows(&[row(), row(), row()]).unwrap();
        let l3 = pair_loss(&tape, 0, u3, v3, &proj).unwrap();
        assert!((tape.scalar_value(l3) - 5.0f64.ln()).abs() < 1e-12);

        // non-negativity on random instances (rows kept positive so the
        // identity projection really is the identity through the relu)
        for seed in 0..20 {
            let tape = Tape::new();
            let proj = identity_proj(&tape, 3, 0.5);
            let ur = rand_pos_rows(&tape, 4, 3, 200 + seed);
            let vr = rand_pos_rows(&tape, 4, 3, 300 + seed);
            let u = tape.stack_rows(&ur).unwrap();
            let v = tape.stack_rows(&vr).unwrap();
            for i in 0..4 {
                let l = pair_loss(&tape, i, u, v, &proj).unwrap();
                assert!(tape.scalar_value(l) >= 0.0);
            }
        }
    }

    /// Projection head acting as identity (relu is transparent because the
    /// second affine map re-reads the raw values through w1 = w2 = I only
    /// when inputs are non-negative, so tests use non-negative rows).
    fn identity_proj(tape: &Tape, f: usize, tau: f64) -> ProjVars {
        ProjVars {
            w1: tape.leaf(Tensor::eye(f)),
            b1: tape.leaf(Tensor::zeros(vec![f])),
            w2: tape.leaf(Tensor::eye(f)),
            b2: tape.leaf(Tensor::zeros(vec![f])),
            tau,
        }
    }

    #[test]
    fn contrastive_loss_symmetry_and_n1() {
        let tape = Tape::new();
        let proj = ContrastiveParams::init(4, 0.5, 5).track(&tape);
        let ur = rand_rows(&tape, 4, 4, 50);
        let vr = rand_rows(&tape, 4, 4, 51);
        let u = tape.stack_rows(&ur).unwrap();
        let v = tape.stack_rows(&vr).unwrap();
        let juv = graph_contrastive_loss(&tape, u, v, &proj).unwrap();
        let jvu = graph_contrastive_loss(&tape, v, u, &proj).unwrap();
        assert!((tape.scalar_value(juv) - tape.scalar_value(jvu)).abs() < 1e-12);

        let u1 = tape.stack_rows(&rand_rows(&tape, 1, 4, 52)).unwrap();
        let v1 = tape.stack_rows(&rand_rows(&tape, 1, 4, 53)).unwrap();
        let j1 = graph_contrastive_loss(&tape, u1, v1, &proj).unwrap();
        assert!(tape.scalar_value(j1).abs() < 1e-12);

        let bad = tape.stack_rows(&rand_rows(&tape, 2, 4, 54)).unwrap();
        assert!(graph_contrastive_loss(&tape, u, bad, &proj).is_err());
    }

    #[test]
    fn contrastive_loss_relabeling_invariance() {
        // permuting node indices identically in U and V leaves J unchanged
        let tape = Tape::new();
        let proj = ContrastiveParams::init(3, 0.5, 6).track(&tape);
        let ur = rand_rows(&tape, 5, 3, 60);
        let vr = rand_rows(&tape, 5, 3, 61);
        let u = tape.stack_rows(&ur).unwrap();
        let v = tape.stack_rows(&vr).unwrap();
        let j = tape.scalar_value(graph_contrastive_loss(&tape, u, v, &proj).unwrap());

        let perm = [3usize, 0, 4, 1, 2];
        let up = tape.stack_rows(&perm.map(|p| ur[p])).unwrap();
        let vp = tape.stack_rows(&perm.map(|p| vr[p])).unwrap();
        let jp = tape.scalar_value(graph_contrastive_loss(&tape, up, vp, &proj).unwrap());
        assert!((j - jp).abs() < 1e-10);
    }

    #[test]
    fn contrastive_loss_matches_brute_force_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7777);
        for case in 0..50u64 {
            let n = rng.gen_range(2..=6);
            let f = rng.gen_range(2..=5);
            let params = ContrastiveParams::init(f, 0.5, 900 + case);
            let mut um = Tensor::zeros(vec![n, f]);
            let mut vm = Tensor::zeros(vec![n, f]);
            for x in um.data.iter_mut().chain(vm.data.iter_mut()) {
                *x = rng.gen_range(-1.0..1.0);
            }
            let tape = Tape::new();
            let u = tape.leaf(um.clone());
            let v = tape.leaf(vm.clone());
            let proj = params.track(&tape);
            let j = tape.scalar_value(graph_contrastive_loss(&tape, u, v, &proj).unwrap());
            let oracle = reference_contrastive_loss(&um, &vm, &params);
            assert!(
                (j - oracle).abs() < 1e-10,
                "case {case}: tape {j} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn contrastive_loss_gradient_check() {
        use crate::numcore::grad_check;
        let params = ContrastiveParams::init(3, 0.5, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut um = Tensor::zeros(vec![3, 3]);
        let mut vm = Tensor::zeros(vec![3, 3]);
        for x in um.data.iter_mut().chain(vm.data.iter_mut()) {
            *x = rng.gen_range(-1.0..1.0);
        }
        let err = grad_check(
            &|tape, leaves: &[Var]| {
                let proj = ProjVars {
                    w1: leaves[2],
                    b1: leaves[3],
                    w2: leaves[4],
                    b2: leaves[5],
                    tau: 0.5,
                };
                graph_contrastive_loss(tape, leaves[0], leaves[1], &proj)
            },
            &[
                um,
                vm,
                params.w1.clone(),
                params.b1.clone(),
                params.w2.clone(),
                params.b2.clone(),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn total_loss_examples() {
        let tape = Tape::new();
        let intra: Vec<Var> = [0.2, 0.3, 0.1].iter().map(|v| tape.leaf(Tensor::scalar(*v))).collect();
        let inter = tape.leaf(Tensor::scalar(0.4));

        let zero = tcg_total_loss(&tape, &intra, inter, 0.0, 0.0).unwrap();
        assert_eq!(tape.scalar_value(zero), 0.0);

        let single = tcg_total_loss(&tape, &[tape.leaf(Tensor::scalar(0.7))], inter, 1.0, 0.0).unwrap();
        assert!((tape.scalar_value(single) - 0.7).abs() < 1e-15);

        let both = tcg_total_loss(&tape, &intra, inter, 1.0, 1.0).unwrap();
        assert!((tape.scalar_value(both) - 1.0).abs() < 1e-12);
    }
}
