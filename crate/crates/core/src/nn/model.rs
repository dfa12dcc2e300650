//! GNN actor-critic: encoder, message-passing layer, policy and value decoders.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::autodiff::{Graph, Mat, ParamGrads, Var};
use super::dist::{ActionDistribution, LOG_STD_MAX, LOG_STD_MIN};
use crate::physics::Vec2;

pub const EDGE_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dim { what: &'static str, expected: usize, got: usize },
    #[error("agent {agent} lists neighbor {neighbor} which has no edge features")]
    MissingEdge { agent: usize, neighbor: usize },
}

/// GPPO shares one parameter set across the team; HetGPPO gives every agent its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SharingMode {
    #[serde(rename = "gppo")]
    Shared,
    #[serde(rename = "hetgppo")]
    PerAgent,
}

impl SharingMode {
    pub fn label(self) -> &'static str {
        match self {
            SharingMode::Shared => "gppo",
            SharingMode::PerAgent => "hetgppo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
}

/// Architecture hyper-parameters plus the scenario-derived input/output sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_agents: usize,
    pub enc_input: usize,
    pub act_dim: usize,
    pub width: usize,
    pub encoder_depth: usize,
    pub aggregation: Aggregation,
    pub sharing: SharingMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Mat,
    /// `1 x out`
    pub bias: Mat,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    /// Orthogonal init scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: orthogonal_matrix(fan_in, fan_out, rng) * gain,
            bias: Array2::zeros((1, fan_out)),
        }
    }
}

/// Random matrix with orthonormal rows or columns (whichever is shorter),
/// via Gram-Schmidt on Gaussian samples.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `m` orthonormal vectors of length `n`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for (k, b) in basis.iter().enumerate() {
        for (i, x) in b.iter().enumerate() {
            if rows >= cols {
                out[[i, k]] = *x;
            } else {
                out[[k, i]] = *x;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply tanh after the final layer too.
    pub squash_output: bool,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(dims: &[usize], out_gain: f64, squash_output: bool, rng: &mut R) -> Self {
        let hidden_gain = 2f64.sqrt();
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { hidden_gain };
                Linear::orthogonal(dims[i], dims[i + 1], gain, rng)
            })
            .collect();
        Self { layers, squash_output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    /// Plain forward pass on a single input vector, outside any graph.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i + 1 < n || self.squash_output {
                h.mapv_inplace(f64::tanh);
            }
        }
        h.into_raw_vec_and_offset().0
    }
}

/// One agent's full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    pub encoder: Mlp,
    pub psi: Mlp,
    pub phi: Mlp,
    pub policy: Mlp,
    pub value: Mlp,
    /// `1 x act_dim`, state independent.
    pub log_std: Mat,
}

impl AgentNet {
    pub fn init<R: Rng + ?Sized>(shape: &ModelShape, rng: &mut R) -> Self {
        let w = shape.width;
        let mut enc_dims = vec![shape.enc_input];
        enc_dims.extend(std::iter::repeat_n(w, shape.encoder_depth.max(1)));
        Self {
            encoder: Mlp::init(&enc_dims, 2f64.sqrt(), true, rng),
            psi: Mlp::init(&[w, w, w], 1.0, false, rng),
            phi: Mlp::init(&[w + EDGE_DIM, w, w], 1.0, false, rng),
            policy: Mlp::init(&[w, w, shape.act_dim], 0.01, false, rng),
            value: Mlp::init(&[w, w, 1], 1.0, false, rng),
            log_std: Array2::zeros((1, shape.act_dim)),
        }
    }

    fn mlps(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("encoder", &self.encoder),
            ("psi", &self.psi),
            ("phi", &self.phi),
            ("policy", &self.policy),
            ("value", &self.value),
        ]
    }

    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (name, mlp) in self.mlps() {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out.push(("log_std".to_string(), &self.log_std));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for mlp in [&mut self.encoder, &mut self.psi, &mut self.phi, &mut self.policy, &mut self.value] {
            for l in mlp.layers.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.log_std);
        out
    }
}

/// All learnable weights of the team. In shared mode `nets` holds exactly one
/// set used by every agent; in per-agent mode it holds one set per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub nets: Vec<AgentNet>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let n_sets = match shape.sharing {
            SharingMode::Shared => 1,
            SharingMode::PerAgent => shape.n_agents,
        };
        let nets = (0..n_sets).map(|_| AgentNet::init(&shape, rng)).collect();
        let mut params = Self { shape, nets };
        params.round_to_storage();
        params
    }

    pub fn sharing(&self) -> SharingMode {
        self.shape.sharing
    }

    pub fn net_for(&self, agent: usize) -> &AgentNet {
        match self.shape.sharing {
            SharingMode::Shared => &self.nets[0],
            SharingMode::PerAgent => &self.nets[agent],
        }
    }

    /// Named tensors in canonical order. This order defines gradient slots,
    /// optimizer state and the checkpoint layout.
    pub fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (k, net) in self.nets.iter().enumerate() {
            for (name, t) in net.tensors() {
                out.push((format!("net{k}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.nets.iter_mut().flat_map(AgentNet::tensors_mut).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Parameters are stored at single precision so checkpoints are exact.
    pub fn round_to_storage(&mut self) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Register all tensors as differentiable leaves, in canonical order.
    pub fn register(&self, g: &mut Graph) -> Vec<NetVars> {
        self.nets.iter().map(|net| NetVars::register(net, g)).collect()
    }
}

#[derive(Debug, Clone)]
struct MlpVars {
    layers: Vec<(Var, Var)>,
    squash_output: bool,
}

impl MlpVars {
    fn register(mlp: &Mlp, g: &mut Graph) -> Self {
        let layers = mlp
            .layers
            .iter()
            .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
            .collect();
        Self {
            layers,
            squash_output: mlp.squash_output,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let xw = g.matmul(h, w);
            h = g.add_row(xw, b);
            if i + 1 < n || self.squash_output {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// Graph handles for one parameter set.
#[derive(Debug, Clone)]
pub struct NetVars {
    encoder: MlpVars,
    psi: MlpVars,
    phi: MlpVars,
    policy: MlpVars,
    value: MlpVars,
    log_std: Var,
}

impl NetVars {
    fn register(net: &AgentNet, g: &mut Graph) -> Self {
        // registration order must match AgentNet::tensors
        let encoder = MlpVars::register(&net.encoder, g);
        let psi = MlpVars::register(&net.psi, g);
        let phi = MlpVars::register(&net.phi, g);
        let policy = MlpVars::register(&net.policy, g);
        let value = MlpVars::register(&net.value, g);
        let log_std = g.param(net.log_std.clone());
        Self {
            encoder,
            psi,
            phi,
            policy,
            value,
            log_std,
        }
    }
}

/// `e_ij = (p_i - p_j) || (v_i - v_j)`.
pub fn edge_features(p_i: Vec2, v_i: Vec2, p_j: Vec2, v_j: Vec2) -> [f64; EDGE_DIM] {
    let p = p_i - p_j;
    let v = v_i - v_j;
    [p.x, p.y, v.x, v.y]
}

/// What one agent contributes to a batch row.
#[derive(Debug, Clone)]
pub struct AgentInput {
    /// Non-absolute observation entries fed to the encoder.
    pub features: Vec<f64>,
    /// Observed absolute position and velocity, used only for edge features.
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
}

/// A batch of team samples laid out agent-major: row `agent * n_samples + sample`.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_agents: usize,
    pub n_samples: usize,
    pub enc_input: Mat,
    pub edges: Vec<Edge>,
    pub edge_features: Mat,
}

impl GraphBatch {
    pub fn row(&self, agent: usize, sample: usize) -> usize {
        agent * self.n_samples + sample
    }

    pub fn n_rows(&self) -> usize {
        self.n_agents * self.n_samples
    }

    /// `samples[s][i]` is agent `i` in sample `s`; `neighbors[s][i]` lists the
    /// agents whose messages agent `i` receives in that sample.
    pub fn build(
        enc_dim: usize,
        samples: &[Vec<AgentInput>],
        neighbors: &[Vec<Vec<usize>>],
    ) -> Result<Self, ModelError> {
        let m = samples.len();
        let n = samples.first().map_or(0, Vec::len);
        if neighbors.len() != m {
            return Err(ModelError::Dim { what: "neighbor lists", expected: m, got: neighbors.len() });
        }
        let mut enc_input = Array2::zeros((n * m, enc_dim));
        let mut edges = Vec::new();
        let mut feats = Vec::new();
        for (s, (team, nbrs)) in samples.iter().zip(neighbors).enumerate() {
            if team.len() != n {
                return Err(ModelError::Dim { what: "team size", expected: n, got: team.len() });
            }
            if nbrs.len() != n {
                return Err(ModelError::Dim { what: "neighbor lists", expected: n, got: nbrs.len() });
            }
            for (i, a) in team.iter().enumerate() {
                if a.features.len() != enc_dim {
                    return Err(ModelError::Dim { what: "encoder input", expected: enc_dim, got: a.features.len() });
                }
                enc_input
                    .row_mut(i * m + s)
                    .iter_mut()
                    .zip(&a.features)
                    .for_each(|(d, x)| *d = *x);
                for &j in &nbrs[i] {
                    let b = team.get(j).ok_or(ModelError::MissingEdge { agent: i, neighbor: j })?;
                    edges.push(Edge { receiver: i * m + s, sender: j * m + s });
                    feats.extend_from_slice(&edge_features(a.position, a.velocity, b.position, b.velocity));
                }
            }
        }
        let edge_features = Array2::from_shape_vec((edges.len(), EDGE_DIM), feats).unwrap();
        Ok(Self { n_agents: n, n_samples: m, enc_input, edges, edge_features })
    }
}

/// Graph nodes produced by [`forward`], all agent-major with `n_agents * n_samples` rows.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub embedding: Var,
    pub hidden: Var,
    pub mean: Var,
    pub log_std: Var,
    pub value: Var,
}

/// Row ranges owned by each parameter set.
fn groups(params: &ModelParams, batch: &GraphBatch) -> Vec<(usize, usize)> {
    match params.sharing() {
        SharingMode::Shared => vec![(0, batch.n_rows())],
        SharingMode::PerAgent => (0..batch.n_agents)
            .map(|k| (k * batch.n_samples, (k + 1) * batch.n_samples))
            .collect(),
    }
}

/// Encoder, one message-passing round
/// `h_i = psi(z_i) + AGG_{j in N_i} phi(z_j || e_ij)`, and both decoders.
pub fn forward(
    g: &mut Graph,
    params: &ModelParams,
    vars: &[NetVars],
    batch: &GraphBatch,
) -> Result<ForwardVars, ModelError> {
    let shape = &params.shape;
    if batch.enc_input.ncols() != shape.enc_input {
        return Err(ModelError::Dim { what: "encoder input", expected: shape.enc_input, got: batch.enc_input.ncols() });
    }
    if params.sharing() == SharingMode::PerAgent && batch.n_agents != params.nets.len() {
        return Err(ModelError::Dim { what: "agents", expected: params.nets.len(), got: batch.n_agents });
    }
    for e in &batch.edges {
        if e.receiver >= batch.n_rows() || e.sender >= batch.n_rows() {
            return Err(ModelError::MissingEdge { agent: e.receiver, neighbor: e.sender });
        }
    }
    let ranges = groups(params, batch);
    let x = g.constant(batch.enc_input.clone());

    let mut z_parts = Vec::with_capacity(ranges.len());
    for (k, &(r0, r1)) in ranges.iter().enumerate() {
        let xk = if ranges.len() == 1 { x } else { g.slice_rows(x, r0, r1) };
        z_parts.push(vars[k].encoder.forward(g, xk));
    }
    let z_all = if z_parts.len() == 1 { z_parts[0] } else { g.concat_rows(&z_parts) };

    let mut h_parts = Vec::new();
    let mut mean_parts = Vec::new();
    let mut ls_parts = Vec::new();
    let mut value_parts = Vec::new();
    for (k, &(r0, r1)) in ranges.iter().enumerate() {
        let v = &vars[k];
        let rows = r1 - r0;
        let self_term = v.psi.forward(g, z_parts[k]);

        let mine: Vec<usize> = (0..batch.edges.len())
            .filter(|&e| (r0..r1).contains(&batch.edges[e].receiver))
            .collect();
        let h = if mine.is_empty() {
            self_term
        } else {
            let senders: Vec<usize> = mine.iter().map(|&e| batch.edges[e].sender).collect();
            let receivers: Vec<usize> = mine.iter().map(|&e| batch.edges[e].receiver - r0).collect();
            let z_send = g.gather_rows(z_all, &senders);
            let e_feat = g.constant(batch.edge_features.select(Axis(0), &mine));
            let msg_in = g.concat_cols(&[z_send, e_feat]);
            let msg = v.phi.forward(g, msg_in);
            let mut agg = g.scatter_add_rows(msg, &receivers, rows);
            if shape.aggregation == Aggregation::Mean {
                let mut deg = vec![0usize; rows];
                receivers.iter().for_each(|&r| deg[r] += 1);
                let inv: Vec<f64> = deg.iter().map(|&d| if d > 0 { 1.0 / d as f64 } else { 0.0 }).collect();
                agg = g.scale_rows(agg, &inv);
            }
            g.add(self_term, agg)
        };
        h_parts.push(h);
        mean_parts.push(v.policy.forward(g, h));
        value_parts.push(v.value.forward(g, h));
        let ls = g.clamp(v.log_std, LOG_STD_MIN, LOG_STD_MAX);
        ls_parts.push(g.broadcast_rows(ls, rows));
    }
    let cat = |g: &mut Graph, parts: &[Var]| if parts.len() == 1 { parts[0] } else { g.concat_rows(parts) };
    Ok(ForwardVars {
        embedding: z_all,
        hidden: cat(g, &h_parts),
        mean: cat(g, &mean_parts),
        log_std: cat(g, &ls_parts),
        value: cat(g, &value_parts),
    })
}

/// Evaluated policy/value outputs for one batch, indexed `[sample][agent]`.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub dists: Vec<Vec<ActionDistribution>>,
    pub values: Vec<Vec<f64>>,
}

/// Forward pass without keeping the graph around.
pub fn policy_value_forward(params: &ModelParams, batch: &GraphBatch) -> Result<PolicyOutput, ModelError> {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let out = forward(&mut g, params, &vars, batch)?;
    let (mean, ls, value) = (g.value(out.mean), g.value(out.log_std), g.value(out.value));
    let mut dists = Vec::with_capacity(batch.n_samples);
    let mut values = Vec::with_capacity(batch.n_samples);
    for s in 0..batch.n_samples {
        let mut d = Vec::with_capacity(batch.n_agents);
        let mut v = Vec::with_capacity(batch.n_agents);
        for i in 0..batch.n_agents {
            let r = batch.row(i, s);
            d.push(ActionDistribution::new(mean.row(r).to_vec(), ls.row(r).to_vec()));
            v.push(value[[r, 0]]);
        }
        dists.push(d);
        values.push(v);
    }
    Ok(PolicyOutput { dists, values })
}

/// Gradient of a scalar loss built by `loss` with respect to every tensor of
/// `params`, in [`ModelParams::named_tensors`] order.
pub fn loss_gradient<F>(params: &ModelParams, loss: F) -> Result<(f64, ParamGrads), super::autodiff::GradError>
where
    F: FnOnce(&mut Graph, &[NetVars]) -> Var,
{
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let out = loss(&mut g, &vars);
    let grads = g.backward(out)?;
    Ok((g.scalar(out), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(sharing: SharingMode) -> ModelShape {
        ModelShape {
            n_agents: 2,
            enc_input: 3,
            act_dim: 2,
            width: 8,
            encoder_depth: 2,
            aggregation: Aggregation::Sum,
            sharing,
        }
    }

    fn input(f: [f64; 3], p: (f64, f64), v: (f64, f64)) -> AgentInput {
        AgentInput { features: f.to_vec(), position: Vec2::new(p.0, p.1), velocity: Vec2::new(v.0, v.1) }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = orthogonal_matrix(6, 4, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_encoder_gives_zero_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(shape(SharingMode::Shared), &mut rng);
        for l in p.nets[0].encoder.layers.iter_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let z = p.nets[0].encoder.apply(&[0.3, -2.0, 5.0]);
        assert!(z.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut l = Linear::zeros(3, 3);
        for i in 0..3 {
            l.weight[[i, i]] = 1.0;
        }
        let mlp = Mlp { layers: vec![l], squash_output: false };
        assert_eq!(mlp.apply(&[0.25, -1.5, 3.0]), vec![0.25, -1.5, 3.0]);
    }

    #[test]
    fn edge_features_basic() {
        let z = Vec2::zeros();
        assert_eq!(edge_features(Vec2::new(1.0, 0.0), z, z, z), [1.0, 0.0, 0.0, 0.0]);
        let p = Vec2::new(0.3, -0.2);
        let v = Vec2::new(1.0, 2.0);
        assert_eq!(edge_features(p, v, p, v), [0.0; 4]);
    }

    #[test]
    fn missing_neighbor_is_rejected() {
        let team = vec![input([0.0; 3], (0.0, 0.0), (0.0, 0.0)), input([0.0; 3], (1.0, 0.0), (0.0, 0.0))];
        let err = GraphBatch::build(3, &[team], &[vec![vec![5], vec![]]]);
        assert!(matches!(err, Err(ModelError::MissingEdge { agent: 0, neighbor: 5 })));
    }

    #[test]
    fn wrong_encoder_width_is_rejected() {
        let team = vec![AgentInput { features: vec![1.0], position: Vec2::zeros(), velocity: Vec2::zeros() }];
        assert!(matches!(GraphBatch::build(3, &[team], &[vec![vec![]]]), Err(ModelError::Dim { .. })));
    }

    #[test]
    fn zero_decoders_output_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(shape(SharingMode::PerAgent), &mut rng);
        for net in p.nets.iter_mut() {
            for l in net.policy.layers.iter_mut().chain(net.value.layers.iter_mut()) {
                l.weight.fill(0.0);
            }
            let last = net.policy.layers.len() - 1;
            net.policy.layers[last].bias = ndarray::array![[0.5, -0.25]];
            let last = net.value.layers.len() - 1;
            net.value.layers[last].bias = ndarray::array![[1.75]];
            // hidden biases stay zero, so tanh(0) = 0 feeds the output layer
        }
        let team = vec![input([0.1, 0.2, 0.3], (0.0, 0.0), (0.0, 0.0)), input([1.0, 0.0, -1.0], (1.0, 0.0), (0.0, 1.0))];
        let batch = GraphBatch::build(3, &[team], &[vec![vec![1], vec![0]]]).unwrap();
        let out = policy_value_forward(&p, &batch).unwrap();
        for i in 0..2 {
            assert_eq!(out.dists[0][i].mean, vec![0.5, -0.25]);
            assert_eq!(out.values[0][i], 1.75);
        }
    }

    #[test]
    fn per_agent_init_gives_distinct_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(shape(SharingMode::PerAgent), &mut rng);
        assert_eq!(p.nets.len(), 2);
        assert_ne!(p.nets[0], p.nets[1]);
        let s = ModelParams::init(shape(SharingMode::Shared), &mut rng);
        assert_eq!(s.nets.len(), 1);
        assert_eq!(s.net_for(0), s.net_for(1));
    }
}
