//! One-hidden-layer node classifiers: MLP, GCN, GAT, GraphConv.
//!
//! All four update rules run through the same tape so gradients come from one
//! backward pass. Layer math:
//!
//! - MLP:       h = x W + b
//! - GCN:       h = A_norm (x W) + b        (A_norm: self-loops + sqrt-degree)
//! - GAT:       h_i = sum_j alpha_ij (x_j W) + b, alpha = edge softmax of
//!   LeakyReLU(att . [W x_i || W x_j]), self-loops included
//! - GraphConv: h = x W1 + (A x) W2 + b     (raw adjacency, no self-loops)

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::data::NormalizedAdjacency;
use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;
use crate::sparse::SparseAdjacency;
use crate::tape::{Tape, Var};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mlp,
    Gcn,
    Gat,
    GraphConv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Mlp,
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::GraphConv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Gcn => "GCN",
            ModelKind::Gat => "GAT",
            ModelKind::GraphConv => "GraphConv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "graphconv" => Ok(ModelKind::GraphConv),
            other => Err(GraphDrError::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
}

/// Architecture description: exactly one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl ModelSpec {
    /// Default configuration: hidden width 16, dropout 0.1, ReLU for
    /// MLP/GCN/GraphConv and ELU for GAT.
    pub fn new(kind: ModelKind, in_dim: usize, out_dim: usize) -> Self {
        ModelSpec {
            kind,
            in_dim,
            hidden_dim: 16,
            out_dim,
            dropout_rate: 0.1,
            activation: match kind {
                ModelKind::Gat => Activation::Elu,
                _ => Activation::Relu,
            },
        }
    }

    pub fn with_hidden_dim(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }
}

/// Exact trainable-scalar count for a spec.
pub fn count_parameters(spec: &ModelSpec) -> usize {
    let (i, h, o) = (spec.in_dim, spec.hidden_dim, spec.out_dim);
    let linear = i * h + h + h * o + o;
    match spec.kind {
        ModelKind::Mlp | ModelKind::Gcn => linear,
        ModelKind::Gat => linear + 2 * h + 2 * o,
        ModelKind::GraphConv => 2 * (i * h) + h + 2 * (h * o) + o,
    }
}

/// Learnable matrices of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: DenseMatrix,
    /// GraphConv neighbor transform (phi_2).
    pub weight_neigh: Option<DenseMatrix>,
    pub bias: DenseMatrix,
    /// GAT attention vector, shape (2*out, 1).
    pub attention: Option<DenseMatrix>,
}

impl LayerParams {
    fn matrices(&self) -> Vec<&DenseMatrix> {
        let mut v = vec![&self.weight];
        if let Some(wn) = &self.weight_neigh {
            v.push(wn);
        }
        v.push(&self.bias);
        if let Some(att) = &self.attention {
            v.push(att);
        }
        v
    }

    fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = vec![&mut self.weight];
        if let Some(wn) = &mut self.weight_neigh {
            v.push(wn);
        }
        v.push(&mut self.bias);
        if let Some(att) = &mut self.attention {
            v.push(att);
        }
        v
    }
}

/// All learnable matrices of a model: layer order, then per layer
/// weight, [weight_neigh], bias, [attention].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-limit, limit))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl ParamSet {
    /// Glorot-uniform weights and attention vectors, zero biases.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        let dims = [
            (spec.in_dim, spec.hidden_dim),
            (spec.hidden_dim, spec.out_dim),
        ];
        let layers = dims
            .iter()
            .map(|&(fan_in, fan_out)| LayerParams {
                weight: glorot(rng, fan_in, fan_out, fan_in, fan_out),
                weight_neigh: (spec.kind == ModelKind::GraphConv)
                    .then(|| glorot(rng, fan_in, fan_out, fan_in, fan_out)),
                bias: DenseMatrix::zeros(1, fan_out),
                attention: (spec.kind == ModelKind::Gat)
                    .then(|| glorot(rng, 2 * fan_out, 1, 2 * fan_out, 1)),
            })
            .collect();
        ParamSet { layers }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.matrices())
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    pub fn matrices(&self) -> Vec<&DenseMatrix> {
        self.layers.iter().flat_map(|l| l.matrices()).collect()
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.matrices_mut())
            .collect()
    }

    fn matches(&self, spec: &ModelSpec) -> bool {
        if self.layers.len() != 2 {
            return false;
        }
        let dims = [
            (spec.in_dim, spec.hidden_dim),
            (spec.hidden_dim, spec.out_dim),
        ];
        self.layers.iter().zip(dims).all(|(l, (fi, fo))| {
            l.weight.shape() == (fi, fo)
                && l.bias.shape() == (1, fo)
                && l.weight_neigh.is_some() == (spec.kind == ModelKind::GraphConv)
                && l.attention.is_some() == (spec.kind == ModelKind::Gat)
                && l.weight_neigh.as_ref().map_or(true, |w| w.shape() == (fi, fo))
                && l.attention.as_ref().map_or(true, |a| a.shape() == (2 * fo, 1))
        })
    }
}

/// Graph views shared by every forward pass on a dataset.
#[derive(Clone)]
pub struct GraphContext {
    /// Self-loops + symmetric sqrt-degree normalization (GCN).
    pub norm: Arc<SparseAdjacency>,
    /// Raw adjacency, no self-loops, unit weights (GraphConv).
    pub raw: Arc<SparseAdjacency>,
    /// Raw adjacency plus self-loops (GAT attention support).
    pub with_loops: Arc<SparseAdjacency>,
}

impl GraphContext {
    pub fn new(edges: &SparseAdjacency, norm: &NormalizedAdjacency) -> Self {
        GraphContext {
            norm: Arc::new(norm.adj().clone()),
            raw: Arc::new(edges.clone()),
            with_loops: Arc::new(edges.with_self_loops()),
        }
    }
}

/// One recorded forward pass: the tape, the logits node, and the parameter
/// vars in ParamSet order (for gradient lookup).
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    pub param_vars: Vec<Var>,
}

struct LayerVars {
    weight: Var,
    weight_neigh: Option<Var>,
    bias: Var,
    attention: Option<Var>,
}

fn record_layer(tape: &mut Tape, layer: &LayerParams) -> LayerVars {
    LayerVars {
        weight: tape.param(layer.weight.clone()),
        weight_neigh: layer.weight_neigh.as_ref().map(|m| tape.param(m.clone())),
        bias: tape.param(layer.bias.clone()),
        attention: layer.attention.as_ref().map(|m| tape.param(m.clone())),
    }
}

fn layer_forward(
    tape: &mut Tape,
    kind: ModelKind,
    x: Var,
    vars: &LayerVars,
    graph: &GraphContext,
) -> Result<Var> {
    match kind {
        ModelKind::Mlp => {
            let xw = tape.matmul(x, vars.weight)?;
            tape.add_bias(xw, vars.bias)
        }
        ModelKind::Gcn => {
            let xw = tape.matmul(x, vars.weight)?;
            let agg = tape.spmm(graph.norm.clone(), xw)?;
            tape.add_bias(agg, vars.bias)
        }
        ModelKind::Gat => {
            let z = tape.matmul(x, vars.weight)?;
            let att = vars.attention.expect("GAT layer has attention");
            let scores = tape.edge_score(z, att, graph.with_loops.clone())?;
            let scores = tape.leaky_relu(scores, LEAKY_RELU_SLOPE)?;
            let alpha = tape.edge_softmax(scores, graph.with_loops.clone())?;
            let agg = tape.edge_aggregate(alpha, z, graph.with_loops.clone())?;
            tape.add_bias(agg, vars.bias)
        }
        ModelKind::GraphConv => {
            let root = tape.matmul(x, vars.weight)?;
            let wn = vars.weight_neigh.expect("GraphConv layer has phi_2");
            let ax = tape.spmm(graph.raw.clone(), x)?;
            let neigh = tape.matmul(ax, wn)?;
            let sum = tape.add(root, neigh)?;
            tape.add_bias(sum, vars.bias)
        }
    }
}

/// Record the full two-layer forward pass; eval mode (training=false) is
/// deterministic and skips dropout.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamSet,
    features: &DenseMatrix,
    graph: &GraphContext,
    training: bool,
    rng: &mut Rng,
) -> Result<ForwardPass> {
    if !params.matches(spec) {
        return Err(GraphDrError::InvalidArgument {
            context: "forward",
            message: "parameter set does not match spec".into(),
        });
    }
    if features.cols() != spec.in_dim {
        return Err(GraphDrError::ShapeMismatch {
            op: "forward",
            left: format!("{}x{}", features.rows(), features.cols()),
            right: format!("in_dim {}", spec.in_dim),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());

    let l1 = record_layer(&mut tape, &params.layers[0]);
    let l2 = record_layer(&mut tape, &params.layers[1]);

    let h = layer_forward(&mut tape, spec.kind, x, &l1, graph)?;
    let h = match spec.activation {
        Activation::Relu => tape.relu(h)?,
        Activation::Elu => tape.elu(h)?,
    };
    let h = if training && spec.dropout_rate > 0.0 {
        tape.dropout(h, spec.dropout_rate, rng)?
    } else {
        h
    };
    let logits = layer_forward(&mut tape, spec.kind, h, &l2, graph)?;

    let mut param_vars = Vec::new();
    for vars in [&l1, &l2] {
        param_vars.push(vars.weight);
        if let Some(w) = vars.weight_neigh {
            param_vars.push(w);
        }
        param_vars.push(vars.bias);
        if let Some(a) = vars.attention {
            param_vars.push(a);
        }
    }

    Ok(ForwardPass {
        tape,
        logits,
        param_vars,
    })
}

// Standalone layer applications (untracked); forward() is the recorded path.

pub fn mlp_layer(x: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let xw = tape.matmul(xv, wv)?;
    let out = tape.add_bias(xw, bv)?;
    Ok(tape.value(out).clone())
}

pub fn gcn_layer(
    x: &DenseMatrix,
    anorm: &NormalizedAdjacency,
    w: &DenseMatrix,
    b: &DenseMatrix,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let xw = tape.matmul(xv, wv)?;
    let agg = tape.spmm(Arc::new(anorm.adj().clone()), xw)?;
    let out = tape.add_bias(agg, bv)?;
    Ok(tape.value(out).clone())
}

/// GAT attention layer without bias; self-loops are added internally. Returns
/// the aggregated output and the per-edge attention weights in CSR order of
/// the self-loop-augmented adjacency.
pub fn gat_layer(
    x: &DenseMatrix,
    edges: &SparseAdjacency,
    w: &DenseMatrix,
    att: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let with_loops = Arc::new(edges.with_self_loops());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let av = tape.constant(att.clone());
    let z = tape.matmul(xv, wv)?;
    let scores = tape.edge_score(z, av, with_loops.clone())?;
    let scores = tape.leaky_relu(scores, LEAKY_RELU_SLOPE)?;
    let alpha = tape.edge_softmax(scores, with_loops.clone())?;
    let out = tape.edge_aggregate(alpha, z, with_loops)?;
    Ok((tape.value(out).clone(), tape.value(alpha).clone()))
}

pub fn graphconv_layer(
    x: &DenseMatrix,
    edges: &SparseAdjacency,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    b: &DenseMatrix,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w1v = tape.constant(w1.clone());
    let w2v = tape.constant(w2.clone());
    let bv = tape.constant(b.clone());
    let root = tape.matmul(xv, w1v)?;
    let ax = tape.spmm(Arc::new(edges.clone()), xv)?;
    let neigh = tape.matmul(ax, w2v)?;
    let sum = tape.add(root, neigh)?;
    let out = tape.add_bias(sum, bv)?;
    Ok(tape.value(out).clone())
}

// --- checkpoint serialization ------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"GDRCKPT1";

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Mlp => 0,
        ModelKind::Gcn => 1,
        ModelKind::Gat => 2,
        ModelKind::GraphConv => 3,
    }
}

fn kind_from_code(code: u8) -> Result<ModelKind> {
    match code {
        0 => Ok(ModelKind::Mlp),
        1 => Ok(ModelKind::Gcn),
        2 => Ok(ModelKind::Gat),
        3 => Ok(ModelKind::GraphConv),
        other => Err(GraphDrError::Checkpoint(format!("bad model code {other}"))),
    }
}

/// Write a flat binary checkpoint: magic, spec echo, then every parameter
/// matrix as little-endian f64 in ParamSet order.
pub fn save_params(path: &Path, spec: &ModelSpec, params: &ParamSet) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(kind_code(spec.kind));
    buf.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Elu => 1,
    });
    for dim in [spec.in_dim, spec.hidden_dim, spec.out_dim] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    buf.extend_from_slice(&spec.dropout_rate.to_le_bytes());
    for m in params.matrices() {
        for &v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`save_params`].
pub fn load_params(path: &Path) -> Result<(ModelSpec, ParamSet)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8 + 2 + 24 + 8 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(GraphDrError::Checkpoint("bad magic or truncated".into()));
    }
    let kind = kind_from_code(buf[8])?;
    let activation = match buf[9] {
        0 => Activation::Relu,
        1 => Activation::Elu,
        other => return Err(GraphDrError::Checkpoint(format!("bad activation {other}"))),
    };
    let mut off = 10usize;
    let mut dims = [0usize; 3];
    for slot in &mut dims {
        *slot = u64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes")) as usize;
        off += 8;
    }
    let dropout_rate = f64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes"));
    off += 8;

    let spec = ModelSpec {
        kind,
        in_dim: dims[0],
        hidden_dim: dims[1],
        out_dim: dims[2],
        dropout_rate,
        activation,
    };

    let mut rng = Rng::new(0);
    let mut params = ParamSet::init(&spec, &mut rng);
    let expected = params.scalar_count();
    if buf.len() - off != expected * 8 {
        return Err(GraphDrError::Checkpoint(format!(
            "expected {expected} parameters, file holds {}",
            (buf.len() - off) / 8
        )));
    }
    for m in params.matrices_mut() {
        for slot in m.data_mut() {
            *slot = f64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes"));
            off += 8;
        }
    }
    Ok((spec, params))
}
