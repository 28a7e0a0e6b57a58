//! Gated relational GCN.
//!
//! Node features pass through an affine input transform and an activation,
//! then through `L` relational layers. Layer `l` computes for every node
//!
//! ```text
//! u = Σ_r mean_{j ∈ N_r(i)} f_r(x_j) + f_s(x_i)
//! g = σ(W_G [u, x_i] + b_G)
//! x_i' = tanh(u) ⊙ g + x_i ⊙ (1 − g)
//! ```
//!
//! Relations with no neighbours contribute nothing to `u`. The ungated
//! variant replaces the last two lines with `x_i' = φ(u)`. Two softmax heads
//! map final states to liberal and conservative stance distributions.

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::hin::{Hin, RelationKind};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Shape and variant of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_hidden: usize,
    pub layers: usize,
    pub labels: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub gated: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(d_in: usize, d_hidden: usize, layers: usize, labels: usize) -> Self {
        Self {
            d_in,
            d_hidden,
            layers,
            labels,
            activation: Activation::LeakyRelu,
            gated: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_hidden == 0 || self.labels == 0 {
            return Err(Error::Argument(format!(
                "model dimensions must be positive (d_in {}, d_hidden {}, labels {})",
                self.d_in, self.d_hidden, self.labels
            )));
        }
        Ok(())
    }

    /// Names and shapes of every tensor, in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, (usize, usize))> {
        let (i, h, d) = (self.d_in, self.d_hidden, self.labels);
        let mut out = vec![("input.weight".to_string(), (h, i)), ("input.bias".to_string(), (1, h))];
        for l in 0..self.layers {
            for r in RelationKind::ALL {
                out.push((format!("layers.{l}.{}.weight", r.code()), (h, h)));
                out.push((format!("layers.{l}.{}.bias", r.code()), (1, h)));
            }
            out.push((format!("layers.{l}.self.weight"), (h, h)));
            out.push((format!("layers.{l}.self.bias"), (1, h)));
            out.push((format!("layers.{l}.gate.weight"), (h, 2 * h)));
            out.push((format!("layers.{l}.gate.bias"), (1, h)));
        }
        out.push(("head.liberal.weight".to_string(), (d, h)));
        out.push(("head.liberal.bias".to_string(), (1, d)));
        out.push(("head.conservative.weight".to_string(), (d, h)));
        out.push(("head.conservative.bias".to_string(), (1, d)));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// All learnable tensors, stored flat in [`ModelConfig::tensor_shapes`] order.
/// Weights are `out × in`; biases are `1 × out` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

const TENSORS_PER_LAYER: usize = 2 * RelationKind::COUNT + 4;

impl ModelParams {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, tensors) = config
            .tensor_shapes()
            .into_iter()
            .map(|(name, (r, c))| {
                let t = if name.ends_with(".bias") {
                    Array2::zeros((r, c))
                } else {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-bound..=bound))
                };
                (name, t)
            })
            .unzip();
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Array2<f64>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Argument(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.dim() != *shape {
                return Err(Error::Schema(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn named(&self) -> Vec<(String, Array2<f64>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// `Σ w²` over every entry.
    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// Puts every tensor on `tape`.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        ParamVars::from_flat(&self.config, vars).expect("tensor count matches config")
    }

    pub fn save(&self, path: impl AsRef<Path>, echo: serde_json::Value) -> Result<()> {
        let ck = Checkpoint {
            config: echo,
            model: self.config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| (n.clone(), t.iter().copied().collect()))
                .collect(),
        };
        let text = serde_json::to_string(&ck)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, returning the parameters and the stored config echo.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        let mut tensors = Vec::new();
        for (name, (r, c)) in ck.model.tensor_shapes() {
            let flat = ck
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Schema(format!("checkpoint: missing tensor '{name}'")))?;
            if flat.len() != r * c {
                return Err(Error::Schema(format!(
                    "checkpoint: tensor '{name}' has {} values, expected {r}×{c}",
                    flat.len()
                )));
            }
            tensors.push(Array2::from_shape_vec((r, c), flat.clone()).expect("length checked"));
        }
        if ck.tensors.len() != tensors.len() {
            return Err(Error::Schema(format!(
                "checkpoint: {} tensors present, model expects {}",
                ck.tensors.len(),
                tensors.len()
            )));
        }
        Ok((Self::from_tensors(&ck.model, tensors)?, ck.config))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: serde_json::Value,
    model: ModelConfig,
    tensors: BTreeMap<String, Vec<f64>>,
}

/// One relational layer's tensors on a tape.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub relation_weight: [Var; RelationKind::COUNT],
    pub relation_bias: [Var; RelationKind::COUNT],
    pub self_weight: Var,
    pub self_bias: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
}

/// Model tensors on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub config: ModelConfig,
    pub flat: Vec<Var>,
    pub input_weight: Var,
    pub input_bias: Var,
    pub layers: Vec<LayerVars>,
    pub liberal_weight: Var,
    pub liberal_bias: Var,
    pub conservative_weight: Var,
    pub conservative_bias: Var,
}

impl ParamVars {
    pub fn from_flat(config: &ModelConfig, flat: Vec<Var>) -> Result<Self> {
        let expected = 6 + config.layers * TENSORS_PER_LAYER;
        if flat.len() != expected {
            return Err(Error::Argument(format!(
                "expected {expected} parameter handles, got {}",
                flat.len()
            )));
        }
        let layers = (0..config.layers)
            .map(|l| {
                let b = &flat[2 + l * TENSORS_PER_LAYER..2 + (l + 1) * TENSORS_PER_LAYER];
                let k = 2 * RelationKind::COUNT;
                LayerVars {
                    relation_weight: std::array::from_fn(|r| b[2 * r]),
                    relation_bias: std::array::from_fn(|r| b[2 * r + 1]),
                    self_weight: b[k],
                    self_bias: b[k + 1],
                    gate_weight: b[k + 2],
                    gate_bias: b[k + 3],
                }
            })
            .collect();
        let h = 2 + config.layers * TENSORS_PER_LAYER;
        Ok(Self {
            config: config.clone(),
            input_weight: flat[0],
            input_bias: flat[1],
            layers,
            liberal_weight: flat[h],
            liberal_bias: flat[h + 1],
            conservative_weight: flat[h + 2],
            conservative_bias: flat[h + 3],
            flat,
        })
    }
}

/// Mean aggregation for one relation. Only nodes that are somebody's
/// neighbour (`senders`) are transformed; `matrix` maps their messages to
/// every node.
#[derive(Debug, Clone)]
pub struct RelationPropagation {
    pub senders: Rc<Vec<usize>>,
    pub matrix: Rc<SparseRows>,
}

/// Row-normalised per-relation aggregation matrices of a graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    relations: Vec<RelationPropagation>,
    nodes: usize,
}

impl Propagation {
    pub fn new(hin: &Hin) -> Self {
        let n = hin.node_count();
        let relations = RelationKind::ALL
            .iter()
            .map(|&r| {
                let lists: Vec<&[usize]> = (0..n).map(|i| hin.neighbor_indices(i, r)).collect();
                let mut slot = vec![usize::MAX; n];
                let mut senders = Vec::new();
                for j in lists.iter().flat_map(|l| l.iter().copied()) {
                    if slot[j] == usize::MAX {
                        slot[j] = 0;
                        senders.push(j);
                    }
                }
                senders.sort_unstable();
                for (k, &j) in senders.iter().enumerate() {
                    slot[j] = k;
                }
                let rows = lists
                    .iter()
                    .map(|nb| {
                        let w = 1.0 / nb.len() as f64;
                        nb.iter().map(|&j| (slot[j], w)).collect()
                    })
                    .collect();
                RelationPropagation {
                    matrix: Rc::new(SparseRows::new(senders.len(), rows).expect("sender slots are in range")),
                    senders: Rc::new(senders),
                }
            })
            .collect();
        Self { relations, nodes: n }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn relation(&self, r: RelationKind) -> &RelationPropagation {
        &self.relations[r.index()]
    }
}

/// `x⁽⁰⁾ = φ(W_I v + b_I)` on a tape.
pub fn input_transform_tape(tape: &mut Tape, vars: &ParamVars, features: Var) -> Result<Var> {
    let h = tape.linear(features, vars.input_weight, vars.input_bias)?;
    vars.config.activation.apply(tape, h)
}

/// One relational layer on a tape.
pub fn rgcn_layer_tape(
    tape: &mut Tape,
    layer: &LayerVars,
    prop: &Propagation,
    x_prev: Var,
    config: &ModelConfig,
) -> Result<Var> {
    let (rows, _) = tape.shape(x_prev);
    if rows != prop.node_count() {
        return Err(Error::Dimension {
            op: "rgcn_layer",
            left: (prop.node_count(), config.d_hidden),
            right: tape.shape(x_prev),
        });
    }
    let mut u = tape.linear(x_prev, layer.self_weight, layer.self_bias)?;
    for r in RelationKind::ALL {
        let rel = prop.relation(r);
        if rel.senders.is_empty() {
            continue;
        }
        let src = if rel.senders.len() == rows {
            x_prev
        } else {
            tape.gather_rows(x_prev, rel.senders.clone())?
        };
        let msg = tape.linear(src, layer.relation_weight[r.index()], layer.relation_bias[r.index()])?;
        let agg = tape.spmm(rel.matrix.clone(), msg)?;
        u = tape.add(u, agg)?;
    }
    if !config.gated {
        return config.activation.apply(tape, u);
    }
    let joined = tape.concat(u, x_prev)?;
    let gate_logits = tape.linear(joined, layer.gate_weight, layer.gate_bias)?;
    let gate = tape.sigmoid(gate_logits)?;
    let squashed = tape.tanh(u)?;
    let update = tape.hadamard(squashed, gate)?;
    let keep = tape.one_minus(gate)?;
    let carried = tape.hadamard(x_prev, keep)?;
    tape.add(update, carried)
}

/// Full forward pass on a tape; returns the `n × d_hidden` final states.
pub fn forward_tape(tape: &mut Tape, vars: &ParamVars, prop: &Propagation, features: Var) -> Result<Var> {
    let mut x = input_transform_tape(tape, vars, features)?;
    for layer in &vars.layers {
        x = rgcn_layer_tape(tape, layer, prop, x, &vars.config)?;
    }
    Ok(x)
}

/// Stance distributions for every row of `emb`: `(liberal, conservative)`.
pub fn heads_tape(tape: &mut Tape, vars: &ParamVars, emb: Var) -> Result<(Var, Var)> {
    let l = tape.linear(emb, vars.liberal_weight, vars.liberal_bias)?;
    let l = tape.softmax(l)?;
    let c = tape.linear(emb, vars.conservative_weight, vars.conservative_bias)?;
    let c = tape.softmax(c)?;
    Ok((l, c))
}

/// Final node representations, row-aligned with graph indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable(pub Array2<f64>);

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }
}

fn check_features(params: &ModelParams, features: &Array2<f64>) -> Result<()> {
    if features.ncols() != params.config.d_in {
        return Err(Error::Dimension {
            op: "input_transform",
            left: (features.nrows(), params.config.d_in),
            right: features.dim(),
        });
    }
    Ok(())
}

pub fn init_params(d_in: usize, d_hidden: usize, layers: usize, labels: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(&ModelConfig::new(d_in, d_hidden, layers, labels), seed)
}

pub fn input_transform(params: &ModelParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    check_features(params, features)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let f = tape.constant(features.clone());
    let x = input_transform_tape(&mut tape, &vars, f)?;
    Ok(tape.value(x).clone())
}

/// Applies layer `layer` of `params` to `x_prev`, honouring the gated flag.
pub fn rgcn_layer(params: &ModelParams, layer: usize, hin: &Hin, x_prev: &Array2<f64>) -> Result<Array2<f64>> {
    if layer >= params.config.layers {
        return Err(Error::Argument(format!(
            "layer {layer} out of range for a {}-layer model",
            params.config.layers
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let prop = Propagation::new(hin);
    let x = tape.constant(x_prev.clone());
    let y = rgcn_layer_tape(&mut tape, &vars.layers[layer], &prop, x, &params.config)?;
    Ok(tape.value(y).clone())
}

pub fn forward(params: &ModelParams, hin: &Hin) -> Result<EmbeddingTable> {
    check_features(params, hin.features())?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let prop = Propagation::new(hin);
    let f = tape.constant(hin.features().clone());
    let x = forward_tape(&mut tape, &vars, &prop, f)?;
    Ok(EmbeddingTable(tape.value(x).clone()))
}

/// Liberal and conservative distributions (`m × D` each) for `entities`.
pub fn predict_stances(
    params: &ModelParams,
    emb: &EmbeddingTable,
    hin: &Hin,
    entities: &[&str],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows = entities.iter().map(|id| hin.index_of(id)).collect::<Result<Vec<_>>>()?;
    let (l, c) = predict_rows(params, emb, &rows)?;
    Ok((l, c))
}

/// Stance distributions for the given embedding rows.
pub fn predict_rows(params: &ModelParams, emb: &EmbeddingTable, rows: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let e = tape.constant(emb.0.clone());
    let picked = tape.gather_rows(e, Rc::new(rows.to_vec()))?;
    let (l, c) = heads_tape(&mut tape, &vars, picked)?;
    Ok((tape.value(l).clone(), tape.value(c).clone()))
}
