//! Straight-line recomputation of the relational layer, independent of the
//! tape: explicit loops over nodes, neighbours and matrix entries.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use polhin::hin::{validate_edge, EdgeRecord, Hin, Node, NodeKind, RelationKind};
use polhin::model::{Activation, ModelParams, LEAKY_SLOPE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random valid graph on `n` nodes, every kind present, plus its edge list
/// as index triples (src, dst, relation).
pub fn random_graph(seed: u64, n: usize, d_in: usize, p_edge: f64) -> (Hin, Vec<(usize, usize, RelationKind)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<NodeKind> = (0..n)
        .map(|i| {
            if i < 8 {
                NodeKind::ALL[i]
            } else {
                NodeKind::ALL[rng.gen_range(0..8)]
            }
        })
        .collect();
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("n{i:03}"),
            kind: kinds[i],
            name: format!("node {i}"),
        })
        .collect();
    let mut triples = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            for r in RelationKind::ALL {
                if i != j && validate_edge(kinds[i], kinds[j], r) && rng.gen_bool(p_edge) {
                    triples.insert((i, j, r));
                }
            }
        }
    }
    let edges: Vec<EdgeRecord> = triples
        .iter()
        .map(|&(s, d, r)| EdgeRecord {
            src: nodes[s].id.clone(),
            dst: nodes[d].id.clone(),
            rel: r,
        })
        .collect();
    let features: BTreeMap<String, Vec<f64>> = nodes
        .iter()
        .map(|nd| (nd.id.clone(), (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let hin = Hin::new(nodes, &edges, &features).expect("generated graph is valid");
    (hin, triples.into_iter().collect())
}

/// Overwrites every tensor (biases included) with uniform values in [-s, s].
pub fn randomize(params: &mut ModelParams, seed: u64, s: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.mapv_inplace(|_| rng.gen_range(-s..s));
    }
}

fn matvec_row(w: &Array2<f64>, b: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|o| {
            let mut acc = b[[0, o]];
            for k in 0..w.ncols() {
                acc += w[[o, k]] * x[k];
            }
            acc
        })
        .collect()
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu => {
            if v > 0.0 {
                v
            } else {
                LEAKY_SLOPE * v
            }
        }
    }
}

/// Layer `layer` applied to `x` (`n × d`), with neighbourhoods taken from
/// the undirected triples.
pub fn layer(
    params: &ModelParams,
    layer: usize,
    triples: &[(usize, usize, RelationKind)],
    x: &Array2<f64>,
) -> Array2<f64> {
    let cfg = params.config();
    let n = x.nrows();
    let d = x.ncols();
    let t = |name: String| params.get(&name).unwrap_or_else(|| panic!("missing {name}")).clone();
    let row = |i: usize| x.row(i).to_vec();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mut u = matvec_row(
            &t(format!("layers.{layer}.self.weight")),
            &t(format!("layers.{layer}.self.bias")),
            &row(i),
        );
        for r in RelationKind::ALL {
            let mut nbrs: Vec<usize> = triples
                .iter()
                .filter(|e| e.2 == r)
                .filter_map(|&(s, dd, _)| {
                    if s == i {
                        Some(dd)
                    } else if dd == i {
                        Some(s)
                    } else {
                        None
                    }
                })
                .collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            if nbrs.is_empty() {
                continue;
            }
            let w = t(format!("layers.{layer}.{}.weight", r.code()));
            let b = t(format!("layers.{layer}.{}.bias", r.code()));
            for &j in &nbrs {
                let m = matvec_row(&w, &b, &row(j));
                for k in 0..d {
                    u[k] += m[k] / nbrs.len() as f64;
                }
            }
        }
        if cfg.gated {
            let mut joined = u.clone();
            joined.extend(row(i));
            let g = matvec_row(
                &t(format!("layers.{layer}.gate.weight")),
                &t(format!("layers.{layer}.gate.bias")),
                &joined,
            );
            for k in 0..d {
                let gate = 1.0 / (1.0 + (-g[k]).exp());
                out[[i, k]] = u[k].tanh() * gate + x[[i, k]] * (1.0 - gate);
            }
        } else {
            for k in 0..d {
                out[[i, k]] = act(cfg.activation, u[k]);
            }
        }
    }
    out
}

/// Input transform followed by every layer.
pub fn forward(params: &ModelParams, triples: &[(usize, usize, RelationKind)], features: &Array2<f64>) -> Array2<f64> {
    let cfg = params.config();
    let w = params.get("input.weight").unwrap();
    let b = params.get("input.bias").unwrap();
    let n = features.nrows();
    let mut x = Array2::zeros((n, cfg.d_hidden));
    for i in 0..n {
        let h = matvec_row(w, b, &features.row(i).to_vec());
        for k in 0..cfg.d_hidden {
            x[[i, k]] = act(cfg.activation, h[k]);
        }
    }
    for l in 0..cfg.layers {
        x = layer(params, l, triples, &x);
    }
    x
}
