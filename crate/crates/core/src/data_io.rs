//! Dataset files, fallback features, embedding export and the synthetic
//! generator.
//!
//! Dataset JSON:
//!
//! ```json
//! {"nodes": [{"id": "leg:0", "kind": "N2", "name": "..."}],
//!  "edges": [{"src": "leg:0", "dst": "party:0", "rel": "R1"}],
//!  "features": {"dim": 64, "vectors": {"leg:0": [0.1, ...]}},
//!  "labels": [{"id": "leg:0", "source": "liberal", "score": 0.82}]}
//! ```
//!
//! Nodes without a vector get [`default_features`].

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hin::{EdgeRecord, Hin, Node, NodeKind, RelationKind};
use crate::model::EmbeddingTable;
use crate::objectives::{ExpertLabels, StanceSource};

/// Seed for vectors filled in by the loader.
pub const FALLBACK_FEATURE_SEED: u64 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRec {
    id: String,
    kind: String,
    #[serde(default)]
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRec {
    src: String,
    dst: String,
    rel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureBlock {
    dim: usize,
    #[serde(default)]
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRec {
    id: String,
    source: String,
    score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    nodes: Vec<NodeRec>,
    edges: Vec<EdgeRec>,
    features: FeatureBlock,
    #[serde(default)]
    labels: Vec<LabelRec>,
}

/// Counts reported after a successful load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSummary {
    pub nodes: usize,
    pub edges: usize,
    pub edges_per_relation: BTreeMap<String, usize>,
    pub nodes_per_kind: BTreeMap<String, usize>,
    pub labels_per_source: BTreeMap<String, usize>,
}

impl LoadSummary {
    pub fn of(hin: &Hin, labels: &ExpertLabels) -> Self {
        let by_rel = hin.edges_by_relation();
        let mut kinds = BTreeMap::new();
        for n in hin.nodes() {
            *kinds.entry(n.kind.code().to_string()).or_insert(0) += 1;
        }
        LoadSummary {
            nodes: hin.node_count(),
            edges: hin.edge_count(),
            edges_per_relation: RelationKind::ALL
                .iter()
                .map(|r| (r.code().to_string(), by_rel[r.index()]))
                .collect(),
            nodes_per_kind: kinds,
            labels_per_source: StanceSource::ALL
                .iter()
                .map(|s| (s.as_str().to_string(), labels.count(*s)))
                .collect(),
        }
    }
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str) -> Result<(Hin, ExpertLabels)> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.features.dim == 0 {
        return Err(Error::Schema("features.dim must be positive".into()));
    }

    let mut nodes = Vec::with_capacity(file.nodes.len());
    for (i, n) in file.nodes.iter().enumerate() {
        let kind: NodeKind = n
            .kind
            .parse()
            .map_err(|e| Error::Schema(format!("nodes[{i}] ('{}'): {e}", n.id)))?;
        nodes.push(Node {
            id: n.id.clone(),
            kind,
            name: n.name.clone(),
        });
    }
    let mut edges = Vec::with_capacity(file.edges.len());
    for (i, e) in file.edges.iter().enumerate() {
        let rel: RelationKind = e
            .rel
            .parse()
            .map_err(|err| Error::Schema(format!("edges[{i}] ('{}' -> '{}'): {err}", e.src, e.dst)))?;
        edges.push(EdgeRecord {
            src: e.src.clone(),
            dst: e.dst.clone(),
            rel,
        });
    }

    let dim = file.features.dim;
    for (id, v) in &file.features.vectors {
        if v.len() != dim {
            return Err(Error::Schema(format!(
                "features.vectors['{id}']: length {} does not match features.dim {dim}",
                v.len()
            )));
        }
    }
    let mut vectors = file.features.vectors;
    for n in &nodes {
        vectors
            .entry(n.id.clone())
            .or_insert_with(|| default_features(&n.id, dim, FALLBACK_FEATURE_SEED));
    }
    let hin = Hin::new(nodes, &edges, &vectors)?;

    let mut scores = Vec::with_capacity(file.labels.len());
    for (i, l) in file.labels.iter().enumerate() {
        let source: StanceSource = l
            .source
            .parse()
            .map_err(|e| Error::Schema(format!("labels[{i}] ('{}'): {e}", l.id)))?;
        if hin.index_of(&l.id).is_err() {
            return Err(Error::Schema(format!("labels[{i}]: unknown node '{}'", l.id)));
        }
        scores.push((l.id.clone(), source, l.score));
    }
    let labels = ExpertLabels::from_scores(scores)?;
    Ok((hin, labels))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Hin, ExpertLabels)> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_dataset(&text)
}

/// Canonical dataset document: nodes in id order, edges in stored order,
/// every feature vector written out.
pub fn dataset_json(hin: &Hin, labels: &ExpertLabels) -> Result<String> {
    let file = DatasetFile {
        nodes: hin
            .nodes()
            .iter()
            .map(|n| NodeRec {
                id: n.id.clone(),
                kind: n.kind.code().to_string(),
                name: n.name.clone(),
            })
            .collect(),
        edges: hin
            .edge_records()
            .into_iter()
            .map(|e| EdgeRec {
                src: e.src,
                dst: e.dst,
                rel: e.rel.code().to_string(),
            })
            .collect(),
        features: FeatureBlock {
            dim: hin.feature_dim(),
            vectors: hin
                .nodes()
                .iter()
                .zip(hin.features().rows())
                .map(|(n, row)| (n.id.clone(), row.to_vec()))
                .collect(),
        },
        labels: labels
            .entries
            .iter()
            .map(|e| LabelRec {
                id: e.id.clone(),
                source: e.source.as_str().to_string(),
                score: e.score,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn write_dataset(hin: &Hin, labels: &ExpertLabels, path: impl AsRef<Path>) -> Result<()> {
    let text = dataset_json(hin, labels)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
}

/// Unit-norm pseudo-random vector derived from a hash of `(id, seed)`.
pub fn default_features(id: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Writes `id,kind,name,x_0..x_{d-1}`, one row per node.
pub fn export_embeddings(emb: &EmbeddingTable, hin: &Hin, path: impl AsRef<Path>) -> Result<()> {
    if emb.rows() != hin.node_count() {
        return Err(Error::Dimension {
            op: "export_embeddings",
            left: (hin.node_count(), emb.dim()),
            right: (emb.rows(), emb.dim()),
        });
    }
    let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "kind".into(), "name".into()];
    header.extend((0..emb.dim()).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for (node, row) in hin.nodes().iter().zip(emb.values().rows()) {
        let mut rec = vec![node.id.clone(), node.kind.code().to_string(), node.name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a file written by [`export_embeddings`]: `(ids, kinds, matrix)`.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<NodeKind>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let dim = r.headers()?.len().saturating_sub(3);
    let mut ids = Vec::new();
    let mut kinds = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        kinds.push(rec[1].parse()?);
        for k in 0..dim {
            let v: f64 = rec[3 + k]
                .parse()
                .map_err(|_| Error::Schema(format!("row {i}: bad value in column x_{k}")))?;
            values.push(v);
        }
    }
    let m = Array2::from_shape_vec((ids.len(), dim), values).map_err(|e| Error::Schema(e.to_string()))?;
    Ok((ids, kinds, m))
}

/// Parameters of the planted-ideology generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_legislators: usize,
    pub n_states: usize,
    pub n_terms: usize,
    pub n_governors: usize,
    pub n_presidents: usize,
    pub n_justices: usize,
    pub feature_dim: usize,
    /// Strength of the party direction added to actor features.
    pub beta: f64,
    /// Half-width of the uniform noise added to party ideology means.
    pub noise: f64,
    /// Fraction of actors labelled, per source.
    pub label_coverage: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_legislators: 200,
            n_states: 50,
            n_terms: 4,
            n_governors: 50,
            n_presidents: 3,
            n_justices: 9,
            feature_dim: 64,
            beta: 0.5,
            noise: 0.05,
            label_coverage: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_legislators == 0 || self.n_states == 0 || self.n_terms == 0 || self.feature_dim == 0 {
            return Err(Error::Argument(
                "legislator, state, term and feature counts must be positive".into(),
            ));
        }
        if self.n_justices > 0 && self.n_presidents == 0 {
            return Err(Error::Argument(
                "justices need at least one appointing president".into(),
            ));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("noise", self.noise),
            ("label_coverage", self.label_coverage),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// A 20-node graph with every node and relation kind present.
    pub fn tiny(seed: u64) -> Self {
        Self {
            n_legislators: 6,
            n_states: 2,
            n_terms: 2,
            n_governors: 2,
            n_presidents: 1,
            n_justices: 1,
            feature_dim: 8,
            seed,
            ..Self::default()
        }
    }

    /// Node count implied by the configuration (2 parties, 4 institutions).
    pub fn node_count(&self) -> usize {
        self.n_legislators
            + self.n_states
            + self.n_terms
            + 2
            + 4
            + self.n_governors
            + self.n_presidents
            + self.n_justices
    }
}

/// Latent ideology means of the two parties.
pub const PARTY_MEANS: [f64; 2] = [0.15, 0.85];

const INSTITUTIONS: [&str; 4] = ["white_house", "senate", "house", "supreme_court"];

struct Builder {
    nodes: Vec<Node>,
    edges: Vec<EdgeRecord>,
    // party per node id, for actors whose ideology follows a party
    party: BTreeMap<String, usize>,
}

impl Builder {
    fn node(&mut self, id: String, kind: NodeKind, name: String) -> String {
        self.nodes.push(Node {
            id: id.clone(),
            kind,
            name,
        });
        id
    }

    fn edge(&mut self, src: &str, dst: &str, rel: RelationKind) {
        self.edges.push(EdgeRecord {
            src: src.to_string(),
            dst: dst.to_string(),
            rel,
        });
    }
}

fn balanced_parties(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).map(|i| i % 2).collect();
    v.shuffle(rng);
    v
}

fn some_terms(terms: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let picked: Vec<String> = terms.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
    if picked.is_empty() {
        vec![terms[rng.gen_range(0..terms.len())].clone()]
    } else {
        picked
    }
}

/// Builds a political graph with planted two-party ideology.
///
/// Topology and labels come from one random stream and features from
/// hashed per-node vectors, so changing `beta` alters features only.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(Hin, ExpertLabels)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
        party: BTreeMap::new(),
    };

    let parties: Vec<String> = (0..2)
        .map(|p| b.node(format!("party:{p}"), NodeKind::Party, format!("Party {p}")))
        .collect();
    for (p, id) in parties.iter().enumerate() {
        b.party.insert(id.clone(), p);
    }
    let states: Vec<String> = (0..cfg.n_states)
        .map(|s| b.node(format!("state:{s:03}"), NodeKind::State, format!("State {s}")))
        .collect();
    let terms: Vec<String> = (0..cfg.n_terms)
        .map(|t| b.node(format!("term:{t:02}"), NodeKind::OfficeTerm, format!("Term {t}")))
        .collect();
    let inst: Vec<String> = INSTITUTIONS
        .iter()
        .map(|name| b.node(format!("inst:{name}"), NodeKind::Institution, name.replace('_', " ")))
        .collect();

    let mut actors: Vec<String> = Vec::new();

    let leg_party = balanced_parties(cfg.n_legislators, &mut rng);
    let mut legislators = Vec::with_capacity(cfg.n_legislators);
    for (i, &p) in leg_party.iter().enumerate() {
        let id = b.node(format!("leg:{i:04}"), NodeKind::Legislator, format!("Legislator {i}"));
        let state = rng.gen_range(0..cfg.n_states);
        let chamber = if rng.gen_bool(0.2) { &inst[1] } else { &inst[2] };
        b.edge(&id, &parties[p], RelationKind::PartyAffiliation);
        b.edge(&id, &states[state], RelationKind::HomeState);
        b.edge(&id, chamber, RelationKind::HoldOffice);
        for t in some_terms(&terms, &mut rng) {
            b.edge(&id, &t, RelationKind::TimeInOffice);
        }
        b.party.insert(id.clone(), p);
        legislators.push((id.clone(), p, state));
        actors.push(id);
    }

    let gov_party = balanced_parties(cfg.n_governors, &mut rng);
    for (i, &p) in gov_party.iter().enumerate() {
        let id = b.node(format!("gov:{i:03}"), NodeKind::Governor, format!("Governor {i}"));
        let state = i % cfg.n_states;
        b.edge(&id, &parties[p], RelationKind::PartyAffiliation);
        b.edge(&id, &states[state], RelationKind::HomeState);
        for t in some_terms(&terms, &mut rng) {
            b.edge(&id, &t, RelationKind::TimeInOffice);
        }
        let candidates: Vec<&String> = legislators
            .iter()
            .filter(|(_, lp, ls)| *lp == p && *ls == state)
            .map(|(lid, _, _)| lid)
            .collect();
        if !candidates.is_empty() && rng.gen_bool(0.3) {
            let pick = candidates[rng.gen_range(0..candidates.len())].clone();
            b.edge(&id, &pick, RelationKind::Appoint);
        }
        b.party.insert(id.clone(), p);
        actors.push(id);
    }

    let mut presidents = Vec::with_capacity(cfg.n_presidents);
    for i in 0..cfg.n_presidents {
        let p = (i + 1) % 2;
        let id = b.node(format!("pres:{i:02}"), NodeKind::President, format!("President {i}"));
        b.edge(&id, &parties[p], RelationKind::PartyAffiliation);
        b.edge(&id, &states[rng.gen_range(0..cfg.n_states)], RelationKind::HomeState);
        b.edge(&id, &inst[0], RelationKind::HoldOffice);
        for t in some_terms(&terms, &mut rng) {
            b.edge(&id, &t, RelationKind::TimeInOffice);
        }
        b.party.insert(id.clone(), p);
        presidents.push((id.clone(), p));
        actors.push(id);
    }

    for i in 0..cfg.n_justices {
        let (pres, p) = presidents[i % presidents.len()].clone();
        let id = b.node(format!("just:{i:02}"), NodeKind::Justice, format!("Justice {i}"));
        b.edge(&pres, &id, RelationKind::Appoint);
        b.edge(&id, &states[rng.gen_range(0..cfg.n_states)], RelationKind::HomeState);
        b.edge(&id, &inst[3], RelationKind::HoldOffice);
        for t in some_terms(&terms, &mut rng) {
            b.edge(&id, &t, RelationKind::TimeInOffice);
        }
        b.party.insert(id.clone(), p);
        actors.push(id);
    }

    let ideology: Vec<f64> = actors
        .iter()
        .map(|id| {
            let mean = PARTY_MEANS[b.party[id]];
            let jitter = if cfg.noise > 0.0 {
                rng.gen_range(-cfg.noise..=cfg.noise)
            } else {
                0.0
            };
            (mean + jitter).clamp(0.0, 1.0)
        })
        .collect();

    let take = (cfg.label_coverage * actors.len() as f64).round() as usize;
    let mut scores = Vec::new();
    for source in StanceSource::ALL {
        let mut picked = index::sample(&mut rng, actors.len(), take).into_vec();
        picked.sort_unstable();
        for a in picked {
            let s = match source {
                StanceSource::Liberal => ideology[a],
                StanceSource::Conservative => 1.0 - ideology[a],
            };
            scores.push((actors[a].clone(), source, s));
        }
    }
    let labels = ExpertLabels::from_scores(scores)?;

    let direction = default_features("party-direction", cfg.feature_dim, cfg.seed);
    let vectors: BTreeMap<String, Vec<f64>> = b
        .nodes
        .iter()
        .map(|n| {
            let mut v = default_features(&n.id, cfg.feature_dim, cfg.seed);
            if let Some(&p) = b.party.get(&n.id) {
                let sign = if p == 0 { -1.0 } else { 1.0 };
                for (x, d) in v.iter_mut().zip(&direction) {
                    *x += sign * cfg.beta * d;
                }
            }
            (n.id.clone(), v)
        })
        .collect();

    let hin = Hin::new(b.nodes, &b.edges, &vectors)?;
    Ok((hin, labels))
}

/// Party index of each actor node (via its R1 edge), keyed by node row.
pub fn party_membership(hin: &Hin) -> BTreeMap<usize, usize> {
    let parties: Vec<usize> = (0..hin.node_count())
        .filter(|&i| hin.node(i).kind == NodeKind::Party)
        .collect();
    let mut out = BTreeMap::new();
    for e in hin.edges() {
        if e.rel == RelationKind::PartyAffiliation {
            if let Some(p) = parties.iter().position(|&q| q == e.dst) {
                out.insert(e.src, p);
            }
        }
    }
    out
}
