//! Training objectives.
//!
//! * expert alignment: cross-entropy of both stance heads against binned
//!   think-tank scores;
//! * stance consistency: cross-entropy against labels obtained by reversing
//!   the other head's predicted class;
//! * echo chamber: skip-gram style loss pulling graph neighbours together and
//!   pushing sampled non-neighbours apart.
//!
//! The total is `λ1·L1 + λ2·L2 + λ3·L3 + λ4·Σw²`.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::model::EmbeddingTable;

/// Number of stance classes produced by [`bin_score`].
pub const STANCE_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceSource {
    Liberal,
    Conservative,
}

impl StanceSource {
    pub const ALL: [StanceSource; 2] = [StanceSource::Liberal, StanceSource::Conservative];

    pub fn as_str(self) -> &'static str {
        match self {
            StanceSource::Liberal => "liberal",
            StanceSource::Conservative => "conservative",
        }
    }
}

impl fmt::Display for StanceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "liberal" => Ok(StanceSource::Liberal),
            "conservative" => Ok(StanceSource::Conservative),
            _ => Err(Error::Enumeration {
                kind: "label source",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Enumeration {
                kind: "split",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: String,
    pub source: StanceSource,
    pub score: f64,
    pub label: usize,
    pub split: Option<Split>,
}

/// Expert scores with their binned class and split assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpertLabels {
    pub entries: Vec<LabelEntry>,
}

impl ExpertLabels {
    /// Builds entries from raw scores, binning each one. Fails on a score
    /// outside `[0, 1]` or a repeated `(id, source)` pair.
    pub fn from_scores<I>(scores: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, StanceSource, f64)>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::new();
        for (i, (id, source, score)) in scores.into_iter().enumerate() {
            let label = bin_score(score).map_err(|e| Error::Schema(format!("labels[{i}] ('{id}'): {e}")))?;
            if !seen.insert((id.clone(), source)) {
                return Err(Error::Schema(format!(
                    "labels[{i}]: duplicate {source} label for '{id}'"
                )));
            }
            entries.push(LabelEntry {
                id,
                source,
                score,
                label,
                split: None,
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, source: StanceSource) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    pub fn select(&self, source: StanceSource, split: Option<Split>) -> impl Iterator<Item = &LabelEntry> {
        self.entries
            .iter()
            .filter(move |e| e.source == source && (split.is_none() || e.split == split))
    }

    /// `(node row, class)` pairs of one source and split.
    pub fn rows(&self, hin: &Hin, source: StanceSource, split: Option<Split>) -> Result<Vec<(usize, usize)>> {
        self.select(source, split)
            .map(|e| {
                hin.index_of(&e.id)
                    .map(|r| (r, e.label))
                    .map_err(|_| Error::Coverage(format!("labelled entity '{}' has no prediction", e.id)))
            })
            .collect()
    }
}

/// Discretises a score in `[0, 1]` into five stance classes:
/// `[0, .1)`, `[.1, .25)`, `[.25, .75)`, `[.75, .9)`, `[.9, 1]`.
pub fn bin_score(s: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Argument(format!("score {s} outside [0, 1]")));
    }
    Ok(match s {
        s if s < 0.1 => 0,
        s if s < 0.25 => 1,
        s if s < 0.75 => 2,
        s if s < 0.9 => 3,
        _ => 4,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn one_hot(classes: &[usize], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((classes.len(), width));
    for (i, &c) in classes.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

/// Per-row `−Σ_d target ⊙ log(pred[rows])` with a constant one-hot target.
fn cross_entropy_rows(tape: &mut Tape, pred: Var, rows: &[usize], classes: &[usize]) -> Result<Var> {
    let width = tape.shape(pred).1;
    if let Some(&c) = classes.iter().find(|&&c| c >= width) {
        return Err(Error::Argument(format!("class {c} out of range for {width} outputs")));
    }
    let picked = tape.gather_rows(pred, Rc::new(rows.to_vec()))?;
    let logp = tape.log(picked)?;
    let target = tape.constant(one_hot(classes, width));
    let ll = tape.hadamard(logp, target)?;
    let ll = tape.row_sum(ll)?;
    tape.scalar_mul(ll, -1.0)
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Array2::zeros((1, 1)))
}

/// Summed cross-entropy of both heads over the labelled entries of `split`.
/// `pred_l`/`pred_c` are `n × D` with rows aligned to graph indices.
pub fn expert_loss(
    tape: &mut Tape,
    pred_l: Var,
    pred_c: Var,
    hin: &Hin,
    labels: &ExpertLabels,
    split: Option<Split>,
) -> Result<Var> {
    let terms = expert_loss_terms(tape, pred_l, pred_c, hin, labels, split)?;
    sum_terms(tape, &terms)
}

/// [`expert_loss`] before summation: one column per source with a non-empty
/// selection, one row per labelled entity.
pub fn expert_loss_terms(
    tape: &mut Tape,
    pred_l: Var,
    pred_c: Var,
    hin: &Hin,
    labels: &ExpertLabels,
    split: Option<Split>,
) -> Result<Vec<Var>> {
    let mut terms = Vec::new();
    for (source, pred) in [(StanceSource::Liberal, pred_l), (StanceSource::Conservative, pred_c)] {
        let pairs = labels.rows(hin, source, split)?;
        if pairs.is_empty() {
            continue;
        }
        let n = tape.shape(pred).0;
        if let Some(&(r, _)) = pairs.iter().find(|(r, _)| *r >= n) {
            return Err(Error::Coverage(format!("row {r} beyond {n} predictions")));
        }
        let (rows, classes): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        terms.push(cross_entropy_rows(tape, pred, &rows, &classes)?);
    }
    Ok(terms)
}

/// Labels implied by the opposite head: the liberal target of a row is the
/// reversal `(D − 1) − argmax(c)` of its conservative prediction and vice
/// versa. Returned as one-hot matrices.
pub fn consistency_labels(pred_l: &Array2<f64>, pred_c: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = pred_l.ncols();
    let lt: Vec<usize> = pred_c.rows().into_iter().map(|r| d - 1 - argmax(r)).collect();
    let ct: Vec<usize> = pred_l.rows().into_iter().map(|r| d - 1 - argmax(r)).collect();
    (one_hot(&lt, d), one_hot(&ct, d))
}

/// `−Σ_rows Σ_d (l̃ log l + c̃ log c)` over `rows`, with derived labels held
/// constant.
pub fn consistency_loss(tape: &mut Tape, pred_l: Var, pred_c: Var, rows: &[usize]) -> Result<Var> {
    let terms = consistency_loss_terms(tape, pred_l, pred_c, rows)?;
    sum_terms(tape, &terms)
}

/// [`consistency_loss`] before summation: a column with one row per entry
/// of `rows`, or nothing when `rows` is empty.
pub fn consistency_loss_terms(tape: &mut Tape, pred_l: Var, pred_c: Var, rows: &[usize]) -> Result<Vec<Var>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let idx = Rc::new(rows.to_vec());
    let l = tape.gather_rows(pred_l, idx.clone())?;
    let c = tape.gather_rows(pred_c, idx)?;
    let (lt, ct) = consistency_labels(tape.value(l), tape.value(c));
    let lt = tape.constant(lt);
    let ct = tape.constant(ct);
    let logl = tape.log(l)?;
    let logc = tape.log(c)?;
    let a = tape.hadamard(logl, lt)?;
    let b = tape.hadamard(logc, ct)?;
    let s = tape.add(a, b)?;
    let s = tape.row_sum(s)?;
    Ok(vec![tape.scalar_mul(s, -1.0)?])
}

/// Ordered node pairs feeding the echo-chamber loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EchoSamples {
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

/// Every `(i, j)` with `j` a neighbour of `i`, plus `k_neg` sampled
/// non-neighbours per `i`, for each `i` in `anchors`.
pub fn echo_samples<R: Rng + ?Sized>(hin: &Hin, anchors: &[usize], k_neg: usize, rng: &mut R) -> EchoSamples {
    let mut out = EchoSamples::default();
    for &i in anchors {
        out.positive.extend(hin.positive_indices(i).into_iter().map(|j| (i, j)));
        out.negative
            .extend(hin.sample_negative_indices(i, k_neg, rng).into_iter().map(|j| (i, j)));
    }
    out
}

fn pair_logits(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    tape.pair_dots(emb, Rc::new(pairs.to_vec()))
}

/// `−Σ_pos log σ(xᵢ·xⱼ) − q·Σ_neg log σ(−xᵢ·xⱼ)`.
pub fn echo_chamber_loss_tape(tape: &mut Tape, emb: Var, samples: &EchoSamples, q: f64) -> Result<Var> {
    let terms = echo_chamber_terms(tape, emb, samples, q)?;
    sum_terms(tape, &terms)
}

/// [`echo_chamber_loss_tape`] before summation: a column of positive-pair
/// terms and a column of weighted negative-pair terms, each present when
/// non-empty.
pub fn echo_chamber_terms(tape: &mut Tape, emb: Var, samples: &EchoSamples, q: f64) -> Result<Vec<Var>> {
    if q < 0.0 {
        return Err(Error::Argument(format!("negative-sample weight q = {q} is negative")));
    }
    let mut terms = Vec::new();
    if !samples.positive.is_empty() {
        let z = pair_logits(tape, emb, &samples.positive)?;
        let s = tape.sigmoid(z)?;
        let l = tape.log(s)?;
        terms.push(tape.scalar_mul(l, -1.0)?);
    }
    if !samples.negative.is_empty() && q > 0.0 {
        let z = pair_logits(tape, emb, &samples.negative)?;
        let flipped = tape.scalar_mul(z, -1.0)?;
        let s = tape.sigmoid(flipped)?;
        let l = tape.log(s)?;
        terms.push(tape.scalar_mul(l, -q)?);
    }
    Ok(terms)
}

/// Echo-chamber loss on fixed embeddings, every node an anchor.
pub fn echo_chamber_loss<R: Rng + ?Sized>(
    emb: &EmbeddingTable,
    hin: &Hin,
    k_neg: usize,
    q: f64,
    rng: &mut R,
) -> Result<f64> {
    let anchors: Vec<usize> = (0..hin.node_count()).collect();
    let samples = echo_samples(hin, &anchors, k_neg, rng);
    let mut tape = Tape::new();
    let e = tape.constant(emb.values().clone());
    let l = echo_chamber_loss_tape(&mut tape, e, &samples, q)?;
    Ok(tape.scalar(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub q: f64,
    pub k_neg: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 0.1,
            lambda4: 1e-5,
            q: 0.1,
            k_neg: 2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("q", self.q),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Argument(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }
}

/// Unweighted components and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l2reg: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub q: f64,
    pub k_neg: usize,
}

/// Combines components as `λ1·l1 + λ2·l2 + λ3·l3 + λ4·l2reg`.
pub fn total_loss(l1: f64, l2: f64, l3: f64, l2reg: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let total = weights.lambda1 * l1 + weights.lambda2 * l2 + weights.lambda3 * l3 + weights.lambda4 * l2reg;
    Ok(LossBreakdown {
        l1,
        l2,
        l3,
        l2reg,
        total,
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
        lambda3: weights.lambda3,
        lambda4: weights.lambda4,
        q: weights.q,
        k_neg: weights.k_neg,
    })
}

/// `Σ w²` over the given tensors, on a tape.
pub fn l2_penalty(tape: &mut Tape, params: &[Var]) -> Result<Var> {
    let terms = l2_penalty_terms(tape, params)?;
    sum_terms(tape, &terms)
}

/// Squared Frobenius norm of each tensor, `1 × 1` each.
pub fn l2_penalty_terms(tape: &mut Tape, params: &[Var]) -> Result<Vec<Var>> {
    params.iter().map(|&p| tape.dot(p, p)).collect()
}

/// Sum of all entries of all `terms`, as a `1 × 1` node.
pub fn sum_terms(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut total = zero(tape);
    for &t in terms {
        let s = tape.sum(t)?;
        total = tape.add(total, s)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{EdgeRecord, Node, NodeKind, RelationKind};
    use ndarray::array;
    use std::collections::BTreeMap;

    #[test]
    fn bins() {
        assert_eq!(bin_score(0.95).unwrap(), 4);
        assert_eq!(bin_score(0.5).unwrap(), 2);
        assert_eq!(bin_score(0.1).unwrap(), 1);
        assert_eq!(bin_score(0.0).unwrap(), 0);
        assert_eq!(bin_score(0.25).unwrap(), 2);
        assert_eq!(bin_score(0.75).unwrap(), 3);
        assert_eq!(bin_score(0.9).unwrap(), 4);
        assert_eq!(bin_score(1.0).unwrap(), 4);
        assert!(bin_score(1.01).is_err());
        assert!(bin_score(-0.2).is_err());
        assert!(bin_score(f64::NAN).is_err());
    }

    fn actors(n: usize) -> Hin {
        let nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                id: format!("a{i}"),
                kind: NodeKind::Legislator,
                name: String::new(),
            })
            .collect();
        let feats: BTreeMap<String, Vec<f64>> = nodes.iter().map(|n| (n.id.clone(), vec![0.0])).collect();
        Hin::new(nodes, &[], &feats).unwrap()
    }

    #[test]
    fn uniform_predictions_cost_ln_d_per_label() {
        let hin = actors(3);
        let labels = ExpertLabels::from_scores(vec![
            ("a0".into(), StanceSource::Liberal, 0.05),
            ("a1".into(), StanceSource::Liberal, 0.95),
            ("a2".into(), StanceSource::Conservative, 0.5),
        ])
        .unwrap();
        let mut t = Tape::new();
        let u = t.constant(Array2::from_elem((3, 5), 0.2));
        let l = expert_loss(&mut t, u, u, &hin, &labels, None).unwrap();
        assert!((t.scalar(l) - 3.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let hin = actors(2);
        let labels = ExpertLabels::from_scores(vec![
            ("a0".into(), StanceSource::Liberal, 0.05),
            ("a1".into(), StanceSource::Conservative, 0.95),
        ])
        .unwrap();
        let mut t = Tape::new();
        let l = t.constant(array![[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0]]);
        let c = t.constant(array![[0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0, 1.0]]);
        let e = expert_loss(&mut t, l, c, &hin, &labels, None).unwrap();
        assert_eq!(t.scalar(e), 0.0);
        let s = consistency_loss(&mut t, l, c, &[0]).unwrap();
        assert_eq!(t.scalar(s), 0.0);
    }

    #[test]
    fn missing_prediction_is_a_coverage_error() {
        let hin = actors(1);
        let labels = ExpertLabels::from_scores(vec![("zz".into(), StanceSource::Liberal, 0.5)]).unwrap();
        let mut t = Tape::new();
        let u = t.constant(Array2::from_elem((1, 5), 0.2));
        assert!(matches!(
            expert_loss(&mut t, u, u, &hin, &labels, None),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn reversal_labels() {
        let c = array![
            [0.0, 0.0, 0.0, 0.1, 0.9],
            [0.1, 0.1, 0.6, 0.1, 0.1],
            [0.2, 0.2, 0.2, 0.2, 0.2]
        ];
        let l = c.clone();
        let (lt, ct) = consistency_labels(&l, &c);
        assert_eq!(argmax(lt.row(0)), 0);
        assert_eq!(argmax(lt.row(1)), 2);
        assert_eq!(argmax(lt.row(2)), 4);
        assert_eq!(lt, ct);
    }

    #[test]
    fn uniform_heads_consistency_cost() {
        let mut t = Tape::new();
        let u = t.constant(Array2::from_elem((10, 5), 0.2));
        let rows: Vec<usize> = (0..10).collect();
        let s = consistency_loss(&mut t, u, u, &rows).unwrap();
        assert!((t.scalar(s) - 10.0 * 2.0 * 5f64.ln()).abs() < 1e-9);
    }

    fn two_nodes() -> Hin {
        let nodes = vec![
            Node {
                id: "a".into(),
                kind: NodeKind::Legislator,
                name: String::new(),
            },
            Node {
                id: "p".into(),
                kind: NodeKind::Party,
                name: String::new(),
            },
        ];
        let edges = [EdgeRecord {
            src: "a".into(),
            dst: "p".into(),
            rel: RelationKind::PartyAffiliation,
        }];
        let feats = nodes.iter().map(|n| (n.id.clone(), vec![0.0])).collect();
        Hin::new(nodes, &edges, &feats).unwrap()
    }

    #[test]
    fn echo_orthogonal_pair() {
        let hin = two_nodes();
        let emb = EmbeddingTable(array![[1.0, 0.0], [0.0, 1.0]]);
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let l = echo_chamber_loss(&emb, &hin, 0, 0.1, &mut rng).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn echo_rejects_negative_q() {
        let mut t = Tape::new();
        let e = t.constant(Array2::zeros((2, 2)));
        assert!(echo_chamber_loss_tape(&mut t, e, &EchoSamples::default(), -0.1).is_err());
    }

    #[test]
    fn breakdown() {
        let w = LossWeights::default();
        let b = total_loss(2.0, 3.0, 4.0, 100.0, &w).unwrap();
        assert_eq!(b.total, 2.0 + 0.2 * 3.0 + 0.1 * 4.0 + 1e-5 * 100.0);
        let only = LossWeights {
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..w
        };
        assert_eq!(total_loss(2.0, 3.0, 4.0, 100.0, &only).unwrap().total, 2.0);
        let none = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..w
        };
        assert_eq!(total_loss(2.0, 3.0, 4.0, 100.0, &none).unwrap().total, 0.0);
        let bad = LossWeights { lambda2: -1.0, ..w };
        assert!(matches!(total_loss(1.0, 1.0, 1.0, 1.0, &bad), Err(Error::Argument(_))));
    }
}
