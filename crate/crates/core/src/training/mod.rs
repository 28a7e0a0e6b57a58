//! Optimisation loop, splits, evaluation.

mod adam;
mod metrics;

pub use adam::Adam;
pub use metrics::{classification_metrics, dbi, harmonic_mean, ClassificationMetrics};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::hin::Hin;
use crate::model::{forward_tape, heads_tape, Activation, ModelConfig, ModelParams, ParamVars, Propagation};
use crate::objectives::{
    argmax, consistency_loss_terms, echo_chamber_terms, echo_samples, expert_loss_terms, l2_penalty_terms, sum_terms,
    total_loss, EchoSamples, ExpertLabels, LabelEntry, LossBreakdown, LossWeights, Split, StanceSource, STANCE_CLASSES,
};

/// Which nodes a structural or stance term ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Actors,
    All,
}

/// Every knob of a training run. Serialised flat; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_hidden: usize,
    pub layers: usize,
    pub labels: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub q: f64,
    pub k_neg: usize,
    pub activation: Activation,
    pub gated: bool,
    pub split_ratio: [f64; 3],
    pub seed: u64,
    /// Labelled-entity minibatch size for the expert term; `None` is full batch.
    pub batch_size: Option<usize>,
    pub consistency_scope: Scope,
    pub echo_scope: Scope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_hidden: 512,
            layers: 2,
            labels: STANCE_CLASSES,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 0.1,
            lambda4: 1e-5,
            q: 0.1,
            k_neg: 2,
            activation: Activation::LeakyRelu,
            gated: true,
            split_ratio: [0.7, 0.2, 0.1],
            seed: 0,
            batch_size: None,
            consistency_scope: Scope::Actors,
            echo_scope: Scope::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_hidden == 0 {
            return bad("d_hidden must be positive".into());
        }
        if self.labels != STANCE_CLASSES {
            return bad(format!("labels must be {STANCE_CLASSES} (five score bins)"));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        self.weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        validate_ratio(&self.split_ratio)?;
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            q: self.q,
            k_neg: self.k_neg,
        }
    }

    pub fn model_config(&self, d_in: usize) -> ModelConfig {
        ModelConfig {
            d_in,
            d_hidden: self.d_hidden,
            layers: self.layers,
            labels: self.labels,
            activation: self.activation,
            gated: self.gated,
        }
    }

    /// Settings that differ from the published hyperparameter table, one
    /// line each.
    pub fn divergences(&self) -> Vec<String> {
        let mut out = Vec::new();
        let table: [(&str, String, String); 7] = [
            ("lambda1", self.lambda1.to_string(), "0.01".into()),
            ("lambda2", self.lambda2.to_string(), "0.2".into()),
            ("lambda3", self.lambda3.to_string(), "1".into()),
            ("lambda4", self.lambda4.to_string(), "0.00001".into()),
            ("q", format!("{} (subtracted)", self.q), "-0.1 (added)".into()),
            ("activation", format!("{:?}", self.activation), "Relu".into()),
            (
                "batch_size",
                self.batch_size.map_or("full graph".into(), |b| b.to_string()),
                "64".into(),
            ),
        ];
        for (k, ours, theirs) in table {
            let same = match k {
                "lambda1" => self.lambda1 == 0.01,
                "lambda2" => self.lambda2 == 0.2,
                "lambda3" => self.lambda3 == 1.0,
                "lambda4" => self.lambda4 == 1e-5,
                "q" => false,
                "activation" => self.activation == Activation::Relu,
                _ => self.batch_size == Some(64),
            };
            if !same {
                out.push(format!("{k} = {ours} (table value {theirs})"));
            }
        }
        if self.d_hidden != 512 {
            out.push(format!("d_hidden = {} (table value 512)", self.d_hidden));
        }
        if self.layers != 2 {
            out.push(format!("layers = {} (table value 2)", self.layers));
        }
        if self.max_epochs != 100 {
            out.push(format!("max_epochs = {} (table value 100)", self.max_epochs));
        }
        if self.k_neg != 2 {
            out.push(format!("k_neg = {} (table value 2)", self.k_neg));
        }
        out
    }
}

fn validate_ratio(ratio: &[f64; 3]) -> Result<()> {
    if ratio.iter().any(|&r| r.is_nan() || r <= 0.0) || (ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratio {ratio:?} must be positive and sum to 1"
        )));
    }
    Ok(())
}

fn source_salt(source: StanceSource) -> u64 {
    match source {
        StanceSource::Liberal => 0x11b,
        StanceSource::Conservative => 0xc05,
    }
}

/// Assigns train/val/test per source by shuffling at the given ratio.
/// Validation and test sizes are rounded to the nearest integer and the
/// remainder goes to training.
pub fn make_splits(labels: &ExpertLabels, ratio: [f64; 3], seed: u64) -> Result<ExpertLabels> {
    validate_ratio(&ratio)?;
    let mut out = labels.clone();
    for source in StanceSource::ALL {
        let mut idx: Vec<usize> = (0..out.entries.len())
            .filter(|&i| out.entries[i].source == source)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Split(format!(
                "{source} has {} labelled entries; at least 3 are needed",
                idx.len()
            )));
        }
        idx.sort_by(|&a, &b| out.entries[a].id.cmp(&out.entries[b].id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ source_salt(source));
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_val = (n * ratio[1]).round() as usize;
        let n_test = (n * ratio[2]).round() as usize;
        let n_train = idx.len() - n_val - n_test;
        for (k, &i) in idx.iter().enumerate() {
            out.entries[i].split = Some(if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(out)
}

/// Labels as used by a run: explicit splits are kept when every entry has
/// one, otherwise splits are drawn from the configured ratio and seed.
pub fn assign_splits(labels: &ExpertLabels, config: &TrainConfig) -> Result<ExpertLabels> {
    if labels.entries.iter().all(|e| e.split.is_some()) {
        Ok(labels.clone())
    } else {
        make_splits(labels, config.split_ratio, config.seed)
    }
}

/// Keeps a `keep` fraction of the training labels of `source` (or of both
/// sources when `None`); validation and test entries are untouched.
pub fn thin_training_labels(
    labels: &ExpertLabels,
    source: Option<StanceSource>,
    keep: f64,
    seed: u64,
) -> Result<ExpertLabels> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::Argument(format!("label fraction {keep} outside [0, 1]")));
    }
    let mut drop = vec![false; labels.entries.len()];
    for s in StanceSource::ALL {
        if source.is_some_and(|x| x != s) {
            continue;
        }
        let mut idx: Vec<usize> = (0..labels.entries.len())
            .filter(|&i| labels.entries[i].source == s && labels.entries[i].split == Some(Split::Train))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ source_salt(s) ^ 0xd40);
        idx.shuffle(&mut rng);
        let kept = (keep * idx.len() as f64).round() as usize;
        for &i in &idx[kept..] {
            drop[i] = true;
        }
    }
    Ok(ExpertLabels {
        entries: labels
            .entries
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(e, _)| e.clone())
            .collect(),
    })
}

/// Graph-derived pieces of the objective that do not change during training.
pub struct ObjectiveSetup {
    pub prop: Propagation,
    pub stance_rows: Vec<usize>,
    pub echo_anchors: Vec<usize>,
}

impl ObjectiveSetup {
    pub fn new(hin: &Hin, config: &TrainConfig) -> Self {
        let actors = hin.actor_indices();
        let all: Vec<usize> = (0..hin.node_count()).collect();
        Self {
            prop: Propagation::new(hin),
            stance_rows: match config.consistency_scope {
                Scope::Actors => actors.clone(),
                Scope::All => all.clone(),
            },
            echo_anchors: match config.echo_scope {
                Scope::Actors => actors,
                Scope::All => all,
            },
        }
    }

    /// Negative samples for one epoch, from a per-epoch random stream.
    pub fn samples(&self, hin: &Hin, k_neg: usize, seed: u64, epoch: u64) -> EchoSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xec40);
        rng.set_stream(epoch);
        echo_samples(hin, &self.echo_anchors, k_neg, &mut rng)
    }
}

pub struct ObjectiveOutput {
    pub total: Var,
    /// Column of every weighted term of `total` before summation.
    pub terms: Var,
    pub embeddings: Var,
    pub liberal: Var,
    pub conservative: Var,
    pub breakdown: LossBreakdown,
}

/// Records forward pass, heads and all loss terms on `tape`.
///
/// Terms with zero weight are evaluated for logging but left out of the
/// differentiated total.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    vars: &ParamVars,
    hin: &Hin,
    setup: &ObjectiveSetup,
    labels: &ExpertLabels,
    split: Option<Split>,
    weights: &LossWeights,
    samples: &EchoSamples,
) -> Result<ObjectiveOutput> {
    // Recorded first so its gradient is accumulated last, in place.
    let reg = l2_penalty_terms(tape, &vars.flat)?;
    let features = tape.constant(hin.features().clone());
    let emb = forward_tape(tape, vars, &setup.prop, features)?;
    let (liberal, conservative) = heads_tape(tape, vars, emb)?;

    let l1 = expert_loss_terms(tape, liberal, conservative, hin, labels, split)?;
    let l2 = consistency_loss_terms(tape, liberal, conservative, &setup.stance_rows)?;
    let l3 = echo_chamber_terms(tape, emb, samples, weights.q)?;

    let mut total = tape.constant(Array2::zeros((1, 1)));
    let mut values = [0.0; 4];
    let mut weighted = Vec::new();
    for ((group, w), value) in [l1, l2, l3, reg].into_iter().zip(weights.as_array()).zip(&mut values) {
        let sum = sum_terms(tape, &group)?;
        *value = tape.scalar(sum);
        if w != 0.0 {
            let scaled = tape.scalar_mul(sum, w)?;
            total = tape.add(total, scaled)?;
            for t in group {
                weighted.push(tape.scalar_mul(t, w)?);
            }
        }
    }
    let terms = if weighted.is_empty() {
        tape.constant(Array2::zeros((1, 1)))
    } else {
        tape.stack_rows(&weighted)?
    };
    let breakdown = total_loss(values[0], values[1], values[2], values[3], weights)?;
    Ok(ObjectiveOutput {
        total,
        terms,
        embeddings: emb,
        liberal,
        conservative,
        breakdown,
    })
}

/// Metrics of both sources on one split plus their harmonic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub liberal: ClassificationMetrics,
    pub conservative: ClassificationMetrics,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Scores full-graph predictions against the labels of `split`.
pub fn split_metrics(
    pred_l: &Array2<f64>,
    pred_c: &Array2<f64>,
    hin: &Hin,
    labels: &ExpertLabels,
    split: Split,
) -> Result<SplitMetrics> {
    let score = |source: StanceSource, pred: &Array2<f64>| -> Result<ClassificationMetrics> {
        let pairs = labels.rows(hin, source, Some(split))?;
        if pairs.is_empty() {
            return Err(Error::Evaluation(format!("{source} has no {split:?} labels")));
        }
        let gold: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let guess: Vec<usize> = pairs.iter().map(|p| argmax(pred.row(p.0))).collect();
        classification_metrics(&gold, &guess)
    };
    let liberal = score(StanceSource::Liberal, pred_l)?;
    let conservative = score(StanceSource::Conservative, pred_c)?;
    Ok(SplitMetrics {
        accuracy: harmonic_mean(liberal.accuracy, conservative.accuracy),
        macro_f1: harmonic_mean(liberal.macro_f1, conservative.macro_f1),
        micro_f1: harmonic_mean(liberal.micro_f1, conservative.micro_f1),
        liberal,
        conservative,
    })
}

/// Fraction of `rows` whose liberal class is the reversal of their
/// conservative class.
pub fn consistency_rate(pred_l: &Array2<f64>, pred_c: &Array2<f64>, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let d = pred_l.ncols();
    let agree = rows
        .iter()
        .filter(|&&r| argmax(pred_l.row(r)) == d - 1 - argmax(pred_c.row(r)))
        .count();
    agree as f64 / rows.len() as f64
}

/// Accuracy on `split` of always predicting each source's most frequent
/// training class (lowest class on ties), as a harmonic mean over sources.
pub fn majority_baseline(labels: &ExpertLabels, split: Split) -> f64 {
    let accuracy = |source| {
        let mut counts = BTreeMap::new();
        for e in labels.select(source, Some(Split::Train)) {
            *counts.entry(e.label).or_insert(0usize) += 1;
        }
        let majority = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k);
        let eval: Vec<&LabelEntry> = labels.select(source, Some(split)).collect();
        if eval.is_empty() {
            return 0.0;
        }
        eval.iter().filter(|e| Some(e.label) == majority).count() as f64 / eval.len() as f64
    };
    harmonic_mean(accuracy(StanceSource::Liberal), accuracy(StanceSource::Conservative))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub liberal: ClassificationMetrics,
    pub conservative: ClassificationMetrics,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub consistency_rate: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dbi: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

/// Final states and stance distributions for every node.
pub fn predict_all(params: &ModelParams, hin: &Hin) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let prop = Propagation::new(hin);
    let f = tape.constant(hin.features().clone());
    let emb = forward_tape(&mut tape, &vars, &prop, f)?;
    let (l, c) = heads_tape(&mut tape, &vars, emb)?;
    Ok((tape.value(emb).clone(), tape.value(l).clone(), tape.value(c).clone()))
}

pub fn evaluate(params: &ModelParams, hin: &Hin, labels: &ExpertLabels, split: Split) -> Result<EvalReport> {
    let (_, l, c) = predict_all(params, hin)?;
    let m = split_metrics(&l, &c, hin, labels, split)?;
    Ok(EvalReport {
        split,
        liberal: m.liberal,
        conservative: m.conservative,
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        micro_f1: m.micro_f1,
        consistency_rate: consistency_rate(&l, &c, &hin.actor_indices()),
        dbi: BTreeMap::new(),
        best_epoch: None,
    })
}

/// Checks tape gradients of the full training objective against central
/// differences, at the initial parameters and with negative samples frozen.
pub fn gradcheck_objective(
    hin: &Hin,
    labels: &ExpertLabels,
    config: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    config.validate()?;
    let labels = assign_splits(labels, config)?;
    let model_config = config.model_config(hin.feature_dim());
    let params = ModelParams::init(&model_config, config.seed)?;
    let setup = ObjectiveSetup::new(hin, config);
    let samples = setup.samples(hin, config.k_neg, config.seed, 0);
    let weights = config.weights();
    grad_check(
        |tape, vars| {
            let pv = ParamVars::from_flat(&model_config, vars.to_vec())?;
            let out = objective(tape, &pv, hin, &setup, &labels, Some(Split::Train), &weights, &samples)?;
            Ok(out.terms)
        },
        &params.named(),
        opts,
    )
}

/// The same group sizes as `grouping`, reassigned to rows at random.
pub fn shuffled_grouping<G: Clone>(grouping: &BTreeMap<usize, G>, seed: u64) -> BTreeMap<usize, G> {
    let mut keys: Vec<G> = grouping.values().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    grouping.keys().copied().zip(keys).collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l2reg: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
    pub val_liberal_accuracy: f64,
    pub val_conservative_accuracy: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Labels with the split assignment used for the run.
    pub labels: ExpertLabels,
    /// Test-split report of the selected parameters.
    pub report: EvalReport,
}

fn with_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

/// Full-graph training with Adam; see [`TrainConfig`].
///
/// Each epoch records the loss and validation metrics of the parameters it
/// starts from, then takes one optimiser step (or one per minibatch). The
/// returned parameters are those with the highest validation harmonic-mean
/// accuracy, earliest epoch on ties.
pub fn train(hin: &Hin, labels: &ExpertLabels, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let labels = assign_splits(labels, config)?;
    let model_config = config.model_config(hin.feature_dim());
    let mut params = ModelParams::init(&model_config, config.seed)?;
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let setup = ObjectiveSetup::new(hin, config);
    let weights = config.weights();

    let train_entries: Vec<usize> = (0..labels.entries.len())
        .filter(|&i| labels.entries[i].split == Some(Split::Train))
        .collect();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut log = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let ctx = with_epoch(epoch);
        let samples = setup.samples(hin, config.k_neg, config.seed, epoch as u64);

        let batches: Vec<ExpertLabels> = match config.batch_size {
            None => vec![labels.clone()],
            Some(b) => {
                let mut order = train_entries.clone();
                order.shuffle(&mut batch_rng);
                order
                    .chunks(b)
                    .map(|chunk| ExpertLabels {
                        entries: chunk.iter().map(|&i| labels.entries[i].clone()).collect(),
                    })
                    .collect()
            }
        };

        let mut sums = [0.0f64; 5];
        let mut val = None;
        for (k, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let out = objective(
                &mut tape,
                &vars,
                hin,
                &setup,
                batch,
                Some(Split::Train),
                &weights,
                &samples,
            )
            .map_err(&ctx)?;
            if !out.breakdown.total.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}: loss is not finite")));
            }
            if k == 0 {
                let m = split_metrics(
                    tape.value(out.liberal),
                    tape.value(out.conservative),
                    hin,
                    &labels,
                    Split::Val,
                )?;
                let better = best.as_ref().is_none_or(|(acc, _, _)| m.accuracy > *acc);
                if better {
                    best = Some((m.accuracy, epoch, params.clone()));
                }
                val = Some(m);
            }
            let b = out.breakdown;
            for (s, v) in sums.iter_mut().zip([b.l1, b.l2, b.l3, b.l2reg, b.total]) {
                *s += v;
            }
            tape.backward(out.total).map_err(&ctx)?;
            let grads: Vec<Array2<f64>> = vars
                .flat
                .iter()
                .map(|&v| tape.take_grad(v).expect("parameters require grad"))
                .collect();
            adam.step(params.tensors_mut(), &grads).map_err(&ctx)?;
        }

        let steps = batches.len() as f64;
        let val = val.expect("at least one batch per epoch");
        log.push(EpochRecord {
            epoch,
            l1: sums[0] / steps,
            l2: sums[1] / steps,
            l3: sums[2] / steps,
            l2reg: sums[3] / steps,
            total: sums[4] / steps,
            val_accuracy: val.accuracy,
            val_macro_f1: val.macro_f1,
            val_micro_f1: val.micro_f1,
            val_liberal_accuracy: val.liberal.accuracy,
            val_conservative_accuracy: val.conservative.accuracy,
        });
    }

    let (_, best_epoch, best_params) = match best {
        Some(b) => b,
        None => (0.0, 0, params),
    };
    let mut report = evaluate(&best_params, hin, &labels, Split::Test)?;
    report.best_epoch = Some(best_epoch);
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        log,
        labels,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{gen_synthetic, SynthConfig};

    fn small() -> (Hin, ExpertLabels) {
        gen_synthetic(&SynthConfig {
            n_legislators: 30,
            n_states: 4,
            n_governors: 4,
            n_justices: 3,
            feature_dim: 8,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            d_hidden: 8,
            max_epochs: epochs,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    fn fake_labels(n: usize) -> ExpertLabels {
        ExpertLabels::from_scores((0..n).map(|i| (format!("e{i:04}"), StanceSource::Liberal, (i % 10) as f64 / 10.0)))
            .unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = make_splits(&fake_labels(10), [0.7, 0.2, 0.1], 1).unwrap();
        let count = |sp| s.entries.iter().filter(|e| e.split == Some(sp)).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (7, 2, 1));

        let s = make_splits(&fake_labels(777), [0.7, 0.2, 0.1], 1).unwrap();
        let count = |sp| s.entries.iter().filter(|e| e.split == Some(sp)).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (544, 155, 78)
        );

        assert_eq!(s, make_splits(&fake_labels(777), [0.7, 0.2, 0.1], 1).unwrap());
        assert_ne!(s, make_splits(&fake_labels(777), [0.7, 0.2, 0.1], 2).unwrap());
        assert!(matches!(
            make_splits(&fake_labels(2), [0.7, 0.2, 0.1], 1),
            Err(Error::Split(_))
        ));
        assert!(make_splits(&fake_labels(20), [0.7, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn zero_weights_freeze_parameters() {
        let (hin, labels) = small();
        let cfg = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..quick(3)
        };
        let out = train(&hin, &labels, &cfg).unwrap();
        let init = ModelParams::init(&cfg.model_config(hin.feature_dim()), cfg.seed).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.len(), 3);
        assert!(out.log.iter().enumerate().all(|(i, r)| r.epoch == i));
    }

    #[test]
    fn deterministic_per_seed() {
        let (hin, labels) = small();
        let a = train(&hin, &labels, &quick(4)).unwrap();
        let b = train(&hin, &labels, &quick(4)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn minibatch_mode_runs() {
        let (hin, labels) = small();
        let cfg = TrainConfig {
            batch_size: Some(8),
            ..quick(2)
        };
        let out = train(&hin, &labels, &cfg).unwrap();
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn zero_layer_model_trains() {
        let (hin, labels) = small();
        let cfg = TrainConfig { layers: 0, ..quick(2) };
        assert!(train(&hin, &labels, &cfg).is_ok());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lambda9": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"layers": 0}"#).unwrap();
        assert_eq!(c.layers, 0);
        assert_eq!(c.d_hidden, 512);
        let bad = TrainConfig {
            lambda2: -0.1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn thinning_only_touches_training_labels() {
        let s = make_splits(&fake_labels(100), [0.7, 0.2, 0.1], 1).unwrap();
        let t = thin_training_labels(&s, None, 0.5, 3).unwrap();
        let count = |l: &ExpertLabels, sp| l.entries.iter().filter(|e| e.split == Some(sp)).count();
        assert_eq!(count(&t, Split::Train), 35);
        assert_eq!(count(&t, Split::Val), count(&s, Split::Val));
        assert_eq!(count(&t, Split::Test), count(&s, Split::Test));
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let (hin, labels) = gen_synthetic(&SynthConfig::tiny(0)).unwrap();
        assert_eq!(hin.node_count(), 20);
        let cfg = TrainConfig {
            d_hidden: 16,
            ..Default::default()
        };
        let report = gradcheck_objective(&hin, &labels, &cfg, &GradCheckOptions::default()).unwrap();
        assert!(report.passed, "max relative error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn shuffled_grouping_keeps_sizes() {
        let g: BTreeMap<usize, u8> = (0..10).map(|i| (i * 3, (i % 3) as u8)).collect();
        let s = shuffled_grouping(&g, 4);
        assert_eq!(g.keys().collect::<Vec<_>>(), s.keys().collect::<Vec<_>>());
        let mut a: Vec<_> = g.values().collect();
        let mut b: Vec<_> = s.values().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(g, s);
    }

    #[test]
    fn consistency_rate_counts_reversals() {
        let l = ndarray::array![[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0]];
        let c = ndarray::array![[0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0, 0.0]];
        assert_eq!(consistency_rate(&l, &c, &[0, 1]), 0.5);
    }

    #[test]
    fn majority_baseline_fits_on_train() {
        let entry = |source, label, split| LabelEntry {
            id: format!("n{label}"),
            source,
            score: 0.0,
            label,
            split: Some(split),
        };
        use StanceSource::{Conservative as C, Liberal as L};
        let labels = ExpertLabels {
            entries: vec![
                entry(L, 1, Split::Train),
                entry(L, 1, Split::Train),
                entry(L, 3, Split::Train),
                entry(L, 3, Split::Test),
                entry(L, 1, Split::Test),
                entry(L, 3, Split::Test),
                entry(L, 3, Split::Test),
                // tie between 2 and 4 resolves to 2
                entry(C, 4, Split::Train),
                entry(C, 2, Split::Train),
                entry(C, 2, Split::Test),
                entry(C, 4, Split::Test),
            ],
        };
        // liberal: predicts 1, right on 1 of 4; conservative: predicts 2, right on 1 of 2
        let want = 2.0 * 0.25 * 0.5 / 0.75;
        assert!((majority_baseline(&labels, Split::Test) - want).abs() < 1e-15);
    }
}
