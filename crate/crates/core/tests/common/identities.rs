//! Closed-form values of the loss terms on constructed inputs.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use ndarray::Array2;
use polhin::autodiff::Tape;
use polhin::data_io::{gen_synthetic, SynthConfig};
use polhin::hin::{EdgeRecord, Hin, Node, NodeKind, RelationKind};
use polhin::model::{EmbeddingTable, ModelParams};
use polhin::objectives::{
    consistency_loss, echo_chamber_loss, echo_chamber_loss_tape, expert_loss, ExpertLabels, StanceSource,
    STANCE_CLASSES,
};
use polhin::training::{assign_splits, objective, ObjectiveSetup, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic() -> (Hin, ExpertLabels) {
    gen_synthetic(&SynthConfig {
        n_legislators: 40,
        n_states: 6,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// |L1(uniform predictions) − (#labelled) ln D|.
pub fn uniform_expert_gap() -> f64 {
    let (hin, labels) = synthetic();
    let n = hin.node_count();
    let mut tape = Tape::new();
    let u = tape.constant(Array2::from_elem((n, STANCE_CLASSES), 1.0 / STANCE_CLASSES as f64));
    let l1 = expert_loss(&mut tape, u, u, &hin, &labels, None).unwrap();
    (tape.scalar(l1) - labels.len() as f64 * (STANCE_CLASSES as f64).ln()).abs()
}

fn one_hot_rows(classes: &[usize]) -> Array2<f64> {
    let mut m = Array2::zeros((classes.len(), STANCE_CLASSES));
    for (i, &c) in classes.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

/// (L1, L2) for one-hot predictions that agree with the labels and with
/// each other.
pub fn perfect_prediction_losses() -> (f64, f64) {
    let (hin, labels) = synthetic();
    let n = hin.node_count();
    let mut lib = vec![0; n];
    let mut con = vec![STANCE_CLASSES - 1; n];
    for (row, c) in labels.rows(&hin, StanceSource::Liberal, None).unwrap() {
        lib[row] = c;
    }
    for (row, c) in labels.rows(&hin, StanceSource::Conservative, None).unwrap() {
        con[row] = c;
    }
    let mut tape = Tape::new();
    let l = tape.constant(one_hot_rows(&lib));
    let c = tape.constant(one_hot_rows(&con));
    let l1 = expert_loss(&mut tape, l, c, &hin, &labels, None).unwrap();

    let agree: Vec<usize> = (0..n).collect();
    let rev: Vec<usize> = lib.iter().map(|&k| STANCE_CLASSES - 1 - k).collect();
    let l = tape.constant(one_hot_rows(&lib));
    let c = tape.constant(one_hot_rows(&rev));
    let l2 = consistency_loss(&mut tape, l, c, &agree).unwrap();
    (tape.scalar(l1), tape.scalar(l2))
}

/// |objective total − Σ λ_k · (component k computed on its own)|.
pub fn breakdown_gap(seed: u64) -> f64 {
    let (hin, labels) = gen_synthetic(&SynthConfig::tiny(seed)).unwrap();
    let cfg = TrainConfig {
        d_hidden: 12,
        lambda1: 0.7,
        lambda2: 0.3,
        lambda3: 0.45,
        lambda4: 0.01,
        seed,
        ..TrainConfig::default()
    };
    let labels = assign_splits(&labels, &cfg).unwrap();
    let params = ModelParams::init(&cfg.model_config(hin.feature_dim()), seed).unwrap();
    let setup = ObjectiveSetup::new(&hin, &cfg);
    let samples = setup.samples(&hin, cfg.k_neg, seed, 0);
    let w = cfg.weights();

    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let out = objective(&mut tape, &vars, &hin, &setup, &labels, None, &w, &samples).unwrap();
    let total = tape.scalar(out.total);

    let mut t = Tape::new();
    let l = t.constant(t_value(&tape, out.liberal));
    let c = t.constant(t_value(&tape, out.conservative));
    let e = t.constant(t_value(&tape, out.embeddings));
    let l1 = expert_loss(&mut t, l, c, &hin, &labels, None).unwrap();
    let l2 = consistency_loss(&mut t, l, c, &setup.stance_rows).unwrap();
    let l3 = echo_chamber_loss_tape(&mut t, e, &samples, cfg.q).unwrap();
    let expected = w.lambda1 * t.scalar(l1)
        + w.lambda2 * t.scalar(l2)
        + w.lambda3 * t.scalar(l3)
        + w.lambda4 * params.squared_norm();
    (total - expected).abs().max((out.breakdown.total - expected).abs())
}

fn t_value(tape: &Tape, v: polhin::autodiff::Var) -> Array2<f64> {
    tape.value(v).clone()
}

/// |L3 − 2 ln 2| for two linked nodes with orthogonal embeddings.
pub fn echo_orthogonal_gap() -> f64 {
    let nodes = vec![
        Node {
            id: "a".into(),
            kind: NodeKind::Legislator,
            name: "a".into(),
        },
        Node {
            id: "b".into(),
            kind: NodeKind::Party,
            name: "b".into(),
        },
    ];
    let edges = [EdgeRecord {
        src: "a".into(),
        dst: "b".into(),
        rel: RelationKind::PartyAffiliation,
    }];
    let features: BTreeMap<String, Vec<f64>> = [("a".to_string(), vec![1.0]), ("b".to_string(), vec![1.0])].into();
    let hin = Hin::new(nodes, &edges, &features).unwrap();
    let emb = EmbeddingTable(ndarray::array![[1.0, 0.0], [0.0, 1.0]]);
    let l3 = echo_chamber_loss(&emb, &hin, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (l3 - 2.0 * LN_2).abs()
}
