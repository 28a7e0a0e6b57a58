//! `gen`, `train`, `eval`, `export` and `gradcheck`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, ValueEnum};
use polhin::autodiff::GradCheckOptions;
use polhin::data_io::{self, party_membership, LoadSummary, SynthConfig};
use polhin::hin::Hin;
use polhin::model::{EmbeddingTable, ModelParams};
use polhin::objectives::{ExpertLabels, Split, StanceSource};
use polhin::training::{self, assign_splits, dbi, shuffled_grouping, TrainConfig};
use serde_json::json;

use crate::config::{data_digest, run_digest, ConfigArgs};
use crate::failure::{load_data, CmdResult, Failure};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const LOG: &str = "log.jsonl";
pub const REPORT: &str = "report.json";
pub const META: &str = "meta.json";

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON; the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub legislators: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

pub fn gen(a: &GenArgs) -> CmdResult {
    let mut cfg = match &a.config {
        None => SynthConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(v) = a.legislators {
        cfg.n_legislators = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.feature_dim {
        cfg.feature_dim = v;
    }
    cfg.validate()?;
    let (hin, labels) = data_io::gen_synthetic(&cfg)?;
    data_io::write_dataset(&hin, &labels, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&LoadSummary::of(&hin, &labels))?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to runs/<config digest>-s<seed>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::io(path.display(), e))
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let cfg = a.cfg.resolve(a.seed)?;
    for d in cfg.divergences() {
        eprintln!("note: {d}");
    }
    let bytes = fs::read(&a.data).map_err(|e| Failure::Data(format!("{}: {e}", a.data.display())))?;
    let (hin, labels) = load_data(&a.data)?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-s{}", run_digest(&cfg, &bytes), cfg.seed)));
    fs::create_dir_all(&dir).map_err(|e| Failure::io(dir.display(), e))?;

    let started = unix_now();
    let clock = Instant::now();
    let outcome = training::train(&hin, &labels, &cfg)?;
    let elapsed = clock.elapsed().as_secs_f64();

    let echo = json!({ "train_config": cfg, "data_sha256": data_digest(&bytes) });
    outcome.params.save(dir.join(CHECKPOINT), echo)?;
    let mut log = Vec::new();
    for rec in &outcome.log {
        serde_json::to_writer(&mut log, rec)?;
        log.push(b'\n');
    }
    write_file(&dir.join(LOG), &log)?;
    write_file(
        &dir.join(REPORT),
        serde_json::to_string_pretty(&outcome.report)?.as_bytes(),
    )?;
    let meta = json!({
        "started_unix": started,
        "finished_unix": unix_now(),
        "elapsed_seconds": elapsed,
        "data": a.data,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_file(&dir.join(META), serde_json::to_string_pretty(&meta)?.as_bytes())?;

    let r = &outcome.report;
    println!(
        "{}: best epoch {} of {}, test accuracy {:.4} (liberal {:.4}, conservative {:.4}), macro-F1 {:.4}, {elapsed:.1}s",
        dir.display(),
        outcome.best_epoch,
        cfg.max_epochs,
        r.accuracy,
        r.liberal.accuracy,
        r.conservative.accuracy,
        r.macro_f1,
    );
    Ok(())
}

/// Parameters and the training config echoed into a checkpoint.
pub fn load_run(dir: &Path, hin: &Hin) -> CmdResult<(ModelParams, TrainConfig)> {
    let path = dir.join(CHECKPOINT);
    let (params, echo) = ModelParams::load(&path).map_err(|e| match e {
        polhin::Error::Io { .. } => Failure::Data(e.to_string()),
        other => other.into(),
    })?;
    let cfg: TrainConfig = serde_json::from_value(echo["train_config"].clone())
        .map_err(|e| Failure::Data(format!("{}: train_config: {e}", path.display())))?;
    if params.config().d_in != hin.feature_dim() {
        return Err(Failure::Data(format!(
            "dataset has {}-dimensional features, checkpoint expects {}",
            hin.feature_dim(),
            params.config().d_in
        )));
    }
    Ok((params, cfg))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let (hin, labels) = load_data(&a.data)?;
    let (params, cfg) = load_run(&a.run, &hin)?;
    let labels = assign_splits(&labels, &cfg)?;
    let split: Split = a.split.parse()?;
    let report = training::evaluate(&params, &hin, &labels, split)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum GroupBy {
    Party,
    Kind,
    Label,
}

impl GroupBy {
    fn name(self) -> &'static str {
        match self {
            GroupBy::Party => "party",
            GroupBy::Kind => "kind",
            GroupBy::Label => "label",
        }
    }

    /// Row → group key. Label groups use the liberal-source bin of labelled actors.
    fn grouping(self, hin: &Hin, labels: &ExpertLabels) -> CmdResult<BTreeMap<usize, usize>> {
        Ok(match self {
            GroupBy::Party => party_membership(hin),
            GroupBy::Kind => (0..hin.node_count()).map(|i| (i, hin.node(i).kind as usize)).collect(),
            GroupBy::Label => labels.rows(hin, StanceSource::Liberal, None)?.into_iter().collect(),
        })
    }
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [GroupBy::Party, GroupBy::Kind, GroupBy::Label])]
    pub group_by: Vec<GroupBy>,
    /// Seed of the size-matched random grouping printed next to each DBI.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn export(a: &ExportArgs) -> CmdResult {
    let (hin, labels) = load_data(&a.data)?;
    let (params, _) = load_run(&a.run, &hin)?;
    let (emb, _, _) = training::predict_all(&params, &hin)?;
    data_io::export_embeddings(&EmbeddingTable(emb.clone()), &hin, &a.out)?;
    let mut out = serde_json::Map::new();
    let mut groups = a.group_by.clone();
    groups.sort();
    groups.dedup();
    for g in groups {
        let grouping = g.grouping(&hin, &labels)?;
        let distinct: std::collections::BTreeSet<_> = grouping.values().collect();
        let entry = if distinct.len() < 2 {
            json!({ "groups": distinct.len(), "dbi": null, "shuffled": null })
        } else {
            let d = dbi(&emb, &grouping)?;
            let s = dbi(&emb, &shuffled_grouping(&grouping, a.seed))?;
            json!({ "groups": distinct.len(), "dbi": d, "shuffled": s })
        };
        out.insert(g.name().into(), entry);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gradcheck(a: &GradcheckArgs) -> CmdResult<bool> {
    let clock = Instant::now();
    let (hin, labels) = data_io::gen_synthetic(&SynthConfig::tiny(a.seed))?;
    let cfg = TrainConfig {
        d_hidden: a.hidden,
        layers: a.layers,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let opts = GradCheckOptions {
        eps: a.eps,
        tol: a.tol,
        ..GradCheckOptions::default()
    };
    let report = training::gradcheck_objective(&hin, &labels, &cfg, &opts)?;
    if let Some(p) = &a.out {
        write_file(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    let mut stdout = std::io::stdout().lock();
    for p in &report.params {
        let _ = writeln!(
            stdout,
            "{:<24} {:>6} entries  max rel err {:.3e}",
            p.name, p.entries_checked, p.max_rel_error
        );
    }
    let _ = writeln!(
        stdout,
        "{} nodes, loss {:.6}, max relative error {:.3e} (tol {:.0e}): {} in {:.2}s",
        hin.node_count(),
        report.loss,
        report.max_rel_error,
        report.tol,
        if report.passed { "PASS" } else { "FAIL" },
        clock.elapsed().as_secs_f64()
    );
    Ok(report.passed)
}
