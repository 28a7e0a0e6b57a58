//! Ablation grids: every combination of the requested axis levels, trained
//! once per seed, summarised as mean and sample standard deviation.
//!
//! Grid syntax: axes separated by `;`, each `name` or `name=v1,v2,...`.
//! Integer axes accept inclusive ranges `a..b`. Axes without values use
//! their standard levels:
//!
//! | axis                         | default levels                  |
//! |------------------------------|---------------------------------|
//! | `losses`                     | `L1`, `L1+L2`, `L1+L3`, `L1+L2+L3` |
//! | `layers`                     | `0..4`                          |
//! | `drop-rel`                   | `R1`..`R5` (and `none` on request) |
//! | `edge-frac`                  | `0,0.2,0.4,0.6,0.8`             |
//! | `label-frac[-liberal\|-conservative]` | `1,0.8,0.6,0.4,0.2`    |
//! | `kneg`                       | `1..5`                          |
//! | `q`                          | `0,0.05,0.1,0.2,0.5`            |
//! | `lambda2`, `lambda3`         | `0,0.05,0.1,0.2,0.5,1`          |

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use polhin::hin::{Hin, RelationKind};
use polhin::objectives::{ExpertLabels, StanceSource};
use polhin::training::{self, assign_splits, thin_training_labels, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConfigArgs;
use crate::failure::{load_data, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub grid: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent training runs; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Losses {
    pub consistency: bool,
    pub echo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Losses(Losses),
    Layers(usize),
    DropRel(Option<RelationKind>),
    EdgeFrac(f64),
    LabelFrac(Option<StanceSource>, f64),
    Kneg(usize),
    Q(f64),
    Lambda2(f64),
    Lambda3(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub levels: Vec<(String, Level)>,
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure::Config(format!("grid: {}", msg.into()))
}

fn parse_f64(axis: &str, s: &str) -> CmdResult<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(format!("{axis}: '{s}' is not a number")))
}

fn parse_usizes(axis: &str, items: &[&str]) -> CmdResult<Vec<usize>> {
    let mut out = Vec::new();
    for s in items {
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("{axis}: '{s}' is not an integer")))
        };
        match s.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
                if a > b {
                    return Err(bad(format!("{axis}: empty range '{s}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(s)?),
        }
    }
    Ok(out)
}

fn fraction(axis: &str, s: &str) -> CmdResult<f64> {
    let v = parse_f64(axis, s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(bad(format!("{axis}: {v} outside [0, 1]")));
    }
    Ok(v)
}

fn parse_axis(spec: &str) -> CmdResult<Axis> {
    let (name, values) = match spec.split_once('=') {
        Some((n, v)) => (n.trim(), Some(v)),
        None => (spec.trim(), None),
    };
    let items: Vec<&str> = match values {
        Some(v) => {
            let items: Vec<&str> = v.split(',').map(str::trim).collect();
            if items.iter().any(|s| s.is_empty()) {
                return Err(bad(format!("{name}: empty value in '{v}'")));
            }
            items
        }
        None => match name {
            "losses" => vec!["L1", "L1+L2", "L1+L3", "L1+L2+L3"],
            "layers" => vec!["0..4"],
            "drop-rel" => vec!["R1", "R2", "R3", "R4", "R5"],
            "edge-frac" => vec!["0", "0.2", "0.4", "0.6", "0.8"],
            "label-frac" | "label-frac-liberal" | "label-frac-conservative" => vec!["1", "0.8", "0.6", "0.4", "0.2"],
            "kneg" => vec!["1..5"],
            "q" => vec!["0", "0.05", "0.1", "0.2", "0.5"],
            "lambda2" | "lambda3" => vec!["0", "0.05", "0.1", "0.2", "0.5", "1"],
            _ => vec![],
        },
    };
    let float_levels =
        |f: &dyn Fn(f64) -> Level, check: &dyn Fn(&str) -> CmdResult<f64>| -> CmdResult<Vec<(String, Level)>> {
            items.iter().map(|s| Ok((s.to_string(), f(check(s)?)))).collect()
        };
    let nonneg = |s: &str| {
        let v = parse_f64(name, s)?;
        if v < 0.0 {
            return Err(bad(format!("{name}: {v} is negative")));
        }
        Ok(v)
    };
    let levels = match name {
        "losses" => items
            .iter()
            .map(|s| {
                let parts: Vec<String> = s.split('+').map(|p| p.trim().to_ascii_uppercase()).collect();
                let has = |t: &str| parts.iter().any(|p| p == t);
                if !has("L1") || parts.iter().any(|p| !["L1", "L2", "L3"].contains(&p.as_str())) {
                    return Err(bad(format!(
                        "losses: '{s}' must be L1 optionally joined with L2 and/or L3"
                    )));
                }
                Ok((
                    parts.join("+"),
                    Level::Losses(Losses {
                        consistency: has("L2"),
                        echo: has("L3"),
                    }),
                ))
            })
            .collect::<CmdResult<_>>()?,
        "layers" => parse_usizes(name, &items)?
            .into_iter()
            .map(|l| (l.to_string(), Level::Layers(l)))
            .collect(),
        "kneg" => parse_usizes(name, &items)?
            .into_iter()
            .map(|k| (k.to_string(), Level::Kneg(k)))
            .collect(),
        "drop-rel" => items
            .iter()
            .map(|s| match *s {
                "none" => Ok(("none".to_string(), Level::DropRel(None))),
                r => r
                    .parse::<RelationKind>()
                    .map(|k| (r.to_string(), Level::DropRel(Some(k))))
                    .map_err(|_| bad(format!("drop-rel: unknown relation '{r}'"))),
            })
            .collect::<CmdResult<_>>()?,
        "edge-frac" => float_levels(&Level::EdgeFrac, &|s| fraction(name, s))?,
        "label-frac" => float_levels(&|v| Level::LabelFrac(None, v), &|s| fraction(name, s))?,
        "label-frac-liberal" => float_levels(&|v| Level::LabelFrac(Some(StanceSource::Liberal), v), &|s| {
            fraction(name, s)
        })?,
        "label-frac-conservative" => float_levels(&|v| Level::LabelFrac(Some(StanceSource::Conservative), v), &|s| {
            fraction(name, s)
        })?,
        "q" => float_levels(&Level::Q, &nonneg)?,
        "lambda2" => float_levels(&Level::Lambda2, &nonneg)?,
        "lambda3" => float_levels(&Level::Lambda3, &nonneg)?,
        "" => return Err(bad("empty axis")),
        other => return Err(bad(format!("unknown axis '{other}'"))),
    };
    Ok(Axis {
        name: name.to_string(),
        levels,
    })
}

/// Parses a grid specification; an empty grid is an error.
pub fn parse_grid(spec: &str) -> CmdResult<Vec<Axis>> {
    let parts: Vec<&str> = spec.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(bad("no axes given"));
    }
    let mut axes: Vec<Axis> = Vec::new();
    for p in parts {
        let a = parse_axis(p)?;
        if axes.iter().any(|b| b.name == a.name) {
            return Err(bad(format!("axis '{}' given twice", a.name)));
        }
        axes.push(a);
    }
    Ok(axes)
}

/// Cartesian product of the axis levels, first axis varying slowest.
pub fn cells(axes: &[Axis]) -> Vec<Vec<(String, Level)>> {
    let mut out: Vec<Vec<(String, Level)>> = vec![vec![]];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                a.levels.iter().map(move |l| {
                    let mut c = prefix.clone();
                    c.push(l.clone());
                    c
                })
            })
            .collect();
    }
    out
}

/// Configuration, graph and labels for one (cell, seed) run.
pub fn prepare(
    base: &TrainConfig,
    hin: &Hin,
    labels: &ExpertLabels,
    cell: &[(String, Level)],
    seed: u64,
) -> CmdResult<(TrainConfig, Hin, ExpertLabels)> {
    let mut cfg = TrainConfig { seed, ..base.clone() };
    let mut graph = hin.clone();
    for (_, level) in cell {
        match *level {
            Level::Losses(l) => {
                cfg.lambda2 = if l.consistency { base.lambda2 } else { 0.0 };
                cfg.lambda3 = if l.echo { base.lambda3 } else { 0.0 };
            }
            Level::Layers(n) => cfg.layers = n,
            Level::Kneg(k) => cfg.k_neg = k,
            Level::Q(q) => cfg.q = q,
            Level::Lambda2(v) => cfg.lambda2 = v,
            Level::Lambda3(v) => cfg.lambda3 = v,
            Level::DropRel(Some(r)) => graph = graph.drop_relation(&[r]),
            Level::DropRel(None) | Level::LabelFrac(..) => {}
            Level::EdgeFrac(f) => {
                graph = graph.drop_edge_fraction(f, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xed6e))?;
            }
        }
    }
    cfg.validate()?;
    let mut labels = assign_splits(labels, &cfg)?;
    for (_, level) in cell {
        if let Level::LabelFrac(source, keep) = *level {
            labels = thin_training_labels(&labels, source, keep, seed)?;
        }
    }
    Ok((cfg, graph, labels))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub cell: usize,
    pub levels: Vec<(String, String)>,
    pub seed: u64,
    pub accuracy: f64,
    pub liberal_accuracy: f64,
    pub conservative_accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub consistency_rate: f64,
    pub best_epoch: usize,
    pub seconds: f64,
}

const METRICS: [&str; 6] = [
    "accuracy",
    "liberal_accuracy",
    "conservative_accuracy",
    "macro_f1",
    "micro_f1",
    "consistency_rate",
];

impl RunRecord {
    fn metrics(&self) -> [f64; 6] {
        [
            self.accuracy,
            self.liberal_accuracy,
            self.conservative_accuracy,
            self.macro_f1,
            self.micro_f1,
            self.consistency_rate,
        ]
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn ablate(a: &AblateArgs) -> CmdResult {
    let axes = parse_grid(&a.grid)?;
    if a.seeds.is_empty() {
        return Err(Failure::Config("at least one seed is required".into()));
    }
    let base = a.cfg.resolve(None)?;
    for d in base.divergences() {
        eprintln!("note: {d}");
    }
    let (hin, labels) = load_data(&a.data)?;
    let grid = cells(&axes);
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| a.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Io(format!("worker pool: {e}")))?;
    eprintln!("{} cells × {} seeds on {workers} worker(s)", grid.len(), a.seeds.len());

    let results: Vec<CmdResult<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let clock = Instant::now();
                let (cfg, graph, lab) = prepare(&base, &hin, &labels, &grid[c], seed)?;
                let out = training::train(&graph, &lab, &cfg)?;
                let r = out.report;
                let rec = RunRecord {
                    cell: c,
                    levels: axes
                        .iter()
                        .zip(&grid[c])
                        .map(|(ax, (l, _))| (ax.name.clone(), l.clone()))
                        .collect(),
                    seed,
                    accuracy: r.accuracy,
                    liberal_accuracy: r.liberal.accuracy,
                    conservative_accuracy: r.conservative.accuracy,
                    macro_f1: r.macro_f1,
                    micro_f1: r.micro_f1,
                    consistency_rate: r.consistency_rate,
                    best_epoch: out.best_epoch,
                    seconds: clock.elapsed().as_secs_f64(),
                };
                eprintln!(
                    "  cell {c} seed {seed}: accuracy {:.4} ({:.1}s)",
                    rec.accuracy, rec.seconds
                );
                Ok(rec)
            })
            .collect()
    });
    let runs: Vec<RunRecord> = results.into_iter().collect::<CmdResult<_>>()?;

    fs::create_dir_all(&a.out).map_err(|e| Failure::io(a.out.display(), e))?;
    let mut jsonl = Vec::new();
    for r in &runs {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.push(b'\n');
    }
    let runs_path = a.out.join("runs.jsonl");
    fs::write(&runs_path, jsonl).map_err(|e| Failure::io(runs_path.display(), e))?;

    let table_path = a.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&table_path)?;
    let mut header: Vec<String> = axes.iter().map(|x| x.name.clone()).collect();
    header.push("runs".into());
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    println!("{}", header.join("\t"));
    for (c, cell) in grid.iter().enumerate() {
        let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.cell == c).collect();
        let mut row: Vec<String> = cell.iter().map(|(l, _)| l.clone()).collect();
        row.push(mine.len().to_string());
        for k in 0..METRICS.len() {
            let xs: Vec<f64> = mine.iter().map(|r| r.metrics()[k]).collect();
            let (m, s) = mean_std(&xs);
            row.push(format!("{m:.6}"));
            row.push(format!("{s:.6}"));
        }
        w.write_record(&row)?;
        println!("{}", row.join("\t"));
    }
    w.flush().map_err(|e| Failure::io(table_path.display(), e))?;
    Ok(())
}
