use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_entries: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub loss: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

struct Evaluation {
    terms: Array2<f64>,
    tape: Tape,
    vars: Vec<Var>,
}

fn evaluate<F>(loss_fn: &F, params: &[(String, Array2<f64>)], with_grad: bool) -> Result<Evaluation>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, p)| tape.leaf(p.clone(), with_grad)).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let terms = tape.value(out).clone();
    if with_grad {
        let loss = tape.sum(out)?;
        tape.backward(loss)?;
    }
    Ok(Evaluation { terms, tape, vars })
}

/// `Σ (plus − minus)` entry by entry, so that terms the perturbation does
/// not reach cancel exactly instead of being rounded at the scale of the
/// total.
fn summed_difference(plus: &Array2<f64>, minus: &Array2<f64>) -> f64 {
    plus.iter().zip(minus).map(|(p, m)| p - m).sum()
}

/// Compares tape gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, entry by entry.
///
/// `loss_fn` may return a node of any shape; `f` is the sum of its entries.
/// Returning per-term values instead of their sum lets the difference be
/// taken term by term, which keeps small gradients above the rounding level
/// of a large total.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// The loss function must be deterministic; it is evaluated twice at the
/// unperturbed point and any bitwise difference is reported as
/// [`Error::Determinism`].
pub fn grad_check<F>(loss_fn: F, params: &[(String, Array2<f64>)], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::Argument(format!("eps must be positive, got {}", opts.eps)));
    }
    let Evaluation {
        terms: base,
        tape,
        vars,
    } = evaluate(&loss_fn, params, true)?;
    let again = evaluate(&loss_fn, params, false)?.terms;
    if base.dim() != again.dim() || base.iter().zip(&again).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::Determinism(format!(
            "repeated evaluation gave {:e} then {:e}",
            base.sum(),
            again.sum()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<(String, Array2<f64>)> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());

    for (pi, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(params[pi].1.dim()));
        let (rows, cols) = params[pi].1.dim();
        let total = rows * cols;
        let picks: Vec<usize> = if total <= opts.max_entries {
            (0..total).collect()
        } else {
            let mut v = index::sample(&mut rng, total, opts.max_entries).into_vec();
            v.sort_unstable();
            v
        };

        let mut check = ParamCheck {
            name: params[pi].0.clone(),
            entries_checked: picks.len(),
            max_rel_error: 0.0,
            worst_entry: None,
            analytic: 0.0,
            numeric: 0.0,
        };
        for flat in picks {
            let at = (flat / cols, flat % cols);
            let orig = params[pi].1[at];
            work[pi].1[at] = orig + opts.eps;
            let plus = evaluate(&loss_fn, &work, false)?.terms;
            work[pi].1[at] = orig - opts.eps;
            let minus = evaluate(&loss_fn, &work, false)?.terms;
            work[pi].1[at] = orig;
            if plus.dim() != base.dim() || minus.dim() != base.dim() {
                return Err(Error::Determinism("loss shape changed under perturbation".into()));
            }

            let numeric = summed_difference(&plus, &minus) / (2.0 * opts.eps);
            let a = analytic[at];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error || check.worst_entry.is_none() {
                check.max_rel_error = rel;
                check.worst_entry = Some(at);
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }

    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps: opts.eps,
        tol: opts.tol,
        loss: base.sum(),
        max_rel_error,
        passed: max_rel_error < opts.tol,
        params: checks,
    })
}
