use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{log_softmax_rows, Tape, Var};
use crate::postproc::{ParamGrid, PostProcParams};

use super::policy::PolicyOutput;

/// Indices chosen by the threshold and window heads (one per class, or a
/// single shared one), with the joint log-probability of the choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub threshold_indices: Vec<usize>,
    pub window_indices: Vec<usize>,
    pub log_prob: f64,
    /// Entropy of every categorical distribution, threshold heads first.
    pub entropies: Vec<f64>,
}

impl ActionSample {
    pub fn total_entropy(&self) -> f64 {
        self.entropies.iter().sum()
    }
}

fn categorical<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn entropy(logp: &[f64]) -> f64 {
    -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

fn check_logits(name: &str, logits: &[f64], heads: usize, n: usize) -> Result<()> {
    if logits.len() != heads * n {
        return Err(Error::dim(format!(
            "{name} logits: expected {heads}x{n}, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} logits")));
    }
    Ok(())
}

enum Pick<'a, R: ?Sized> {
    Sample(&'a mut R),
    Greedy,
}

fn choose<R: Rng + ?Sized>(
    threshold_logits: &[f64],
    window_logits: &[f64],
    grid: &ParamGrid,
    mut pick: Pick<'_, R>,
) -> Result<ActionSample> {
    let heads = grid.heads_per_kind();
    let (nt, nw) = (grid.thresholds.len(), grid.windows.len());
    check_logits("threshold", threshold_logits, heads, nt)?;
    check_logits("window", window_logits, heads, nw)?;
    let lt = log_softmax_rows(threshold_logits, nt);
    let lw = log_softmax_rows(window_logits, nw);

    let mut log_prob = 0.0;
    let mut entropies = Vec::with_capacity(2 * heads);
    let mut indices = [Vec::with_capacity(heads), Vec::with_capacity(heads)];
    for (k, (ls, n)) in [(&lt, nt), (&lw, nw)].into_iter().enumerate() {
        for row in ls.chunks(n) {
            let i = match &mut pick {
                Pick::Sample(rng) => categorical(row, *rng),
                Pick::Greedy => argmax_lowest(row),
            };
            log_prob += row[i];
            entropies.push(entropy(row));
            indices[k].push(i);
        }
    }
    let [threshold_indices, window_indices] = indices;
    Ok(ActionSample {
        threshold_indices,
        window_indices,
        log_prob,
        entropies,
    })
}

/// Draws one index per categorical head from the softmax of its logits.
pub fn sample_actions<R: Rng + ?Sized>(
    threshold_logits: &[f64],
    window_logits: &[f64],
    grid: &ParamGrid,
    rng: &mut R,
) -> Result<ActionSample> {
    choose(threshold_logits, window_logits, grid, Pick::Sample(rng))
}

/// Most probable index per head; ties go to the lowest index.
pub fn greedy_actions(
    threshold_logits: &[f64],
    window_logits: &[f64],
    grid: &ParamGrid,
) -> Result<ActionSample> {
    choose::<rand::rngs::ThreadRng>(threshold_logits, window_logits, grid, Pick::Greedy)
}

/// Looks the chosen indices up in the grid, broadcasting shared choices to
/// every class.
pub fn actions_to_params(sample: &ActionSample, grid: &ParamGrid) -> Result<PostProcParams> {
    let heads = grid.heads_per_kind();
    if sample.threshold_indices.len() != heads || sample.window_indices.len() != heads {
        return Err(Error::contract(format!(
            "expected {heads} choices per head, got {} and {}",
            sample.threshold_indices.len(),
            sample.window_indices.len()
        )));
    }
    let lookup = |idx: usize, values: usize, what: &str| -> Result<usize> {
        if idx >= values {
            return Err(Error::contract(format!(
                "{what} index {idx} outside 0..{values}"
            )));
        }
        Ok(idx)
    };
    let mut thresholds = Vec::with_capacity(grid.num_classes);
    let mut windows = Vec::with_capacity(grid.num_classes);
    for c in 0..grid.num_classes {
        let h = if grid.class_dependent { c } else { 0 };
        let ti = lookup(
            sample.threshold_indices[h],
            grid.thresholds.len(),
            "threshold",
        )?;
        let wi = lookup(sample.window_indices[h], grid.windows.len(), "window")?;
        thresholds.push(grid.thresholds[ti]);
        windows.push(grid.windows[wi]);
    }
    PostProcParams::new(thresholds, windows)
}

/// Differentiable log-probability and total entropy of a chosen action.
#[derive(Clone, Copy, Debug)]
pub struct ActionTerms {
    pub log_prob: Var,
    pub entropy: Var,
}

/// Records `log π(a|s)` and `H(π(·|s))` for the heads of `out` on the tape.
pub fn action_terms(
    tape: &mut Tape,
    out: &PolicyOutput,
    sample: &ActionSample,
    grid: &ParamGrid,
) -> Result<ActionTerms> {
    let (nt, nw) = (grid.thresholds.len(), grid.windows.len());
    let lt = tape.log_softmax(out.threshold_logits, nt)?;
    let lw = tape.log_softmax(out.window_logits, nw)?;

    let ti: Vec<usize> = sample
        .threshold_indices
        .iter()
        .enumerate()
        .map(|(h, i)| h * nt + i)
        .collect();
    let wi: Vec<usize> = sample
        .window_indices
        .iter()
        .enumerate()
        .map(|(h, i)| h * nw + i)
        .collect();
    let pt = tape.gather(lt, ti)?;
    let pw = tape.gather(lw, wi)?;
    let st = tape.sum(pt)?;
    let sw = tape.sum(pw)?;
    let log_prob = tape.add(st, sw)?;

    let mut neg_entropy = Vec::with_capacity(2);
    for ls in [lt, lw] {
        let p = tape.exp(ls)?;
        let plogp = tape.mul(p, ls)?;
        neg_entropy.push(tape.sum(plogp)?);
    }
    let total = tape.add(neg_entropy[0], neg_entropy[1])?;
    let entropy = tape.scale(total, -1.0)?;
    Ok(ActionTerms { log_prob, entropy })
}
