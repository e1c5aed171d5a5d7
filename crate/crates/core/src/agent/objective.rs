use crate::error::{Error, Result};
use crate::ndmath::{Tape, Tensor, Var};

/// Loss and its parts, each averaged over the batch.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub loss: Var,
    pub policy_loss: f64,
    pub entropy: f64,
    pub value_loss: f64,
}

/// Actor-critic loss `-mean(log π · A) - β mean(H) + w mean((V - target)²)`
/// over recorded log-probabilities, entropies and value predictions.
/// Advantages and targets enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn pg_objective(
    tape: &mut Tape,
    logps: &[Var],
    advantages: &[f64],
    entropies: &[Var],
    entropy_weight: f64,
    values: &[Var],
    targets: &[f64],
    value_weight: f64,
) -> Result<Objective> {
    let n = logps.len();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    if [
        advantages.len(),
        entropies.len(),
        values.len(),
        targets.len(),
    ]
    .iter()
    .any(|&k| k != n)
    {
        return Err(Error::contract(format!(
            "batch lengths differ: {n} log-probs, {} advantages, {} entropies, {} values, {} targets",
            advantages.len(),
            entropies.len(),
            values.len(),
            targets.len()
        )));
    }
    if advantages.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("advantage or value target".into()));
    }
    let nf = n as f64;
    let (mut policy_loss, mut entropy, mut value_loss) = (0.0, 0.0, 0.0);
    let mut total: Option<Var> = None;
    for k in 0..n {
        let pg = tape.scale(logps[k], -advantages[k] / nf)?;
        let ent = tape.scale(entropies[k], -entropy_weight / nf)?;
        let target = tape.constant(Tensor::scalar(targets[k]));
        let diff = tape.sub(values[k], target)?;
        let sq = tape.square(diff)?;
        let sq = tape.sum(sq)?;
        let vl = tape.scale(sq, value_weight / nf)?;

        policy_loss += tape.value(pg).item()?;
        entropy += tape.value(entropies[k]).item()? / nf;
        value_loss += tape.value(sq).item()? / nf;

        let a = tape.add(pg, ent)?;
        let step = tape.add(a, vl)?;
        total = Some(match total {
            Some(t) => tape.add(t, step)?,
            None => step,
        });
    }
    Ok(Objective {
        loss: total.expect("non-empty batch"),
        policy_loss,
        entropy,
        value_loss,
    })
}
