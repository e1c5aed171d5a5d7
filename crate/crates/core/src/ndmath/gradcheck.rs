use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compares the tape's gradients against central finite differences.
///
/// `forward` receives a fresh tape and the registered parameter variables
/// (in the order of `params`) and must return a scalar loss. The result is
/// the maximum over all parameter entries of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(forward: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = forward(&mut tape, &vars)?;
        Ok((tape, loss))
    };

    let (tape, loss) = eval(params)?;
    let base = tape.value(loss).item()?;
    let analytic = tape.backward(loss)?.into_params();

    let (tape2, loss2) = eval(params)?;
    let again = tape2.value(loss2).item()?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::UnreliableCheck(format!(
            "forward gave {base} then {again} for identical parameters"
        )));
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let orig = params[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let (t, l) = eval(&work)?;
            let plus = t.value(l).item()?;
            work[k].data_mut()[i] = orig - eps;
            let (t, l) = eval(&work)?;
            let minus = t.value(l).item()?;
            work[k].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
