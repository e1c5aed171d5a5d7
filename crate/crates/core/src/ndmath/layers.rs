use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tape::{GruVars, LinearVars, Tape, Var};
use super::tensor::Tensor;

/// Weights of one GRU layer. Input weights are `input × hidden`, recurrent
/// weights `hidden × hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruLayerParams {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bi = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        GruLayerParams {
            w_z: Tensor::uniform(&[input, hidden], bi, rng),
            w_r: Tensor::uniform(&[input, hidden], bi, rng),
            w_h: Tensor::uniform(&[input, hidden], bi, rng),
            u_z: Tensor::uniform(&[hidden, hidden], bh, rng),
            u_r: Tensor::uniform(&[hidden, hidden], bh, rng),
            u_h: Tensor::uniform(&[hidden, hidden], bh, rng),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayerParams {
            w_z: Tensor::zeros(&[input, hidden]),
            w_r: Tensor::zeros(&[input, hidden]),
            w_h: Tensor::zeros(&[input, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.b_z.len()
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden_size());
        for (k, t) in self.tensors().iter().enumerate() {
            let want: &[usize] = match k {
                0..=2 => &[i, h],
                3..=5 => &[h, h],
                _ => &[h],
            };
            if t.shape() != want {
                return Err(Error::dim(format!(
                    "gru tensor {k}: expected {:?}, got {:?}",
                    want,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> GruVars {
        let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h] =
            self.tensors().map(|t| tape.param(t.clone()));
        GruVars {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// `input × output`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        LinearParams {
            weight: Tensor::uniform(&[input, output], 1.0 / (input as f64).sqrt(), rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn output_size(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self, input: usize, output: usize) -> Result<()> {
        if self.weight.shape() != [input, output] || self.bias.shape() != [output] {
            return Err(Error::dim(format!(
                "linear: expected {input}x{output}, got weight {:?} bias {:?}",
                self.weight.shape(),
                self.bias.shape()
            )));
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

/// Evaluates `x W + b` on a fresh tape.
pub fn linear_forward(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = p.register(&mut tape);
    let y = tape.linear(xv, vars)?;
    Ok(tape.value(y).clone())
}

/// Evaluates one GRU step on a fresh tape.
pub fn gru_cell_forward(x: &Tensor, h_prev: &Tensor, p: &GruLayerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let vars = p.register(&mut tape);
    let y = tape.gru_cell(xv, hv, vars)?;
    Ok(tape.value(y).clone())
}

/// Evaluates a row-wise log-softmax of a vector.
pub fn log_softmax(v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(v.clone());
    let y = tape.log_softmax(x, v.len().max(1))?;
    Ok(tape.value(y).clone())
}

/// Runs a GRU layer over a sequence from a zero initial state and returns
/// every hidden state.
pub fn gru_sequence(
    tape: &mut Tape,
    inputs: &[Var],
    hidden: usize,
    p: GruVars,
) -> Result<Vec<Var>> {
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = tape.gru_cell(x, h, p)?;
        out.push(h);
    }
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain scalar-loop GRU, written independently of the tape.
    fn naive_gru(x: &[f64], h: &[f64], p: &GruLayerParams) -> Vec<f64> {
        let n = h.len();
        let m = x.len();
        let at = |t: &Tensor, i: usize, j: usize| t.data()[i * n + j];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut z = vec![0.0; n];
        let mut r = vec![0.0; n];
        for j in 0..n {
            let mut az = p.b_z.data()[j];
            let mut ar = p.b_r.data()[j];
            for i in 0..m {
                az += x[i] * at(&p.w_z, i, j);
                ar += x[i] * at(&p.w_r, i, j);
            }
            for i in 0..n {
                az += h[i] * at(&p.u_z, i, j);
                ar += h[i] * at(&p.u_r, i, j);
            }
            z[j] = sig(az);
            r[j] = sig(ar);
        }
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut a = p.b_h.data()[j];
            for i in 0..m {
                a += x[i] * at(&p.w_h, i, j);
            }
            for i in 0..n {
                a += r[i] * h[i] * at(&p.u_h, i, j);
            }
            let c = a.tanh();
            out[j] = (1.0 - z[j]) * c + z[j] * h[j];
        }
        out
    }

    #[test]
    fn zero_gru_halves_state() {
        let p = GruLayerParams::zeros(3, 4);
        let h = Tensor::vector(vec![0.7, -1.3, 2.0, 0.0]);
        let x = Tensor::vector(vec![5.0, -5.0, 1.0]);
        let out = gru_cell_forward(&x, &h, &p).unwrap();
        let want: Vec<f64> = h.data().iter().map(|v| 0.5 * v).collect();
        assert_eq!(out.data(), want.as_slice());

        let zero = gru_cell_forward(&x, &Tensor::zeros(&[4]), &p).unwrap();
        assert_eq!(zero.data(), &[0.0; 4]);
    }

    #[test]
    fn gru_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GruLayerParams::init(5, 32, &mut rng);
        for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            *b = Tensor::uniform(&[32], 0.5, &mut rng);
        }
        let x = Tensor::uniform(&[5], 1.0, &mut rng);
        let h = Tensor::uniform(&[32], 1.0, &mut rng);
        let got = gru_cell_forward(&x, &h, &p).unwrap();
        let want = naive_gru(x.data(), h.data(), &p);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn gru_shape_mismatch() {
        let p = GruLayerParams::zeros(3, 4);
        let err = gru_cell_forward(&Tensor::zeros(&[2]), &Tensor::zeros(&[4]), &p);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruLayerParams::init(4, 32, &mut rng);
        p.validate().unwrap();
        assert!(p.w_z.data().iter().all(|v| v.abs() <= 0.5));
        assert!(p.u_h.data().iter().all(|v| v.abs() <= 1.0 / 32f64.sqrt()));
        assert!(p.b_h.data().iter().all(|v| *v == 0.0));
    }
}
