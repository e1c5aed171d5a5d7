use crate::error::{Error, Result};

use super::tensor::{matvec_t_acc, outer_acc, vecmat_acc, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variables of one GRU layer on a tape, in the order
/// `w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug)]
struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    GruCell {
        x: Var,
        h: Var,
        p: GruVars,
        cache: Box<GruCache>,
    },
    LogSoftmax {
        input: Var,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Tensor>,
}

impl Gradients {
    /// Gradients of the registered parameters, in registration order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Gradient with respect to any recorded value; `None` if the loss does
    /// not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf. Gradients for parameters are returned in
    /// the order they were registered.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push(v);
        v
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x W + b` for a vector `x` of length `in`, `W` of shape
    /// `in × out` and `b` of length `out`.
    pub fn linear(&mut self, x: Var, p: LinearVars) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(p.weight), self.value(p.bias));
        if wv.shape().len() != 2 {
            return Err(Error::dim(format!(
                "linear weight must be a matrix, got {:?}",
                wv.shape()
            )));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        if xv.len() != rows || bv.len() != cols {
            return Err(Error::dim(format!(
                "linear: input {} / weight {}x{} / bias {}",
                xv.len(),
                rows,
                cols,
                bv.len()
            )));
        }
        let mut out = bv.data().to_vec();
        vecmat_acc(xv.data(), wv.data(), cols, &mut out);
        self.push(
            Tensor::vector(out),
            Op::Linear {
                x,
                w: p.weight,
                b: p.bias,
            },
        )
    }

    /// One GRU step:
    ///
    /// ```text
    /// z  = σ(x W_z + h U_z + b_z)
    /// r  = σ(x W_r + h U_r + b_r)
    /// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
    /// h' = (1 − z) ⊙ h~ + z ⊙ h
    /// ```
    pub fn gru_cell(&mut self, x: Var, h: Var, p: GruVars) -> Result<Var> {
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let hidden = hv.len();
        let input = xv.len();
        for (name, var, shape) in [
            ("w_z", p.w_z, [input, hidden]),
            ("w_r", p.w_r, [input, hidden]),
            ("w_h", p.w_h, [input, hidden]),
            ("u_z", p.u_z, [hidden, hidden]),
            ("u_r", p.u_r, [hidden, hidden]),
            ("u_h", p.u_h, [hidden, hidden]),
        ] {
            if self.value(var).shape() != shape {
                return Err(Error::dim(format!(
                    "gru {name}: expected {:?}, got {:?}",
                    shape,
                    self.value(var).shape()
                )));
            }
        }
        for (name, var) in [("b_z", p.b_z), ("b_r", p.b_r), ("b_h", p.b_h)] {
            if self.value(var).len() != hidden {
                return Err(Error::dim(format!(
                    "gru {name}: expected length {hidden}, got {}",
                    self.value(var).len()
                )));
            }
        }

        let gate = |w: Var, u: Var, b: Var, hin: &[f64]| -> Vec<f64> {
            let mut a = self.value(b).data().to_vec();
            vecmat_acc(xv, self.value(w).data(), hidden, &mut a);
            vecmat_acc(hin, self.value(u).data(), hidden, &mut a);
            a
        };
        let z: Vec<f64> = gate(p.w_z, p.u_z, p.b_z, hv)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = gate(p.w_r, p.u_r, p.b_r, hv)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(p.w_h, p.u_h, p.b_h, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out: Vec<f64> = (0..hidden)
            .map(|i| (1.0 - z[i]) * cand[i] + z[i] * hv[i])
            .collect();
        self.push(
            Tensor::vector(out),
            Op::GruCell {
                x,
                h,
                p,
                cache: Box::new(GruCache { z, r, cand, rh }),
            },
        )
    }

    /// Row-wise log-softmax over a tensor viewed as `len / cols` rows.
    pub fn log_softmax(&mut self, input: Var, cols: usize) -> Result<Var> {
        let v = self.value(input);
        if v.is_empty() || cols == 0 || !v.len().is_multiple_of(cols) {
            return Err(Error::dim(format!(
                "log_softmax: {} values into rows of {}",
                v.len(),
                cols
            )));
        }
        let out = log_softmax_rows(v.data(), cols);
        let shape = v.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::LogSoftmax { input, cols })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::dim(format!(
                "{name}: lengths {} and {}",
                av.len(),
                bv.len()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let t = self.unary(a, |x| x * k);
        self.push(t, Op::Scale(a, k))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Selects `input[indices[k]]` for every `k`.
    pub fn gather(&mut self, input: Var, indices: Vec<usize>) -> Result<Var> {
        let v = self.value(input);
        let mut out = Vec::with_capacity(indices.len());
        for &i in &indices {
            match v.data().get(i) {
                Some(x) => out.push(*x),
                None => {
                    return Err(Error::dim(format!(
                        "gather index {i} out of bounds for {} values",
                        v.len()
                    )))
                }
            }
        }
        self.push(Tensor::vector(out), Op::Gather { input, indices })
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not
    /// depend on receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss is not recorded on this tape"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .params
            .iter()
            .map(|&p| {
                let shape = self.value(p).shape().to_vec();
                match grads.get(p.0).and_then(|g| g.clone()) {
                    Some(g) => Tensor::new(shape, g).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let cols = g.len();
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                let dx = acc(grads, *x, xv.len());
                matvec_t_acc(wv, g, cols, dx);
                outer_acc(xv, g, acc(grads, *w, wv.len()));
                add_into(acc(grads, *b, cols), g);
            }
            Op::GruCell { x, h, p, cache } => self.gru_backward(*x, *h, p, cache, g, grads),
            Op::LogSoftmax { input, cols } => {
                let y = node.value.data();
                let dx = acc(grads, *input, y.len());
                for (row, (yr, gr)) in y.chunks(*cols).zip(g.chunks(*cols)).enumerate() {
                    let gsum: f64 = gr.iter().sum();
                    let d = &mut dx[row * cols..(row + 1) * cols];
                    for j in 0..*cols {
                        d[j] += gr[j] - yr[j].exp() * gsum;
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                let db = acc(grads, *b, g.len());
                for (d, gi) in db.iter_mut().zip(g) {
                    *d -= gi;
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                {
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                let db = acc(grads, *b, g.len());
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
            Op::Scale(a, k) => {
                let da = acc(grads, *a, g.len());
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi * k;
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * y[i];
                }
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += 2.0 * av[i] * g[i];
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let da = acc(grads, *a, n);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Gather { input, indices } => {
                let n = self.value(*input).len();
                let da = acc(grads, *input, n);
                for (k, &i) in indices.iter().enumerate() {
                    da[i] += g[k];
                }
            }
        }
    }

    fn gru_backward(
        &self,
        x: Var,
        h: Var,
        p: &GruVars,
        c: &GruCache,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let hidden = hv.len();

        let mut dh = vec![0.0; hidden];
        let mut da_z = vec![0.0; hidden];
        let mut da_c = vec![0.0; hidden];
        for i in 0..hidden {
            let (z, cand) = (c.z[i], c.cand[i]);
            dh[i] = g[i] * z;
            da_z[i] = g[i] * (hv[i] - cand) * z * (1.0 - z);
            da_c[i] = g[i] * (1.0 - z) * (1.0 - cand * cand);
        }

        // candidate path
        let mut d_rh = vec![0.0; hidden];
        matvec_t_acc(self.value(p.u_h).data(), &da_c, hidden, &mut d_rh);
        let mut da_r = vec![0.0; hidden];
        for i in 0..hidden {
            dh[i] += d_rh[i] * c.r[i];
            da_r[i] = d_rh[i] * hv[i] * c.r[i] * (1.0 - c.r[i]);
        }

        let mut dx = vec![0.0; xv.len()];
        for (w, u, b, da, hin) in [
            (p.w_z, p.u_z, p.b_z, &da_z, hv),
            (p.w_r, p.u_r, p.b_r, &da_r, hv),
            (p.w_h, p.u_h, p.b_h, &da_c, c.rh.as_slice()),
        ] {
            matvec_t_acc(self.value(w).data(), da, hidden, &mut dx);
            outer_acc(xv, da, acc(grads, w, xv.len() * hidden));
            outer_acc(hin, da, acc(grads, u, hidden * hidden));
            add_into(acc(grads, b, hidden), da);
        }
        // the reset-gate and update-gate paths also reach h through U_z, U_r
        matvec_t_acc(self.value(p.u_z).data(), &da_z, hidden, &mut dh);
        matvec_t_acc(self.value(p.u_r).data(), &da_r, hidden, &mut dh);

        add_into(acc(grads, x, xv.len()), &dx);
        add_into(acc(grads, h, hidden), &dh);
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Linear { .. } => "linear",
        Op::GruCell { .. } => "gru_cell",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Exp(..) => "exp",
        Op::Square(..) => "square",
        Op::Sum(..) => "sum",
        Op::Gather { .. } => "gather",
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted row-wise log-softmax.
pub fn log_softmax_rows(v: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| (x - max) - log_sum));
    }
    out
}
