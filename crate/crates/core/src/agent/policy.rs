use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PosteriorClip;
use crate::error::{Error, Result};
use crate::ndmath::{
    gru_sequence, GruLayerParams, GruVars, LinearParams, LinearVars, Tape, Tensor, Var,
};
use crate::postproc::ParamGrid;

/// Hidden size of both GRU layers.
pub const HIDDEN_SIZE: usize = 32;

/// Sizes of the network, derived from the parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub num_classes: usize,
    pub num_thresholds: usize,
    pub num_windows: usize,
    pub class_dependent: bool,
    pub hidden: usize,
}

impl PolicyShape {
    pub fn for_grid(grid: &ParamGrid) -> Self {
        PolicyShape {
            num_classes: grid.num_classes,
            num_thresholds: grid.thresholds.len(),
            num_windows: grid.windows.len(),
            class_dependent: grid.class_dependent,
            hidden: HIDDEN_SIZE,
        }
    }

    /// Categorical distributions per head kind.
    pub fn heads(&self) -> usize {
        if self.class_dependent {
            self.num_classes
        } else {
            1
        }
    }

    pub fn matches(&self, grid: &ParamGrid) -> bool {
        let g = PolicyShape::for_grid(grid);
        g.num_classes == self.num_classes
            && g.num_thresholds == self.num_thresholds
            && g.num_windows == self.num_windows
            && g.class_dependent == self.class_dependent
    }
}

/// Two stacked GRU layers feeding a threshold head, a window head and a
/// scalar value head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub gru1: GruLayerParams,
    pub gru2: GruLayerParams,
    pub threshold_head: LinearParams,
    pub window_head: LinearParams,
    pub value_head: LinearParams,
}

/// The policy's parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub gru1: GruVars,
    pub gru2: GruVars,
    pub threshold_head: LinearVars,
    pub window_head: LinearVars,
    pub value_head: LinearVars,
}

/// Head outputs of one forward pass; logits are pre-softmax.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    pub threshold_logits: Var,
    pub window_logits: Var,
    pub value: Var,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(shape: PolicyShape, rng: &mut R) -> Self {
        let h = shape.hidden;
        PolicyParams {
            shape,
            gru1: GruLayerParams::init(shape.num_classes, h, rng),
            gru2: GruLayerParams::init(h, h, rng),
            threshold_head: LinearParams::init(h, shape.heads() * shape.num_thresholds, rng),
            window_head: LinearParams::init(h, shape.heads() * shape.num_windows, rng),
            value_head: LinearParams::init(h, 1, rng),
        }
    }

    pub fn zeros(shape: PolicyShape) -> Self {
        let h = shape.hidden;
        PolicyParams {
            shape,
            gru1: GruLayerParams::zeros(shape.num_classes, h),
            gru2: GruLayerParams::zeros(h, h),
            threshold_head: LinearParams::zeros(h, shape.heads() * shape.num_thresholds),
            window_head: LinearParams::zeros(h, shape.heads() * shape.num_windows),
            value_head: LinearParams::zeros(h, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        self.gru1.validate()?;
        self.gru2.validate()?;
        if self.gru1.input_size() != s.num_classes
            || self.gru1.hidden_size() != s.hidden
            || self.gru2.input_size() != s.hidden
            || self.gru2.hidden_size() != s.hidden
        {
            return Err(Error::dim("GRU layer sizes do not match the policy shape"));
        }
        self.threshold_head
            .validate(s.hidden, s.heads() * s.num_thresholds)?;
        self.window_head
            .validate(s.hidden, s.heads() * s.num_windows)?;
        self.value_head.validate(s.hidden, 1)
    }

    /// All tensors in a fixed order; [`PolicyParams::register`] uses the same
    /// order, so tape gradients line up with this list.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.gru1.tensors().into_iter().collect();
        v.extend(self.gru2.tensors());
        for head in [&self.threshold_head, &self.window_head, &self.value_head] {
            v.push(&head.weight);
            v.push(&head.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.gru1.tensors_mut().into_iter().collect();
        v.extend(self.gru2.tensors_mut());
        for head in [
            &mut self.threshold_head,
            &mut self.window_head,
            &mut self.value_head,
        ] {
            v.push(&mut head.weight);
            v.push(&mut head.bias);
        }
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn register(&self, tape: &mut Tape) -> PolicyVars {
        PolicyVars {
            gru1: self.gru1.register(tape),
            gru2: self.gru2.register(tape),
            threshold_head: self.threshold_head.register(tape),
            window_head: self.window_head.register(tape),
            value_head: self.value_head.register(tape),
        }
    }

    /// Rebuilds a parameter set from tensors listed in [`PolicyParams::tensors`]
    /// order.
    pub fn from_tensors(shape: PolicyShape, tensors: &[Tensor]) -> Result<Self> {
        let mut p = PolicyParams::zeros(shape);
        if tensors.len() != p.tensors().len() {
            return Err(Error::dim(format!(
                "{} tensors for a policy with {}",
                tensors.len(),
                p.tensors().len()
            )));
        }
        for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
            *dst = src.clone();
        }
        p.validate()?;
        Ok(p)
    }
}

impl PolicyVars {
    /// Inverse of registration for variables in [`PolicyParams::tensors`]
    /// order.
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        if v.len() != 24 {
            return Err(Error::dim(format!(
                "expected 24 policy variables, got {}",
                v.len()
            )));
        }
        let gru = |o: usize| GruVars {
            w_z: v[o],
            w_r: v[o + 1],
            w_h: v[o + 2],
            u_z: v[o + 3],
            u_r: v[o + 4],
            u_h: v[o + 5],
            b_z: v[o + 6],
            b_r: v[o + 7],
            b_h: v[o + 8],
        };
        let lin = |o: usize| LinearVars {
            weight: v[o],
            bias: v[o + 1],
        };
        Ok(PolicyVars {
            gru1: gru(0),
            gru2: gru(9),
            threshold_head: lin(18),
            window_head: lin(20),
            value_head: lin(22),
        })
    }
}

/// Records a forward pass over one clip: the frames run through both GRU
/// layers from zero states and the last hidden state feeds the heads.
pub fn policy_forward_on(
    tape: &mut Tape,
    vars: &PolicyVars,
    shape: &PolicyShape,
    clip: &PosteriorClip,
) -> Result<PolicyOutput> {
    if clip.num_classes() != shape.num_classes {
        return Err(Error::dim(format!(
            "policy for {} classes, clip {} has {}",
            shape.num_classes,
            clip.clip_id,
            clip.num_classes()
        )));
    }
    if clip.num_frames() == 0 {
        return Err(Error::dim(format!("clip {} has no frames", clip.clip_id)));
    }
    let inputs: Vec<Var> = (0..clip.num_frames())
        .map(|t| tape.constant(Tensor::vector(clip.posteriors.row(t).to_vec())))
        .collect();
    let h1 = gru_sequence(tape, &inputs, shape.hidden, vars.gru1)?;
    let h2 = gru_sequence(tape, &h1, shape.hidden, vars.gru2)?;
    let last = *h2.last().expect("non-empty sequence");
    Ok(PolicyOutput {
        threshold_logits: tape.linear(last, vars.threshold_head)?,
        window_logits: tape.linear(last, vars.window_head)?,
        value: tape.linear(last, vars.value_head)?,
    })
}

/// Plain forward pass: threshold logits, window logits and the value.
pub fn policy_forward(
    clip: &PosteriorClip,
    params: &PolicyParams,
) -> Result<(Tensor, Tensor, f64)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = policy_forward_on(&mut tape, &vars, &params.shape, clip)?;
    Ok((
        tape.value(out.threshold_logits).clone(),
        tape.value(out.window_logits).clone(),
        tape.value(out.value).item()?,
    ))
}
