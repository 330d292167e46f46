//! Bidirectional convolutional LSTM over the window's depth axis, with a
//! single cell reused for both directions.

use super::config::NetConfig;
use super::layers::Conv;
use super::params::{Bound, Init, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};

/// Hidden and cell state, each `[k, 1, f, f]`.
#[derive(Clone)]
pub struct Carry {
    pub h: Var,
    pub c: Var,
}

impl Carry {
    pub fn detach(&self) -> Carry {
        Carry {
            h: self.h.detach(),
            c: self.c.detach(),
        }
    }
}

pub struct BiClstmOutput {
    /// Input plus both directions' hidden states.
    pub merged: Var,
    pub forward_h: Var,
    pub backward_h: Var,
    /// Terminal state of the forward pass.
    pub carry: Carry,
}

pub struct ConvLstmCell {
    gates: Conv,
    hidden: usize,
}

impl ConvLstmCell {
    pub fn new(store: &mut ParamStore, cfg: &NetConfig) -> Self {
        let k = cfg.channels[cfg.channels.len() - 1];
        ConvLstmCell {
            gates: Conv::with_bias(
                store,
                "clstm.gates",
                2 * k,
                4 * k,
                [1, 3, 3],
                Init::ForgetGateBias { hidden: k },
            ),
            hidden: k,
        }
    }

    /// One cell update on a `[k, 1, f, f]` frame.
    fn step(&self, g: &Graph, p: &Bound, x: &Var, st: &Carry) -> Carry {
        let k = self.hidden;
        let z = self.gates.forward(g, p, &g.concat(&[x, &st.h]));
        let i = g.sigmoid(&g.slice_channels(&z, 0, k));
        let f = g.sigmoid(&g.slice_channels(&z, k, k));
        let o = g.sigmoid(&g.slice_channels(&z, 2 * k, k));
        let cand = g.tanh(&g.slice_channels(&z, 3 * k, k));
        let c = g.add(&g.mul(&f, &st.c), &g.mul(&i, &cand));
        let h = g.mul(&o, &g.tanh(&c));
        Carry { h, c }
    }

    fn zero_state(&self, frame_shape: &[usize]) -> Carry {
        let mut shape = frame_shape.to_vec();
        shape[0] = self.hidden;
        let z = Graph::constant(crate::autograd::Tensor::zeros(&shape));
        Carry { h: z.clone(), c: z }
    }

    /// Forward pass from `carry_in` (zero if absent), backward pass from zero,
    /// outputs merged residually with the input.
    pub fn bidirectional(&self, g: &Graph, p: &Bound, x: &Var, carry_in: Option<&Carry>) -> Result<BiClstmOutput> {
        let [k, depth, f1, f2] = x.value().dims4();
        if k != self.hidden {
            return Err(shape_err(format!("Bi-CLSTM expects {} channels, got {k}", self.hidden)));
        }
        let frame = [k, 1, f1, f2];
        let frames: Vec<Var> = (0..depth).map(|d| g.slice_depth(x, d)).collect();
        let mut st = match carry_in {
            Some(c) => {
                if c.h.shape() != frame || c.c.shape() != frame {
                    return Err(shape_err(format!(
                        "carry shape {:?} does not match frame {frame:?}",
                        c.h.shape()
                    )));
                }
                c.clone()
            }
            None => self.zero_state(&frame),
        };
        let mut fwd = Vec::with_capacity(depth);
        for fr in &frames {
            st = self.step(g, p, fr, &st);
            fwd.push(st.h.clone());
        }
        let carry = st;
        let mut bst = self.zero_state(&frame);
        let mut bwd = vec![None; depth];
        for d in (0..depth).rev() {
            bst = self.step(g, p, &frames[d], &bst);
            bwd[d] = Some(bst.h.clone());
        }
        let forward_h = g.stack_depth(&fwd);
        let backward_h = g.stack_depth(&bwd.into_iter().map(Option::unwrap).collect::<Vec<_>>());
        let merged = g.add(&g.add(x, &forward_h), &backward_h);
        Ok(BiClstmOutput {
            merged,
            forward_h,
            backward_h,
            carry,
        })
    }
}
