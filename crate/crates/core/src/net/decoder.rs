//! Decoder: five 2× transposed convolutions, each followed by a refinement
//! merge with the matching mask-stream encoder level, then a 1×1×1 head and
//! a per-voxel softmax over (foreground, background).

use rand_chacha::ChaCha8Rng;

use super::config::{NetConfig, LEVELS};
use super::encoder::FeaturePyramid;
use super::layers::{spatial_dropout, Conv, UpConv};
use super::params::{Bound, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};

struct Refine {
    up: UpConv,
    skip: Conv,
    merge: Conv,
}

pub struct Decoder {
    /// Indexed by encoder level.
    levels: Vec<Refine>,
    head: Conv,
    dropout: f64,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &NetConfig) -> Self {
        let ch = &cfg.channels;
        let levels = (0..LEVELS)
            .map(|l| {
                let cin = if l + 1 < LEVELS { ch[l + 1] } else { ch[LEVELS - 1] };
                Refine {
                    up: UpConv::new(store, &format!("decoder.up{l}"), cin, ch[l]),
                    skip: Conv::pointwise(store, &format!("decoder.skip{l}"), ch[l], ch[l], true),
                    merge: Conv::new(store, &format!("decoder.merge{l}"), ch[l], ch[l], [3, 3, 3], true),
                }
            })
            .collect();
        Decoder {
            levels,
            head: Conv::pointwise(store, "decoder.head", ch[0], 2, true),
            dropout: cfg.dropout.decoder,
        }
    }

    /// `z` is the recurrent output at bottleneck resolution; returns `[2, w, H, W]`
    /// probabilities with channel 0 the foreground.
    pub fn forward(
        &self,
        g: &Graph,
        p: &Bound,
        z: &Var,
        skips: &FeaturePyramid,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if skips.outputs.len() != LEVELS {
            return Err(shape_err(format!(
                "decoder needs {LEVELS} pyramid levels, got {}",
                skips.outputs.len()
            )));
        }
        let mut h = z.clone();
        for l in (0..LEVELS).rev() {
            let lvl = &self.levels[l];
            let up = lvl.up.forward(g, p, &h);
            let sk = &skips.outputs[l];
            if sk.shape() != up.shape() {
                return Err(shape_err(format!(
                    "pyramid level {l} is {:?}, upsampled features are {:?}",
                    sk.shape(),
                    up.shape()
                )));
            }
            let s = g.relu(&lvl.skip.forward(g, p, sk));
            h = g.relu(&lvl.merge.forward(g, p, &g.add(&up, &s)));
            h = spatial_dropout(g, &h, self.dropout, rng);
        }
        Ok(g.softmax_channels(&self.head.forward(g, p, &h)))
    }
}
