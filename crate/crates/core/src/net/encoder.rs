//! Shared-weight 3D encoder used by both the image and the mask stream.

use rand_chacha::ChaCha8Rng;

use super::config::{NetConfig, LEVELS};
use super::layers::{spatial_dropout, Conv, DepthwiseConv};
use super::params::{Bound, Init, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};

/// Width the encoder expects at its first block.
pub const STREAM_CHANNELS: usize = 2;

/// Per-level features of one encoder pass, kept for skip aggregation and for
/// the decoder. Level `l` has spatial size `in_hw / 2^l`.
#[derive(Clone)]
pub struct FeaturePyramid {
    /// What entered block `l` (after any skip aggregation).
    pub inputs: Vec<Var>,
    /// Block `l` output before pooling.
    pub outputs: Vec<Var>,
}

/// One atrous-separable block: for each rate a depthwise dilated conv then a
/// pointwise conv; the branch outputs are concatenated along channels and
/// projected back to the level width.
struct Block {
    branches: Vec<(DepthwiseConv, Conv)>,
    /// Column blocks of the 1×1×1 projection over the concatenation, one per branch.
    /// The first block carries the shared bias.
    proj: Vec<Conv>,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, cfg: &NetConfig) -> Self {
        let mut branches = Vec::new();
        let mut proj = Vec::new();
        let cat = cout * cfg.atrous_rates.len();
        for &r in &cfg.atrous_rates {
            let dw = DepthwiseConv::new(store, &format!("{name}.dw{r}"), cin, cfg.kernel, r);
            let pw = Conv::pointwise(store, &format!("{name}.pw{r}"), cin, cout, true);
            branches.push((dw, pw));
        }
        let proj_bias = store.register(format!("{name}.proj.b"), &[cout], Init::Zeros);
        for (i, &r) in cfg.atrous_rates.iter().enumerate() {
            let w = store.register(
                format!("{name}.proj{r}.w"),
                &[cout, cout, 1, 1, 1],
                Init::FanInUniform { fan_in: cat },
            );
            proj.push(Conv::from_parts(w, (i == 0).then_some(proj_bias)));
        }
        Block { branches, proj }
    }

    fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        // proj(concat(b_1..b_n)) is evaluated as Σ proj_i(b_i) so only one
        // branch output is alive at a time when nothing is recorded.
        let mut acc: Option<Var> = None;
        for ((dw, pw), pj) in self.branches.iter().zip(&self.proj) {
            let b = g.relu(&pw.forward(g, p, &dw.forward(g, p, x)));
            let term = pj.forward(g, p, &b);
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(&a, &term),
            });
        }
        g.relu(&acc.expect("at least one atrous rate"))
    }
}

pub struct Encoder {
    stem: Conv,
    blocks: Vec<Block>,
    skip_proj: Vec<Conv>,
    dropout: f64,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &NetConfig) -> Self {
        let stem = Conv::pointwise(store, "encoder.stem", 1, STREAM_CHANNELS, true);
        let mut blocks = Vec::new();
        let mut skip_proj = Vec::new();
        let mut cin = STREAM_CHANNELS;
        for l in 0..LEVELS {
            skip_proj.push(Conv::pointwise(store, &format!("encoder.skip{l}"), cin, cin, true));
            blocks.push(Block::new(store, &format!("encoder.block{l}"), cin, cfg.channels[l], cfg));
            cin = cfg.channels[l];
        }
        Encoder {
            stem,
            blocks,
            skip_proj,
            dropout: cfg.dropout.encoder,
        }
    }

    /// `x` is `[1, w, H, W]` (image) or `[2, w, H, W]` (mask). When `skips_in`
    /// is given, each block input is summed with a width-matched projection of
    /// the corresponding block input of that pyramid.
    pub fn forward(
        &self,
        g: &Graph,
        p: &Bound,
        x: &Var,
        skips_in: Option<&FeaturePyramid>,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, FeaturePyramid)> {
        let [c, _, h, w] = x.value().dims4();
        if h % (1 << LEVELS) != 0 || w % (1 << LEVELS) != 0 {
            return Err(shape_err(format!("encoder input {h}x{w} is not divisible by 32")));
        }
        let mut hcur = match c {
            1 => self.stem.forward(g, p, x),
            STREAM_CHANNELS => x.clone(),
            _ => return Err(shape_err(format!("encoder expects 1 or 2 input channels, got {c}"))),
        };
        let mut pyr = FeaturePyramid {
            inputs: Vec::with_capacity(LEVELS),
            outputs: Vec::with_capacity(LEVELS),
        };
        for l in 0..LEVELS {
            if let Some(sk) = skips_in {
                let s = sk
                    .inputs
                    .get(l)
                    .ok_or_else(|| shape_err(format!("skip pyramid has no level {l}")))?;
                if s.shape() != hcur.shape() {
                    return Err(shape_err(format!(
                        "skip level {l} shape {:?} does not match stream {:?}",
                        s.shape(),
                        hcur.shape()
                    )));
                }
                hcur = g.add(&hcur, &self.skip_proj[l].forward(g, p, s));
            }
            pyr.inputs.push(hcur.clone());
            let out = self.blocks[l].forward(g, p, &hcur);
            let out = spatial_dropout(g, &out, self.dropout, rng);
            hcur = g.maxpool(&out);
            pyr.outputs.push(out);
        }
        Ok((hcur, pyr))
    }
}
