//! Global feature matching between the image and mask bottlenecks.
//!
//! Two factorised large-kernel chains, `[w×1×1]→[1×f×1]→[1×1×f]` and
//! `[w×1×1]→[1×1×f]→[1×f×1]`, run over the channel-concatenated streams and
//! are summed, then refined by one pre-activation residual block.

use super::config::NetConfig;
use super::layers::Conv;
use super::params::{Bound, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};

pub struct GlobalMatch {
    chain_a: [Conv; 3],
    chain_b: [Conv; 3],
    res: [Conv; 2],
}

impl GlobalMatch {
    pub fn new(store: &mut ParamStore, cfg: &NetConfig) -> Self {
        let k = cfg.channels[cfg.channels.len() - 1];
        let (w, f) = (cfg.w, cfg.bottleneck_hw());
        let depth = [w, 1, 1];
        let rows = [1, f, 1];
        let cols = [1, 1, f];
        GlobalMatch {
            chain_a: [
                Conv::new(store, "fusion.a1", 2 * k, k, depth, true),
                Conv::new(store, "fusion.a2", k, k, rows, true),
                Conv::new(store, "fusion.a3", k, k, cols, true),
            ],
            chain_b: [
                Conv::new(store, "fusion.b1", 2 * k, k, depth, true),
                Conv::new(store, "fusion.b2", k, k, cols, true),
                Conv::new(store, "fusion.b3", k, k, rows, true),
            ],
            res: [
                Conv::new(store, "fusion.res1", k, k, [3, 3, 3], true),
                Conv::new(store, "fusion.res2", k, k, [3, 3, 3], true),
            ],
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, fv: &Var, fm: &Var) -> Result<Var> {
        if fv.shape() != fm.shape() {
            return Err(shape_err(format!(
                "fusion inputs differ: {:?} vs {:?}",
                fv.shape(),
                fm.shape()
            )));
        }
        let cat = g.concat(&[fv, fm]);
        let run = |chain: &[Conv; 3]| {
            chain
                .iter()
                .fold(cat.clone(), |h, conv| conv.forward(g, p, &h))
        };
        let s = g.add(&run(&self.chain_a), &run(&self.chain_b));
        let r = self.res[0].forward(g, p, &g.relu(&s));
        let r = self.res[1].forward(g, p, &g.relu(&r));
        Ok(g.add(&s, &r))
    }
}
