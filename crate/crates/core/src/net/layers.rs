use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autograd::{ConvGeom, Graph, Var};

/// Dense 3D convolution with bias and "same" padding.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    geom: ConvGeom,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        bias: bool,
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let w = store.register(
            format!("{name}.w"),
            &[cout, cin, kernel[0], kernel[1], kernel[2]],
            Init::FanInUniform { fan_in },
        );
        let b = bias.then(|| store.register(format!("{name}.b"), &[cout], Init::Zeros));
        Conv {
            w,
            b,
            geom: ConvGeom::same(kernel, [1, 1, 1]),
        }
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(store, name, cin, cout, [1, 1, 1], bias)
    }

    /// 1×1×1 convolution over already registered tensors.
    pub fn from_parts(w: ParamId, b: Option<ParamId>) -> Self {
        Conv {
            w,
            b,
            geom: ConvGeom::valid(),
        }
    }

    /// Like [`Conv::new`] but with a custom bias initialisation.
    pub fn with_bias(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: [usize; 3], init: Init) -> Self {
        let mut c = Self::new(store, name, cin, cout, kernel, false);
        c.b = Some(store.register(format!("{name}.b"), &[cout], init));
        c
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        g.conv(x, p.get(self.w), self.b.map(|b| p.get(b)), self.geom)
    }
}

/// Depthwise dilated 3D convolution.
#[derive(Clone, Debug)]
pub(crate) struct DepthwiseConv {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl DepthwiseConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rate: usize) -> Self {
        let k = [kernel; 3];
        let w = store.register(
            format!("{name}.w"),
            &[channels, kernel, kernel, kernel],
            Init::FanInUniform {
                fan_in: kernel * kernel * kernel,
            },
        );
        let b = store.register(format!("{name}.b"), &[channels], Init::Zeros);
        DepthwiseConv {
            w,
            b,
            geom: ConvGeom::same(k, [rate; 3]),
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        g.depthwise(x, p.get(self.w), Some(p.get(self.b)), self.geom)
    }
}

/// Transposed convolution doubling H and W.
#[derive(Clone, Debug)]
pub(crate) struct UpConv {
    w: ParamId,
    b: ParamId,
}

impl UpConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        let w = store.register(format!("{name}.w"), &[cin, cout, 2, 2], Init::FanInUniform { fan_in: cin });
        let b = store.register(format!("{name}.b"), &[cout], Init::Zeros);
        UpConv { w, b }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        g.upconv(x, p.get(self.w), Some(p.get(self.b)))
    }
}

/// Spatial dropout: zeroes whole channels with probability `p` and rescales
/// the survivors. A no-op without an RNG (evaluation mode).
pub(crate) fn spatial_dropout(g: &Graph, x: &Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    match rng.as_deref_mut() {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let factors = (0..x.shape()[0])
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            g.channel_scale(x, factors)
        }
        _ => x.clone(),
    }
}
