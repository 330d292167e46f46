use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::clstm::{Carry, ConvLstmCell};
use super::config::NetConfig;
use super::decoder::Decoder;
use super::encoder::{Encoder, FeaturePyramid};
use super::fusion::GlobalMatch;
use super::layers::spatial_dropout;
use super::params::{Bound, ParamStore};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::loss::LossParams;

/// The full network: one encoder used by both streams, the fusion block, one
/// recurrent cell used in both directions, and the decoder.
pub struct IfssNet {
    cfg: NetConfig,
    encoder: Encoder,
    fusion: GlobalMatch,
    clstm: ConvLstmCell,
    decoder: Decoder,
}

/// Intermediate values of one step, exposed for probes and tests.
pub struct StepOutput {
    /// `[2, w, H, W]`, channel 0 foreground.
    pub probs: Var,
    pub carry: Carry,
    pub image_bottleneck: Var,
    pub mask_bottleneck: Var,
    pub fused: Var,
}

impl std::fmt::Debug for IfssNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IfssNet").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl IfssNet {
    /// Builds the layer graph and a parameter store holding only specs.
    pub fn new(cfg: &NetConfig) -> Result<(IfssNet, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let encoder = Encoder::new(&mut store, cfg);
        let fusion = GlobalMatch::new(&mut store, cfg);
        let clstm = ConvLstmCell::new(&mut store, cfg);
        let decoder = Decoder::new(&mut store, cfg);
        Ok((
            IfssNet {
                cfg: cfg.clone(),
                encoder,
                fusion,
                clstm,
                decoder,
            },
            store,
        ))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Runs the image stream alone; used to inspect the bottleneck.
    pub fn encode_image(&self, g: &Graph, p: &Bound, v: &Var) -> Result<(Var, FeaturePyramid)> {
        self.encoder.forward(g, p, v, None, &mut None)
    }

    fn check_input(&self, v: &Var, m: &Var) -> Result<()> {
        let c = &self.cfg;
        let want_v = [1, c.w, c.in_hw, c.in_hw];
        let want_m = [2, c.w, c.in_hw, c.in_hw];
        if v.shape() != want_v || m.shape() != want_m {
            return Err(shape_err(format!(
                "step expects image {want_v:?} and mask {want_m:?}, got {:?} and {:?}",
                v.shape(),
                m.shape()
            )));
        }
        Ok(())
    }

    /// One recurrence step. `rng` enables dropout (training mode).
    pub fn forward_step(
        &self,
        g: &Graph,
        p: &Bound,
        v: &Var,
        m_prev: &Var,
        carry: Option<&Carry>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepOutput> {
        self.check_input(v, m_prev)?;
        let mut rng = rng;
        let (fv, pyr_v) = self.encoder.forward(g, p, v, None, &mut rng)?;
        let (fm, pyr_m) = self.encoder.forward(g, p, m_prev, Some(&pyr_v), &mut rng)?;
        drop(pyr_v);
        let fused = self.fusion.forward(g, p, &fv, &fm)?;
        let rec = self.clstm.bidirectional(g, p, &fused, carry)?;
        let z = spatial_dropout(g, &rec.merged, self.cfg.dropout.recurrent, &mut rng);
        let probs = self.decoder.forward(g, p, &z, &pyr_m, &mut rng)?;
        Ok(StepOutput {
            probs,
            carry: rec.carry,
            image_bottleneck: fv,
            mask_bottleneck: fm,
            fused,
        })
    }
}

/// Recurrent state between steps, as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CarryState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CarryState {
    pub fn from_carry(c: &Carry) -> Self {
        CarryState {
            h: c.h.value().clone(),
            c: c.c.value().clone(),
        }
    }

    pub fn to_carry(&self) -> Carry {
        Carry {
            h: Graph::constant(self.h.clone()),
            c: Graph::constant(self.c.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, driven by the state's RNG.
    Train,
    /// Deterministic.
    Eval,
}

/// Everything needed to run or resume the model.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: NetConfig,
    pub params: ParamStore,
    pub loss: LossParams,
    /// `None` is the zero state.
    pub carry: Option<CarryState>,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    /// State with parameter specs but no values; stepping it is an error.
    pub fn uninit(config: &NetConfig) -> Result<(IfssNet, ModelState)> {
        let (net, params) = IfssNet::new(config)?;
        Ok((
            net,
            ModelState {
                config: config.clone(),
                params,
                loss: LossParams::default(),
                carry: None,
                rng: ChaCha8Rng::seed_from_u64(0),
            },
        ))
    }

    /// Freshly initialised parameters drawn from `seed`.
    pub fn init(config: &NetConfig, seed: u64) -> Result<(IfssNet, ModelState)> {
        let (net, mut st) = Self::uninit(config)?;
        st.rng = ChaCha8Rng::seed_from_u64(seed);
        st.params.initialize(&mut st.rng);
        Ok((net, st))
    }

    pub fn reset_carry(&mut self) {
        self.carry = None;
    }
}

/// Advances the recurrence by one window without recording gradients.
/// `v` is `[1, w, H, W]`, `m_prev` is `[2, w, H, W]`; returns `[2, w, H, W]`.
pub fn model_step(net: &IfssNet, v: &Tensor, m_prev: &Tensor, state: &mut ModelState, mode: Mode) -> Result<Tensor> {
    if !state.params.is_initialized() {
        return Err(Error::Uninitialized("parameters have no values"));
    }
    if net.config() != &state.config {
        return Err(shape_err("network and state configurations differ"));
    }
    let g = Graph::no_grad();
    let p = state.params.bind(&g);
    let carry = state.carry.as_ref().map(CarryState::to_carry);
    let rng = match mode {
        Mode::Train => Some(&mut state.rng),
        Mode::Eval => None,
    };
    let out = net.forward_step(
        &g,
        &p,
        &Graph::constant(v.clone()),
        &Graph::constant(m_prev.clone()),
        carry.as_ref(),
        rng,
    )?;
    state.carry = Some(CarryState::from_carry(&out.carry));
    Ok(out.probs.value().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            in_hw: 32,
            channels: vec![2, 2, 2, 2, 4],
            ..Default::default()
        }
    }

    fn random_inputs(cfg: &NetConfig, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.w * cfg.in_hw * cfg.in_hw;
        let v = Tensor::from_vec(&[1, cfg.w, cfg.in_hw, cfg.in_hw], (0..n).map(|_| rng.random()).collect());
        let fg: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        let mut m = fg.clone();
        m.extend(fg.iter().map(|x| 1.0 - x));
        (v, Tensor::from_vec(&[2, cfg.w, cfg.in_hw, cfg.in_hw], m))
    }

    #[test]
    fn desk_shapes_and_normalisation() {
        let cfg = NetConfig::default();
        let (net, mut st) = ModelState::init(&cfg, 1).unwrap();
        let (v, m) = random_inputs(&cfg, 2);
        let y = model_step(&net, &v, &m, &mut st, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 3, 64, 64]);
        let n = y.len() / 2;
        for i in 0..n {
            let (a, b) = (y.data()[i], y.data()[n + i]);
            assert!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0);
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uninitialised_state_is_rejected() {
        let cfg = tiny();
        let (net, mut st) = ModelState::uninit(&cfg).unwrap();
        let (v, m) = random_inputs(&cfg, 0);
        let err = model_step(&net, &v, &m, &mut st, Mode::Eval).unwrap_err();
        assert_eq!(err.kind(), "uninitialized");
    }

    #[test]
    fn eval_is_deterministic_and_carry_matters() {
        let cfg = tiny();
        let (net, st0) = ModelState::init(&cfg, 3).unwrap();
        let (v, m) = random_inputs(&cfg, 4);
        let mut a = st0.clone();
        let mut b = st0.clone();
        let ya = model_step(&net, &v, &m, &mut a, Mode::Eval).unwrap();
        let yb = model_step(&net, &v, &m, &mut b, Mode::Eval).unwrap();
        assert_eq!(ya, yb);
        // Second step with the carried state differs from a fresh zero state.
        let (v2, m2) = random_inputs(&cfg, 5);
        let with_carry = model_step(&net, &v2, &m2, &mut a, Mode::Eval).unwrap();
        let mut fresh = st0.clone();
        let zero = model_step(&net, &v2, &m2, &mut fresh, Mode::Eval).unwrap();
        assert_ne!(with_carry, zero);
    }

    #[test]
    fn one_recurrent_cell_and_one_encoder() {
        let cfg = NetConfig::default();
        let (_, store) = IfssNet::new(&cfg).unwrap();
        let k = 32;
        assert_eq!(store.numel_with_prefix("clstm."), 4 * k * 2 * k * 9 + 4 * k);
        assert_eq!(store.specs().iter().filter(|s| s.name.starts_with("encoder.block0.dw1.")).count(), 2);
        let names: std::collections::HashSet<_> = store.specs().iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), store.len());
    }

    #[test]
    fn every_parameter_group_gets_gradient() {
        // Two-channel levels can have every unit of a branch inactive, so the
        // probe uses the regular desk widths.
        let cfg = NetConfig::default();
        let (net, st) = ModelState::init(&cfg, 7).unwrap();
        let (v, m) = random_inputs(&cfg, 8);
        let g = Graph::new();
        let p = st.params.bind(&g);
        let out = net
            .forward_step(&g, &p, &Graph::constant(v), &Graph::constant(m), None, None)
            .unwrap();
        let loss = g.dot(&out.probs, &Graph::constant(Tensor::from_vec(
            out.probs.shape(),
            (0..out.probs.value().len()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect(),
        )));
        let grads = g.backward(&loss);
        let mut groups: std::collections::BTreeMap<String, f64> = Default::default();
        for (spec, var) in st.params.specs().iter().zip(p.vars()) {
            let gmax = grads.get(var).map(Tensor::max_abs).unwrap_or(0.0);
            let group = spec.name.rsplit_once('.').unwrap().0.to_string();
            *groups.entry(group).or_default() += gmax;
        }
        for (name, gsum) in &groups {
            assert!(*gsum > 0.0, "no gradient reaches {name}");
        }
    }
}
