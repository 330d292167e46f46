//! Training loops: full supervision and few-shot self-training, both with
//! truncated backpropagation through the window recurrence.

mod adam;
mod pseudo;

use std::fmt::Write as _;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{add_l2_grad, Adam};
pub use pseudo::{decremental_curriculum, few_shot_step_targets, PseudoLabelBuffer};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::loss::{data_loss_graph, tversky_graph, WindowFactor};
use crate::net::params::Bound;
use crate::net::{Carry, CarryState, IfssNet, ModelState, NetConfig};
use crate::propagate::binarize_slice;
use crate::volume::{make_windows, two_channel, AnnotationSchedule, MaskVolume, SubVolumeWindow, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    FewShot,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TrainMode::Full),
            "few_shot" => Ok(TrainMode::FewShot),
            _ => Err(invalid(format!("mode must be full or few_shot, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    /// Number of closing epochs run at `lr_final`.
    pub final_lr_epochs: usize,
    /// Steps per truncated-backpropagation chunk.
    pub tbptt_chunk: usize,
    pub seed: u64,
    /// Full mode only: feed ground truth instead of the model's own output
    /// back into the mask stream.
    pub teacher_forcing: bool,
    pub window_factor: WindowFactor,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Full,
            epochs: 20,
            lr_init: 1e-4,
            lr_final: 1e-5,
            final_lr_epochs: 2,
            tbptt_chunk: 8,
            seed: 0,
            teacher_forcing: false,
            window_factor: WindowFactor::Literal,
            lambda: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.tbptt_chunk == 0 {
            return Err(Error::Config("tbptt_chunk must be >= 1".into()));
        }
        if !(self.lr_final > 0.0 && self.lr_final < self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lr_final < lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch + self.final_lr_epochs >= self.epochs {
            self.lr_final
        } else {
            self.lr_init
        }
    }
}

/// One training volume with its ground truth and annotation schedule.
#[derive(Clone, Debug)]
pub struct Patient {
    pub volume: Volume,
    pub mask: MaskVolume,
    pub schedule: AnnotationSchedule,
}

impl Patient {
    fn validate(&self, cfg: &NetConfig) -> Result<()> {
        let (t, h, w) = self.volume.dims();
        if self.mask.dims() != (t, h, w) {
            return Err(shape_err(format!("mask {:?} vs volume {:?}", self.mask.dims(), (t, h, w))));
        }
        if h != cfg.in_hw || w != cfg.in_hw {
            return Err(shape_err(format!("network takes {0}x{0} slices, got {h}x{w}", cfg.in_hw)));
        }
        if self.schedule.depth() != t {
            return Err(shape_err(format!("schedule depth {} vs volume depth {t}", self.schedule.depth())));
        }
        self.schedule.check_seeds(cfg.w)
    }
}

/// One row of the training log; one is written per loss half.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub patient: usize,
    /// Inclusive window-step range.
    pub steps: (usize, usize),
    pub loss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,patient,step_range,loss,alpha,beta,lr";

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{}-{},{:.17e},{:.17e},{:.17e},{:e}",
            r.epoch, r.patient, r.steps.0, r.steps.1, r.loss, r.alpha, r.beta, r.lr
        );
    }
    s
}

/// Mean logged loss per epoch.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let l: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
            l.iter().sum::<f64>() / l.len().max(1) as f64
        })
        .collect()
}

/// Where the mask stream's input comes from.
#[derive(Clone)]
enum Feedback {
    /// Seeds, then each step's newest predicted (or, teacher-forced, true) slice.
    Sequential { slices: Vec<Array2<u8>>, teacher: bool },
    PseudoLabels(PseudoLabelBuffer),
}

/// Per-patient state across the windows of one epoch.
#[derive(Clone)]
struct Episode<'a> {
    patient: &'a Patient,
    feedback: Feedback,
}

impl Episode<'_> {
    fn prev_mask(&self, win: SubVolumeWindow) -> Tensor {
        match &self.feedback {
            Feedback::Sequential { slices, .. } => {
                let v: Vec<_> = win.prev_mask_slices().iter().map(|&t| slices[t].view()).collect();
                two_channel(&v)
            }
            Feedback::PseudoLabels(b) => b.window(&win.prev_mask_slices()),
        }
    }

    fn targets(&self, win: SubVolumeWindow) -> Tensor {
        match &self.feedback {
            Feedback::Sequential { .. } => self.patient.mask.window_tensor(&win.slices()),
            Feedback::PseudoLabels(b) => few_shot_step_targets(win, &self.patient.mask, &self.patient.schedule, b),
        }
    }

    fn update(&mut self, win: SubVolumeWindow, probs: &Tensor) -> Result<()> {
        match &mut self.feedback {
            Feedback::Sequential { slices, teacher } => {
                let t = win.last();
                if t == slices.len() {
                    slices.push(if *teacher {
                        self.patient.mask.slice(t).to_owned()
                    } else {
                        binarize_slice(probs, win.width - 1)
                    });
                }
                Ok(())
            }
            Feedback::PseudoLabels(b) => b.refresh(win, probs),
        }
    }
}

/// Runs the steps `wins` on `g` from `carry` and returns the
/// differentiable chunk loss, the plain per-step indices and the terminal carry.
#[allow(clippy::too_many_arguments)]
fn run_chunk(
    net: &IfssNet,
    g: &Graph,
    p: &Bound,
    ab: (&Var, &Var),
    rng: Option<&mut ChaCha8Rng>,
    episode: &mut Episode<'_>,
    wins: &[SubVolumeWindow],
    mut carry: Option<Carry>,
    n_total: usize,
    window_factor: WindowFactor,
) -> Result<(Var, Vec<f64>, Carry)> {
    let mut rng = rng;
    let mut tis = Vec::with_capacity(wins.len());
    let mut plain = Vec::with_capacity(wins.len());
    for &win in wins {
        let v = Graph::constant(episode.patient.volume.window_tensor(&win.slices()));
        let m = Graph::constant(episode.prev_mask(win));
        let out = net.forward_step(g, p, &v, &m, carry.as_ref(), rng.as_deref_mut())?;
        let target = episode.targets(win);
        let ti = tversky_graph(g, &out.probs, &target, ab.0, ab.1)?;
        plain.push(ti.value().item());
        episode.update(win, out.probs.value())?;
        tis.push(ti);
        carry = Some(out.carry);
    }
    let loss = data_loss_graph(g, &tis, n_total, net.config().w, window_factor)?;
    Ok((loss, plain, carry.ok_or_else(|| invalid("empty chunk"))?))
}

/// Backward pass, L2 term and one Adam update from a finished chunk.
fn apply_update(state: &mut ModelState, opt: &mut Adam, g: &Graph, loss: &Var, vars: &[Var], lambda: f64, lr: f64) {
    let grads = g.backward(loss);
    let n = state.params.len();
    let mut gs: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();
    for (gt, pt) in gs[..n].iter_mut().zip(state.params.tensors()) {
        add_l2_grad(gt, pt, lambda);
    }
    let mut ab = [state.loss.a, state.loss.b];
    {
        let (a_slot, b_slot) = ab.split_at_mut(1);
        let mut params: Vec<&mut [f64]> = state.params.tensors_mut().iter_mut().map(|t| t.data_mut()).collect();
        params.push(a_slot);
        params.push(b_slot);
        let grefs: Vec<&[f64]> = gs.iter().map(Tensor::data).collect();
        opt.step(&mut params, &grefs, lr);
    }
    state.loss.a = ab[0];
    state.loss.b = ab[1];
    state.loss.project();
}

/// Splits `0..n` at every `chunk` steps within each of the two loss halves.
pub fn chunk_bounds(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let half = n.div_ceil(2);
    let mut out = Vec::new();
    for (lo, hi) in [(0, half), (half, n)] {
        let mut s = lo;
        while s < hi {
            let e = (s + chunk).min(hi);
            out.push(s..e);
            s = e;
        }
    }
    out
}

/// Trains `state` in place and returns the log.
pub fn train(net: &IfssNet, state: &mut ModelState, patients: &[Patient], cfg: &TrainConfig) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if patients.is_empty() {
        return Err(invalid("no training patients"));
    }
    if !state.params.is_initialized() {
        return Err(Error::Uninitialized("training needs initialised parameters"));
    }
    let ncfg = net.config().clone();
    for p in patients {
        p.validate(&ncfg)?;
    }
    state.loss.lambda = cfg.lambda;
    let order = match cfg.mode {
        TrainMode::FewShot => {
            let sch: Vec<_> = patients.iter().map(|p| p.schedule.clone()).collect();
            decremental_curriculum(&sch, patients.len())?
        }
        TrainMode::Full => (0..patients.len()).collect(),
    };
    // Pseudo-labels persist across epochs.
    let mut buffers: Vec<Option<PseudoLabelBuffer>> = match cfg.mode {
        TrainMode::FewShot => patients
            .iter()
            .map(|p| PseudoLabelBuffer::new(&p.mask, &p.schedule).map(Some))
            .collect::<Result<_>>()?,
        TrainMode::Full => vec![None; patients.len()],
    };
    let mut opt = Adam::new(state.params.specs().iter().map(|s| s.numel()).chain([1, 1]));
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for &pi in &order {
            let patient = &patients[pi];
            let wins = make_windows(patient.volume.depth(), ncfg.w)?;
            let n = wins.len();
            let feedback = match buffers[pi].take() {
                Some(b) => Feedback::PseudoLabels(b),
                None => Feedback::Sequential {
                    slices: (0..ncfg.w).map(|t| patient.mask.slice(t).to_owned()).collect(),
                    teacher: cfg.teacher_forcing,
                },
            };
            let mut episode = Episode { patient, feedback };
            state.reset_carry();
            let half = n.div_ceil(2);
            let mut half_tis: Vec<f64> = Vec::new();
            let mut half_start = 0;
            for range in chunk_bounds(n, cfg.tbptt_chunk) {
                let g = Graph::new();
                let p = state.params.bind(&g);
                let a = g.leaf(Tensor::scalar(state.loss.a));
                let b = g.leaf(Tensor::scalar(state.loss.b));
                let carry_in = state.carry.as_ref().map(CarryState::to_carry);
                let (loss, tis, carry) = run_chunk(
                    net,
                    &g,
                    &p,
                    (&a, &b),
                    Some(&mut state.rng),
                    &mut episode,
                    &wins[range.clone()],
                    carry_in,
                    n,
                    cfg.window_factor,
                )?;
                let mut vars = p.vars().to_vec();
                vars.extend([a, b]);
                if let Some(i) = tis.iter().position(|v| !v.is_finite()) {
                    let (al, be) = state.loss.alpha_beta();
                    log::error!(
                        "non-finite Tversky index: epoch {epoch}, patient {pi}, step {}; alpha {al}, beta {be}, |theta|^2 {}, lr {lr}",
                        range.start + i,
                        state.params.l2_norm_sq()
                    );
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        patient: pi,
                        step: range.start + i,
                    });
                }
                apply_update(state, &mut opt, &g, &loss, &vars, cfg.lambda, lr);
                drop(g);
                state.carry = Some(CarryState::from_carry(&carry));
                half_tis.extend(tis);
                if range.end == half || range.end == n {
                    let s = cfg.window_factor.scale(ncfg.w);
                    let data = half_tis.iter().map(|ti| 1.0 - s * ti).sum::<f64>() / half_tis.len() as f64;
                    let loss = data + cfg.lambda * state.params.l2_norm_sq();
                    if !loss.is_finite() || !state.params.tensors().iter().all(Tensor::all_finite) {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            patient: pi,
                            step: range.end - 1,
                        });
                    }
                    let (alpha, beta) = state.loss.alpha_beta();
                    log::info!(
                        "epoch {epoch} patient {pi} steps {half_start}-{}: loss {loss:.5} alpha {alpha:.4} beta {beta:.4}",
                        range.end - 1
                    );
                    log.push(LogRow {
                        epoch,
                        patient: pi,
                        steps: (half_start, range.end - 1),
                        loss,
                        alpha,
                        beta,
                        lr,
                    });
                    half_tis.clear();
                    half_start = range.end;
                }
            }
            if let Feedback::PseudoLabels(b) = episode.feedback {
                buffers[pi] = Some(b);
            }
        }
    }
    state.reset_carry();
    Ok(log)
}

/// Fresh parameters from `cfg.seed`, then [`train`].
pub fn train_from_scratch(
    net_cfg: &NetConfig,
    patients: &[Patient],
    cfg: &TrainConfig,
) -> Result<(IfssNet, ModelState, Vec<LogRow>)> {
    let (net, mut state) = ModelState::init(net_cfg, cfg.seed)?;
    let log = train(&net, &mut state, patients, cfg)?;
    Ok((net, state, log))
}
