//! Overlap objectives: Dice, the Tversky index with learnable penalties, and
//! the regularised training loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{invalid, shape_err, Result};

/// Added to numerator and denominator of the Tversky ratio.
pub const EPS: f64 = 1e-7;

/// How far `α + β` may drift from 1 before the index refuses to evaluate.
const AB_TOL: f64 = 1e-9;

/// `|a − b|` is kept below this so that neither weight saturates to 0 or 1.
pub const MAX_LOGIT_GAP: f64 = 30.0;

/// Learnable penalty logits and the L2 weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            a: 0.0,
            b: 0.0,
            lambda: 1e-5,
        }
    }
}

impl LossParams {
    /// `(α, β) = softmax(a, b)`; β is taken as `1 − α`, which makes the sum
    /// exactly one in floating point.
    pub fn alpha_beta(&self) -> (f64, f64) {
        let alpha = sigmoid((self.a - self.b).clamp(-MAX_LOGIT_GAP, MAX_LOGIT_GAP));
        (alpha, 1.0 - alpha)
    }

    /// Pulls `(a, b)` back inside the non-saturating band after an update.
    pub fn project(&mut self) {
        let gap = self.a - self.b;
        if gap.abs() > MAX_LOGIT_GAP {
            let excess = (gap - gap.clamp(-MAX_LOGIT_GAP, MAX_LOGIT_GAP)) / 2.0;
            self.a -= excess;
            self.b += excess;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Whether the per-step index is additionally scaled by `1/w` in the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFactor {
    #[default]
    Literal,
    Off,
}

impl WindowFactor {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(WindowFactor::Literal),
            "off" => Ok(WindowFactor::Off),
            _ => Err(invalid(format!("window factor must be literal or off, got {s:?}"))),
        }
    }

    pub fn scale(self, w: usize) -> f64 {
        match self {
            WindowFactor::Literal => 1.0 / w as f64,
            WindowFactor::Off => 1.0,
        }
    }
}

/// `2Σŷy / (Σŷ² + Σy²)`, with 1 for two empty inputs.
pub fn dice_coeff(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(shape_err(format!("dice inputs have {} and {} voxels", y_hat.len(), y.len())));
    }
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(invalid(format!("dice target is not binary (found {v})")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&p, &t) in y_hat.iter().zip(y) {
        num += p * t;
        den += p * p + t * t;
    }
    Ok(if den == 0.0 { 1.0 } else { 2.0 * num / den })
}

fn check_ab(alpha: f64, beta: f64) -> Result<()> {
    if (alpha + beta - 1.0).abs() > AB_TOL || !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("alpha + beta must equal 1 (got {alpha} + {beta})")));
    }
    Ok(())
}

/// Tversky index of a 2-channel probability tensor against a 2-channel
/// one-hot target of the same shape (channel 0 = foreground). All trailing
/// axes are pooled, so a `[2, w, H, W]` window yields one window-wide ratio.
pub fn tversky_index(y_hat: &Tensor, y: &Tensor, alpha: f64, beta: f64) -> Result<f64> {
    check_ab(alpha, beta)?;
    if y_hat.shape() != y.shape() || y_hat.shape().first() != Some(&2) {
        return Err(shape_err(format!(
            "tversky expects equal [2, ...] shapes, got {:?} and {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    let n = y_hat.len() / 2;
    let (p0, p1) = y_hat.data().split_at(n);
    let (t0, t1) = y.data().split_at(n);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for i in 0..n {
        tp += p0[i] * t0[i];
        fp += p0[i] * t1[i];
        fneg += p1[i] * t0[i];
    }
    Ok((tp + EPS) / (tp + alpha * fp + beta * fneg + EPS))
}

/// Window form of [`tversky_index`]: numerator and denominator are summed over
/// all `w` slices before dividing.
pub fn tversky_index_window(y_hat: &Tensor, y: &Tensor, alpha: f64, beta: f64) -> Result<f64> {
    if y_hat.shape().len() != 4 {
        return Err(shape_err(format!("window tensors are [2, w, H, W], got {:?}", y_hat.shape())));
    }
    tversky_index(y_hat, y, alpha, beta)
}

/// `1 − mean_t(s · TI_t) + λ‖θ‖²` with `s = 1/w` (literal) or 1.
pub fn total_loss(tis: &[f64], w: usize, l2_norm_sq: f64, lambda: f64, factor: WindowFactor) -> Result<f64> {
    if tis.is_empty() {
        return Err(invalid("total loss needs at least one step"));
    }
    if w == 0 {
        return Err(invalid("window width must be positive"));
    }
    let s = factor.scale(w);
    let mean = tis.iter().map(|ti| s * ti).sum::<f64>() / tis.len() as f64;
    Ok(1.0 - mean + lambda * l2_norm_sq)
}

/// Graph form of the window Tversky index. `a` and `b` are `[1]` logits.
pub fn tversky_graph(g: &Graph, y_hat: &Var, target: &Tensor, a: &Var, b: &Var) -> Result<Var> {
    if y_hat.shape() != target.shape() || y_hat.shape().len() != 4 || y_hat.shape()[0] != 2 {
        return Err(shape_err(format!(
            "tversky expects equal [2, w, H, W] shapes, got {:?} and {:?}",
            y_hat.shape(),
            target.shape()
        )));
    }
    let t = Graph::constant(target.clone());
    let p0 = g.slice_channels(y_hat, 0, 1);
    let p1 = g.slice_channels(y_hat, 1, 1);
    let t0 = g.slice_channels(&t, 0, 1);
    let t1 = g.slice_channels(&t, 1, 1);
    let tp = g.dot(&p0, &t0);
    let fp = g.dot(&p0, &t1);
    let fneg = g.dot(&p1, &t0);
    let alpha = g.sigmoid(&g.sub(a, b));
    let beta = g.sub(&Graph::constant(Tensor::scalar(1.0)), &alpha);
    let den = g.add(&g.add(&tp, &g.mul(&alpha, &fp)), &g.mul(&beta, &fneg));
    Ok(g.div(&g.add_scalar(&tp, EPS), &g.add_scalar(&den, EPS)))
}

/// Graph form of the data term of [`total_loss`] over the steps given:
/// `Σ_t (1 − s·TI_t) / n_total`, where `n_total` is the number of steps in
/// the whole sequence so that partial sums add up to the full mean.
pub fn data_loss_graph(g: &Graph, tis: &[Var], n_total: usize, w: usize, factor: WindowFactor) -> Result<Var> {
    if tis.is_empty() || n_total == 0 {
        return Err(invalid("loss needs at least one step"));
    }
    let s = factor.scale(w);
    let mut acc = tis[0].clone();
    for ti in &tis[1..] {
        acc = g.add(&acc, ti);
    }
    let k = tis.len() as f64;
    let scaled = g.scale(&acc, -s / n_total as f64);
    Ok(g.add_scalar(&scaled, k / n_total as f64))
}
