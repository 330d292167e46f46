//! Sequential mask propagation through a volume from its first `w` slices.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{invalid, shape_err, Error, Result};
use crate::net::{model_step, IfssNet, Mode, ModelState};
use crate::volume::{make_windows, two_channel, MaskVolume, Volume};

/// Probabilities strictly above this are foreground; exactly 0.5 is background.
pub const THRESHOLD: f64 = 0.5;

/// Foreground plane `j` of a `[2, w, H, W]` probability tensor, binarised.
pub fn binarize_slice(probs: &Tensor, j: usize) -> Array2<u8> {
    let [_, _, h, w] = probs.dims4();
    let plane = h * w;
    let fg = &probs.data()[j * plane..(j + 1) * plane];
    Array2::from_shape_fn((h, w), |(y, x)| u8::from(fg[y * w + x] > THRESHOLD))
}

/// How overlapping window predictions are combined per slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusePolicy {
    /// The window in which the slice is the newest one (window 0 for the
    /// first `w − 1` slices).
    #[default]
    Last,
    /// Average over all windows covering the slice.
    Mean,
}

impl FusePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(FusePolicy::Last),
            "mean" => Ok(FusePolicy::Mean),
            _ => Err(invalid(format!("fuse policy must be last or mean, got {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusePolicy::Last => "last",
            FusePolicy::Mean => "mean",
        }
    }
}

/// Combines per-window foreground probabilities (`windows[k]` is `[w][H·W]`
/// for the window starting at `k`) into one plane per slice.
pub fn fuse_overlaps(windows: &[Vec<Vec<f64>>], depth: usize, policy: FusePolicy) -> Result<Vec<Vec<f64>>> {
    let w = windows.first().map_or(0, Vec::len);
    if w == 0 || windows.len() + w - 1 != depth {
        return Err(invalid(format!(
            "{} windows of width {w} do not cover {depth} slices",
            windows.len()
        )));
    }
    let plane = windows[0][0].len();
    if windows.iter().flatten().any(|p| p.len() != plane) {
        return Err(shape_err("window planes differ in size"));
    }
    Ok((0..depth)
        .map(|t| match policy {
            FusePolicy::Last => {
                let k = t.saturating_sub(w - 1);
                windows[k][t - k].clone()
            }
            FusePolicy::Mean => {
                let ks = t.saturating_sub(w - 1)..=t.min(windows.len() - 1);
                let n = ks.clone().count() as f64;
                let mut acc = vec![0.0; plane];
                for k in ks {
                    for (a, v) in acc.iter_mut().zip(&windows[k][t - k]) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
        })
        .collect())
}

/// Output of [`propagate`].
#[derive(Clone, Debug)]
pub struct Propagation {
    pub mask: MaskVolume,
    pub policy: FusePolicy,
}

/// Runs the recurrence over every window, feeding each step's newest slice
/// back as the next step's mask input. `seeds` must contain slices `[0, w)`;
/// later slices of `seeds` are ignored.
pub fn propagate(net: &IfssNet, state: &ModelState, volume: &Volume, seeds: &MaskVolume, policy: FusePolicy) -> Result<Propagation> {
    let cfg = net.config();
    let (depth, h, wd) = volume.dims();
    if seeds.dims() != volume.dims() {
        return Err(shape_err(format!(
            "seed mask {:?} does not match volume {:?}",
            seeds.dims(),
            volume.dims()
        )));
    }
    if h != cfg.in_hw || wd != cfg.in_hw {
        return Err(Error::Checkpoint(format!(
            "model expects {0}x{0} slices, volume has {h}x{wd}",
            cfg.in_hw
        )));
    }
    let w = cfg.w;
    let windows = make_windows(depth, w)?;
    let mut st = state.clone();
    st.reset_carry();

    // Mask fed back into the mask stream: seeds, then each step's newest slice.
    let mut feed: Vec<Array2<u8>> = (0..w).map(|t| seeds.slice(t).to_owned()).collect();
    let mut per_window = Vec::with_capacity(windows.len());
    for win in &windows {
        let prev: Vec<_> = win.prev_mask_slices().iter().map(|&t| feed[t].view()).collect();
        let m_prev = two_channel(&prev);
        let v = volume.window_tensor(&win.slices());
        let probs = model_step(net, &v, &m_prev, &mut st, Mode::Eval)?;
        if win.last() >= w {
            feed.push(binarize_slice(&probs, w - 1));
        }
        let plane = h * wd;
        per_window.push((0..w).map(|j| probs.data()[j * plane..(j + 1) * plane].to_vec()).collect());
    }

    let fused = fuse_overlaps(&per_window, depth, policy)?;
    let mut mask = MaskVolume::zeros(volume.dims(), volume.spacing());
    for (t, p) in fused.iter().enumerate() {
        if t < w {
            mask.set_slice(t, seeds.slice(t));
        } else {
            let s = Array2::from_shape_fn((h, wd), |(y, x)| u8::from(p[y * wd + x] > THRESHOLD));
            mask.set_slice(t, s.view());
        }
    }
    Ok(Propagation { mask, policy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_one_is_identity() {
        let wins = vec![vec![vec![0.2, 0.9]], vec![vec![0.7, 0.1]]];
        for p in [FusePolicy::Last, FusePolicy::Mean] {
            assert_eq!(fuse_overlaps(&wins, 2, p).unwrap(), vec![vec![0.2, 0.9], vec![0.7, 0.1]]);
        }
    }

    #[test]
    fn constant_windows_agree() {
        let wins = vec![vec![vec![0.3]; 3]; 4];
        let a = fuse_overlaps(&wins, 6, FusePolicy::Last).unwrap();
        let b = fuse_overlaps(&wins, 6, FusePolicy::Mean).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conflicting_windows() {
        // Slice 1 is the newest slice of window 0 (says fg) and the oldest of
        // window 1 (says bg).
        let wins = vec![vec![vec![1.0], vec![1.0]], vec![vec![0.0], vec![0.0]]];
        let last = fuse_overlaps(&wins, 3, FusePolicy::Last).unwrap();
        assert_eq!(last[1], vec![1.0]);
        let mean = fuse_overlaps(&wins, 3, FusePolicy::Mean).unwrap();
        assert_eq!(mean[1], vec![0.5]);
        assert!(mean[1][0] <= THRESHOLD, "a 0.5 tie must binarise to background");
    }

    #[test]
    fn coverage_is_checked() {
        let wins = vec![vec![vec![0.0]; 3]; 2];
        assert!(fuse_overlaps(&wins, 5, FusePolicy::Last).is_err());
    }

    #[test]
    fn binarize_ties_to_background() {
        let t = Tensor::from_vec(&[2, 1, 1, 3], vec![0.5, 0.51, 0.49, 0.5, 0.49, 0.51]);
        assert_eq!(binarize_slice(&t, 0).into_raw_vec_and_offset().0, vec![0, 1, 0]);
    }
}
