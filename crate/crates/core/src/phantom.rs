//! Synthetic "muscle-like" volumes with exact ground truth.
//!
//! Each structure is a star-convex blob whose radius is
//! `base(t) * (1 + Σ harmonics(θ, t))`, centred on a slowly drifting point.
//! All depth dependence goes through low-frequency sinusoids, so consecutive
//! cross-sections overlap heavily. Structures live in disjoint grid cells and
//! keep a margin from the border.
//!
//! Randomness comes from ChaCha8 (`rand_chacha` 0.9) seeded with
//! `seed_from_u64(spec.seed)`; normal variates use `rand_distr` 0.5. The
//! tested reproducibility contract is statistical, but within one build the
//! output is bit-identical for identical specs.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::volume::{MaskVolume, Spacing, Volume};

/// Border margin (voxels) kept free of every structure.
pub const BORDER_MARGIN: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub n_structures: usize,
    pub spacing: Spacing,
    pub noise_level: f64,
    /// Larger is smoother: the period of shape changes, in units of the depth.
    pub deform_smoothness: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            depth: 80,
            height: 64,
            width: 64,
            n_structures: 1,
            spacing: Spacing::isotropic(0.5),
            noise_level: 0.5,
            deform_smoothness: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 8 {
            return Err(invalid(format!("phantom depth must be >= 8, got {}", self.depth)));
        }
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v == 0 || v % 32 != 0 {
                return Err(invalid(format!("phantom {name} must be a positive multiple of 32, got {v}")));
            }
        }
        if !(1..=3).contains(&self.n_structures) {
            return Err(invalid(format!(
                "n_structures must be in 1..=3, got {}",
                self.n_structures
            )));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(invalid("noise_level must be finite and >= 0"));
        }
        if !(self.deform_smoothness.is_finite() && self.deform_smoothness > 0.0) {
            return Err(invalid("deform_smoothness must be finite and > 0"));
        }
        self.spacing.validate()
    }
}

/// A generated volume and one mask per structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub masks: Vec<MaskVolume>,
}

/// `offset + amp * sin(2π t / period + phase)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    offset: f64,
    amp: f64,
    period: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, offset: f64, amp: f64, base_period: f64) -> Self {
        Wave {
            offset,
            amp,
            period: base_period * rng.random_range(1.0..2.0),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.offset + self.amp * (2.0 * PI * t / self.period + self.phase).sin()
    }
}

struct Structure {
    cy: Wave,
    cx: Wave,
    base: Wave,
    /// (cos, sin) coefficients for harmonics 2 and 3.
    harmonics: [(Wave, Wave); 2],
    intensity: f64,
    stripe_freq: f64,
    stripe_dir: f64,
}

impl Structure {
    fn radius(&self, theta: f64, t: f64) -> f64 {
        let mut shape = 1.0;
        for (m, (c, s)) in self.harmonics.iter().enumerate() {
            let k = (m + 2) as f64;
            shape += c.at(t) * (k * theta).cos() + s.at(t) * (k * theta).sin();
        }
        self.base.at(t) * shape
    }
}

/// Grid cells (y0, x0, h, w) holding one structure each.
fn cells(n: usize, h: usize, w: usize) -> Vec<(usize, usize, usize, usize)> {
    match n {
        1 => vec![(0, 0, h, w)],
        2 => vec![(0, 0, h, w / 2), (0, w / 2, h, w / 2)],
        _ => vec![
            (0, 0, h / 2, w / 2),
            (0, w / 2, h / 2, w / 2),
            (h / 2, w / 4, h / 2, w / 2),
        ],
    }
}

fn gaussian_blur(img: &Array2<f64>) -> Array2<f64> {
    // 3-tap binomial kernel, separable, edge-clamped.
    let k = [0.25, 0.5, 0.25];
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x + j).saturating_sub(1).min(w - 1);
                acc += kv * img[[y, xx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = (y + j).saturating_sub(1).min(h - 1);
                acc += kv * tmp[[yy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t_len, h, w) = (spec.depth, spec.height, spec.width);
    let period = spec.deform_smoothness * t_len as f64;

    let structures: Vec<(Structure, (usize, usize, usize, usize))> = cells(spec.n_structures, h, w)
        .into_iter()
        .enumerate()
        .map(|(s, cell)| {
            let (y0, x0, ch, cw) = cell;
            let r_max = (ch.min(cw) as f64) / 2.0 - BORDER_MARGIN as f64 - 1.0;
            let base = r_max * rng.random_range(0.40..0.55);
            let drift = 0.15 * r_max;
            let st = Structure {
                cy: Wave::random(&mut rng, y0 as f64 + ch as f64 / 2.0, drift, period),
                cx: Wave::random(&mut rng, x0 as f64 + cw as f64 / 2.0, drift, period),
                base: Wave::random(&mut rng, base, 0.2 * base, period),
                harmonics: [
                    (
                        Wave::random(&mut rng, 0.0, 0.035, period),
                        Wave::random(&mut rng, 0.0, 0.035, period),
                    ),
                    (
                        Wave::random(&mut rng, 0.0, 0.035, period),
                        Wave::random(&mut rng, 0.0, 0.035, period),
                    ),
                ],
                intensity: 0.62 + 0.08 * s as f64,
                stripe_freq: rng.random_range(0.6..1.0),
                stripe_dir: rng.random_range(0.0..PI),
            };
            (st, cell)
        })
        .collect();

    let bg_waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.2),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.01..0.05),
            )
        })
        .collect();

    let mut image = Array3::<f32>::zeros((t_len, h, w));
    let mut masks: Vec<Array3<u8>> = vec![Array3::zeros((t_len, h, w)); structures.len()];
    let rayleigh_sigma = (2.0 / PI).sqrt();

    for t in 0..t_len {
        let tf = t as f64;
        let mut clean = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.30;
                for &(fy, fx, ph, ft) in &bg_waves {
                    v += 0.03 * (fy * y as f64 + fx * x as f64 + ft * tf + ph).sin();
                }
                clean[[y, x]] = v;
            }
        }
        for (s, (st, (y0, x0, ch, cw))) in structures.iter().enumerate() {
            let (cy, cx) = (st.cy.at(tf), st.cx.at(tf));
            // Only the structure's own cell is scanned, so structures stay disjoint.
            for y in (*y0 + BORDER_MARGIN)..(*y0 + ch).min(h - BORDER_MARGIN) {
                for x in (*x0 + BORDER_MARGIN)..(*x0 + cw).min(w - BORDER_MARGIN) {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let d = (dy * dy + dx * dx).sqrt();
                    let r = st.radius(dy.atan2(dx), tf);
                    if d <= r {
                        masks[s][[t, y, x]] = 1;
                        let along = x as f64 * st.stripe_dir.cos() + y as f64 * st.stripe_dir.sin();
                        let mut v = st.intensity + 0.05 * (st.stripe_freq * along).sin();
                        if d > r - 1.5 {
                            v += 0.15;
                        }
                        clean[[y, x]] = v;
                    }
                }
            }
        }
        let mut noisy = clean;
        for v in noisy.iter_mut() {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let speckle = rayleigh_sigma * (-2.0 * u.ln()).sqrt();
            *v *= (1.0 - spec.noise_level) + spec.noise_level * speckle;
        }
        let blurred = gaussian_blur(&noisy);
        for ((y, x), v) in blurred.indexed_iter() {
            image[[t, y, x]] = v.clamp(0.0, 1.0) as f32;
        }
    }

    let volume = Volume::new(image, spec.spacing)?;
    let masks = masks
        .into_iter()
        .map(|m| MaskVolume::new(m, spec.spacing))
        .collect::<Result<Vec<_>>>()?;
    for (s, m) in masks.iter().enumerate() {
        if let Some(t) = (0..t_len).find(|&t| m.slice_count(t) == 0) {
            return Err(Error::InvalidArgument(format!(
                "structure {s} vanished on slice {t}; enlarge the volume"
            )));
        }
    }
    Ok(Phantom { volume, masks })
}

/// How to divide patients between train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    Ratios(f64, f64, f64),
    Counts(usize, usize, usize),
}

/// Patient-wise split, in order: the first block trains, the next validates,
/// the rest test. Slices are never separated from their patient.
pub fn split_dataset<T: Clone>(items: &[T], rule: SplitRule) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(invalid("cannot split an empty dataset"));
    }
    let n = items.len();
    let (a, b) = match rule {
        SplitRule::Ratios(tr, va, te) => {
            if [tr, va, te].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (tr + va + te - 1.0).abs() > 1e-9 {
                return Err(invalid("split ratios must be non-negative and sum to 1"));
            }
            let a = (tr * n as f64).round() as usize;
            let b = ((va * n as f64).round() as usize).min(n - a.min(n));
            let (a, b) = (a.min(n), b);
            for (r, count, name) in [(tr, a, "train"), (va, b, "val"), (te, n - a - b, "test")] {
                if r > 0.0 && count == 0 {
                    return Err(invalid(format!("{name} split is empty for a nonzero ratio")));
                }
            }
            (a, b)
        }
        SplitRule::Counts(a, b, c) => {
            if a + b + c != n {
                return Err(invalid(format!("split counts {a}+{b}+{c} do not add up to {n}")));
            }
            (a, b)
        }
    };
    Ok((
        items[..a].to_vec(),
        items[a..a + b].to_vec(),
        items[a + b..].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iou(a: ndarray::ArrayView2<u8>, b: ndarray::ArrayView2<u8>) -> f64 {
        let inter = a.iter().zip(b.iter()).filter(|(x, y)| **x == 1 && **y == 1).count();
        let uni = a.iter().zip(b.iter()).filter(|(x, y)| **x == 1 || **y == 1).count();
        inter as f64 / uni as f64
    }

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_phantom(&spec(7)).unwrap();
        let b = generate_phantom(&spec(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.volume.dims(), (80, 64, 64));
        let c = generate_phantom(&spec(8)).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn consecutive_slices_overlap() {
        let p = generate_phantom(&spec(7)).unwrap();
        let m = &p.masks[0];
        let worst = (0..79).map(|t| iou(m.slice(t), m.slice(t + 1))).fold(1.0, f64::min);
        assert!(worst >= 0.8, "worst consecutive IoU {worst}");
        // The shape does change over the stack.
        assert!(iou(m.slice(0), m.slice(79)) < 0.95);
    }

    #[test]
    fn invariants_hold_for_all_structure_counts() {
        for n in 1..=3 {
            for seed in 0..4 {
                let p = generate_phantom(&PhantomSpec {
                    seed,
                    n_structures: n,
                    ..Default::default()
                })
                .unwrap();
                assert_eq!(p.masks.len(), n);
                let (t_len, h, w) = p.volume.dims();
                for t in 0..t_len {
                    let mut seen = Array2::<u8>::zeros((h, w));
                    for m in &p.masks {
                        let frac = m.slice_count(t) as f64 / (h * w) as f64;
                        assert!((0.01..=0.4).contains(&frac), "n={n} seed={seed} t={t} frac={frac}");
                        for ((y, x), &v) in m.slice(t).indexed_iter() {
                            if v == 1 {
                                assert!(y >= BORDER_MARGIN && x >= BORDER_MARGIN);
                                assert!(y < h - BORDER_MARGIN && x < w - BORDER_MARGIN);
                                assert_eq!(seen[[y, x]], 0, "structures overlap");
                                seen[[y, x]] = 1;
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn structures_are_brighter_than_background() {
        let p = generate_phantom(&spec(3)).unwrap();
        let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
        for (v, &m) in p.volume.data().iter().zip(p.masks[0].data().iter()) {
            if m == 1 {
                fg += *v as f64;
                nf += 1;
            } else {
                bg += *v as f64;
                nb += 1;
            }
        }
        assert!(fg / nf as f64 > bg / nb as f64 + 0.2);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_phantom(&PhantomSpec { depth: 4, ..Default::default() }).is_err());
        assert!(generate_phantom(&PhantomSpec { height: 40, ..Default::default() }).is_err());
        assert!(generate_phantom(&PhantomSpec { n_structures: 4, ..Default::default() }).is_err());
    }

    #[test]
    fn split_examples() {
        let ids: Vec<usize> = (0..10).collect();
        let (a, b, c) = split_dataset(&ids, SplitRule::Ratios(0.6, 0.2, 0.2)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let ids: Vec<usize> = (0..44).collect();
        let (a, b, c) = split_dataset(&ids, SplitRule::Counts(29, 5, 10)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (29, 5, 10));
        assert_eq!(c[0], 34);
        let (a, b, c) = split_dataset(&[0], SplitRule::Ratios(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (1, 0, 0));
        assert!(split_dataset(&[0, 1], SplitRule::Ratios(0.8, 0.1, 0.1)).is_err());
        assert!(split_dataset::<u8>(&[], SplitRule::Ratios(1.0, 0.0, 0.0)).is_err());
    }
}
