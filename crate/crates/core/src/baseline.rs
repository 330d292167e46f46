//! Non-learning propagation baselines: nearest-annotation copy and
//! signed-distance interpolation between annotated slices.

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_err, Error, Result};
use crate::volume::{AnnotationSchedule, MaskVolume};

fn check(mask: &MaskVolume, schedule: &AnnotationSchedule) -> Result<Vec<usize>> {
    if schedule.depth() != mask.depth() {
        return Err(shape_err(format!(
            "schedule covers {} slices, mask has {}",
            schedule.depth(),
            mask.depth()
        )));
    }
    let idx: Vec<usize> = schedule.indices().collect();
    if idx.is_empty() {
        return Err(Error::Schedule("no annotated slices to propagate from".into()));
    }
    Ok(idx)
}

/// For each slice, the nearest annotated index (ties go to the lower one).
fn nearest(t: usize, idx: &[usize]) -> usize {
    match idx.binary_search(&t) {
        Ok(i) => idx[i],
        Err(0) => idx[0],
        Err(i) if i == idx.len() => idx[i - 1],
        Err(i) => {
            let (lo, hi) = (idx[i - 1], idx[i]);
            if t - lo <= hi - t {
                lo
            } else {
                hi
            }
        }
    }
}

/// Every slice copies the nearest annotated slice of `mask`; slices not in
/// `schedule` are ignored on input.
pub fn zero_order_propagate(mask: &MaskVolume, schedule: &AnnotationSchedule) -> Result<MaskVolume> {
    let idx = check(mask, schedule)?;
    let mut out = MaskVolume::zeros(mask.dims(), mask.spacing());
    for t in 0..mask.depth() {
        out.set_slice(t, mask.slice(nearest(t, &idx)));
    }
    Ok(out)
}

/// Result of [`fill_between_slices`].
#[derive(Clone, Debug)]
pub struct FbsOutput {
    pub mask: MaskVolume,
    /// Set when fewer than two annotations forced the zero-order fallback.
    pub fell_back: bool,
}

/// Interpolates the signed distance maps of consecutive annotated slices and
/// keeps the non-negative part; outside the annotated range the nearest
/// annotation is copied.
pub fn fill_between_slices(mask: &MaskVolume, schedule: &AnnotationSchedule) -> Result<FbsOutput> {
    let idx = check(mask, schedule)?;
    if idx.len() < 2 {
        log::warn!("fill-between-slices needs two annotations; falling back to zero-order copy");
        return Ok(FbsOutput {
            mask: zero_order_propagate(mask, schedule)?,
            fell_back: true,
        });
    }
    let mut out = zero_order_propagate(mask, schedule)?;
    let sdf: Vec<Array2<f64>> = idx.iter().map(|&t| signed_distance(mask.slice(t))).collect();
    for (pair, sd) in idx.windows(2).zip(sdf.windows(2)) {
        let (k, m) = (pair[0], pair[1]);
        for j in k + 1..m {
            let tau = (j - k) as f64 / (m - k) as f64;
            let slice = Array2::from_shape_fn(sd[0].dim(), |p| {
                u8::from((1.0 - tau) * sd[0][p] + tau * sd[1][p] >= 0.0)
            });
            out.set_slice(j, slice.view());
        }
    }
    Ok(FbsOutput { mask: out, fell_back: false })
}

/// Positive inside: `d_in − ½` for foreground pixels and `−(d_out − ½)` for
/// background, where the distances are exact Euclidean distances (in pixels)
/// to the nearest pixel of the opposite class.
pub fn signed_distance(slice: ArrayView2<'_, u8>) -> Array2<f64> {
    let (h, w) = slice.dim();
    let far = (h + w) as f64;
    let to_fg = edt(slice, |v| v != 0);
    let to_bg = edt(slice, |v| v == 0);
    Array2::from_shape_fn((h, w), |p| {
        if slice[p] != 0 {
            to_bg[p].map_or(far, |d| d - 0.5)
        } else {
            -(to_fg[p].map_or(far, |d| d - 0.5))
        }
    })
}

/// Exact Euclidean distance from each pixel to the nearest pixel satisfying
/// `target`, by two passes of the lower-envelope-of-parabolas transform.
/// `None` when no pixel is a target.
pub fn edt(slice: ArrayView2<'_, u8>, target: impl Fn(u8) -> bool) -> Array2<Option<f64>> {
    let (h, w) = slice.dim();
    let inf = f64::INFINITY;
    let mut f = Array2::from_shape_fn((h, w), |p| if target(slice[p]) { 0.0 } else { inf });
    if f.iter().all(|v| v.is_infinite()) {
        return Array2::from_elem((h, w), None);
    }
    let mut buf = vec![0.0; h.max(w)];
    for mut col in f.columns_mut() {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        let d = envelope(&buf[..h]);
        col.iter_mut().zip(d).for_each(|(c, v)| *c = v);
    }
    for mut row in f.rows_mut() {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        let d = envelope(&buf[..w]);
        row.iter_mut().zip(d).for_each(|(c, v)| *c = v);
    }
    f.mapv(|v| Some(v.sqrt()))
}

/// 1D squared-distance transform `min_q (p − q)² + f(q)`.
fn envelope(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return out;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, r: usize| {
        let (qf, rf) = (q as f64, r as f64);
        ((f[q] + qf * qf) - (f[r] + rf * rf)) / (2.0 * (qf - rf))
    };
    for &q in &sites {
        while let Some(&r) = v.last() {
            let s = inter(q, r);
            if s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.clear();
            z.push(f64::NEG_INFINITY);
        } else {
            let s = inter(q, *v.last().unwrap());
            z.push(s);
        }
        v.push(q);
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while z[k + 1] < pf {
            k += 1;
        }
        let q = v[k] as f64;
        *o = (pf - q) * (pf - q) + f[v[k]];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn disc(n: usize, r: f64) -> Array2<u8> {
        let c = (n as f64 - 1.0) / 2.0;
        Array2::from_shape_fn((n, n), |(y, x)| {
            let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
            u8::from(d <= r)
        })
    }

    fn brute_edt(s: &Array2<u8>, target: u8) -> Array2<Option<f64>> {
        let pts: Vec<(usize, usize)> = s.indexed_iter().filter(|(_, &v)| v == target).map(|(p, _)| p).collect();
        Array2::from_shape_fn(s.dim(), |(y, x)| {
            pts.iter()
                .map(|&(a, b)| ((y as f64 - a as f64).powi(2) + (x as f64 - b as f64).powi(2)).sqrt())
                .min_by(f64::total_cmp)
        })
    }

    fn stack(slices: &[(usize, Array2<u8>)], depth: usize) -> (MaskVolume, AnnotationSchedule) {
        let (h, w) = slices[0].1.dim();
        let mut data = Array3::zeros((depth, h, w));
        for (t, s) in slices {
            data.index_axis_mut(ndarray::Axis(0), *t).assign(s);
        }
        let m = MaskVolume::new(data, Spacing::isotropic(1.0)).unwrap();
        let sch = AnnotationSchedule::new(depth, slices.iter().map(|(t, _)| *t)).unwrap();
        (m, sch)
    }

    #[test]
    fn nearest_index_rule() {
        let (m, s) = stack(&[(0, disc(16, 3.0)), (10, disc(16, 6.0))], 11);
        let z = zero_order_propagate(&m, &s).unwrap();
        assert_eq!(z.slice(4), m.slice(0));
        assert_eq!(z.slice(6), m.slice(10));
        assert_eq!(z.slice(5), m.slice(0));
    }

    #[test]
    fn single_annotation_gives_constant_volume_and_fallback() {
        let (m, s) = stack(&[(0, disc(16, 3.0))], 5);
        let f = fill_between_slices(&m, &s).unwrap();
        assert!(f.fell_back);
        for t in 0..5 {
            assert_eq!(f.mask.slice(t), m.slice(0));
        }
    }

    #[test]
    fn concentric_discs_interpolate_radius() {
        let (m, s) = stack(&[(0, disc(32, 4.0)), (8, disc(32, 8.0))], 9);
        let f = fill_between_slices(&m, &s).unwrap();
        let area = f.mask.slice_count(4) as f64;
        let r = (area / std::f64::consts::PI).sqrt();
        assert!((r - 6.0).abs() <= 0.5, "radius {r}");
        assert_eq!(f.mask.slice(0), m.slice(0));
        assert_eq!(f.mask.slice(8), m.slice(8));
    }

    #[test]
    fn identical_annotations_give_identical_intermediates() {
        let d = disc(20, 5.0);
        let (m, s) = stack(&[(0, d.clone()), (6, d.clone())], 7);
        let f = fill_between_slices(&m, &s).unwrap();
        for t in 0..7 {
            assert_eq!(f.mask.slice(t), d.view());
        }
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let m = MaskVolume::zeros((3, 4, 4), Spacing::isotropic(1.0));
        let s = AnnotationSchedule::new(3, []).unwrap();
        assert!(zero_order_propagate(&m, &s).is_err());
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(bits in proptest::collection::vec(0u8..2, 9 * 7)) {
            let s = Array2::from_shape_vec((9, 7), bits).unwrap();
            for target in [0u8, 1] {
                let fast = edt(s.view(), |v| v == target);
                let slow = brute_edt(&s, target);
                for (a, b) in fast.iter().zip(slow.iter()) {
                    match (a, b) {
                        (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                        (None, None) => {}
                        _ => prop_assert!(false, "presence differs"),
                    }
                }
            }
        }

        #[test]
        fn area_moves_monotonically_between_nested_discs(r0 in 2.0f64..5.0, dr in 1.0f64..6.0, gap in 2usize..8) {
            let (m, s) = stack(&[(0, disc(32, r0)), (gap, disc(32, r0 + dr))], gap + 1);
            let f = fill_between_slices(&m, &s).unwrap();
            let areas: Vec<usize> = (0..=gap).map(|t| f.mask.slice_count(t)).collect();
            prop_assert!(areas.windows(2).all(|p| p[0] <= p[1]), "{:?}", areas);
        }

        #[test]
        fn annotated_slices_are_reproduced(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ts = [0usize, 3, 7];
            let slices: Vec<(usize, Array2<u8>)> = ts
                .iter()
                .map(|&t| (t, Array2::from_shape_fn((10, 10), |_| u8::from(rng.random_bool(0.4)))))
                .collect();
            let (m, s) = stack(&slices, 8);
            let z = zero_order_propagate(&m, &s).unwrap();
            let f = fill_between_slices(&m, &s).unwrap();
            for &t in &ts {
                prop_assert_eq!(z.slice(t), m.slice(t));
                prop_assert_eq!(f.mask.slice(t), m.slice(t));
            }
        }
    }
}
