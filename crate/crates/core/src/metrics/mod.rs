//! Volumetric segmentation metrics: overlap scores, surface distances in mm,
//! volumes and volume error.

mod kdtree;

use std::fmt::Write as _;

use ndarray::{Array3, Axis};

pub use kdtree::{dist_sq, KdTree, Voxel};

use crate::error::{invalid, shape_err, Error, Result};
use crate::volume::{MaskVolume, Spacing};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `TP / (TP + FP)`; 1 for an empty prediction.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`; 1 for an empty ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Foreground intersection over union; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn same_shape(a: &MaskVolume, b: &MaskVolume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(format!("masks differ in shape: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn counts(a: &Array3<u8>, b: &Array3<u8>) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &g) in a.iter().zip(b.iter()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn confusion_counts(pred: &MaskVolume, gt: &MaskVolume) -> Result<Confusion> {
    same_shape(pred, gt)?;
    Ok(counts(pred.data(), gt.data()))
}

fn surface_of(m: &Array3<u8>) -> Vec<Voxel> {
    let (d, h, w) = m.dim();
    let fg = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && m[[z as usize, y as usize, x as usize]] != 0
    };
    let mut out = Vec::new();
    for ((z, y, x), &v) in m.indexed_iter() {
        if v == 0 {
            continue;
        }
        let (zi, yi, xi) = (z as isize, y as isize, x as isize);
        let interior = fg(zi - 1, yi, xi)
            && fg(zi + 1, yi, xi)
            && fg(zi, yi - 1, xi)
            && fg(zi, yi + 1, xi)
            && fg(zi, yi, xi - 1)
            && fg(zi, yi, xi + 1);
        if !interior {
            out.push([z, y, x]);
        }
    }
    out
}

/// Foreground voxels with at least one 6-neighbour that is background or
/// outside the volume, in row-major order.
pub fn surface_voxels(mask: &MaskVolume) -> Vec<Voxel> {
    surface_of(mask.data())
}

fn spacing_arr(s: Spacing) -> [f64; 3] {
    [s.z, s.y, s.x]
}

/// Distance in mm from each voxel of `from` to the nearest voxel of `to`.
fn directed(from: &[Voxel], to: &[Voxel], s: [f64; 3]) -> Vec<f64> {
    let tree = KdTree::new(to.to_vec(), s);
    from.iter().map(|p| tree.nearest_sq(p).sqrt()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn surfaces(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<(Vec<Voxel>, Vec<Voxel>)> {
    let sp = surface_of(pred);
    if sp.is_empty() {
        return Err(Error::UndefinedSurfaceDistance("prediction"));
    }
    let sg = surface_of(gt);
    if sg.is_empty() {
        return Err(Error::UndefinedSurfaceDistance("ground truth"));
    }
    Ok((sp, sg))
}

fn hd_asd(pred: &Array3<u8>, gt: &Array3<u8>, s: [f64; 3]) -> Result<(f64, f64)> {
    let (sp, sg) = surfaces(pred, gt)?;
    let a = directed(&sp, &sg, s);
    let b = directed(&sg, &sp, s);
    Ok((max(&a).max(max(&b)), (mean(&a) + mean(&b)) / 2.0))
}

/// Hausdorff distance (larger directed maximum) and average surface distance
/// (mean of the two directed means), both in mm, between surface voxel sets.
pub fn hausdorff_asd(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing) -> Result<(f64, f64)> {
    same_shape(pred, gt)?;
    spacing.validate()?;
    hd_asd(pred.data(), gt.data(), spacing_arr(spacing))
}

/// For every surface voxel of `pred`, its distance in mm to the nearest
/// surface voxel of `gt`.
pub fn surface_error_map(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing) -> Result<Vec<(Voxel, f64)>> {
    same_shape(pred, gt)?;
    spacing.validate()?;
    let (sp, sg) = surfaces(pred.data(), gt.data())?;
    let d = directed(&sp, &sg, spacing_arr(spacing));
    Ok(sp.into_iter().zip(d).collect())
}

pub fn volume_mm3(mask: &MaskVolume, spacing: Spacing) -> f64 {
    mask.count() as f64 * spacing.voxel_volume()
}

/// `|V_pred − V_gt| / V_gt · 100`.
pub fn volume_error_pct(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing) -> Result<f64> {
    same_shape(pred, gt)?;
    let vg = volume_mm3(gt, spacing);
    if vg == 0.0 {
        return Err(invalid("volume error is undefined for an empty ground truth"));
    }
    Ok((volume_mm3(pred, spacing) - vg).abs() / vg * 100.0)
}

/// Metrics for one prediction / ground-truth pair. Distances are `None` when
/// either surface is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub miou: f64,
    pub hdd_mm: Option<f64>,
    pub asd_mm: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub vol_pred_mm3: f64,
    pub vol_gt_mm3: f64,
    pub vol_err_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceScore {
    pub slice: usize,
    pub dice: f64,
    pub hdd_mm: Option<f64>,
}

pub fn evaluate(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing) -> Result<MetricsReport> {
    let c = confusion_counts(pred, gt)?;
    let (hdd, asd) = match hausdorff_asd(pred, gt, spacing) {
        Ok((h, a)) => (Some(h), Some(a)),
        Err(Error::UndefinedSurfaceDistance(which)) => {
            log::warn!("surface distances undefined: {which} mask is empty");
            (None, None)
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        dice: c.dice(),
        miou: c.iou(),
        hdd_mm: hdd,
        asd_mm: asd,
        precision: c.precision(),
        recall: c.recall(),
        vol_pred_mm3: volume_mm3(pred, spacing),
        vol_gt_mm3: volume_mm3(gt, spacing),
        vol_err_pct: volume_error_pct(pred, gt, spacing)?,
    })
}

/// Dice and in-plane Hausdorff distance of every slice.
pub fn per_slice_scores(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing) -> Result<Vec<SliceScore>> {
    same_shape(pred, gt)?;
    let s = spacing_arr(spacing);
    (0..pred.depth())
        .map(|t| {
            let p = pred.data().index_axis(Axis(0), t).insert_axis(Axis(0)).to_owned();
            let g = gt.data().index_axis(Axis(0), t).insert_axis(Axis(0)).to_owned();
            let hdd = match hd_asd(&p, &g, s) {
                Ok((h, _)) => Some(h),
                Err(Error::UndefinedSurfaceDistance(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SliceScore {
                slice: t,
                dice: counts(&p, &g).dice(),
                hdd_mm: hdd,
            })
        })
        .collect()
}

/// Mean foreground IoU over several structures.
pub fn mean_iou(reports: &[MetricsReport]) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().map(|r| r.miou).sum::<f64>() / reports.len() as f64)
}

pub const REPORT_HEADER: &str = "structure,dice,miou,hdd_mm,asd_mm,precision,recall,vol_pred_mm3,vol_gt_mm3,vol_err_pct";

/// Written in place of a distance that cannot be computed.
pub const UNDEFINED: &str = "undefined";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

pub fn report_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{}",
            r.dice,
            r.miou,
            opt(r.hdd_mm),
            opt(r.asd_mm),
            r.precision,
            r.recall,
            r.vol_pred_mm3,
            r.vol_gt_mm3,
            r.vol_err_pct
        );
    }
    s
}

pub fn per_slice_csv(scores: &[SliceScore]) -> String {
    let mut s = String::from("slice,dice,hdd_mm\n");
    for r in scores {
        let _ = writeln!(s, "{},{},{}", r.slice, r.dice, opt(r.hdd_mm));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mask(dims: (usize, usize, usize), fg: &[Voxel]) -> MaskVolume {
        let mut a = Array3::zeros(dims);
        for p in fg {
            a[*p] = 1;
        }
        MaskVolume::new(a, Spacing::isotropic(1.0)).unwrap()
    }

    #[test]
    fn confusion_enumeration() {
        let p = mask((2, 2, 1), &[[0, 0, 0]]);
        let g = mask((2, 2, 1), &[[0, 0, 0], [0, 1, 0]]);
        let c = confusion_counts(&p, &g).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 0, 1, 2));
        let e = mask((2, 2, 1), &[]);
        let c = confusion_counts(&e, &g).unwrap();
        assert_eq!((c.recall(), c.precision()), (0.0, 1.0));
        let c = confusion_counts(&g, &g).unwrap();
        assert_eq!((c.precision(), c.recall(), c.fp, c.fn_), (1.0, 1.0, 0, 0));
    }

    #[test]
    fn surfaces() {
        let one = mask((3, 3, 3), &[[1, 1, 1]]);
        assert_eq!(surface_voxels(&one), vec![[1, 1, 1]]);
        let cube = MaskVolume::new(Array3::ones((3, 3, 3)), Spacing::isotropic(1.0)).unwrap();
        let s = surface_voxels(&cube);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&[1, 1, 1]));
        assert!(surface_voxels(&mask((3, 3, 3), &[])).is_empty());
    }

    #[test]
    fn singleton_distances() {
        let a = mask((5, 1, 1), &[[0, 0, 0]]);
        let b = mask((5, 1, 1), &[[4, 0, 0]]);
        let sp = Spacing::isotropic(0.5);
        assert_eq!(hausdorff_asd(&a, &b, sp).unwrap(), (2.0, 2.0));
        assert_eq!(hausdorff_asd(&a, &a, sp).unwrap(), (0.0, 0.0));
        let map = surface_error_map(&a, &b, sp).unwrap();
        assert_eq!(map, vec![([0, 0, 0], 2.0)]);
        let e = mask((5, 1, 1), &[]);
        assert_eq!(hausdorff_asd(&e, &b, sp).unwrap_err().kind(), "undefined_surface_distance");
    }

    #[test]
    fn volumes() {
        let fg: Vec<Voxel> = (0..10).flat_map(|z| (0..10).flat_map(move |y| (0..10).map(move |x| [z, y, x]))).collect();
        let m = mask((10, 10, 10), &fg);
        let v = volume_mm3(&m, Spacing::isotropic(0.276993));
        assert_abs_diff_eq!(v, 21.252, epsilon = 1e-3);
        assert_eq!(volume_error_pct(&m, &m, Spacing::isotropic(0.3)).unwrap(), 0.0);
        let e = mask((10, 10, 10), &[]);
        assert!(volume_error_pct(&m, &e, Spacing::isotropic(0.3)).is_err());
    }

    #[test]
    fn report_for_identical_masks_and_empty_prediction() {
        let g = mask((4, 4, 4), &[[1, 1, 1], [1, 2, 1], [2, 1, 1]]);
        let r = evaluate(&g, &g, Spacing::isotropic(1.0)).unwrap();
        assert_eq!((r.dice, r.miou, r.precision, r.recall), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((r.hdd_mm, r.asd_mm, r.vol_err_pct), (Some(0.0), Some(0.0), 0.0));
        let e = mask((4, 4, 4), &[]);
        let r = evaluate(&e, &g, Spacing::isotropic(1.0)).unwrap();
        assert_eq!(r.dice, 0.0);
        assert_eq!(r.hdd_mm, None);
        let csv = report_csv(&[("s0".into(), r)]);
        assert!(csv.starts_with(REPORT_HEADER));
        assert!(csv.contains(",undefined,undefined,"));
    }

    #[test]
    fn per_slice_series() {
        let g = mask((3, 4, 4), &[[0, 1, 1], [1, 1, 1], [1, 2, 2]]);
        let p = mask((3, 4, 4), &[[0, 1, 1], [1, 1, 1]]);
        let s = per_slice_scores(&p, &g, Spacing::isotropic(1.0)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].dice, 1.0);
        assert_eq!(s[2].dice, 1.0);
        assert_eq!(s[2].hdd_mm, None);
        assert!(s[1].dice < 1.0);
        assert!(per_slice_csv(&s).starts_with("slice,dice,hdd_mm\n"));
    }
}
