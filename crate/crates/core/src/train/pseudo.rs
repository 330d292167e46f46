use ndarray::Array2;

use crate::autograd::Tensor;
use crate::baseline::zero_order_propagate;
use crate::error::{shape_err, Error, Result};
use crate::propagate::binarize_slice;
use crate::volume::{AnnotationSchedule, MaskVolume, SubVolumeWindow};

/// Per-slice training labels for one patient: ground truth on annotated
/// slices, the model's latest binarised estimate elsewhere. Unannotated slices
/// start as a copy of the nearest annotation.
#[derive(Clone, Debug)]
pub struct PseudoLabelBuffer {
    labels: MaskVolume,
    annotated: Vec<bool>,
}

impl PseudoLabelBuffer {
    pub fn new(gt: &MaskVolume, schedule: &AnnotationSchedule) -> Result<Self> {
        let labels = zero_order_propagate(gt, schedule)?;
        let annotated = (0..gt.depth()).map(|t| schedule.contains(t)).collect();
        Ok(PseudoLabelBuffer { labels, annotated })
    }

    pub fn labels(&self) -> &MaskVolume {
        &self.labels
    }

    pub fn is_annotated(&self, t: usize) -> bool {
        self.annotated.get(t).copied().unwrap_or(false)
    }

    /// 2-channel labels of `slices`.
    pub fn window(&self, slices: &[usize]) -> Tensor {
        self.labels.window_tensor(slices)
    }

    /// Overwrites the window's unannotated slices with the binarised prediction.
    pub fn refresh(&mut self, win: SubVolumeWindow, probs: &Tensor) -> Result<()> {
        let [c, w, h, wd] = probs.dims4();
        let (_, bh, bw) = self.labels.dims();
        if c != 2 || w != win.width || h != bh || wd != bw || win.last() >= self.labels.depth() {
            return Err(shape_err(format!(
                "prediction {:?} does not fit window at {} of buffer {:?}",
                probs.shape(),
                win.start,
                self.labels.dims()
            )));
        }
        for (j, t) in win.slices().into_iter().enumerate() {
            if !self.annotated[t] {
                let s: Array2<u8> = binarize_slice(probs, j);
                self.labels.set_slice(t, s.view());
            }
        }
        Ok(())
    }
}

/// Targets for a window: ground truth on annotated slices, pseudo-labels elsewhere.
pub fn few_shot_step_targets(
    win: SubVolumeWindow,
    gt: &MaskVolume,
    schedule: &AnnotationSchedule,
    buffer: &PseudoLabelBuffer,
) -> Tensor {
    let slices: Vec<_> = win
        .slices()
        .into_iter()
        .map(|t| {
            if schedule.contains(t) {
                gt.slice(t)
            } else {
                buffer.labels().slice(t)
            }
        })
        .collect();
    crate::volume::two_channel(&slices)
}

/// Visiting order of patients: most annotated first, ties in input order.
pub fn decremental_curriculum(schedules: &[AnnotationSchedule], n_patients: usize) -> Result<Vec<usize>> {
    if schedules.len() != n_patients {
        return Err(Error::Schedule(format!(
            "{} schedules for {n_patients} patients",
            schedules.len()
        )));
    }
    let mut order: Vec<usize> = (0..n_patients).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(schedules[i].len()));
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{decremental_schedule, DecrementalParams, Spacing};
    use ndarray::Array3;

    fn gt(depth: usize) -> MaskVolume {
        let data = Array3::from_shape_fn((depth, 4, 4), |(t, y, x)| u8::from((t + y + x) % 3 == 0));
        MaskVolume::new(data, Spacing::isotropic(1.0)).unwrap()
    }

    fn probs_all(v: f64, w: usize) -> Tensor {
        let mut d = vec![v; w * 16];
        d.extend(vec![1.0 - v; w * 16]);
        Tensor::from_vec(&[2, w, 4, 4], d)
    }

    #[test]
    fn full_annotation_reduces_to_ground_truth() {
        let g = gt(6);
        let s = AnnotationSchedule::full(6);
        let mut b = PseudoLabelBuffer::new(&g, &s).unwrap();
        let win = SubVolumeWindow { start: 2, width: 3 };
        b.refresh(win, &probs_all(0.9, 3)).unwrap();
        assert_eq!(few_shot_step_targets(win, &g, &s, &b), g.window_tensor(&[2, 3, 4]));
        assert_eq!(b.labels(), &g);
    }

    #[test]
    fn unannotated_window_uses_previous_pseudo_labels() {
        let g = gt(8);
        let s = AnnotationSchedule::new(8, [0, 1, 2]).unwrap();
        let mut b = PseudoLabelBuffer::new(&g, &s).unwrap();
        let w1 = SubVolumeWindow { start: 4, width: 3 };
        b.refresh(w1, &probs_all(0.8, 3)).unwrap();
        let w2 = SubVolumeWindow { start: 5, width: 3 };
        let t = few_shot_step_targets(w2, &g, &s, &b);
        // Slices 5 and 6 come from the refresh (all foreground), slice 7 from
        // the initial copy of slice 2.
        let plane = 16;
        assert!(t.data()[..2 * plane].iter().all(|&v| v == 1.0));
        let s7: Vec<f64> = g.slice(2).iter().map(|&v| f64::from(v)).collect();
        assert_eq!(&t.data()[2 * plane..3 * plane], &s7[..]);
    }

    #[test]
    fn mixed_window_keeps_ground_truth() {
        let g = gt(6);
        let s = AnnotationSchedule::new(6, [0, 1, 2, 4]).unwrap();
        let mut b = PseudoLabelBuffer::new(&g, &s).unwrap();
        let win = SubVolumeWindow { start: 3, width: 3 };
        b.refresh(win, &probs_all(1.0, 3)).unwrap();
        assert_eq!(b.labels().slice(4), g.slice(4));
        assert!(b.labels().slice(3).iter().all(|&v| v == 1));
        assert!(b.is_annotated(4) && !b.is_annotated(3));
    }

    #[test]
    fn curriculum_sorts_by_annotation_count() {
        let sch = decremental_schedule(&[1400; 29], &DecrementalParams::default()).unwrap();
        let order = decremental_curriculum(&sch, 29).unwrap();
        assert_eq!(order[0], 0);
        assert_eq!(sch[order[0]].len(), 230);
        assert_eq!(sch[order[1]].len(), 115);
        let mut shuffled = sch.clone();
        shuffled.swap(0, 5);
        shuffled.swap(1, 17);
        let order = decremental_curriculum(&shuffled, 29).unwrap();
        let counts: Vec<usize> = order.iter().map(|&i| shuffled[i].len()).collect();
        assert!(counts.windows(2).all(|p| p[0] >= p[1]));
        assert_eq!(order[0], 5);
        assert!(decremental_curriculum(&sch, 28).is_err());
        assert_eq!(decremental_curriculum(&sch[..1], 1).unwrap(), vec![0]);
    }
}
