use crate::error::{invalid, Result};

/// `width` consecutive slices starting at `start`; one recurrence step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubVolumeWindow {
    pub start: usize,
    pub width: usize,
}

impl SubVolumeWindow {
    /// Image slices `[start, start + width)`.
    pub fn slices(&self) -> Vec<usize> {
        (self.start..self.start + self.width).collect()
    }

    /// The previous-step mask window, one slice behind: `[start - 1, start + width - 1)`.
    /// At the first step the out-of-range slice is clamped to 0.
    pub fn prev_mask_slices(&self) -> Vec<usize> {
        (0..self.width)
            .map(|j| (self.start + j).saturating_sub(1))
            .collect()
    }

    /// Newest slice in the window.
    pub fn last(&self) -> usize {
        self.start + self.width - 1
    }
}

/// All `T - w + 1` overlapping windows with step 1.
pub fn make_windows(depth: usize, width: usize) -> Result<Vec<SubVolumeWindow>> {
    if width == 0 {
        return Err(invalid("window width must be >= 1"));
    }
    if width > depth {
        return Err(invalid(format!("window width {width} exceeds depth {depth}")));
    }
    Ok((0..=depth - width)
        .map(|start| SubVolumeWindow { start, width })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_and_starts() {
        assert_eq!(make_windows(1400, 3).unwrap().len(), 1398);
        assert_eq!(make_windows(3, 3).unwrap(), vec![SubVolumeWindow { start: 0, width: 3 }]);
        let starts: Vec<_> = make_windows(5, 3).unwrap().iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 1, 2]);
        assert!(make_windows(2, 3).is_err());
        assert!(make_windows(2, 0).is_err());
    }

    #[test]
    fn mask_window_is_offset_by_one() {
        let w = SubVolumeWindow { start: 4, width: 3 };
        assert_eq!(w.slices(), vec![4, 5, 6]);
        assert_eq!(w.prev_mask_slices(), vec![3, 4, 5]);
        assert_eq!(SubVolumeWindow { start: 0, width: 3 }.prev_mask_slices(), vec![0, 0, 1]);
    }

    proptest! {
        #[test]
        fn every_late_slice_ends_exactly_one_window(depth in 1usize..200, width in 1usize..8) {
            prop_assume!(width <= depth);
            let ws = make_windows(depth, width).unwrap();
            prop_assert_eq!(ws.len(), depth - width + 1);
            for t in width - 1..depth {
                prop_assert_eq!(ws.iter().filter(|w| w.last() == t).count(), 1);
            }
        }
    }
}
