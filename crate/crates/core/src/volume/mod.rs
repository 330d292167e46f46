//! Volumes, masks, the MVOL container, sliding windows and annotation schedules.

mod mvol;
mod schedule;
mod window;

use ndarray::{Array3, ArrayView2, Axis};

use crate::autograd::Tensor;
use crate::error::{invalid, shape_err, Result};

pub use mvol::{decode_mvol, encode_mvol, read_mvol, write_mvol, MvolObject};
pub use schedule::{
    annotation_fraction, decremental_schedule, fixed_interval_schedule, format_schedules,
    parse_schedules, AnnotationSchedule, DecrementalParams,
};
pub use window::{make_windows, SubVolumeWindow};

/// Physical voxel edge lengths in millimetres, ordered (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl Spacing {
    pub fn new(z: f64, y: f64, x: f64) -> Result<Self> {
        let s = Spacing { z, y, x };
        s.validate()?;
        Ok(s)
    }

    pub fn isotropic(v: f64) -> Self {
        Spacing { z: v, y: v, x: v }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.z, self.y, self.x] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("voxel spacing must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn voxel_volume(&self) -> f64 {
        self.z * self.y * self.x
    }

    pub fn scaled(&self, s: f64) -> Spacing {
        Spacing {
            z: self.z * s,
            y: self.y * s,
            x: self.x * s,
        }
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::isotropic(1.0)
    }
}

/// Grayscale image stack, `T × H × W`, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: Spacing,
}

impl Volume {
    pub fn new(data: Array3<f32>, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        if data.dim().0 == 0 || data.dim().1 == 0 || data.dim().2 == 0 {
            return Err(shape_err("volume dimensions must be non-zero"));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("volume intensity {v} outside [0, 1]")));
        }
        Ok(Volume { data, spacing })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn depth(&self) -> usize {
        self.data.dim().0
    }

    /// (T, H, W)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Slices at `indices` as a `[1, len, H, W]` network input.
    pub fn window_tensor(&self, indices: &[usize]) -> Tensor {
        let (_, h, w) = self.dims();
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &t in indices {
            data.extend(self.data.index_axis(Axis(0), t).iter().map(|&v| v as f64));
        }
        Tensor::from_vec(&[1, indices.len(), h, w], data)
    }
}

/// Binary label stack aligned to a [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    data: Array3<u8>,
    spacing: Spacing,
}

impl MaskVolume {
    pub fn new(data: Array3<u8>, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(crate::Error::MaskNotBinary { value, index });
        }
        Ok(MaskVolume { data, spacing })
    }

    pub fn zeros(dims: (usize, usize, usize), spacing: Spacing) -> Self {
        MaskVolume {
            data: Array3::zeros(dims),
            spacing,
        }
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn depth(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn slice(&self, t: usize) -> ArrayView2<'_, u8> {
        self.data.index_axis(Axis(0), t)
    }

    /// Overwrites slice `t`; values other than 0 are stored as 1.
    pub fn set_slice(&mut self, t: usize, src: ArrayView2<'_, u8>) {
        self.data
            .index_axis_mut(Axis(0), t)
            .zip_mut_with(&src, |d, &s| *d = u8::from(s != 0));
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn slice_count(&self, t: usize) -> usize {
        self.slice(t).iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Slices at `indices` as a `[2, len, H, W]` one-hot tensor: channel 0
    /// foreground, channel 1 background, so the channels sum to one.
    pub fn window_tensor(&self, indices: &[usize]) -> Tensor {
        let slices: Vec<ArrayView2<'_, u8>> = indices.iter().map(|&t| self.slice(t)).collect();
        two_channel(&slices)
    }
}

/// One-hot `[2, len, H, W]` encoding of binary planes.
pub fn two_channel(slices: &[ArrayView2<'_, u8>]) -> Tensor {
    let (h, w) = slices[0].dim();
    let plane = h * w;
    let n = slices.len();
    let mut data = vec![0.0; 2 * n * plane];
    for (d, s) in slices.iter().enumerate() {
        for (i, &v) in s.iter().enumerate() {
            let fg = f64::from(v);
            data[d * plane + i] = fg;
            data[(n + d) * plane + i] = 1.0 - fg;
        }
    }
    Tensor::from_vec(&[2, n, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn two_channel_encoding_sums_to_one() {
        let mut a = Array2::<u8>::zeros((3, 4));
        a[[1, 2]] = 1;
        let t = two_channel(&[a.view(), a.view()]);
        let per = t.len() / 2;
        for i in 0..per {
            assert_eq!(t.data()[i] + t.data()[per + i], 1.0);
        }
        assert_eq!(t.shape(), &[2, 2, 3, 4]);
    }

    #[test]
    fn mask_rejects_non_binary() {
        let mut a = Array3::<u8>::zeros((1, 2, 2));
        a[[0, 1, 1]] = 2;
        assert!(matches!(
            MaskVolume::new(a, Spacing::default()),
            Err(crate::Error::MaskNotBinary { value: 2, index: 3 })
        ));
    }

    #[test]
    fn spacing_must_be_positive() {
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, f64::NAN, 1.0).is_err());
    }
}
