use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial (whole-channel) dropout probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub encoder: f64,
    pub recurrent: f64,
    pub decoder: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            encoder: 0.1,
            recurrent: 0.4,
            decoder: 0.1,
        }
    }
}

/// Network hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Window depth.
    pub w: usize,
    /// Input height and width (square).
    pub in_hw: usize,
    /// Feature width of each of the five encoder levels.
    pub channels: Vec<usize>,
    pub atrous_rates: Vec<usize>,
    pub dropout: DropoutRates,
    /// Encoder kernel size along every axis.
    pub kernel: usize,
}

pub const LEVELS: usize = 5;

/// Generous upper bounds so untrusted configs cannot request absurd layouts.
const MAX_CHANNELS: usize = 1024;
const MAX_HW: usize = 4096;
const MAX_W: usize = 64;

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            w: 3,
            in_hw: 64,
            channels: vec![8, 8, 16, 16, 32],
            atrous_rates: vec![1, 6, 12, 18],
            dropout: DropoutRates::default(),
            kernel: 3,
        }
    }
}

impl NetConfig {
    /// Full-size layout: 512×512 input, widths [30, 30, 60, 60, 120].
    pub fn full_scale() -> Self {
        NetConfig {
            in_hw: 512,
            channels: vec![30, 30, 60, 60, 120],
            ..Default::default()
        }
    }

    /// Bottleneck spatial size after five halvings.
    pub fn bottleneck_hw(&self) -> usize {
        self.in_hw >> LEVELS
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.len() != LEVELS {
            return bad(format!("expected {LEVELS} channel widths, got {}", self.channels.len()));
        }
        if self.channels.iter().any(|&c| c == 0 || c > MAX_CHANNELS) {
            return bad(format!("channel widths must lie in 1..={MAX_CHANNELS}"));
        }
        if self.in_hw == 0 || !self.in_hw.is_multiple_of(1 << LEVELS) || self.in_hw > MAX_HW {
            return bad(format!("in_hw must be a positive multiple of 32 up to {MAX_HW}, got {}", self.in_hw));
        }
        if self.w == 0 || self.w > MAX_W {
            return bad(format!("w must lie in 1..={MAX_W}"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) || self.kernel > 7 {
            return bad("kernel must be odd, between 1 and 7".into());
        }
        if self.atrous_rates.is_empty() || self.atrous_rates.iter().any(|&r| r == 0 || r > 64) {
            return bad("atrous rates must be non-empty and lie in 1..=64".into());
        }
        let d = self.dropout;
        for p in [d.encoder, d.recurrent, d.decoder] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout probability {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetConfig::default().validate().unwrap();
        NetConfig::full_scale().validate().unwrap();
        assert_eq!(NetConfig::full_scale().bottleneck_hw(), 16);
        assert_eq!(NetConfig::default().bottleneck_hw(), 2);
    }

    #[test]
    fn rejects_bad_layouts() {
        let c = NetConfig {
            in_hw: 48,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = NetConfig::default();
        c.channels.pop();
        assert!(c.validate().is_err());
        let mut c = NetConfig::default();
        c.dropout.recurrent = 1.0;
        assert!(c.validate().is_err());
    }
}
