//! MVOL container: one ASCII header line
//! `MVOL1 <dtype:u8|f32> <T> <H> <W> <sz> <sy> <sx>\n` followed by the raw
//! little-endian payload, slice-major (T outermost, then H, then W).

use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::{MaskVolume, Spacing, Volume};
use crate::error::{Error, Result};

const MAGIC: &str = "MVOL1";
const MAX_HEADER: usize = 512;

/// Decoded MVOL payload: `f32` files are volumes, `u8` files are masks.
#[derive(Clone, Debug, PartialEq)]
pub enum MvolObject {
    Volume(Volume),
    Mask(MaskVolume),
}

impl MvolObject {
    pub fn into_volume(self) -> Result<Volume> {
        match self {
            MvolObject::Volume(v) => Ok(v),
            MvolObject::Mask(_) => Err(Error::Header("expected an f32 volume, found a u8 mask".into())),
        }
    }

    pub fn into_mask(self) -> Result<MaskVolume> {
        match self {
            MvolObject::Mask(m) => Ok(m),
            MvolObject::Volume(_) => Err(Error::Header("expected a u8 mask, found an f32 volume".into())),
        }
    }
}

impl From<Volume> for MvolObject {
    fn from(v: Volume) -> Self {
        MvolObject::Volume(v)
    }
}

impl From<MaskVolume> for MvolObject {
    fn from(m: MaskVolume) -> Self {
        MvolObject::Mask(m)
    }
}

fn header(dtype: &str, (t, h, w): (usize, usize, usize), s: Spacing) -> String {
    // `{}` on f64 prints the shortest representation that parses back exactly.
    format!("{MAGIC} {dtype} {t} {h} {w} {} {} {}\n", s.z, s.y, s.x)
}

pub fn encode_mvol(obj: &MvolObject) -> Vec<u8> {
    match obj {
        MvolObject::Volume(v) => {
            let mut out = header("f32", v.dims(), v.spacing()).into_bytes();
            out.reserve(v.data().len() * 4);
            for x in v.data().iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        MvolObject::Mask(m) => {
            let mut out = header("u8", m.dims(), m.spacing()).into_bytes();
            out.extend(m.data().iter().copied());
            out
        }
    }
}

fn parse_dim(tok: Option<&str>, name: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::Header(format!("missing {name}")))?;
    let v: usize = tok
        .parse()
        .map_err(|_| Error::Header(format!("{name} is not an integer: {tok:?}")))?;
    if v == 0 {
        return Err(Error::Header(format!("{name} must be > 0")));
    }
    Ok(v)
}

fn parse_spacing(tok: Option<&str>, name: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Header(format!("missing {name}")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Header(format!("{name} is not a number: {tok:?}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Header(format!("{name} must be finite and > 0")));
    }
    Ok(v)
}

/// Parses an MVOL byte buffer. Never panics on malformed input.
pub fn decode_mvol(bytes: &[u8]) -> Result<MvolObject> {
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(Error::BadMagic { expected: MAGIC });
    }
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("no header terminator within 512 bytes".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Header("header is not ASCII".into()))?;
    let mut toks = line.split(' ');
    if toks.next() != Some(MAGIC) {
        return Err(Error::BadMagic { expected: MAGIC });
    }
    let dtype = toks.next().ok_or_else(|| Error::Header("missing dtype".into()))?;
    let elem = match dtype {
        "u8" => 1,
        "f32" => 4,
        other => return Err(Error::UnknownDtype(other.to_string())),
    };
    let t = parse_dim(toks.next(), "T")?;
    let h = parse_dim(toks.next(), "H")?;
    let w = parse_dim(toks.next(), "W")?;
    let spacing = Spacing {
        z: parse_spacing(toks.next(), "sz")?,
        y: parse_spacing(toks.next(), "sy")?,
        x: parse_spacing(toks.next(), "sx")?,
    };
    if toks.next().is_some() {
        return Err(Error::Header("trailing header fields".into()));
    }
    let payload = &bytes[nl + 1..];
    let expected = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(elem))
        .ok_or_else(|| Error::Header("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    match elem {
        1 => {
            let data = Array3::from_shape_vec((t, h, w), payload.to_vec())
                .map_err(|e| Error::Header(e.to_string()))?;
            MaskVolume::new(data, spacing).map(MvolObject::Mask)
        }
        _ => {
            let vals: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let data = Array3::from_shape_vec((t, h, w), vals).map_err(|e| Error::Header(e.to_string()))?;
            Volume::new(data, spacing).map(MvolObject::Volume)
        }
    }
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<MvolObject> {
    decode_mvol(&fs::read(path)?)
}

pub fn write_mvol(obj: &MvolObject, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_mvol(obj))?;
    Ok(())
}
