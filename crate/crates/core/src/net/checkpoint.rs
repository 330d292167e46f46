//! Checkpoint container.
//!
//! ```text
//! IFSSCKPT1\n
//! {json header}\n
//! payload: every parameter as little-endian f64, in header order
//! ```
//!
//! The header carries the network configuration, the loss parameters, the
//! dropout RNG position and the name and shape of every tensor. Loading
//! checks all of it against the architecture before allocating.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::model::{IfssNet, ModelState};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::loss::LossParams;

pub const MAGIC: &str = "IFSSCKPT1\n";
const MAX_HEADER: usize = 1 << 20;

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    loss: LossParams,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    if !state.params.is_initialized() {
        return Err(Error::Uninitialized("cannot save a model without parameter values"));
    }
    let header = Header {
        config: state.config.clone(),
        loss: state.loss,
        rng: RngState {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        tensors: state
            .params
            .specs()
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&header).map_err(|e| ckpt_err(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 8 * state.params.numel());
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for t in state.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and validates a checkpoint; never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(IfssNet, ModelState)> {
    let rest = bytes
        .strip_prefix(MAGIC.as_bytes())
        .ok_or(Error::BadMagic { expected: "IFSSCKPT1" })?;
    let nl = rest
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("checkpoint header is not terminated".into()))?;
    let header: Header =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Header(format!("checkpoint header: {e}")))?;
    let payload = &rest[nl + 1..];

    let (net, mut state) = ModelState::uninit(&header.config)?;
    let specs = state.params.specs();
    if specs.len() != header.tensors.len() {
        return Err(ckpt_err(format!(
            "architecture has {} tensors, checkpoint lists {}",
            specs.len(),
            header.tensors.len()
        )));
    }
    for (s, t) in specs.iter().zip(&header.tensors) {
        if s.name != t.name || s.shape != t.shape {
            return Err(ckpt_err(format!(
                "tensor {} {:?} does not match architecture entry {} {:?}",
                t.name, t.shape, s.name, s.shape
            )));
        }
    }
    let expected = state
        .params
        .numel()
        .checked_mul(8)
        .ok_or_else(|| ckpt_err("parameter count overflows"))?;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }

    let mut chunks = payload.chunks_exact(8).map(|c| {
        let mut b = [0u8; 8];
        b.copy_from_slice(c);
        f64::from_le_bytes(b)
    });
    let tensors = specs
        .iter()
        .map(|s| Tensor::from_vec(&s.shape, chunks.by_ref().take(s.numel()).collect()))
        .collect();
    state.params.set_tensors(tensors).map_err(ckpt_err)?;

    let seed = unhex32(&header.rng.seed).ok_or_else(|| ckpt_err("rng seed must be 64 hex digits"))?;
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| ckpt_err("rng word position is not an integer"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    let l = header.loss;
    if !(l.a.is_finite() && l.b.is_finite() && l.lambda.is_finite() && l.lambda >= 0.0) {
        return Err(ckpt_err("loss parameters must be finite with lambda >= 0"));
    }
    state.loss = l;
    Ok((net, state))
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(IfssNet, ModelState)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            in_hw: 32,
            channels: vec![2, 2, 2, 2, 4],
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let (_, mut st) = ModelState::init(&tiny(), 11).unwrap();
        st.loss.a = 0.123456789;
        let _: u64 = st.rng.random();
        let bytes = encode_checkpoint(&st).unwrap();
        let (_, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, st.params);
        assert_eq!(back.loss, st.loss);
        assert_eq!(back.rng, st.rng);
        assert_eq!(back.config, st.config);
    }

    proptest::proptest! {
        #[test]
        fn loss_parameters_round_trip_bitwise(a in -30.0f64..30.0, b in -30.0f64..30.0, lambda in 0.0f64..1.0) {
            let (_, mut st) = ModelState::init(&tiny(), 3).unwrap();
            st.loss = LossParams { a, b, lambda };
            let (_, back) = decode_checkpoint(&encode_checkpoint(&st).unwrap()).unwrap();
            proptest::prop_assert_eq!(back.loss.a.to_bits(), a.to_bits());
            proptest::prop_assert_eq!(back.loss.b.to_bits(), b.to_bits());
            proptest::prop_assert_eq!(back.loss.lambda.to_bits(), lambda.to_bits());
        }
    }

    #[test]
    fn corruption_is_reported() {
        let (_, st) = ModelState::init(&tiny(), 1).unwrap();
        let bytes = encode_checkpoint(&st).unwrap();
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().kind(), "payload_size");
        assert_eq!(decode_checkpoint(b"NOPE").unwrap_err().kind(), "bad_magic");
        let mut bad = bytes.clone();
        let pos = bytes.iter().position(|&b| b == b'{').unwrap();
        bad[pos] = b'[';
        assert_eq!(decode_checkpoint(&bad).unwrap_err().kind(), "header");
    }

    #[test]
    fn uninitialised_state_cannot_be_saved() {
        let (_, st) = ModelState::uninit(&tiny()).unwrap();
        assert!(encode_checkpoint(&st).is_err());
    }
}
