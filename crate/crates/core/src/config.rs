//! Flat `key = value` experiment configs. Blank lines and `#` comments are
//! ignored; duplicate or unrecognised keys are errors.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::WindowFactor;
use crate::net::NetConfig;
use crate::phantom::PhantomSpec;
use crate::train::TrainConfig;
use crate::volume::{DecrementalParams, Spacing};

/// Parsed key/value pairs, consumed by the typed readers below.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(cfg_err(format!("line {}: bad key {k:?}", n + 1)));
            }
            if v.is_empty() {
                return Err(cfg_err(format!("line {}: key {k:?} has no value", n + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.entries
            .remove(key)
            .map(|v| v.parse().map_err(|_| cfg_err(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.entries
            .remove(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse().map_err(|_| cfg_err(format!("{key}: cannot parse {v:?}"))))
                    .collect()
            })
            .transpose()
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on any key no reader has consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(cfg_err(format!("unknown key {k:?}"))),
        }
    }
}

fn take_spacing(kv: &mut KvConfig, slot: &mut Spacing) -> Result<()> {
    if let Some(v) = kv.take_list::<f64>("spacing")? {
        *slot = match v[..] {
            [s] => Spacing::new(s, s, s)?,
            [z, y, x] => Spacing::new(z, y, x)?,
            _ => return Err(cfg_err("spacing takes one or three values")),
        };
    }
    Ok(())
}

/// A set of phantoms: patient `i` is generated from `base` with seed `base.seed + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub base: PhantomSpec,
}

impl DatasetSpec {
    pub fn patient(&self, i: usize) -> PhantomSpec {
        PhantomSpec {
            seed: self.base.seed.wrapping_add(i as u64),
            ..self.base.clone()
        }
    }
}

/// Keys: `count seed depth height width n_structures spacing noise_level deform_smoothness`.
pub fn dataset_spec(text: &str) -> Result<DatasetSpec> {
    let mut kv = KvConfig::parse(text)?;
    let mut base = PhantomSpec::default();
    let mut count = 1usize;
    kv.set("count", &mut count)?;
    kv.set("seed", &mut base.seed)?;
    kv.set("depth", &mut base.depth)?;
    kv.set("height", &mut base.height)?;
    kv.set("width", &mut base.width)?;
    kv.set("n_structures", &mut base.n_structures)?;
    take_spacing(&mut kv, &mut base.spacing)?;
    kv.set("noise_level", &mut base.noise_level)?;
    kv.set("deform_smoothness", &mut base.deform_smoothness)?;
    kv.finish()?;
    if count == 0 {
        return Err(cfg_err("count must be >= 1"));
    }
    base.validate()?;
    Ok(DatasetSpec { count, base })
}

/// Everything the `train` command needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Used in few-shot mode when a patient carries no schedule of its own.
    pub decremental: DecrementalParams,
}

/// Keys: training (`epochs lr_init lr_final final_lr_epochs tbptt_chunk seed
/// teacher_forcing window_factor lambda`), network (`w channels
/// atrous_rates kernel dropout_encoder dropout_recurrent dropout_decoder`)
/// and decremental schedule (`init_frac floor_frac budget_frac`).
pub fn train_setup(text: &str) -> Result<TrainSetup> {
    let mut kv = KvConfig::parse(text)?;
    let mut t = TrainConfig::default();
    kv.set("epochs", &mut t.epochs)?;
    kv.set("lr_init", &mut t.lr_init)?;
    kv.set("lr_final", &mut t.lr_final)?;
    kv.set("final_lr_epochs", &mut t.final_lr_epochs)?;
    kv.set("tbptt_chunk", &mut t.tbptt_chunk)?;
    kv.set("seed", &mut t.seed)?;
    kv.set("teacher_forcing", &mut t.teacher_forcing)?;
    if let Some(s) = kv.take::<String>("window_factor")? {
        t.window_factor = WindowFactor::parse(&s)?;
    }
    kv.set("lambda", &mut t.lambda)?;

    let mut n = NetConfig::default();
    kv.set("w", &mut n.w)?;
    if let Some(c) = kv.take_list("channels")? {
        n.channels = c;
    }
    if let Some(r) = kv.take_list("atrous_rates")? {
        n.atrous_rates = r;
    }
    kv.set("kernel", &mut n.kernel)?;
    kv.set("dropout_encoder", &mut n.dropout.encoder)?;
    kv.set("dropout_recurrent", &mut n.dropout.recurrent)?;
    kv.set("dropout_decoder", &mut n.dropout.decoder)?;

    let mut d = DecrementalParams::default();
    kv.set("init_frac", &mut d.init_frac)?;
    kv.set("floor_frac", &mut d.floor_frac)?;
    kv.set("budget_frac", &mut d.budget_frac)?;
    kv.finish()?;
    d.w = n.w;
    n.validate()?;
    t.validate()?;
    Ok(TrainSetup {
        net: n,
        train: t,
        decremental: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KvConfig::parse("# header\n\n epochs = 3  # trailing\nlr_init=0.001\n").unwrap();
        let s = train_setup("epochs = 3\nlr_init=0.001\nchannels = 4, 4, 8, 8, 16\n").unwrap();
        assert!(!kv.is_empty());
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.lr_init, 0.001);
        assert_eq!(s.net.channels, vec![4, 4, 8, 8, 16]);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        let e = train_setup("epoch = 3\n").unwrap_err();
        assert!(e.to_string().contains("unknown key \"epoch\""), "{e}");
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
        assert!(KvConfig::parse("no equals sign\n").is_err());
        assert!(KvConfig::parse("a =\n").is_err());
        assert!(dataset_spec("depth = eighty\n").is_err());
    }

    #[test]
    fn dataset_spec_reads_spacing_and_count() {
        let d = dataset_spec("count = 4\nseed = 10\nspacing = 0.5, 0.25, 0.25\n").unwrap();
        assert_eq!(d.count, 4);
        assert_eq!(d.base.spacing, Spacing::new(0.5, 0.25, 0.25).unwrap());
        assert_eq!(d.patient(3).seed, 13);
        let d = dataset_spec("spacing = 0.3\n").unwrap();
        assert_eq!(d.base.spacing, Spacing::isotropic(0.3));
        assert!(dataset_spec("spacing = 1, 2\n").is_err());
        assert!(dataset_spec("depth = 4\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected_after_parsing() {
        assert!(train_setup("tbptt_chunk = 0\n").is_err());
        assert!(train_setup("channels = 1, 2\n").is_err());
        assert!(train_setup("window_factor = sometimes\n").is_err());
        assert_eq!(train_setup("").unwrap().train, TrainConfig::default());
    }
}
