//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets exercise, so regressions show up without a fuzzing toolchain.

use std::fs;
use std::path::PathBuf;

use ifss_core::config::{dataset_spec, train_setup};
use ifss_core::net::decode_checkpoint;
use ifss_core::volume::{decode_mvol, encode_mvol, parse_schedules};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn mvol_seeds() {
    for (name, bytes) in seeds("mvol_decode") {
        let r = decode_mvol(&bytes);
        match name.as_str() {
            "mask" | "volume" => {
                let obj = r.unwrap();
                assert_eq!(encode_mvol(&obj), bytes);
            }
            _ => assert!(r.is_err(), "{name} should be rejected"),
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint_decode") {
        let r = decode_checkpoint(&bytes);
        assert_eq!(r.is_ok(), name == "tiny", "{name}");
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        match name.as_str() {
            "train" => assert!(train_setup(&text).is_ok()),
            "dataset" => assert!(dataset_spec(&text).is_ok()),
            _ => assert!(train_setup(&text).is_err() && dataset_spec(&text).is_err()),
        }
    }
}

#[test]
fn schedule_seeds() {
    for (name, bytes) in seeds("schedule_parse") {
        let r = parse_schedules(&String::from_utf8(bytes).unwrap());
        match name.as_str() {
            "decremental" => assert_eq!(r.unwrap().len(), 6),
            "interval" => assert_eq!(r.unwrap()[0].len(), 42),
            _ => assert!(r.is_err()),
        }
    }
}
