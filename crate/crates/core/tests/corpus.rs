//! Replays the fuzz corpus and the shipped configs through the decoders.

use std::path::{Path, PathBuf};

use parfed::harness::{parse_histogram_config, parse_manifest};
use parfed::trace::{decode_params, encode_params, read_trace_csv, write_trace_csv};
use parfed::{decode_bits, encode_bits};

fn files(rel: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel);
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "{} is empty", dir.display());
    out
}

#[test]
fn bit_corpus_round_trips() {
    let mut decoded = 0;
    for p in files("fuzz/corpus/decode_bits") {
        let data = std::fs::read(&p).unwrap();
        let (&d, bytes) = data.split_first().unwrap();
        if let Ok(v) = decode_bits(bytes, d as usize) {
            assert_eq!(encode_bits(&v).unwrap(), bytes);
            decoded += 1;
        }
    }
    assert!(decoded >= 3);
}

#[test]
fn param_corpus_round_trips() {
    let mut decoded = 0;
    for p in files("fuzz/corpus/decode_params") {
        let text = std::fs::read_to_string(&p).unwrap();
        if let Ok(v) = decode_params(&text) {
            assert_eq!(encode_params(&v), text);
            decoded += 1;
        }
    }
    assert!(decoded >= 3);
}

#[test]
fn trace_corpus_round_trips() {
    for p in files("fuzz/corpus/read_trace_csv") {
        let bytes = std::fs::read(&p).unwrap();
        let records = read_trace_csv(bytes.as_slice()).unwrap();
        let mut out = Vec::new();
        write_trace_csv(&records, &mut out).unwrap();
        assert_eq!(out, bytes, "{}", p.display());
    }
}

#[test]
fn shipped_configs_parse() {
    for p in files("configs") {
        let text = std::fs::read_to_string(&p).unwrap();
        if p.file_stem().unwrap() == "histogram" {
            parse_histogram_config(&text).unwrap();
            continue;
        }
        let m = parse_manifest(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let echo = m.resolved_json().unwrap();
        assert_eq!(
            parse_manifest(&echo).unwrap().resolved_json().unwrap(),
            echo
        );
    }
    for p in files("fuzz/corpus/parse_manifest") {
        parse_manifest(&std::fs::read_to_string(&p).unwrap()).unwrap();
    }
}
