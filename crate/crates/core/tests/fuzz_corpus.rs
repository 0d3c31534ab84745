//! The checked-in fuzz seeds must stay accepted by their parsers.

use std::path::PathBuf;

use aadmm::bench::{csv_string, read_csv, BenchConfig};
use aadmm::io::{instance_to_string, parse_certificate, parse_instance, verify_certificate, InstanceFile};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn instance_seeds_round_trip() {
    for (path, text) in seeds("instance_json") {
        let inst = parse_instance(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = parse_instance(&instance_to_string(&InstanceFile::from_loaded(&inst)).unwrap()).unwrap();
        assert_eq!(again, inst, "{}", path.display());
    }
}

#[test]
fn certificate_seeds_verify() {
    let dqp = parse_instance(&std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/instance_json/dqp.json"),
    )
    .unwrap())
    .unwrap();
    for (path, text) in seeds("certificate_json") {
        let cert = parse_certificate(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if path.ends_with("cert.json") {
            assert!(verify_certificate(&dqp.problem, &cert).unwrap().passed());
        }
    }
}

#[test]
fn bench_config_seeds_parse() {
    for (path, text) in seeds("bench_toml") {
        let cfg = BenchConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!cfg.instances().is_empty());
    }
}

#[test]
fn csv_seeds_round_trip() {
    for (path, text) in seeds("results_csv") {
        let rows = read_csv(text.as_bytes()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(csv_string(&rows).unwrap(), text);
    }
}
