use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use simplex_tf::experiments::ExperimentConfig;
use simplex_tf::symbols::SymbolDescriptor;
use simplex_tf::tiles::Universe;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fuzz/corpus")).join(target);
    let mut out: Vec<(PathBuf, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn config_round_trip(text: &str) -> bool {
    match text.parse::<ExperimentConfig>() {
        Ok(cfg) => {
            let again: ExperimentConfig = cfg.to_string().parse().expect("printed config parses");
            assert_eq!(again, cfg);
            true
        }
        Err(_) => false,
    }
}

fn universe_round_trip(text: &str) -> bool {
    match text.parse::<Universe>() {
        Ok(u) => {
            let again: Universe = u.to_string().parse().expect("printed universe parses");
            assert_eq!(again.0, u.0);
            true
        }
        Err(_) => false,
    }
}

fn descriptor_round_trip(text: &str) -> bool {
    match SymbolDescriptor::from_json(text) {
        Ok(d) => {
            assert_eq!(SymbolDescriptor::from_json(&d.to_json()).expect("serialised descriptor parses"), d);
            true
        }
        Err(_) => false,
    }
}

#[test]
fn config_seeds_parse_and_round_trip() {
    for (path, text) in seeds("config_parse") {
        assert!(config_round_trip(&text), "{}", path.display());
    }
}

#[test]
fn universe_seeds_parse_and_round_trip() {
    for (path, text) in seeds("universe_parse") {
        assert!(universe_round_trip(&text), "{}", path.display());
    }
}

#[test]
fn descriptor_seeds_parse_and_round_trip() {
    for (path, text) in seeds("symbol_descriptor") {
        assert!(descriptor_round_trip(&text), "{}", path.display());
    }
}

/// Replaces the byte range `at..at + len` (clamped to char boundaries) of a seed by `insert`.
fn mutate(seed: &str, at: usize, len: usize, insert: &str) -> String {
    let mut start = at % (seed.len() + 1);
    while !seed.is_char_boundary(start) {
        start -= 1;
    }
    let mut end = (start + len).min(seed.len());
    while !seed.is_char_boundary(end) {
        end += 1;
    }
    format!("{}{insert}{}", &seed[..start], &seed[end..])
}

proptest! {
    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        config_round_trip(&text);
        universe_round_trip(&text);
        descriptor_round_trip(&text);
    }

    #[test]
    fn mutated_seeds_never_panic(which in 0usize..64, at in 0usize..4096, len in 0usize..16, insert in "[ -~\\n]{0,12}") {
        let configs = seeds("config_parse");
        let universes = seeds("universe_parse");
        let descriptors = seeds("symbol_descriptor");
        config_round_trip(&mutate(&configs[which % configs.len()].1, at, len, &insert));
        universe_round_trip(&mutate(&universes[which % universes.len()].1, at, len, &insert));
        descriptor_round_trip(&mutate(&descriptors[which % descriptors.len()].1, at, len, &insert));
    }
}
