//! Every parser entry point is total: arbitrary bytes yield `Ok` or `Err`,
//! never a panic. Inputs are the checked-in fuzz seeds plus mutations.

use std::path::{Path, PathBuf};

use dadi_core::data::cache::{decode_dataset, encode_dataset};
use dadi_core::data::{parse_adult, read_csv_table, AdultOptions, ColumnSpec, FeatureSchema, TargetEncoding};
use dadi_core::eval::parse_report_csv;
use dadi_core::networks::{Checkpoint, ModelBundle};
use dadi_core::runner::parse_config;
use proptest::prelude::*;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.into_iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn adult(data: &[u8]) {
    for sensitive_acquirable in [true, false] {
        if let Ok((schema, table)) = parse_adult(data, AdultOptions { sensitive_acquirable }) {
            assert_eq!(table.columns.len(), schema.columns().len());
        }
    }
}

fn csv_table(data: &[u8]) {
    let schema = FeatureSchema::new(
        vec![ColumnSpec::numeric("x"), ColumnSpec::categorical("c")],
        "s",
        "y",
        false,
    )
    .unwrap();
    let targets = TargetEncoding {
        label_positive: vec!["1".into()],
        sensitive_positive: vec!["f".into()],
    };
    let _ = read_csv_table(data, &schema, targets);
}

fn cache(data: &[u8]) {
    if let Ok(ds) = decode_dataset(data) {
        ds.validate().unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
    }
}

fn checkpoint(data: &[u8]) {
    if let Ok(ck) = Checkpoint::from_slice(data) {
        let _ = ModelBundle::from_checkpoint(&ck);
    }
}

fn config(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = parse_config(text, Path::new("")) {
            assert!(c.gamma_grid.iter().all(|g| (0.0..=1.0).contains(g)));
        }
    }
}

fn report(data: &[u8]) {
    let _ = parse_report_csv(data);
}

const TARGETS: [(&str, fn(&[u8])); 6] = [
    ("adult_parser", adult),
    ("csv_table", csv_table),
    ("dataset_cache", cache),
    ("checkpoint", checkpoint),
    ("experiment_config", config),
    ("report_csv", report),
];

#[test]
fn seeds_decode_as_expected() {
    for (name, run) in TARGETS {
        for seed in corpus(name) {
            run(&seed);
        }
    }
    assert!(corpus("dataset_cache").iter().all(|s| decode_dataset(s).is_ok()));
    assert!(corpus("report_csv").iter().all(|s| parse_report_csv(s).is_ok()));
    let (schema, table) = parse_adult(&corpus("adult_parser")[1][..], AdultOptions::default()).unwrap();
    assert_eq!(schema.columns().len(), 14);
    assert!(table.n_rows() >= 1);
}

#[derive(Debug, Clone)]
enum Edit {
    Flip(usize, u8),
    Truncate(usize),
    Insert(usize, Vec<u8>),
}

fn edits() -> impl Strategy<Value = Vec<Edit>> {
    let edit = prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Edit::Flip(i, b)),
        any::<usize>().prop_map(Edit::Truncate),
        (any::<usize>(), prop::collection::vec(any::<u8>(), 1..8)).prop_map(|(i, v)| Edit::Insert(i, v)),
    ];
    prop::collection::vec(edit, 1..6)
}

fn mutate(mut data: Vec<u8>, edits: &[Edit]) -> Vec<u8> {
    for e in edits {
        match e {
            Edit::Flip(i, b) if !data.is_empty() => {
                let n = data.len();
                data[i % n] ^= b | 1;
            }
            Edit::Truncate(i) => data.truncate(i % (data.len() + 1)),
            Edit::Insert(i, v) => {
                let at = i % (data.len() + 1);
                data.splice(at..at, v.iter().copied());
            }
            _ => {}
        }
    }
    data
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mutated_seeds_never_panic(target in 0..TARGETS.len(), pick in any::<usize>(), e in edits()) {
        let (name, run) = TARGETS[target];
        let seeds = corpus(name);
        run(&mutate(seeds[pick % seeds.len()].clone(), &e));
    }

    #[test]
    fn random_bytes_never_panic(target in 0..TARGETS.len(), data in prop::collection::vec(any::<u8>(), 0..256)) {
        (TARGETS[target].1)(&data);
    }
}
