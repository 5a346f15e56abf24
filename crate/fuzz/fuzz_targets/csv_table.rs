#![no_main]

use dadi_core::data::{encode_features, read_csv_table, ColumnSpec, FeatureSchema, TargetEncoding};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
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
    let Ok(table) = read_csv_table(data, &schema, targets) else { return };
    let train: Vec<usize> = (0..table.n_rows()).collect();
    if let Ok(ds) = encode_features(&schema, &table, &train) {
        ds.validate().unwrap();
    }
});
