#![no_main]

use dadi_core::data::{parse_adult, AdultOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for sensitive_acquirable in [true, false] {
        if let Ok((schema, table)) = parse_adult(data, AdultOptions { sensitive_acquirable }) {
            assert_eq!(table.columns.len(), schema.columns().len());
        }
    }
});
