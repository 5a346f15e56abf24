#![no_main]

use dadi_core::data::cache::{decode_dataset, encode_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_dataset(data) {
        ds.validate().unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
    }
});
