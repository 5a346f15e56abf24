#![no_main]

use dadi_core::eval::parse_report_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_report_csv(data);
});
