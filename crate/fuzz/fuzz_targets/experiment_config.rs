#![no_main]

use std::path::Path;

use dadi_core::runner::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = parse_config(text, Path::new("")) {
            assert!(c.gamma_grid.iter().all(|g| (0.0..=1.0).contains(g)));
            assert!(c.folds.iter().all(|&f| f < c.n_folds));
        }
    }
});
