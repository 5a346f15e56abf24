#![no_main]

use dadi_core::networks::{Checkpoint, ModelBundle};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_slice(data) {
        let _ = ModelBundle::from_checkpoint(&ck);
    }
});
