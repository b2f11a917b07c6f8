#![no_main]

use libfuzzer_sys::fuzz_target;
use thermal_face::cli::{config_to_args, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entries) = parse_config(text) {
        for sub in ["denoise", "summary", "train", "evaluate"] {
            let _ = config_to_args(&entries, sub);
        }
    }
});
