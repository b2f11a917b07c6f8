#![no_main]

use libfuzzer_sys::fuzz_target;
use thermal_face::image_io::SynthSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(spec) = s.parse::<SynthSpec>() {
            assert!(spec.classes >= 2 && spec.per_class >= 1);
            assert!((4..=1024).contains(&spec.side));
        }
    }
});
