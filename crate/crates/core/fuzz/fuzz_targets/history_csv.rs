#![no_main]

use libfuzzer_sys::fuzz_target;
use thermal_face::train::TrainHistory;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(h) = TrainHistory::parse_csv(text) {
        assert!(!h.is_empty());
        let csv = h.to_csv().expect("parsed history is nonempty");
        assert_eq!(TrainHistory::parse_csv(&csv).unwrap().len(), h.len());
    }
});
