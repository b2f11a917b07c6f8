#![no_main]

use libfuzzer_sys::fuzz_target;
use thermal_face::model::decode_weights;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_weights(data) {
        for t in tensors {
            assert_eq!(t.tensor.len(), t.tensor.shape().iter().product::<usize>());
        }
    }
});
