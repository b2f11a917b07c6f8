#![no_main]

use libfuzzer_sys::fuzz_target;
use thermal_face::image_io::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    // errors are fine; a decoded image must survive re-encoding
    if let Ok(img) = decode_pgm(data) {
        let again = decode_pgm(&encode_pgm(&img)).expect("encoder output decodes");
        assert_eq!((again.width(), again.height()), (img.width(), img.height()));
    }
});
