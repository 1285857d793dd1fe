#![no_main]

use airmark::imaging::{decode_ppm, encode_ppm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        // 8-bit samples survive a second trip exactly.
        let again = decode_ppm(&encode_ppm(&img)).expect("re-decode");
        assert_eq!(again, img);
    }
});
