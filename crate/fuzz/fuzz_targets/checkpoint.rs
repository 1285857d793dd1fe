#![no_main]

use airmark::classifier::{load_checkpoint, save_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = load_checkpoint(data) {
        let bytes = save_checkpoint(&ck.network, &ck.config, ck.seed);
        let again = load_checkpoint(&bytes).expect("reload");
        assert_eq!(again.network, ck.network);
        assert_eq!(again.seed, ck.seed);
    }
});
