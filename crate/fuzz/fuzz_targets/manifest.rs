#![no_main]

use airmark::synthgen::Manifest;
use airmark::Category;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::parse(data) {
        let total: usize = Category::ALL.iter().map(|&c| m.count(c)).sum();
        assert_eq!(total, m.frames.len());
    }
});
