#![no_main]

use airmark::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = PipelineConfig::from_json(data) {
        let _ = cfg.label_config();
    }
});
