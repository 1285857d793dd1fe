#![no_main]

use airmark::labeler::{export_annotation, parse_annotation, ExportFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(record) = parse_annotation(data) {
        let _ = export_annotation(&record, ExportFormat::Csv);
        let json = export_annotation(&record, ExportFormat::Json);
        assert_eq!(parse_annotation(&json).expect("re-parse"), record);
    }
});
