#![no_main]

use libfuzzer_sys::fuzz_target;
use poissonkf::harness::parse_series_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_series_csv(data, "fuzz") {
        assert_eq!(table.values.len(), table.columns.len());
        assert!(table.values.iter().all(|c| c.len() == table.len()));
    }
});
