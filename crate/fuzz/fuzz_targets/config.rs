#![no_main]

use libfuzzer_sys::fuzz_target;
use poissonkf::harness::{parse_config, parse_config_with_overrides};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // A trailing `#!key=value` line doubles as an override.
    let (body, overrides) = match text.rsplit_once("\n#!") {
        Some((body, kv)) => match kv.split_once('=') {
            Some((k, v)) => (body, vec![(k.to_string(), v.to_string())]),
            None => (body, vec![]),
        },
        None => (text, vec![]),
    };
    if let Ok(cfg) = parse_config_with_overrides(body, "fuzz", &overrides) {
        let echoed = cfg.to_toml();
        parse_config(&echoed, "echo").expect("echoed config reparses");
    }
});
