use std::path::Path;

use poissonkf::harness::{parse_config, parse_config_with_overrides, parse_series_csv};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn check_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (body, overrides) = match text.rsplit_once("\n#!") {
        Some((body, kv)) => match kv.split_once('=') {
            Some((k, v)) => (body, vec![(k.to_string(), v.to_string())]),
            None => (body, vec![]),
        },
        None => (text, vec![]),
    };
    if let Ok(cfg) = parse_config_with_overrides(body, "seed", &overrides) {
        let echoed = parse_config(&cfg.to_toml(), "echo").expect("echoed config reparses");
        assert_eq!(echoed.model, cfg.model);
    }
}

fn check_csv(data: &[u8]) {
    if let Ok(table) = parse_series_csv(data, "seed") {
        assert_eq!(table.values.len(), table.columns.len());
        assert!(table.values.iter().all(|c| c.len() == table.len()));
    }
}

#[test]
fn seeds_parse_as_labelled() {
    let cfgs = seeds("config");
    assert_eq!(cfgs.len(), 5);
    let ok: Vec<bool> = cfgs.iter().map(|s| parse_config(std::str::from_utf8(s).unwrap(), "seed").is_ok()).collect();
    // broken, full_2d, scalar_override, three_state_preset, unknown_key
    assert_eq!(ok, [false, true, true, true, false]);
    cfgs.iter().for_each(|s| check_config(s));

    let csvs = seeds("series_csv");
    let ok: Vec<bool> = csvs.iter().map(|s| parse_series_csv(s, "seed").is_ok()).collect();
    // bad_header, infeasible, theory_overlay, truncated, vector_model
    assert_eq!(ok, [false, true, true, false, true]);
    assert!(parse_series_csv(&csvs[1], "seed").unwrap().bound_infeasible);
}

fn mutated(target: &'static str) -> impl Strategy<Value = Vec<u8>> {
    let pool = seeds(target);
    (0..pool.len(), proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>(), 0u8..3), 1..8)).prop_map(
        move |(i, edits)| {
            let mut bytes = pool[i].clone();
            for (at, b, kind) in edits {
                if bytes.is_empty() {
                    bytes.push(b);
                    continue;
                }
                let k = at.index(bytes.len());
                match kind {
                    0 => bytes[k] = b,
                    1 => bytes.insert(k, b),
                    _ => {
                        bytes.remove(k);
                    }
                }
            }
            bytes
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn mutated_configs_never_panic(data in mutated("config")) {
        check_config(&data);
    }

    #[test]
    fn mutated_csvs_never_panic(data in mutated("series_csv")) {
        check_csv(&data);
    }

    #[test]
    fn arbitrary_bytes_never_panic(data in proptest::collection::vec(any::<u8>(), 0..256)) {
        check_config(&data);
        check_csv(&data);
    }
}
