#![no_main]

use libfuzzer_sys::fuzz_target;
use topo_core::config::KvConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = KvConfig::parse(text) {
        let canonical: String = c
            .keys()
            .map(|k| format!("{k} = {}\n", c.get(k).unwrap()))
            .collect();
        assert_eq!(KvConfig::parse(&canonical).unwrap(), c);
    }
});
