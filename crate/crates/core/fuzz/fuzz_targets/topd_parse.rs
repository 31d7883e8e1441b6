#![no_main]

use std::io::Cursor;

use libfuzzer_sys::fuzz_target;
use topo_core::probgen::{parse_dataset, DatasetWriter};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = parse_dataset(data) else {
        return;
    };
    // Anything that decodes must re-encode to the same bytes.
    let mut w = DatasetWriter::new(Cursor::new(Vec::new()), records.len()).unwrap();
    for r in &records {
        assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
        w.write(r).unwrap();
    }
    assert_eq!(w.finish().unwrap().into_inner(), data);
});
