#![no_main]

use libfuzzer_sys::fuzz_target;
use topo_core::fem::Problem;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = serde_json::from_slice::<Problem>(data) {
        let text = serde_json::to_string(&p).unwrap();
        let back: Problem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(p.fixed_dofs().iter().all(|&d| d < p.num_dofs()));
        assert!(p.loads().iter().all(|&(d, f)| d < p.num_dofs() && f.is_finite()));
    }
});
