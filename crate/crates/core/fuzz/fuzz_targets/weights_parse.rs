#![no_main]

use libfuzzer_sys::fuzz_target;
use topo_core::toponet::{load_weights_bytes, weights_to_bytes, PARAM_COUNT};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = load_weights_bytes(data) {
        assert_eq!(params.num_params(), PARAM_COUNT);
        let again = load_weights_bytes(&weights_to_bytes(&params)).unwrap();
        assert_eq!(again, params);
    }
});
