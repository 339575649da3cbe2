#![no_main]

use libfuzzer_sys::fuzz_target;
use veto_core::model_io::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    let Ok(file) = decode_model(data) else { return };
    let trained = file.trained().expect("decoded models rebuild");
    let bytes = encode_model(&trained, file.input_hash.clone()).expect("encodes");
    assert_eq!(decode_model(&bytes).expect("re-decodes"), file);
});
