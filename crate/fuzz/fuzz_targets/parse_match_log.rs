#![no_main]

use libfuzzer_sys::fuzz_target;
use veto_core::data_io::{parse_match_log_bytes, write_match_log};

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = parse_match_log_bytes(data) else {
        return;
    };
    // whatever parses must survive a write/parse round trip unchanged
    let mut out = Vec::new();
    write_match_log(&mut out, &parsed.matches).expect("parsed matches serialise");
    let again = parse_match_log_bytes(&out).expect("written log is readable");
    assert!(again.errors.is_empty());
    assert_eq!(again.matches, parsed.matches);
});
