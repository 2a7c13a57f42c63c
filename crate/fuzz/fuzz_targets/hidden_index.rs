#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = popcorn::dataset::parse_hidden_index(data);
});
