#![no_main]

use libfuzzer_sys::fuzz_target;
use popcorn::io::RawTensor;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = RawTensor::decode(data) {
        let again = RawTensor::decode(&t.encode()).expect("re-encoded tensor decodes");
        assert_eq!(again.shape, t.shape);
    }
});
