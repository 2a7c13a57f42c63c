#![no_main]

use libfuzzer_sys::fuzz_target;
use popcorn::io::nifti;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = nifti::decode(data) {
        let again = nifti::decode(&nifti::encode(&v)).expect("re-encoded volume decodes");
        assert_eq!(again.shape(), v.shape());
    }
});
