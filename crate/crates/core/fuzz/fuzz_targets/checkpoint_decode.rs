#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = fsrl::checkpoint::decode(data) {
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(fsrl::checkpoint::encode(&ckpt), data);
    }
});
