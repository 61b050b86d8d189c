#![no_main]
use kvframe::checkpoint::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(manager) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&manager).expect("checkpoint re-encodes");
        let back = decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }
});
