#![no_main]
use kvframe::container::{decode_stream, encode_stream};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((manifest, frames)) = decode_stream(data) {
        let bytes = encode_stream(&manifest, &frames).expect("decoded stream re-encodes");
        let (m2, f2) = decode_stream(&bytes).expect("re-encoded stream decodes");
        assert_eq!(manifest, m2);
        assert_eq!(frames, f2);
    }
});
