#![no_main]
use kvframe::sim::StreamSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = StreamSpec::from_json(text) else { return };
    let again = StreamSpec::from_json(&spec.to_json()).expect("re-encoded spec parses");
    assert_eq!(again.hash(), spec.hash());
    // Generate a couple of frames when they are small enough to be cheap.
    let small = (0..spec.config.num_layers).all(|l| spec.config.layer_elements(l) <= 4096);
    if small && spec.config.num_layers <= 8 {
        for block in spec.generate().take(2) {
            let _ = block.validate(&spec.config);
        }
    }
});
