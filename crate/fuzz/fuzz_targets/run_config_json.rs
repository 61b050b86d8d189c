#![no_main]
use kvframe::runner::RunConfig;
use kvframe::StreamConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(config) = serde_json::from_slice::<RunConfig>(data) else { return };
    if config.validate().is_ok() {
        let _ = config.manager_config(&StreamConfig::uniform(2, 2, 16, 16, 2));
        let _ = config.label();
        let _ = config.hash();
    }
});
