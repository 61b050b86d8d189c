#![no_main]
use kvframe::TraceEvent;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(event) = TraceEvent::parse_line(line) {
        let again = TraceEvent::parse_line(&event.to_line()).expect("event line re-parses");
        assert_eq!(again, event);
    }
});
