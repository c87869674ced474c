#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = fsrl::config::parse_config_text(text);
    if let Ok(config) = fsrl::config::TrainConfig::from_text(text) {
        let again =
            fsrl::config::TrainConfig::from_text(&config.to_text()).expect("canonical text parses");
        assert_eq!(again.to_text(), config.to_text());
    }
});
