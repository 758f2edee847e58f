#![no_main]

use libfuzzer_sys::fuzz_target;
use segcrowd::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        let _ = cfg.parse::<f64>("lr");
        let _ = cfg.parse::<usize>("iterations");
        assert_eq!(parse_config(&cfg.to_text()).unwrap().to_text(), cfg.to_text());
    }
});
