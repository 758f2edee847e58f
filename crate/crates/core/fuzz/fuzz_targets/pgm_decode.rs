#![no_main]

use libfuzzer_sys::fuzz_target;
use segcrowd::io::pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pgm::decode(data) {
        let bytes = pgm::encode(&img);
        assert_eq!(pgm::decode(&bytes).unwrap(), img);
        let _ = img.to_grid();
    }
});
