#![no_main]

use libfuzzer_sys::fuzz_target;
use segcrowd::io::dmap;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = dmap::decode(data) {
        assert_eq!(dmap::encode(&grid), data);
    }
});
