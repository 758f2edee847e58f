#![no_main]

use libfuzzer_sys::fuzz_target;
use segcrowd::io::checkpoint;
use segcrowd::model::ModelParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = checkpoint::decode(data) {
        let bytes = checkpoint::encode(&ckpt).unwrap();
        assert_eq!(checkpoint::decode(&bytes).unwrap(), ckpt);
        if let Ok(params) = ModelParams::from_checkpoint(&ckpt) {
            let _ = params.num_parameters();
        }
    }
});
