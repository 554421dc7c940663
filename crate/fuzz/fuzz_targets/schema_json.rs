#![no_main]

use formula_size::dataset::Schema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(schema) = Schema::from_json_str(text) {
        let _ = schema.validate();
    }
});
