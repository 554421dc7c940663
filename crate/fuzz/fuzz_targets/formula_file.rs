#![no_main]

use formula_size::dataset::EncodedDataset;
use formula_size::formula::Formula;
use formula_size::report::FormulaFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(file) = FormulaFile::from_json_str(text) else {
        return;
    };
    let ds = EncodedDataset::from_columns(
        vec![("p", vec![true, false, true])],
        vec![("x", vec![1, 5, 9]), ("y", vec![-2, 0, 2])],
        vec![true, false, false],
    )
    .unwrap();
    let vocab = ds.vocabulary();
    if let Ok(f) = Formula::from_serialized(&file.rpn, &vocab) {
        let back = Formula::from_serialized(&f.to_serialized(&vocab), &vocab).unwrap();
        assert_eq!(back, f);
        let _ = f.accuracy(&ds);
    }
});
