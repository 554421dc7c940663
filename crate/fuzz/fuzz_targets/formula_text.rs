#![no_main]

use formula_size::dataset::EncodedDataset;
use formula_size::formula::{canonicalize, Formula};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let ds = EncodedDataset::from_columns(
        vec![("p", vec![true, false, true])],
        vec![("x", vec![1, 5, 9]), ("y", vec![-2, 0, 2])],
        vec![true, false, false],
    )
    .unwrap();
    let vocab = ds.vocabulary();
    if let Ok(f) = Formula::parse(text, &vocab) {
        let again = Formula::parse(&f.render(&vocab), &vocab).unwrap();
        assert_eq!(again.size(), f.size());
        assert_eq!(again.truth(&ds), f.truth(&ds));
        let g = canonicalize(&f);
        assert!(g.size() <= f.size());
        assert_eq!(g.truth(&ds), f.truth(&ds));
    }
});
