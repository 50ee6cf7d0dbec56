//! Every holdout of up to four of six items (ratings 1, 3, 4, 5 around a
//! threshold of 3) against every list of up to five distinct items, checked
//! against a direct reference implementation with exact equality.

mod common;

use common::oracle;

#[test]
fn kernels_match_exhaustive_reference() {
    assert_eq!(oracle::lists().len(), 1 + 6 + 30 + 120 + 360 + 720);
    let checked = oracle::exhaustive_check().unwrap();
    assert!(checked > 1_000_000);
}
