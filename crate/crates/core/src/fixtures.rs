//! The canonical small instances used throughout tests and docs.
//!
//! The same data ships as scenario files under `fixtures/` at the repository root.

use crate::model::{Bid, BidProfile, Instance};

/// Three bidders, three outcomes: A and B value the first two outcomes, C only the third.
pub fn e1() -> Instance {
    Instance::new(vec![vec![1.0, 1.5, 0.0], vec![1.0, 1.5, 0.0], vec![0.0, 0.0, 2.0]])
        .expect("valid fixture")
}

/// The bids where A and B back outcome 0 and C backs outcome 2 (all with `pi = 0`).
pub fn e1_example_bids() -> BidProfile {
    BidProfile::new(vec![
        Bid::new(vec![1.0, 0.0, 0.0], 0.0).expect("valid bid"),
        Bid::new(vec![1.0, 0.0, 0.0], 0.0).expect("valid bid"),
        Bid::new(vec![0.0, 0.0, 2.0], 0.0).expect("valid bid"),
    ])
}

/// E1 plus a bidder C' who values outcome 0 but not outcome 1 much.
pub fn e2() -> Instance {
    Instance::new(vec![
        vec![1.0, 1.5, 0.0],
        vec![1.0, 1.5, 0.0],
        vec![1.0, 0.5, 0.0],
        vec![0.0, 0.0, 2.0],
    ])
    .expect("valid fixture")
}

/// Three bidders sharing value 1 for outcome 0 against one bidder worth 2 on outcome 1.
pub fn e3() -> Instance {
    Instance::new(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]])
        .expect("valid fixture")
}

/// A single item as two outcomes ("bidder 0 gets it", "bidder 1 gets it").
pub fn e4() -> Instance {
    Instance::new(vec![vec![10.0, 0.0], vec![0.0, 5.0]]).expect("valid fixture")
}

/// A single-item auction with one outcome per bidder.
pub fn single_item(values: &[f64]) -> Instance {
    let n = values.len();
    Instance::new(
        (0..n)
            .map(|i| (0..n).map(|k| if k == i { values[i] } else { 0.0 }).collect())
            .collect(),
    )
    .expect("valid single-item values")
}
