//! Utility-target auctions.
//!
//! Each bidder submits a value bid `x_i` over outcomes plus a requested utility
//! `pi_i`; her effective bid is `max(x_i(o) - pi_i, 0)`, the outcome with the
//! highest total wins and everyone pays her effective bid for it.
//!
//! - [`model`] and [`auction`]: the auction itself.
//! - [`analysis`]: welfare, CEF checks, VCG, second-price threat, egalitarian targets.
//! - [`dynamics`]: repeated auctions with axiom-driven epsilon adjustments.
//! - [`ad`]: the sponsored-search version and a GFP comparison.

pub mod ad;
pub mod analysis;
pub mod auction;
pub mod dynamics;
pub mod fixtures;
pub mod model;

/// Numerical tolerance for ties, winner classification and constraint checks.
pub const TOL: f64 = 1e-9;

pub use analysis::{
    check_equilibrium, cef_membership, egalitarian, find_witnesses, in_cef, in_cef_eps, in_ncef_eps,
    is_cef, levels_and_bounds, optimal_outcome, second_price_threat, vcg, AnalysisError, CefReport,
    Egalitarian, LevelPartition,
};
pub use auction::{classify_bidders, quasi_truthful_equivalent, run_auction, TieBreakContext};
pub use model::{
    effective_bid, total_bids, validate_instance, AuctionOutcome, Bid, BidProfile, BidderId, Instance,
    ModelError, OutcomeId, ValidationReport,
};
