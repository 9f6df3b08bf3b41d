//! One round of the utility-target auction.

use serde::{Deserialize, Serialize};

use crate::model::{
    tied_maxima, totals_unchecked, AuctionOutcome, Bid, BidProfile, BidderId, Instance, ModelError,
    OutcomeId,
};
use crate::TOL;

/// How a tie between outcomes is resolved: in favor of the most recent
/// winner when it is among the tied outcomes, otherwise by index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieBreakContext {
    pub previous_winner: Option<OutcomeId>,
}

impl TieBreakContext {
    pub fn fixed_order() -> Self {
        Self { previous_winner: None }
    }

    pub fn favoring(outcome: OutcomeId) -> Self {
        Self { previous_winner: Some(outcome) }
    }
}

/// Picks the winner among `totals` under `ctx`. Returns the winner and all tied outcomes.
pub(crate) fn pick_winner(totals: &[f64], ctx: TieBreakContext) -> (OutcomeId, Vec<OutcomeId>) {
    let tied = tied_maxima(totals);
    let winner = match ctx.previous_winner {
        Some(prev) if tied.contains(&prev) => prev,
        _ => tied[0],
    };
    (winner, tied)
}

/// Runs the auction: the outcome with the highest total effective bid wins and
/// every bidder pays her effective bid for it.
pub fn run_auction(
    instance: &Instance,
    profile: &BidProfile,
    ctx: TieBreakContext,
) -> Result<AuctionOutcome, ModelError> {
    profile.check_against(instance)?;
    if let Some(prev) = ctx.previous_winner {
        instance.check_outcome(prev)?;
    }
    let totals = totals_unchecked(instance.num_outcomes(), profile);
    let (winning_outcome, tied_outcomes) = pick_winner(&totals, ctx);
    let payments: Vec<f64> = profile.bids().iter().map(|b| b.effective(winning_outcome)).collect();
    let utilities: Vec<f64> = payments
        .iter()
        .enumerate()
        .map(|(i, p)| instance.value(i, winning_outcome) - p)
        .collect();
    let mut result = AuctionOutcome {
        winning_outcome,
        tied_outcomes,
        totals,
        payments,
        utilities,
        is_winner: Vec::new(),
    };
    result.is_winner = classify_bidders(instance, profile, &result);
    Ok(result)
}

/// A bidder wins when she receives exactly the utility she requested.
pub fn classify_bidders(_instance: &Instance, profile: &BidProfile, result: &AuctionOutcome) -> Vec<bool> {
    profile
        .bids()
        .iter()
        .zip(&result.utilities)
        .map(|(bid, u)| (u - bid.target()).abs() <= TOL)
        .collect()
}

/// The bid `(v_i, u_i)` where `u_i` is what bidder `i` currently gets. Swapping it
/// in leaves her utility unchanged.
pub fn quasi_truthful_equivalent(
    instance: &Instance,
    bidder: BidderId,
    profile: &BidProfile,
    ctx: TieBreakContext,
) -> Result<Bid, ModelError> {
    instance.check_bidder(bidder)?;
    let result = run_auction(instance, profile, ctx)?;
    Bid::quasi_truthful(instance, bidder, result.utilities[bidder])
}
