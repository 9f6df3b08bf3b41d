//! Domain types for utility-target auctions and the effective-bid arithmetic.

use serde::Serialize;

use crate::TOL;

pub type BidderId = usize;
pub type OutcomeId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("outcome {outcome} out of range (instance has {num_outcomes} outcomes)")]
    OutcomeOutOfRange { outcome: OutcomeId, num_outcomes: usize },
    #[error("bidder {bidder} out of range (instance has {num_bidders} bidders)")]
    BidderOutOfRange { bidder: BidderId, num_bidders: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid bid: {0}")]
    InvalidBid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// An auction environment: `num_bidders x num_outcomes` nonnegative values.
///
/// Outcomes are totally ordered by index; that order is used whenever a tie
/// has to be broken without a previous winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    num_bidders: usize,
    num_outcomes: usize,
    values: Vec<f64>,
}

impl Instance {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let report = validate_instance(&values);
        if let Some(problem) = report.problems.first() {
            return Err(ModelError::InvalidInstance(problem.clone()));
        }
        let num_bidders = values.len();
        let num_outcomes = values[0].len();
        Ok(Self {
            num_bidders,
            num_outcomes,
            values: values.into_iter().flatten().collect(),
        })
    }

    pub fn num_bidders(&self) -> usize {
        self.num_bidders
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    /// `v_i(o)`. Panics on out-of-range indices.
    #[inline]
    pub fn value(&self, bidder: BidderId, outcome: OutcomeId) -> f64 {
        assert!(bidder < self.num_bidders && outcome < self.num_outcomes);
        self.values[bidder * self.num_outcomes + outcome]
    }

    pub fn values_of(&self, bidder: BidderId) -> &[f64] {
        &self.values[bidder * self.num_outcomes..(bidder + 1) * self.num_outcomes]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_bidders).map(|i| self.values_of(i).to_vec()).collect()
    }

    /// Largest value bidder `i` has for any outcome; the ceiling for her utility-target.
    pub fn cap(&self, bidder: BidderId) -> f64 {
        self.values_of(bidder).iter().copied().fold(0.0, f64::max)
    }

    pub fn caps(&self) -> Vec<f64> {
        (0..self.num_bidders).map(|i| self.cap(i)).collect()
    }

    /// Column sums `sum_i v_i(o)`.
    pub fn welfare(&self) -> Vec<f64> {
        (0..self.num_outcomes)
            .map(|o| (0..self.num_bidders).map(|i| self.value(i, o)).sum())
            .collect()
    }

    pub fn check_bidder(&self, bidder: BidderId) -> Result<(), ModelError> {
        if bidder < self.num_bidders {
            Ok(())
        } else {
            Err(ModelError::BidderOutOfRange { bidder, num_bidders: self.num_bidders })
        }
    }

    pub fn check_outcome(&self, outcome: OutcomeId) -> Result<(), ModelError> {
        if outcome < self.num_outcomes {
            Ok(())
        } else {
            Err(ModelError::OutcomeOutOfRange { outcome, num_outcomes: self.num_outcomes })
        }
    }
}

/// Result of [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub problems: Vec<String>,
    pub welfare: Vec<f64>,
    /// Welfare-maximizing outcome (lowest index among ties), when the matrix is valid.
    pub optimal_outcome: Option<OutcomeId>,
    pub unique_optimum: bool,
}

/// Checks a raw value matrix: shape, nonnegativity, finiteness, and whether the
/// welfare-optimal outcome is unique.
pub fn validate_instance(values: &[Vec<f64>]) -> ValidationReport {
    let mut problems = Vec::new();
    if values.is_empty() {
        problems.push("instance needs at least one bidder".to_string());
    }
    let width = values.first().map_or(0, Vec::len);
    if !values.is_empty() && width == 0 {
        problems.push("instance needs at least one outcome".to_string());
    }
    for (i, row) in values.iter().enumerate() {
        if row.len() != width {
            problems.push(format!(
                "bidder {i} has {} values but bidder 0 has {width}",
                row.len()
            ));
        }
        for (o, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                problems.push(format!("value v[{i}][{o}] = {v} is not finite"));
            } else if v < 0.0 {
                problems.push(format!("value v[{i}][{o}] = {v} is negative (values must be nonnegative)"));
            }
        }
    }

    if !problems.is_empty() {
        return ValidationReport {
            valid: false,
            problems,
            welfare: Vec::new(),
            optimal_outcome: None,
            unique_optimum: false,
        };
    }

    let welfare: Vec<f64> = (0..width)
        .map(|o| values.iter().map(|row| row[o]).sum())
        .collect();
    let (best, unique) = argmax_with_ties(&welfare);
    ValidationReport {
        valid: true,
        problems,
        welfare,
        optimal_outcome: Some(best),
        unique_optimum: unique,
    }
}

/// Index of the first entry within `TOL` of the maximum and whether it is the only one.
pub(crate) fn argmax_with_ties(xs: &[f64]) -> (usize, bool) {
    let tied = tied_maxima(xs);
    (tied[0], tied.len() == 1)
}

/// Ascending indices of all entries within `TOL` of the maximum.
pub(crate) fn tied_maxima(xs: &[f64]) -> Vec<usize> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..xs.len()).filter(|&k| xs[k] >= max - TOL).collect()
}

/// A bid `(x, pi)`: a value bid per outcome and a requested utility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bid {
    value_bid: Vec<f64>,
    target: f64,
}

impl Bid {
    /// Builds a bid, clamping the utility-target down to `max_o x(o)`.
    ///
    /// Negative targets are accepted: they describe overbids, and the
    /// quasi-truthful equivalent of an overbid carries negative utility.
    pub fn new(value_bid: Vec<f64>, target: f64) -> Result<Self, ModelError> {
        if value_bid.is_empty() {
            return Err(ModelError::InvalidBid("value bid is empty".into()));
        }
        if let Some(x) = value_bid.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(ModelError::InvalidBid(format!(
                "value bid entries must be finite and nonnegative, got {x}"
            )));
        }
        if !target.is_finite() {
            return Err(ModelError::InvalidBid(format!("utility-target {target} is not finite")));
        }
        let max_x = value_bid.iter().copied().fold(0.0, f64::max);
        Ok(Self { value_bid, target: target.min(max_x) })
    }

    /// The quasi-truthful bid `(v_i, pi)`.
    pub fn quasi_truthful(instance: &Instance, bidder: BidderId, target: f64) -> Result<Self, ModelError> {
        instance.check_bidder(bidder)?;
        Self::new(instance.values_of(bidder).to_vec(), target)
    }

    pub fn value_bid(&self) -> &[f64] {
        &self.value_bid
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn num_outcomes(&self) -> usize {
        self.value_bid.len()
    }

    /// `max(x(o) - pi, 0)`.
    pub fn effective_bid(&self, outcome: OutcomeId) -> Result<f64, ModelError> {
        self.value_bid
            .get(outcome)
            .map(|x| (x - self.target).max(0.0))
            .ok_or(ModelError::OutcomeOutOfRange { outcome, num_outcomes: self.value_bid.len() })
    }

    #[inline]
    pub(crate) fn effective(&self, outcome: OutcomeId) -> f64 {
        (self.value_bid[outcome] - self.target).max(0.0)
    }
}

/// Free-function form of [`Bid::effective_bid`].
pub fn effective_bid(bid: &Bid, outcome: OutcomeId) -> Result<f64, ModelError> {
    bid.effective_bid(outcome)
}

/// One bid per bidder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidProfile {
    bids: Vec<Bid>,
}

impl BidProfile {
    pub fn new(bids: Vec<Bid>) -> Self {
        Self { bids }
    }

    /// Every bidder bids `(v_i, targets[i])`.
    pub fn quasi_truthful(instance: &Instance, targets: &[f64]) -> Result<Self, ModelError> {
        if targets.len() != instance.num_bidders() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} utility-targets for {} bidders",
                targets.len(),
                instance.num_bidders()
            )));
        }
        targets
            .iter()
            .enumerate()
            .map(|(i, &t)| Bid::quasi_truthful(instance, i, t))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }

    pub fn bids(&self) -> &[Bid] {
        &self.bids
    }

    pub fn bid(&self, bidder: BidderId) -> &Bid {
        &self.bids[bidder]
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.bids.iter().map(Bid::target).collect()
    }

    /// Copy of the profile with bidder `i`'s bid replaced.
    pub fn with_bid(&self, bidder: BidderId, bid: Bid) -> Self {
        let mut bids = self.bids.clone();
        bids[bidder] = bid;
        Self { bids }
    }

    pub fn check_against(&self, instance: &Instance) -> Result<(), ModelError> {
        if self.bids.len() != instance.num_bidders() {
            return Err(ModelError::DimensionMismatch(format!(
                "profile has {} bids for {} bidders",
                self.bids.len(),
                instance.num_bidders()
            )));
        }
        if let Some((i, b)) = self
            .bids
            .iter()
            .enumerate()
            .find(|(_, b)| b.num_outcomes() != instance.num_outcomes())
        {
            return Err(ModelError::DimensionMismatch(format!(
                "bid of bidder {i} covers {} outcomes, instance has {}",
                b.num_outcomes(),
                instance.num_outcomes()
            )));
        }
        Ok(())
    }
}

/// `sum_i b_i(o)` for every outcome `o`.
pub fn total_bids(instance: &Instance, profile: &BidProfile) -> Result<Vec<f64>, ModelError> {
    profile.check_against(instance)?;
    Ok(totals_unchecked(instance.num_outcomes(), profile))
}

pub(crate) fn totals_unchecked(num_outcomes: usize, profile: &BidProfile) -> Vec<f64> {
    (0..num_outcomes)
        .map(|o| profile.bids().iter().map(|b| b.effective(o)).sum())
        .collect()
}

/// The auction's result for a single round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionOutcome {
    pub winning_outcome: OutcomeId,
    /// All outcomes whose total bid is within `TOL` of the maximum (ascending).
    pub tied_outcomes: Vec<OutcomeId>,
    pub totals: Vec<f64>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub is_winner: Vec<bool>,
}

impl AuctionOutcome {
    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }

    pub fn all_winners(&self) -> bool {
        self.is_winner.iter().all(|&w| w)
    }

    pub fn is_tie(&self) -> bool {
        self.tied_outcomes.len() > 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e1() -> Instance {
        Instance::new(vec![vec![1.0, 1.5, 0.0], vec![1.0, 1.5, 0.0], vec![0.0, 0.0, 2.0]]).unwrap()
    }

    #[test]
    fn effective_bid_examples() {
        let bid = Bid::new(vec![1.0, 1.5, 0.0], 0.5).unwrap();
        assert_eq!(effective_bid(&bid, 1).unwrap(), 1.0);
        assert_eq!(effective_bid(&bid, 2).unwrap(), 0.0);
        let bid = Bid::new(vec![2.0], 0.0).unwrap();
        assert_eq!(effective_bid(&bid, 0).unwrap(), 2.0);
    }

    #[test]
    fn effective_bid_out_of_range() {
        let bid = Bid::new(vec![1.0, 1.5, 0.0], 0.5).unwrap();
        assert_eq!(
            effective_bid(&bid, 3),
            Err(ModelError::OutcomeOutOfRange { outcome: 3, num_outcomes: 3 })
        );
    }

    #[test]
    fn target_is_clamped_to_max_value_bid() {
        let bid = Bid::new(vec![1.0, 3.0], 7.0).unwrap();
        assert_eq!(bid.target(), 3.0);
        assert!(Bid::new(vec![1.0, -1.0], 0.0).is_err());
        assert!(Bid::new(vec![1.0], f64::NAN).is_err());
    }

    #[test]
    fn total_bids_examples() {
        let inst = e1();
        let paper = BidProfile::new(vec![
            Bid::new(vec![1.0, 0.0, 0.0], 0.0).unwrap(),
            Bid::new(vec![1.0, 0.0, 0.0], 0.0).unwrap(),
            Bid::new(vec![0.0, 0.0, 2.0], 0.0).unwrap(),
        ]);
        assert_eq!(total_bids(&inst, &paper).unwrap(), vec![2.0, 0.0, 2.0]);

        let truthful = BidProfile::quasi_truthful(&inst, &[0.0; 3]).unwrap();
        assert_eq!(total_bids(&inst, &truthful).unwrap(), inst.welfare());

        let e3 = Instance::new(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let third = 1.0 / 3.0;
        let p = BidProfile::quasi_truthful(&e3, &[third, third, third, 0.0]).unwrap();
        let t = total_bids(&e3, &p).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-12 && (t[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_bids_dimension_mismatch() {
        let inst = e1();
        let short = BidProfile::quasi_truthful(&inst, &[0.0; 3]).unwrap();
        let two = BidProfile::new(short.bids()[..2].to_vec());
        assert!(matches!(total_bids(&inst, &two), Err(ModelError::DimensionMismatch(_))));
        let narrow = BidProfile::new(vec![Bid::new(vec![1.0], 0.0).unwrap(); 3]);
        assert!(matches!(total_bids(&inst, &narrow), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn validate_examples() {
        let r = validate_instance(&e1().rows());
        assert!(r.valid);
        assert_eq!(r.welfare, vec![2.0, 3.0, 2.0]);
        assert_eq!(r.optimal_outcome, Some(1));
        assert!(r.unique_optimum);

        let r = validate_instance(&[vec![1.0, -0.5], vec![0.0, 1.0]]);
        assert!(!r.valid);
        assert!(r.problems[0].contains("negative"));

        let r = validate_instance(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(r.optimal_outcome, Some(0));
        assert!(r.unique_optimum);

        let r = validate_instance(&[vec![1.0, 2.0], vec![0.5]]);
        assert!(!r.valid);
        let r = validate_instance(&[vec![f64::INFINITY]]);
        assert!(!r.valid);
        assert!(!validate_instance(&[]).valid);
        assert!(!validate_instance(&[vec![]]).valid);
    }

    #[test]
    fn tied_optimum_is_not_unique() {
        let r = validate_instance(&[vec![1.0, 1.0]]);
        assert_eq!(r.optimal_outcome, Some(0));
        assert!(!r.unique_optimum);
    }

    proptest! {
        #[test]
        fn effective_bid_monotone(x in 0.0f64..5.0, dx in 0.0f64..1.0, pi in 0.0f64..5.0, dpi in 0.0f64..1.0) {
            let cap = x + dx + 1.0;
            let base = Bid::new(vec![x, cap], pi).unwrap();
            let more_x = Bid::new(vec![x + dx, cap], pi).unwrap();
            let more_pi = Bid::new(vec![x, cap], pi + dpi).unwrap();
            let b = base.effective_bid(0).unwrap();
            prop_assert!(b >= 0.0);
            prop_assert!(more_x.effective_bid(0).unwrap() >= b);
            prop_assert!(more_pi.effective_bid(0).unwrap() <= b);
        }

        #[test]
        fn total_bids_additive(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 3), 2..5),
            targets in prop::collection::vec(0.0f64..2.0, 5),
            drop in 0usize..5,
        ) {
            let inst = Instance::new(rows).unwrap();
            let n = inst.num_bidders();
            let drop = drop % n;
            let profile = BidProfile::quasi_truthful(&inst, &targets[..n]).unwrap();
            let all = total_bids(&inst, &profile).unwrap();
            let mut others_rows = inst.rows();
            others_rows.remove(drop);
            let mut others_targets = targets[..n].to_vec();
            others_targets.remove(drop);
            let others = Instance::new(others_rows).unwrap();
            let rest = total_bids(&others, &BidProfile::quasi_truthful(&others, &others_targets).unwrap()).unwrap();
            for o in 0..inst.num_outcomes() {
                let mine = profile.bid(drop).effective_bid(o).unwrap();
                prop_assert!((all[o] - mine - rest[o]).abs() < 1e-12);
            }
        }
    }
}
