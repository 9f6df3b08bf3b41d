//! Static benchmarks: welfare optimum, cooperative envy-freeness, VCG, the
//! second-price threat, the egalitarian equilibrium and its level structure.

use serde::Serialize;

use crate::auction::{pick_winner, run_auction, TieBreakContext};
use crate::model::{
    argmax_with_ties, totals_unchecked, BidProfile, BidderId, Instance, ModelError, OutcomeId,
};
use crate::TOL;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epsilon must be nonnegative, got {0}")]
    NegativeEpsilon(f64),
    #[error("utility-target vector is not cooperatively envy-free")]
    NotCef,
    #[error("egalitarian computation did not fix every bidder within {0} phases")]
    RunawayIteration(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalOutcome {
    pub outcome: OutcomeId,
    pub welfare: f64,
    pub unique: bool,
}

/// The welfare-maximizing outcome (lowest index among ties).
pub fn optimal_outcome(instance: &Instance) -> OptimalOutcome {
    let welfare = instance.welfare();
    let (outcome, unique) = argmax_with_ties(&welfare);
    OptimalOutcome { outcome, welfare: welfare[outcome], unique }
}

/// One CEF inequality: coalition envy `lhs` against the bid gap `rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CefConstraint {
    pub outcome: OutcomeId,
    pub lhs: f64,
    pub rhs: f64,
}

impl CefConstraint {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CefReport {
    pub is_cef: bool,
    pub winning_outcome: OutcomeId,
    pub tied_outcomes: Vec<OutcomeId>,
    /// One entry per outcome other than the winner.
    pub constraints: Vec<CefConstraint>,
    pub violated_outcomes: Vec<CefConstraint>,
    /// `min (rhs - lhs)` over outcomes other than the winner; infinite with a single outcome.
    pub slack: f64,
}

impl CefReport {
    /// Outcomes whose constraint holds with equality (within `TOL`).
    pub fn binding_outcomes(&self) -> Vec<OutcomeId> {
        self.constraints
            .iter()
            .filter(|c| c.slack().abs() <= TOL)
            .map(|c| c.outcome)
            .collect()
    }
}

/// Checks cooperative envy-freeness of `profile` against the outcome the auction picks under `ctx`.
pub fn is_cef(
    instance: &Instance,
    profile: &BidProfile,
    ctx: TieBreakContext,
) -> Result<CefReport, ModelError> {
    let result = run_auction(instance, profile, ctx)?;
    let won = result.winning_outcome;
    let bids = profile.bids();
    let constraints: Vec<CefConstraint> = (0..instance.num_outcomes())
        .filter(|&o| o != won)
        .map(|o| {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for (i, bid) in bids.iter().enumerate() {
                let (b_o, b_won) = (bid.effective(o), bid.effective(won));
                let gain = (instance.value(i, o) - b_o) - (instance.value(i, won) - b_won);
                lhs += gain.max(0.0);
                rhs += b_won - b_o;
            }
            CefConstraint { outcome: o, lhs, rhs }
        })
        .collect();
    let violated_outcomes: Vec<CefConstraint> =
        constraints.iter().copied().filter(|c| c.lhs > c.rhs + TOL).collect();
    let slack = constraints.iter().map(CefConstraint::slack).fold(f64::INFINITY, f64::min);
    Ok(CefReport {
        is_cef: violated_outcomes.is_empty(),
        winning_outcome: won,
        tied_outcomes: result.tied_outcomes,
        constraints,
        violated_outcomes,
        slack,
    })
}

/// CEF check of the quasi-truthful profile for `targets`, ties broken toward the welfare optimum.
pub fn cef_membership(instance: &Instance, targets: &[f64]) -> Result<CefReport, ModelError> {
    let profile = BidProfile::quasi_truthful(instance, targets)?;
    let o_star = optimal_outcome(instance).outcome;
    is_cef(instance, &profile, TieBreakContext::favoring(o_star))
}

/// Membership of `targets` in the CEF set.
pub fn in_cef(instance: &Instance, targets: &[f64]) -> Result<bool, ModelError> {
    Ok(cef_membership(instance, targets)?.is_cef)
}

/// Membership in the epsilon-neighborhood of the CEF set. Because the set is closed
/// under lowering targets, it suffices to test the vector shifted down by `eps`.
pub fn in_cef_eps(instance: &Instance, targets: &[f64], eps: f64) -> Result<bool, AnalysisError> {
    if eps < 0.0 || eps.is_nan() {
        return Err(AnalysisError::NegativeEpsilon(eps));
    }
    let shifted: Vec<f64> = targets.iter().map(|t| (t - eps).max(0.0)).collect();
    Ok(in_cef(instance, &shifted)?)
}

/// Membership in the epsilon-neighborhood of the non-CEF set, via the vector shifted up by `eps`.
pub fn in_ncef_eps(instance: &Instance, targets: &[f64], eps: f64) -> Result<bool, AnalysisError> {
    if eps < 0.0 || eps.is_nan() {
        return Err(AnalysisError::NegativeEpsilon(eps));
    }
    let shifted: Vec<f64> = targets.iter().map(|t| t + eps).collect();
    Ok(!in_cef(instance, &shifted)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VcgResult {
    pub prices: Vec<f64>,
    pub revenue: f64,
    pub optimal_outcome: OutcomeId,
}

/// VCG prices: the externality each bidder imposes on the others.
pub fn vcg(instance: &Instance) -> VcgResult {
    let o_star = optimal_outcome(instance).outcome;
    let n = instance.num_bidders();
    let prices: Vec<f64> = (0..n)
        .map(|i| {
            let others: Vec<f64> = (0..instance.num_outcomes())
                .map(|o| (0..n).filter(|&j| j != i).map(|j| instance.value(j, o)).sum())
                .collect();
            let (o_without_i, _) = argmax_with_ties(&others);
            others[o_without_i] - others[o_star]
        })
        .collect();
    VcgResult { revenue: prices.iter().sum(), prices, optimal_outcome: o_star }
}

/// `max_o sum_i max(v_i(o) - v_i(o*), 0)`.
pub fn second_price_threat(instance: &Instance, o_star: OutcomeId) -> Result<f64, ModelError> {
    instance.check_outcome(o_star)?;
    Ok((0..instance.num_outcomes())
        .map(|o| {
            (0..instance.num_bidders())
                .map(|i| (instance.value(i, o) - instance.value(i, o_star)).max(0.0))
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "outcome", rename_all = "snake_case")]
pub enum FixReason {
    /// Target reached the bidder's value for the optimal outcome.
    Cap,
    /// A CEF constraint for this outcome became binding.
    Binding(OutcomeId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixEvent {
    pub bidder: BidderId,
    pub reason: FixReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EgalitarianPhase {
    /// Uniform raise applied to every unfixed target in this phase.
    pub raise: f64,
    /// Common target of the unfixed bidders after the raise.
    pub level: f64,
    pub fixed: Vec<FixEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Egalitarian {
    pub targets: Vec<f64>,
    pub optimal_outcome: OutcomeId,
    pub payments: Vec<f64>,
    pub revenue: f64,
    pub phases: Vec<EgalitarianPhase>,
    pub warnings: Vec<String>,
}

/// Computes the egalitarian equilibrium targets by uniform raising with constraint fixing.
///
/// All unfixed targets move together from zero. A phase ends at the largest raise that
/// keeps every CEF constraint satisfied (ties go to the optimal outcome) and every
/// unfixed target at or below its value for the optimal outcome. The constraint slacks
/// are concave and piecewise linear in the raise, so the stopping point is found exactly
/// by walking their breakpoints. Bidders at their cap, and bidders that would lose under
/// a newly binding outcome, are then fixed.
pub fn egalitarian(instance: &Instance, tol: f64) -> Result<Egalitarian, AnalysisError> {
    let n = instance.num_bidders();
    let opt = optimal_outcome(instance);
    let o_star = opt.outcome;
    let mut warnings = Vec::new();
    if !opt.unique {
        warnings.push(format!(
            "welfare optimum is not unique; using outcome {o_star} (lowest index)"
        ));
    }

    let mut targets = vec![0.0; n];
    let mut fixed = vec![false; n];
    let mut level = 0.0;
    let mut phases = Vec::new();

    while fixed.iter().any(|f| !f) {
        if phases.len() >= n {
            return Err(AnalysisError::RunawayIteration(n));
        }
        let unfixed: Vec<BidderId> = (0..n).filter(|&i| !fixed[i]).collect();
        let cap_room = unfixed
            .iter()
            .map(|&i| instance.value(i, o_star) - level)
            .fold(f64::INFINITY, f64::min)
            .max(0.0);

        let raise = (0..instance.num_outcomes())
            .filter(|&o| o != o_star)
            .map(|o| max_raise(instance, &targets, &unfixed, level, o_star, o, cap_room, tol))
            .fold(cap_room, f64::min);

        level += raise;
        for &i in &unfixed {
            targets[i] = level;
        }

        let mut newly = Vec::new();
        for &i in &unfixed {
            if instance.value(i, o_star) - level <= tol {
                targets[i] = instance.value(i, o_star);
                newly.push(FixEvent { bidder: i, reason: FixReason::Cap });
            }
        }
        let bids = quasi_truthful_bids(instance, &targets);
        for o in (0..instance.num_outcomes()).filter(|&o| o != o_star) {
            let slack: f64 = (0..n).map(|i| bids(i, o_star) - bids(i, o)).sum();
            if slack > tol {
                continue;
            }
            for &i in &unfixed {
                let already = newly.iter().any(|e| e.bidder == i);
                if !already && instance.value(i, o) - level <= tol {
                    newly.push(FixEvent { bidder: i, reason: FixReason::Binding(o) });
                }
            }
        }
        for e in &newly {
            fixed[e.bidder] = true;
        }
        phases.push(EgalitarianPhase { raise, level, fixed: newly });
    }

    let payments: Vec<f64> = (0..n).map(|i| (instance.value(i, o_star) - targets[i]).max(0.0)).collect();
    Ok(Egalitarian {
        revenue: payments.iter().sum(),
        payments,
        targets,
        optimal_outcome: o_star,
        phases,
        warnings,
    })
}

fn quasi_truthful_bids<'a>(instance: &'a Instance, targets: &'a [f64]) -> impl Fn(BidderId, OutcomeId) -> f64 + 'a {
    move |i, o| (instance.value(i, o) - targets[i]).max(0.0)
}

/// Largest raise `d` in `[0, cap_room]` of the unfixed targets (all at `level`) that keeps
/// `B(o*) - B(o) >= 0`.
#[allow(clippy::too_many_arguments)]
fn max_raise(
    instance: &Instance,
    targets: &[f64],
    unfixed: &[BidderId],
    level: f64,
    o_star: OutcomeId,
    o: OutcomeId,
    cap_room: f64,
    tol: f64,
) -> f64 {
    let bids = quasi_truthful_bids(instance, targets);
    let mut slack: f64 = (0..instance.num_bidders()).map(|i| bids(i, o_star) - bids(i, o)).sum();

    // Each unfixed bidder lowers B(o*) at rate 1; she lowers B(o) at rate 1 only while
    // her value for o is above her target.
    let mut kinks: Vec<f64> = unfixed
        .iter()
        .map(|&i| instance.value(i, o) - level)
        .filter(|&t| t > tol)
        .collect();
    kinks.sort_by(f64::total_cmp);
    let mut slope = kinks.len() as f64 - unfixed.len() as f64;

    let mut start = 0.0;
    for end in kinks.iter().copied().filter(|&t| t < cap_room).chain(std::iter::once(cap_room)) {
        if slope < 0.0 {
            if slack <= tol {
                return start;
            }
            let root = start + slack / -slope;
            if root < end {
                return root;
            }
        }
        slack += slope * (end - start);
        start = end;
        if end < cap_room {
            slope -= 1.0;
        }
    }
    cap_room
}

/// A unilateral deviation found by [`check_equilibrium`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub bidder: BidderId,
    pub current_utility: f64,
    pub best_target: f64,
    pub best_utility: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumCheck {
    pub is_equilibrium: bool,
    /// Best quasi-truthful deviation per bidder (gain may be zero or negative).
    pub best_deviations: Vec<Deviation>,
}

impl EquilibriumCheck {
    pub fn improving(&self, tol: f64) -> impl Iterator<Item = &Deviation> {
        self.best_deviations.iter().filter(move |d| d.gain > tol)
    }
}

/// Resolution of the uniform sweep added to the analytic breakpoints in [`check_equilibrium`].
const EQUILIBRIUM_SWEEP_POINTS: usize = 2000;

/// Searches every bidder's quasi-truthful deviations, holding the others fixed, for a
/// utility gain above `tol`.
///
/// Deviations are evaluated with ties going to the current winner. Candidates are
/// the targets where the deviating bidder's total for some outcome crosses another
/// outcome's total or her own value (probed on both sides), plus a uniform sweep of
/// `[0, cap]`.
pub fn check_equilibrium(
    instance: &Instance,
    profile: &BidProfile,
    ctx: TieBreakContext,
    tol: f64,
) -> Result<EquilibriumCheck, ModelError> {
    let current = run_auction(instance, profile, ctx)?;
    let dev_ctx = TieBreakContext::favoring(current.winning_outcome);
    let m = instance.num_outcomes();
    let probe = 10.0 * tol;

    let best_deviations: Vec<Deviation> = (0..instance.num_bidders())
        .map(|i| {
            let own: Vec<f64> = (0..m).map(|o| profile.bid(i).effective(o)).collect();
            let rest: Vec<f64> = current.totals.iter().zip(&own).map(|(t, b)| t - b).collect();
            let values = instance.values_of(i);
            let cap = instance.cap(i);

            let mut candidates = vec![0.0, cap];
            for o in 0..m {
                candidates.push(values[o]);
                for o2 in 0..m {
                    candidates.push(values[o] + rest[o] - rest[o2]);
                }
            }
            candidates.extend((0..=EQUILIBRIUM_SWEEP_POINTS).map(|k| cap * k as f64 / EQUILIBRIUM_SWEEP_POINTS as f64));

            let mut best = (profile.bid(i).target(), f64::NEG_INFINITY);
            for c in candidates {
                for t in [c - probe, c, c + probe] {
                    let t = t.clamp(0.0, cap);
                    let totals: Vec<f64> = (0..m).map(|o| rest[o] + (values[o] - t).max(0.0)).collect();
                    let (w, _) = pick_winner(&totals, dev_ctx);
                    let u = values[w].min(t);
                    if u > best.1 {
                        best = (t, u);
                    }
                }
            }
            Deviation {
                bidder: i,
                current_utility: current.utilities[i],
                best_target: best.0,
                best_utility: best.1,
                gain: best.1 - current.utilities[i],
            }
        })
        .collect();

    Ok(EquilibriumCheck {
        is_equilibrium: best_deviations.iter().all(|d| d.gain <= tol),
        best_deviations,
    })
}

/// Outcomes that certify bidder `j` cannot ask for more at the egalitarian targets.
///
/// `o` qualifies when its total ties the optimum, raising `j`'s target by a small probe
/// makes `o` overtake the optimum, and no other bidder who would lose under `o` has a
/// higher target than `j` (within `tol`).
pub fn find_witnesses(
    instance: &Instance,
    targets: &[f64],
    j: BidderId,
    tol: f64,
) -> Result<Vec<OutcomeId>, AnalysisError> {
    instance.check_bidder(j)?;
    if !in_cef(instance, targets)? {
        return Err(AnalysisError::NotCef);
    }
    let o_star = optimal_outcome(instance).outcome;
    let profile = BidProfile::quasi_truthful(instance, targets)?;
    let totals = totals_unchecked(instance.num_outcomes(), &profile);
    let probe = 10.0 * tol;
    let mut probed = targets.to_vec();
    probed[j] += probe;
    let probed_totals = totals_unchecked(
        instance.num_outcomes(),
        &BidProfile::quasi_truthful(instance, &probed)?,
    );

    Ok((0..instance.num_outcomes())
        .filter(|&o| o != o_star)
        .filter(|&o| (totals[o] - totals[o_star]).abs() <= tol)
        .filter(|&o| probed_totals[o] - probed_totals[o_star] > probe / 2.0)
        .filter(|&o| {
            let top_other_loser = (0..instance.num_bidders())
                .filter(|&i| i != j && instance.value(i, o) < targets[i] - tol)
                .map(|i| targets[i])
                .fold(f64::NEG_INFINITY, f64::max);
            targets[j] >= top_other_loser - tol
        })
        .collect())
}

/// Bidders grouped by egalitarian target, with the bracketing multipliers for convergence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPartition {
    pub levels: Vec<Vec<BidderId>>,
    pub level_utilities: Vec<f64>,
    /// `2^(2 |L_<k|)` per level.
    pub lower_multipliers: Vec<f64>,
    /// `2^(2 |L_<k| + |L_k|)` per level.
    pub upper_multipliers: Vec<f64>,
    pub level_of: Vec<usize>,
}

impl LevelPartition {
    /// `[pi*_j - eps b-(L(j)), pi*_j + eps b+(L(j))]` for every bidder.
    pub fn bounds(&self, targets: &[f64], eps: f64) -> Vec<(f64, f64)> {
        targets
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let k = self.level_of[j];
                (t - eps * self.lower_multipliers[k], t + eps * self.upper_multipliers[k])
            })
            .collect()
    }

    /// Whether the multipliers satisfy the two domination inequalities between levels.
    pub fn bounds_dominate(&self) -> bool {
        (0..self.levels.len()).all(|k| {
            let below_upper: f64 = (0..k).map(|i| self.levels[i].len() as f64 * self.upper_multipliers[i]).sum();
            let through_lower: f64 =
                (0..=k).map(|i| self.levels[i].len() as f64 * self.lower_multipliers[i]).sum();
            self.lower_multipliers[k] > below_upper && self.upper_multipliers[k] > through_lower
        })
    }
}

/// Partitions bidders by distinct target (grouping within `TOL`), lowest first.
pub fn levels_and_bounds(targets: &[f64]) -> LevelPartition {
    let mut order: Vec<BidderId> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]).then(a.cmp(&b)));

    let mut levels: Vec<Vec<BidderId>> = Vec::new();
    let mut level_utilities: Vec<f64> = Vec::new();
    for j in order {
        match level_utilities.last() {
            Some(&z) if targets[j] - z <= TOL => levels.last_mut().expect("nonempty").push(j),
            _ => {
                levels.push(vec![j]);
                level_utilities.push(targets[j]);
            }
        }
    }
    for level in &mut levels {
        level.sort_unstable();
    }

    let mut below = 0i32;
    let mut lower_multipliers = Vec::with_capacity(levels.len());
    let mut upper_multipliers = Vec::with_capacity(levels.len());
    let mut level_of = vec![0; targets.len()];
    for (k, level) in levels.iter().enumerate() {
        lower_multipliers.push(2f64.powi(2 * below));
        upper_multipliers.push(2f64.powi(2 * below + level.len() as i32));
        below += level.len() as i32;
        for &j in level {
            level_of[j] = k;
        }
    }
    LevelPartition { levels, level_utilities, lower_multipliers, upper_multipliers, level_of }
}
