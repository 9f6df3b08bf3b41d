//! Sponsored search: slots with click-through rates `alpha_j`, advertisers with
//! quality `beta_i`, per-click values and per-click utility-target bids.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{BidderId, Instance, ModelError};
use crate::TOL;

pub type SlotId = usize;

/// Slot of every bidder (`None` when unassigned).
pub type SlotAssignment = Vec<Option<SlotId>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("invalid ad setting: {0}")]
    InvalidSetting(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("export failed: {0}")]
    Export(String),
    #[error("explicit instance would have {count} outcomes (limit {limit})")]
    TooManyOutcomes { count: u128, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A per-click bid `x` together with the requested expected utility `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdBid {
    pub x: f64,
    #[serde(alias = "pi")]
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct RawAdSetting {
    slot_ctrs: Vec<f64>,
    quality: Vec<f64>,
    values: Vec<f64>,
    #[serde(default)]
    bids: Option<Vec<AdBid>>,
}

/// CTR of bidder `i` in slot `j` is `slot_ctrs[j] * quality[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAdSetting")]
pub struct AdSetting {
    slot_ctrs: Vec<f64>,
    quality: Vec<f64>,
    values: Vec<f64>,
    bids: Vec<AdBid>,
}

impl TryFrom<RawAdSetting> for AdSetting {
    type Error = AdError;

    fn try_from(raw: RawAdSetting) -> Result<Self, AdError> {
        match raw.bids {
            Some(bids) => AdSetting::new(raw.slot_ctrs, raw.quality, raw.values, bids),
            None => AdSetting::truthful(raw.slot_ctrs, raw.quality, raw.values),
        }
    }
}

fn invalid(msg: String) -> AdError {
    AdError::InvalidSetting(msg)
}

impl AdSetting {
    pub fn new(slot_ctrs: Vec<f64>, quality: Vec<f64>, values: Vec<f64>, bids: Vec<AdBid>) -> Result<Self, AdError> {
        let n = quality.len();
        if slot_ctrs.is_empty() {
            return Err(invalid("at least one slot is required".into()));
        }
        if n == 0 {
            return Err(invalid("at least one bidder is required".into()));
        }
        if slot_ctrs.len() > n {
            return Err(invalid(format!("{} slots for {} bidders (need m <= n)", slot_ctrs.len(), n)));
        }
        if values.len() != n || bids.len() != n {
            return Err(invalid(format!(
                "{n} quality factors but {} values and {} bids",
                values.len(),
                bids.len()
            )));
        }
        for (j, &a) in slot_ctrs.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(invalid(format!("slot CTR alpha_{j} = {a} must lie in (0, 1]")));
            }
        }
        if let Some(j) = slot_ctrs.windows(2).position(|w| w[1] > w[0]) {
            return Err(invalid(format!(
                "slot ordering: CTRs must be nonincreasing, but alpha_{} = {} < alpha_{} = {}",
                j,
                slot_ctrs[j],
                j + 1,
                slot_ctrs[j + 1]
            )));
        }
        for (i, &b) in quality.iter().enumerate() {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(format!("quality beta_{i} = {b} must be positive")));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("per-click value v_{i} = {v} must be nonnegative")));
            }
        }
        for (i, b) in bids.iter().enumerate() {
            if !(b.x >= 0.0 && b.x.is_finite() && b.target.is_finite()) {
                return Err(invalid(format!("bid {i} must have finite x >= 0 and finite pi")));
            }
        }
        Ok(Self { slot_ctrs, quality, values, bids })
    }

    /// Bids `x_i = v_i`, `pi_i = 0`.
    pub fn truthful(slot_ctrs: Vec<f64>, quality: Vec<f64>, values: Vec<f64>) -> Result<Self, AdError> {
        let bids = values.iter().map(|&v| AdBid { x: v.max(0.0), target: 0.0 }).collect();
        Self::new(slot_ctrs, quality, values, bids)
    }

    pub fn with_bids(&self, bids: Vec<AdBid>) -> Result<Self, AdError> {
        Self::new(self.slot_ctrs.clone(), self.quality.clone(), self.values.clone(), bids)
    }

    pub fn num_slots(&self) -> usize {
        self.slot_ctrs.len()
    }

    pub fn num_bidders(&self) -> usize {
        self.quality.len()
    }

    pub fn slot_ctrs(&self) -> &[f64] {
        &self.slot_ctrs
    }

    pub fn quality(&self) -> &[f64] {
        &self.quality
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bids(&self) -> &[AdBid] {
        &self.bids
    }

    pub fn ctr(&self, i: BidderId, j: SlotId) -> f64 {
        self.slot_ctrs[j] * self.quality[i]
    }

    fn check(&self, i: BidderId, j: SlotId) -> Result<(), AdError> {
        if i >= self.num_bidders() {
            return Err(AdError::OutOfRange(format!("bidder {i} of {}", self.num_bidders())));
        }
        if j >= self.num_slots() {
            return Err(AdError::OutOfRange(format!("slot {j} of {}", self.num_slots())));
        }
        Ok(())
    }
}

/// `max(alpha_j beta_i x_i - pi_i, 0)`.
pub fn expected_payment(setting: &AdSetting, i: BidderId, j: SlotId) -> Result<f64, AdError> {
    setting.check(i, j)?;
    Ok(payment(setting, i, j))
}

fn payment(setting: &AdSetting, i: BidderId, j: SlotId) -> f64 {
    (setting.ctr(i, j) * setting.bids[i].x - setting.bids[i].target).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub slot_of: Vec<Option<SlotId>>,
    pub expected_payments: Vec<f64>,
    pub total: f64,
}

impl Assignment {
    fn from_slots(setting: &AdSetting, slot_of: Vec<Option<SlotId>>) -> Self {
        let expected_payments: Vec<f64> =
            slot_of.iter().enumerate().map(|(i, s)| s.map_or(0.0, |j| payment(setting, i, j))).collect();
        Self { total: expected_payments.iter().sum(), slot_of, expected_payments }
    }
}

/// Maximum-weight assignment for a `rows x cols` weight matrix with `rows <= cols`.
/// Every row is matched; returns the column of each row.
fn hungarian_max(weights: &[Vec<f64>]) -> Vec<usize> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    debug_assert!(rows <= cols);
    // Shortest augmenting paths with potentials, on costs = -weight. 1-based, column 0 is virtual.
    let cost = |r: usize, c: usize| -weights[r - 1][c - 1];
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut row_of = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        row_of[0] = r;
        let mut c0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[c0] = true;
            let r0 = row_of[c0];
            let mut delta = f64::INFINITY;
            let mut c1 = 0;
            for c in 1..=cols {
                if used[c] {
                    continue;
                }
                let cur = cost(r0, c) - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = c0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    c1 = c;
                }
            }
            for c in 0..=cols {
                if used[c] {
                    u[row_of[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            c0 = c1;
            if row_of[c0] == 0 {
                break;
            }
        }
        loop {
            let c1 = way[c0];
            row_of[c0] = row_of[c1];
            c0 = c1;
            if c0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; rows];
    for c in 1..=cols {
        if row_of[c] != 0 {
            col_of[row_of[c] - 1] = c - 1;
        }
    }
    col_of
}

/// Constraint on one bidder while breaking ties.
#[derive(Clone, Copy)]
enum Forced {
    Free,
    Slot(SlotId),
    Unassigned,
}

/// Best total payment subject to `forced`, plus the matching achieving it.
fn solve_forced(setting: &AdSetting, forced: &[Forced]) -> (f64, Vec<Option<SlotId>>) {
    let (n, m) = (setting.num_bidders(), setting.num_slots());
    let total_weight: f64 = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| payment(setting, i, j)).sum();
    let forbidden = -(1.0 + 2.0 * total_weight);
    // Rows are slots; columns are bidders followed by one "leave empty" column per slot.
    let weights: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut row: Vec<f64> = (0..n)
                .map(|i| {
                    let slot_taken_by_other =
                        forced.iter().enumerate().any(|(k, f)| k != i && matches!(f, Forced::Slot(s) if *s == j));
                    match forced[i] {
                        Forced::Free if !slot_taken_by_other => payment(setting, i, j),
                        Forced::Slot(s) if s == j => payment(setting, i, j),
                        _ => forbidden,
                    }
                })
                .collect();
            row.extend((0..m).map(|_| 0.0));
            row
        })
        .collect();
    let col_of = hungarian_max(&weights);
    let mut slot_of = vec![None; n];
    let mut total = 0.0;
    for (j, &c) in col_of.iter().enumerate() {
        if c < n {
            total += weights[j][c];
            slot_of[c] = Some(j);
        }
    }
    (total, slot_of)
}

/// Maximizes total expected payment over injective partial assignments.
///
/// Among optimal assignments, bidders are settled in index order, each taking the
/// best-ranked slot (or none) that still allows an optimum. Pairs with zero expected
/// payment are left unassigned.
pub fn optimal_assignment(setting: &AdSetting) -> Assignment {
    let n = setting.num_bidders();
    let mut forced = vec![Forced::Free; n];
    let (best, _) = solve_forced(setting, &forced);
    for i in 0..n {
        let mut settled = false;
        for j in 0..setting.num_slots() {
            if payment(setting, i, j) <= 0.0 || forced.iter().any(|f| matches!(f, Forced::Slot(s) if *s == j)) {
                continue;
            }
            forced[i] = Forced::Slot(j);
            if solve_forced(setting, &forced).0 >= best - TOL {
                settled = true;
                break;
            }
        }
        if !settled {
            forced[i] = Forced::Unassigned;
        }
    }
    let slot_of = forced
        .iter()
        .map(|f| match f {
            Forced::Slot(j) => Some(*j),
            _ => None,
        })
        .collect();
    Assignment::from_slots(setting, slot_of)
}

/// Exhaustive search over all injective partial assignments (for small settings and tests).
pub fn brute_force_assignment(setting: &AdSetting) -> Assignment {
    let best = explicit_outcomes(setting)
        .into_iter()
        .map(|slots| Assignment::from_slots(setting, slots))
        .fold(None::<Assignment>, |best, a| match best {
            Some(b) if b.total >= a.total - TOL => Some(b),
            _ => Some(a),
        });
    best.expect("the empty assignment always exists")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingScheme {
    /// A per-click price per slot, no rebate.
    SlotPricedPpc,
    /// Charge the per-click bid and pay back the target as a flat rebate.
    Rebate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricingResult {
    pub scheme: PricingScheme,
    pub ppc: Vec<f64>,
    pub rebates: Vec<f64>,
    /// `ctr * ppc - rebate` for assigned bidders, 0 otherwise.
    pub expected_payments: Vec<f64>,
}

pub fn price_assignment(setting: &AdSetting, assignment: &Assignment, scheme: PricingScheme) -> PricingResult {
    let n = setting.num_bidders();
    let mut ppc = vec![0.0; n];
    let mut rebates = vec![0.0; n];
    let mut expected_payments = vec![0.0; n];
    for (i, slot) in assignment.slot_of.iter().enumerate() {
        let Some(j) = *slot else { continue };
        let ctr = setting.ctr(i, j);
        let bid = setting.bids[i];
        match scheme {
            PricingScheme::SlotPricedPpc => ppc[i] = (bid.x - bid.target / ctr).max(0.0),
            PricingScheme::Rebate => {
                if payment(setting, i, j) > 0.0 {
                    ppc[i] = bid.x;
                    rebates[i] = bid.target;
                }
            }
        }
        expected_payments[i] = ctr * ppc[i] - rebates[i];
    }
    PricingResult { scheme, ppc, rebates, expected_payments }
}

/// Number of injective partial assignments of `n` bidders to `m` slots.
pub fn count_assignments(n: usize, m: usize) -> u128 {
    // sum_k C(n, k) * m! / (m - k)!
    let mut total: u128 = 0;
    let mut choose: u128 = 1;
    let mut falling: u128 = 1;
    for k in 0..=n.min(m) {
        total = total.saturating_add(choose.saturating_mul(falling));
        choose = choose.saturating_mul((n - k) as u128) / (k as u128 + 1);
        falling = falling.saturating_mul((m - k) as u128);
    }
    total
}

/// All injective partial assignments, bidder 0's choice varying slowest
/// (unassigned first, then slots in order).
pub fn explicit_outcomes(setting: &AdSetting) -> Vec<Vec<Option<SlotId>>> {
    fn extend(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<SlotId>>, out: &mut Vec<Vec<Option<SlotId>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        extend(i + 1, n, m, used, cur, out);
        cur.pop();
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                extend(i + 1, n, m, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let (n, m) = (setting.num_bidders(), setting.num_slots());
    let mut out = Vec::new();
    extend(0, n, m, &mut vec![false; m], &mut Vec::with_capacity(n), &mut out);
    out
}

/// The same market as an explicit instance: one outcome per injective partial assignment,
/// worth `alpha_j beta_i v_i` to an advertiser shown in slot `j`.
pub fn to_explicit_instance(setting: &AdSetting, max_outcomes: usize) -> Result<(Instance, Vec<SlotAssignment>), AdError> {
    let count = count_assignments(setting.num_bidders(), setting.num_slots());
    if count > max_outcomes as u128 {
        return Err(AdError::TooManyOutcomes { count, limit: max_outcomes });
    }
    let outcomes = explicit_outcomes(setting);
    let values = (0..setting.num_bidders())
        .map(|i| {
            outcomes
                .iter()
                .map(|o| o[i].map_or(0.0, |j| setting.ctr(i, j) * setting.values[i]))
                .collect()
        })
        .collect();
    Ok((Instance::new(values)?, outcomes))
}

/// Generalized first price: rank by `beta_i x_i` (ties to the lower index), the
/// `k`-th ranked bidder gets slot `k` and pays her own bid per click.
pub fn gfp_allocation(setting: &AdSetting, bids: &[f64]) -> Vec<Option<SlotId>> {
    let n = setting.num_bidders();
    let mut order: Vec<BidderId> = (0..n).collect();
    order.sort_by(|&a, &b| (setting.quality[b] * bids[b]).total_cmp(&(setting.quality[a] * bids[a])).then(a.cmp(&b)));
    let mut slot_of = vec![None; n];
    for (rank, &i) in order.iter().take(setting.num_slots()).enumerate() {
        slot_of[i] = Some(rank);
    }
    slot_of
}

fn gfp_utility(setting: &AdSetting, bids: &[f64], i: BidderId) -> f64 {
    gfp_allocation(setting, bids)[i].map_or(0.0, |j| setting.ctr(i, j) * (setting.values[i] - bids[i]))
}

/// GFP bids on the grid `{0, eps, 2 eps, ...}`, stored as multiples of `eps`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct GfpState {
    pub bids: Vec<u64>,
    pub cursor: usize,
}

/// Myopic best response of bidder `mover` over the grid up to her value: the lowest
/// grid bid (as a multiple of `eps`) attaining the best utility, and that utility.
pub fn gfp_best_response(setting: &AdSetting, bids: &[u64], mover: BidderId, eps: f64) -> (u64, f64) {
    let mut trial: Vec<f64> = bids.iter().map(|&k| k as f64 * eps).collect();
    let top = (setting.values[mover] / eps + 1e-9).floor() as u64;
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..=top {
        trial[mover] = k as f64 * eps;
        let u = gfp_utility(setting, &trial, mover);
        if u > best.1 + TOL {
            best = (k, u);
        }
    }
    best
}

/// One scheduled move: `mover` switches to her best response only if it is strictly
/// better than her current bid.
pub fn gfp_step(setting: &AdSetting, bids: &[u64], mover: BidderId, eps: f64) -> Vec<u64> {
    let current: Vec<f64> = bids.iter().map(|&k| k as f64 * eps).collect();
    let (k, u) = gfp_best_response(setting, bids, mover, eps);
    let mut next = bids.to_vec();
    if u > gfp_utility(setting, &current, mover) + TOL {
        next[mover] = k;
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GfpEvent {
    pub step: u64,
    pub mover: BidderId,
    pub bids: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GfpReport {
    pub eps: f64,
    pub initial_bids: Vec<f64>,
    pub steps: u64,
    /// A full round passed with nobody changing her bid.
    pub fixed_point: bool,
    /// First step whose state was seen before, and when it was first seen.
    pub cycle: Option<(u64, u64)>,
    pub final_bids: Vec<f64>,
    pub trace: Vec<GfpEvent>,
}

/// Round-robin best-response dynamics from `initial` (per-click bids, rounded to the grid)
/// until a fixed point, a revisited state or `max_steps`.
pub fn gfp_dynamics(setting: &AdSetting, initial: &[f64], eps: f64, max_steps: u64) -> Result<GfpReport, AdError> {
    let n = setting.num_bidders();
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("GFP grid step must be positive, got {eps}")));
    }
    if initial.len() != n {
        return Err(invalid(format!("{} initial GFP bids for {n} bidders", initial.len())));
    }
    let mut state = GfpState { bids: initial.iter().map(|&b| (b.max(0.0) / eps).round() as u64).collect(), cursor: 0 };
    let mut seen: HashMap<GfpState, u64> = HashMap::new();
    let mut trace = Vec::new();
    let mut idle = 0;
    let mut step = 0;
    let mut cycle = None;
    while step < max_steps {
        if idle >= n {
            break;
        }
        if let Some(&first) = seen.get(&state) {
            cycle = Some((step, first));
            break;
        }
        seen.insert(state.clone(), step);
        let mover = state.cursor;
        let next = gfp_step(setting, &state.bids, mover, eps);
        idle = if next == state.bids { idle + 1 } else { 0 };
        state = GfpState { bids: next, cursor: (mover + 1) % n };
        step += 1;
        trace.push(GfpEvent { step, mover, bids: state.bids.iter().map(|&k| k as f64 * eps).collect() });
    }
    Ok(GfpReport {
        eps,
        initial_bids: initial.iter().map(|&b| (b.max(0.0) / eps).round() * eps).collect(),
        steps: step,
        fixed_point: idle >= n,
        cycle,
        final_bids: state.bids.iter().map(|&k| k as f64 * eps).collect(),
        trace,
    })
}

impl GfpReport {
    /// CSV with columns `step,mover,direction,bid_0..bid_{n-1}`; step 0 is the initial state
    /// and `direction` is empty when the mover kept her bid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AdError> {
        let export = |e: csv::Error| AdError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "mover".into(), "direction".into()];
        header.extend((0..self.initial_bids.len()).map(|i| format!("bid_{i}")));
        w.write_record(&header).map_err(export)?;
        let row = |step: u64, mover: String, dir: &str, bids: &[f64]| {
            let mut r = vec![step.to_string(), mover, dir.to_string()];
            r.extend(bids.iter().map(|b| format!("{b:.9}")));
            r
        };
        w.write_record(row(0, String::new(), "", &self.initial_bids)).map_err(export)?;
        let mut prev = &self.initial_bids;
        for e in &self.trace {
            let dir = match e.bids[e.mover].partial_cmp(&prev[e.mover]) {
                Some(std::cmp::Ordering::Greater) => "raise",
                Some(std::cmp::Ordering::Less) => "lower",
                _ => "",
            };
            w.write_record(row(e.step, e.mover.to_string(), dir, &e.bids)).map_err(export)?;
            prev = &e.bids;
        }
        w.flush().map_err(|e| AdError::Export(e.to_string()))
    }
}
