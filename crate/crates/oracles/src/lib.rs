//! Brute-force grid oracles for utility-target auctions.
//!
//! Everything here re-derives auction arithmetic from the raw value matrix
//! instead of calling the analysis code it is meant to check.

use rayon::prelude::*;
use serde::Serialize;
use utarget::{Instance, TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("grid has {points} points, over the budget of {max_points}")]
    BudgetExceeded { points: u128, max_points: u64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A uniform grid `{0, step, 2 step, ...}` clipped to `[0, cap_i]` per bidder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub step: f64,
    pub caps: Vec<f64>,
    pub max_points: u64,
}

impl GridSpec {
    pub fn new(step: f64, caps: Vec<f64>, max_points: u64) -> Result<Self, OracleError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(OracleError::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(OracleError::InvalidGrid("caps must be finite and nonnegative".into()));
        }
        let g = Self { step, caps, max_points };
        let points = g.num_points();
        if points > max_points as u128 {
            return Err(OracleError::BudgetExceeded { points, max_points });
        }
        Ok(g)
    }

    /// Grid over `[0, max_o v_i(o)]` for every bidder.
    pub fn for_instance(instance: &Instance, step: f64, max_points: u64) -> Result<Self, OracleError> {
        Self::new(step, instance.caps(), max_points)
    }

    /// Number of grid values for bidder `i`.
    pub fn len_of(&self, i: usize) -> usize {
        (self.caps[i] / self.step + 1e-9).floor() as usize + 1
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.caps.len()).map(|i| self.len_of(i)).collect()
    }

    pub fn num_points(&self) -> u128 {
        self.dims().iter().fold(1u128, |acc, &d| acc.saturating_mul(d as u128))
    }

    pub fn value(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// Grid point with flat index `idx` (bidder 0 varies slowest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).into_iter().map(|k| self.value(k)).collect()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut out = vec![0; dims.len()];
        for i in (0..dims.len()).rev() {
            out[i] = idx % dims[i];
            idx /= dims[i];
        }
        out
    }

    pub fn flat_index(&self, ks: &[usize]) -> usize {
        self.dims().iter().zip(ks).fold(0, |acc, (&d, &k)| acc * d + k)
    }
}

fn rows(instance: &Instance) -> Vec<Vec<f64>> {
    instance.rows()
}

fn welfare_optimum(values: &[Vec<f64>]) -> usize {
    let m = values[0].len();
    let w: Vec<f64> = (0..m).map(|o| values.iter().map(|r| r[o]).sum()).collect();
    let best = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..m).find(|&o| w[o] >= best - TOL).expect("nonempty")
}

fn totals(values: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let m = values[0].len();
    let mut t = vec![0.0; m];
    for (row, &p) in values.iter().zip(targets) {
        for o in 0..m {
            t[o] += (row[o] - p).max(0.0);
        }
    }
    t
}

/// Highest total; `favored` wins any tie it is part of, otherwise the lowest index.
fn winner(totals: &[f64], favored: usize) -> usize {
    let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if totals[favored] >= best - TOL {
        favored
    } else {
        (0..totals.len()).find(|&o| totals[o] >= best - TOL).expect("nonempty")
    }
}

/// The CEF inequality for quasi-truthful bids: with bids `max(v - pi, 0)` the
/// envy term `v_i(o) - b_i(o)` is `min(v_i(o), pi_i)`.
fn cef_from_scratch(values: &[Vec<f64>], targets: &[f64], o_star: usize) -> bool {
    let t = totals(values, targets);
    let w = winner(&t, o_star);
    (0..t.len()).all(|o| {
        let envy: f64 = values
            .iter()
            .zip(targets)
            .map(|(row, &p)| (row[o].min(p) - row[w].min(p)).max(0.0))
            .sum();
        envy <= t[w] - t[o] + TOL
    })
}

/// CEF classification of every grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CefGrid {
    pub grid: GridSpec,
    pub in_cef: Vec<bool>,
}

impl CefGrid {
    pub fn num_cef(&self) -> usize {
        self.in_cef.iter().filter(|&&c| c).count()
    }

    pub fn contains(&self, targets: &[f64]) -> Option<bool> {
        let ks: Vec<usize> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let k = (t / self.grid.step).round();
                ((k * self.grid.step - t).abs() <= 1e-9 && k >= 0.0 && (k as usize) < self.grid.len_of(i))
                    .then_some(k as usize)
            })
            .collect::<Option<_>>()?;
        Some(self.in_cef[self.grid.flat_index(&ks)])
    }

    /// Grid points violating downward closure of the CEF set and upward closure
    /// of its complement. Checking single-step neighbors suffices by transitivity.
    pub fn closure_counterexamples(&self) -> (usize, usize) {
        let dims = self.grid.dims();
        let counts: Vec<(usize, usize)> = (0..self.in_cef.len())
            .into_par_iter()
            .map(|idx| {
                let ks = self.grid.multi_index(idx);
                let mut down = 0;
                let mut up = 0;
                for i in 0..dims.len() {
                    let mut n = ks.clone();
                    if self.in_cef[idx] && ks[i] > 0 {
                        n[i] = ks[i] - 1;
                        down += usize::from(!self.in_cef[self.grid.flat_index(&n)]);
                    }
                    if !self.in_cef[idx] && ks[i] + 1 < dims[i] {
                        n[i] = ks[i] + 1;
                        up += usize::from(self.in_cef[self.grid.flat_index(&n)]);
                    }
                }
                (down, up)
            })
            .collect();
        counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    /// Grid points where the library's `in_cef` disagrees with this oracle.
    pub fn disagreements_with_library(&self, instance: &Instance) -> usize {
        (0..self.in_cef.len())
            .into_par_iter()
            .filter(|&idx| {
                let p = self.grid.point(idx);
                utarget::in_cef(instance, &p).expect("grid point is valid") != self.in_cef[idx]
            })
            .count()
    }
}

/// Classifies every grid point as in or out of the CEF set (quasi-truthful bids,
/// ties toward the welfare optimum).
pub fn enumerate_cef_grid(instance: &Instance, grid: &GridSpec) -> Result<CefGrid, OracleError> {
    check_grid(instance, grid)?;
    let values = rows(instance);
    let o_star = welfare_optimum(&values);
    let in_cef = (0..grid.num_points() as usize)
        .into_par_iter()
        .map(|idx| cef_from_scratch(&values, &grid.point(idx), o_star))
        .collect();
    Ok(CefGrid { grid: grid.clone(), in_cef })
}

fn check_grid(instance: &Instance, grid: &GridSpec) -> Result<(), OracleError> {
    if grid.caps.len() != instance.num_bidders() {
        return Err(OracleError::InvalidGrid(format!(
            "grid has {} coordinates for {} bidders",
            grid.caps.len(),
            instance.num_bidders()
        )));
    }
    let points = grid.num_points();
    if points > grid.max_points as u128 {
        return Err(OracleError::BudgetExceeded { points, max_points: grid.max_points });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridEquilibrium {
    pub targets: Vec<f64>,
    pub utilities: Vec<f64>,
    pub winning_outcome: usize,
    pub is_cef: bool,
}

/// Whether bidder `i` can gain more than `TOL` by moving to another grid target.
fn has_improving_deviation(values: &[Vec<f64>], targets: &[f64], t: &[f64], w: usize, grid: &GridSpec, i: usize) -> bool {
    let row = &values[i];
    let current = row[w] - (row[w] - targets[i]).max(0.0);
    let rest: Vec<f64> = (0..t.len()).map(|o| t[o] - (row[o] - targets[i]).max(0.0)).collect();
    let mut dev = vec![0.0; t.len()];
    (0..grid.len_of(i)).any(|k| {
        let p = grid.value(k);
        for o in 0..t.len() {
            dev[o] = rest[o] + (row[o] - p).max(0.0);
        }
        let w2 = winner(&dev, w);
        row[w2] - (row[w2] - p).max(0.0) > current + TOL
    })
}

/// Grid points where no bidder has an improving grid deviation, in grid order.
pub fn enumerate_equilibria_grid(instance: &Instance, grid: &GridSpec) -> Result<Vec<GridEquilibrium>, OracleError> {
    check_grid(instance, grid)?;
    let values = rows(instance);
    let o_star = welfare_optimum(&values);
    let found: Vec<Option<GridEquilibrium>> = (0..grid.num_points() as usize)
        .into_par_iter()
        .map(|idx| {
            let targets = grid.point(idx);
            let t = totals(&values, &targets);
            let w = winner(&t, o_star);
            if (0..values.len()).any(|i| has_improving_deviation(&values, &targets, &t, w, grid, i)) {
                return None;
            }
            let utilities = values.iter().zip(&targets).map(|(row, &p)| row[w] - (row[w] - p).max(0.0)).collect();
            Some(GridEquilibrium { is_cef: cef_from_scratch(&values, &targets, o_star), targets, utilities, winning_outcome: w })
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Compares sorted vectors lexicographically, treating entries within `TOL` as equal.
fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TOL {
            return x.total_cmp(y);
        }
    }
    std::cmp::Ordering::Equal
}

/// The CEF grid equilibria whose sorted utility vectors are lexicographically largest
/// (all ties reported). Empty if the grid holds no CEF equilibrium.
pub fn brute_force_egalitarian(instance: &Instance, grid: &GridSpec) -> Result<Vec<GridEquilibrium>, OracleError> {
    let mut best: Vec<GridEquilibrium> = Vec::new();
    for eq in enumerate_equilibria_grid(instance, grid)?.into_iter().filter(|e| e.is_cef) {
        let ord = best.first().map(|b| lex_cmp(&sorted(&eq.utilities), &sorted(&b.utilities)));
        match ord {
            None | Some(std::cmp::Ordering::Greater) => best = vec![eq],
            Some(std::cmp::Ordering::Equal) => best.push(eq),
            Some(std::cmp::Ordering::Less) => {}
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    /// Best utility over all sampled bids.
    pub utility: f64,
    /// Best utility over quasi-truthful bids `(v_i, pi)` on the grid.
    pub quasi_truthful_utility: f64,
    pub quasi_truthful_target: f64,
}

/// Exhaustive best response of bidder `i` against the others' bids `(x_j, pi_j)`,
/// over targets `{0, step, ...}` combined with her true values (targets up to her cap)
/// and each extra value bid in `value_bids` (targets up to its largest entry). Ties go to the outcome that wins against her current bid
/// `(current.0, current.1)` (index order for that first auction).
pub fn best_response_oracle(
    instance: &Instance,
    i: usize,
    others: &[(Vec<f64>, f64)],
    current: (&[f64], f64),
    step: f64,
    value_bids: &[Vec<f64>],
) -> Result<BestResponse, OracleError> {
    let n = instance.num_bidders();
    let m = instance.num_outcomes();
    if i >= n || others.len() != n {
        return Err(OracleError::InvalidGrid("bidder or profile size mismatch".into()));
    }
    let grid = GridSpec::new(step, vec![instance.cap(i)], u64::MAX)?;
    let bid_total = |x: &[f64], p: f64, o: usize| (x[o] - p).max(0.0);
    let rest: Vec<f64> = (0..m)
        .map(|o| (0..n).filter(|&j| j != i).map(|j| bid_total(&others[j].0, others[j].1, o)).sum())
        .collect();
    let first: Vec<f64> = (0..m).map(|o| rest[o] + bid_total(current.0, current.1, o)).collect();
    let w0 = winner(&first, 0);
    let ctx = if first[0] >= first[w0] - TOL { 0 } else { w0 };

    let values = instance.values_of(i);
    let utility_of = |x: &[f64], p: f64| {
        let t: Vec<f64> = (0..m).map(|o| rest[o] + bid_total(x, p, o)).collect();
        let w = winner(&t, ctx);
        values[w] - bid_total(x, p, w)
    };
    let mut qt = (f64::NEG_INFINITY, 0.0);
    for k in 0..grid.len_of(0) {
        let u = utility_of(values, grid.value(k));
        if u > qt.0 + TOL {
            qt = (u, grid.value(k));
        }
    }
    let mut best = qt.0;
    for x in value_bids {
        if x.len() != m {
            return Err(OracleError::InvalidGrid("value bid has the wrong number of outcomes".into()));
        }
        let top = x.iter().copied().fold(0.0, f64::max);
        let mut k = 0;
        while grid.value(k) <= top + 1e-12 {
            best = best.max(utility_of(x, grid.value(k)));
            k += 1;
        }
    }
    Ok(BestResponse { utility: best, quasi_truthful_utility: qt.0, quasi_truthful_target: qt.1 })
}

/// Oracle-versus-library summary for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub grid_step: f64,
    pub grid_points: u128,
    pub cef_points: usize,
    pub cef_disagreements: usize,
    pub closure_counterexamples: (usize, usize),
    pub egalitarian: Vec<f64>,
    pub brute_force_egalitarian: Vec<Vec<f64>>,
    /// Infinity-norm distance from the egalitarian vector to the nearest brute-force optimum.
    pub egalitarian_distance: Option<f64>,
}

impl Comparison {
    pub fn agrees(&self) -> bool {
        self.cef_disagreements == 0
            && self.closure_counterexamples == (0, 0)
            && self.egalitarian_distance.is_some_and(|d| d <= self.grid_step + 1e-9)
    }
}

pub fn compare(instance: &Instance, grid: &GridSpec) -> Result<Comparison, Box<dyn std::error::Error + Send + Sync>> {
    let cef = enumerate_cef_grid(instance, grid)?;
    let egal = utarget::egalitarian(instance, TOL)?.targets;
    let brute: Vec<Vec<f64>> = brute_force_egalitarian(instance, grid)?.into_iter().map(|e| e.targets).collect();
    let distance = brute
        .iter()
        .map(|b| b.iter().zip(&egal).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
    Ok(Comparison {
        grid_step: grid.step,
        grid_points: grid.num_points(),
        cef_points: cef.num_cef(),
        cef_disagreements: cef.disagreements_with_library(instance),
        closure_counterexamples: cef.closure_counterexamples(),
        egalitarian: egal,
        brute_force_egalitarian: brute,
        egalitarian_distance: distance,
    })
}
