//! Repeated utility-target auctions where quasi-truthful bidders adjust their
//! targets by `epsilon` according to the impatience axioms:
//!
//! - A1: losers only raise their effective bid, winners only lower it.
//! - A2: a loser is more impatient than any winner.
//! - A3: a winner eventually lowers her bid when everyone wins.
//! - A4: among losers, the one with the higher target moves first.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{egalitarian, in_cef, in_cef_eps, in_ncef_eps, levels_and_bounds, AnalysisError};
use crate::auction::{run_auction, TieBreakContext};
use crate::model::{BidProfile, BidderId, Instance, ModelError, OutcomeId};
use crate::TOL;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("the egalitarian target needs the egalitarian vector")]
    MissingEgalitarian,
    #[error("trace export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxiomSet {
    #[serde(rename = "A1+A2", alias = "a1a2")]
    A1A2,
    #[serde(rename = "A1+A3", alias = "a1a3")]
    A1A3,
    #[serde(rename = "A1+A2+A3", alias = "a1a2a3")]
    A1A2A3,
    #[serde(rename = "all", alias = "A1+A2+A3+A4")]
    All,
}

impl AxiomSet {
    pub fn has_a2(self) -> bool {
        !matches!(self, AxiomSet::A1A3)
    }

    pub fn has_a3(self) -> bool {
        !matches!(self, AxiomSet::A1A2)
    }

    pub fn has_a4(self) -> bool {
        matches!(self, AxiomSet::All)
    }
}

impl std::str::FromStr for AxiomSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "a1a2" => Ok(AxiomSet::A1A2),
            "a1a3" => Ok(AxiomSet::A1A3),
            "a1a2a3" => Ok(AxiomSet::A1A2A3),
            "all" | "a1a2a3a4" => Ok(AxiomSet::All),
            _ => Err(format!("unknown axiom set {s:?} (expected A1+A2, A1+A3, A1+A2+A3 or all)")),
        }
    }
}

/// Which winner lowers her bid when everyone wins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WinnerPolicy {
    #[default]
    RoundRobin,
    SeededRandom,
}

impl std::str::FromStr for WinnerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "round-robin" => Ok(WinnerPolicy::RoundRobin),
            "seeded-random" | "random" => Ok(WinnerPolicy::SeededRandom),
            _ => Err(format!("unknown winner policy {s:?} (expected round-robin or seeded-random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    CefEps,
    NcefEps,
    Boundary,
    Egalitarian,
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cef_eps" | "cef" => Ok(Target::CefEps),
            "ncef_eps" | "ncef" => Ok(Target::NcefEps),
            "boundary" => Ok(Target::Boundary),
            "egalitarian" => Ok(Target::Egalitarian),
            _ => Err(format!("unknown target {s:?} (expected cef_eps, ncef_eps, boundary or egalitarian)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilon: f64,
    /// `None` means [`default_max_steps`].
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    pub axiom_set: AxiomSet,
    #[serde(default)]
    pub winner_policy: WinnerPolicy,
    pub target: Target,
}

impl SimConfig {
    pub fn new(epsilon: f64, axiom_set: AxiomSet, target: Target) -> Self {
        Self { epsilon, max_steps: None, seed: 0, axiom_set, winner_policy: WinnerPolicy::RoundRobin, target }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_steps == Some(0) {
            return Err(DynamicsError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn step_budget(&self, instance: &Instance) -> u64 {
        self.max_steps.unwrap_or_else(|| default_max_steps(instance, self.epsilon))
    }
}

/// `10 * (sum_i ceil(cap_i / eps)) * n`.
pub fn default_max_steps(instance: &Instance, epsilon: f64) -> u64 {
    let per_bidder: u64 = instance.caps().iter().map(|c| steps_to_zero(*c, epsilon)).sum();
    (10 * per_bidder * instance.num_bidders() as u64).max(1)
}

/// `ceil(x / eps)`, ignoring float noise just above an integer.
fn steps_to_zero(x: f64, epsilon: f64) -> u64 {
    (x / epsilon - 1e-9).ceil().max(0.0) as u64
}

/// Upper bound on the steps before everyone wins under A1+A2.
pub fn all_winners_bound(initial: &[f64], epsilon: f64) -> u64 {
    initial.iter().map(|p| steps_to_zero(*p, epsilon)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Raise the effective bid: `pi <- max(pi - eps, 0)`.
    Raise,
    /// Lower the effective bid: `pi <- min(pi + eps, cap)`.
    Lower,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Raise => "raise",
            Direction::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub targets: Vec<f64>,
    /// Winner of the auction at `targets`, used to break the next round's ties.
    pub previous_winner: OutcomeId,
    pub step: u64,
    pub round_robin_cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub mover: BidderId,
    pub direction: Direction,
    pub winner_before: OutcomeId,
    pub winner_after: OutcomeId,
    /// Targets after the move.
    pub targets: Vec<f64>,
    pub winners: Vec<bool>,
    /// Whether `targets` lies in the CEF set.
    pub in_cef: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub epsilon: f64,
    pub initial_targets: Vec<f64>,
    pub initial_winner: OutcomeId,
    pub initial_winners: Vec<bool>,
    pub events: Vec<TraceEvent>,
    /// Everyone won and no axiom asked a winner to move.
    pub halted: bool,
}

impl Trace {
    pub fn final_targets(&self) -> &[f64] {
        self.events.last().map_or(&self.initial_targets, |e| &e.targets)
    }

    /// Targets after each step, starting with the initial vector.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.initial_targets.as_slice()).chain(self.events.iter().map(|e| e.targets.as_slice()))
    }

    /// Winner flags after each step, starting with the initial state.
    pub fn winner_flags(&self) -> impl Iterator<Item = &[bool]> {
        std::iter::once(self.initial_winners.as_slice()).chain(self.events.iter().map(|e| e.winners.as_slice()))
    }

    /// CSV with columns `step,mover,direction,pi_0..pi_{n-1},winner,cef_flag`.
    /// Step 0 is the initial state with empty mover and direction.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DynamicsError> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.initial_targets.len();
        let mut header = vec!["step".to_string(), "mover".into(), "direction".into()];
        header.extend((0..n).map(|i| format!("pi_{i}")));
        header.extend(["winner".to_string(), "cef_flag".into()]);
        let export = |e: csv::Error| DynamicsError::Export(e.to_string());
        w.write_record(&header).map_err(export)?;

        let row = |step: u64, mover: String, dir: &str, targets: &[f64], winner: OutcomeId, cef: Option<bool>| {
            let mut r = vec![step.to_string(), mover, dir.to_string()];
            r.extend(targets.iter().map(|p| format!("{p:.9}")));
            r.push(winner.to_string());
            r.push(cef.map_or(String::new(), |c| (c as u8).to_string()));
            r
        };
        w.write_record(row(0, String::new(), "", &self.initial_targets, self.initial_winner, None))
            .map_err(export)?;
        for e in &self.events {
            w.write_record(row(e.step, e.mover.to_string(), e.direction.as_str(), &e.targets, e.winner_after, Some(e.in_cef)))
                .map_err(export)?;
        }
        w.flush().map_err(|e| DynamicsError::Export(e.to_string()))
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), DynamicsError> {
        serde_json::to_writer(out, self).map_err(|e| DynamicsError::Export(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub target: Target,
    pub total_steps: u64,
    pub halted: bool,
    /// First step whose state is in the target set.
    pub entered_at_step: Option<u64>,
    /// Every state from `entered_at_step` on is in the target set.
    pub stayed: bool,
    /// Start of the final unbroken run of target states (absent if the last state is outside).
    pub last_entry_step: Option<u64>,
    pub all_winners_first_step: Option<u64>,
    /// `sum_i ceil(pi0_i / eps)`.
    pub all_winners_bound: u64,
    pub final_targets: Vec<f64>,
    /// Egalitarian vector and per-bidder bounds, for the egalitarian target.
    pub egalitarian_targets: Option<Vec<f64>>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.entered_at_step.is_some() && self.stayed
    }

    /// The final state has been inside the target set for at least `fraction` of the run.
    pub fn settled_for(&self, fraction: f64) -> bool {
        match self.last_entry_step {
            Some(k) => (self.total_steps - k) as f64 >= fraction * self.total_steps as f64,
            None => false,
        }
    }
}

fn clamp_target(instance: &Instance, i: BidderId, t: f64) -> f64 {
    t.clamp(0.0, instance.cap(i))
}

/// Moves one target by `epsilon` and re-runs the auction with ties toward the previous winner.
pub fn apply_move(
    instance: &Instance,
    state: &SimState,
    mover: BidderId,
    direction: Direction,
    epsilon: f64,
) -> Result<SimState, ModelError> {
    instance.check_bidder(mover)?;
    let mut targets = state.targets.clone();
    targets[mover] = match direction {
        Direction::Raise => (targets[mover] - epsilon).max(0.0),
        Direction::Lower => (targets[mover] + epsilon).min(instance.cap(mover)),
    };
    let profile = BidProfile::quasi_truthful(instance, &targets)?;
    let result = run_auction(instance, &profile, TieBreakContext::favoring(state.previous_winner))?;
    Ok(SimState {
        targets,
        previous_winner: result.winning_outcome,
        step: state.step + 1,
        round_robin_cursor: state.round_robin_cursor,
    })
}

/// A running simulation: the state plus the seeded scheduler.
pub struct Simulator<'a> {
    instance: &'a Instance,
    config: SimConfig,
    state: SimState,
    winners: Vec<bool>,
    rng: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    /// Starts from quasi-truthful bids with targets `initial` (clamped into `[0, cap_i]`).
    /// The first auction breaks ties by index order.
    pub fn new(instance: &'a Instance, initial: &[f64], config: SimConfig) -> Result<Self, DynamicsError> {
        config.validate()?;
        if initial.len() != instance.num_bidders() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} initial targets for {} bidders",
                initial.len(),
                instance.num_bidders()
            ))
            .into());
        }
        if let Some(bad) = initial.iter().find(|p| !p.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("initial target {bad} is not finite")));
        }
        let targets: Vec<f64> = initial.iter().enumerate().map(|(i, &t)| clamp_target(instance, i, t)).collect();
        let profile = BidProfile::quasi_truthful(instance, &targets)?;
        let result = run_auction(instance, &profile, TieBreakContext::fixed_order())?;
        Ok(Self {
            instance,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            state: SimState { targets, previous_winner: result.winning_outcome, step: 0, round_robin_cursor: 0 },
            winners: result.is_winner,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn winners(&self) -> &[bool] {
        &self.winners
    }

    /// Who moves next and in which direction, or `None` when the axioms leave nobody to move.
    pub fn next_mover(&mut self) -> Option<(BidderId, Direction)> {
        let axioms = self.config.axiom_set;
        let n = self.instance.num_bidders();
        let losers: Vec<BidderId> = (0..n).filter(|&i| !self.winners[i]).collect();

        if !axioms.has_a2() {
            let i = self.rng.gen_range(0..n);
            let dir = if self.winners[i] { Direction::Lower } else { Direction::Raise };
            return Some((i, dir));
        }
        if !losers.is_empty() {
            let i = if axioms.has_a4() {
                let targets = &self.state.targets;
                // Lowest index among the highest targets.
                losers.iter().copied().fold(losers[0], |best, j| if targets[j] > targets[best] + TOL { j } else { best })
            } else {
                losers[self.rng.gen_range(0..losers.len())]
            };
            return Some((i, Direction::Raise));
        }
        if !axioms.has_a3() {
            return None;
        }
        let i = match self.config.winner_policy {
            WinnerPolicy::RoundRobin => {
                let i = self.state.round_robin_cursor % n;
                self.state.round_robin_cursor = (i + 1) % n;
                i
            }
            WinnerPolicy::SeededRandom => self.rng.gen_range(0..n),
        };
        Some((i, Direction::Lower))
    }

    /// Applies one move and records it.
    pub fn apply(&mut self, mover: BidderId, direction: Direction) -> Result<TraceEvent, DynamicsError> {
        let winner_before = self.state.previous_winner;
        self.state = apply_move(self.instance, &self.state, mover, direction, self.config.epsilon)?;
        let profile = BidProfile::quasi_truthful(self.instance, &self.state.targets)?;
        let result = run_auction(self.instance, &profile, TieBreakContext::favoring(self.state.previous_winner))?;
        self.winners = result.is_winner;
        Ok(TraceEvent {
            step: self.state.step,
            mover,
            direction,
            winner_before,
            winner_after: self.state.previous_winner,
            targets: self.state.targets.clone(),
            winners: self.winners.clone(),
            in_cef: in_cef(self.instance, &self.state.targets)?,
        })
    }

    /// Runs until the step budget is spent or nobody is left to move.
    pub fn run(mut self) -> Result<Trace, DynamicsError> {
        let budget = self.config.step_budget(self.instance);
        let mut trace = Trace {
            epsilon: self.config.epsilon,
            initial_targets: self.state.targets.clone(),
            initial_winner: self.state.previous_winner,
            initial_winners: self.winners.clone(),
            events: Vec::new(),
            halted: false,
        };
        while self.state.step < budget {
            match self.next_mover() {
                Some((i, dir)) => trace.events.push(self.apply(i, dir)?),
                None => {
                    trace.halted = true;
                    break;
                }
            }
        }
        Ok(trace)
    }
}

/// Runs the dynamics from `initial` and checks convergence to the configured target.
pub fn simulate(
    instance: &Instance,
    initial: &[f64],
    config: &SimConfig,
) -> Result<(Trace, ConvergenceReport), DynamicsError> {
    let trace = Simulator::new(instance, initial, config.clone())?.run()?;
    let egal = match config.target {
        Target::Egalitarian => Some(egalitarian(instance, TOL)?.targets),
        _ => None,
    };
    let report = check_convergence(&trace, instance, config, egal.as_deref())?;
    Ok((trace, report))
}

/// Evaluates the target set on every state of `trace`.
pub fn check_convergence(
    trace: &Trace,
    instance: &Instance,
    config: &SimConfig,
    egalitarian_targets: Option<&[f64]>,
) -> Result<ConvergenceReport, DynamicsError> {
    let eps = config.epsilon;
    let bounds = match (config.target, egalitarian_targets) {
        (Target::Egalitarian, None) => return Err(DynamicsError::MissingEgalitarian),
        (Target::Egalitarian, Some(star)) => Some(levels_and_bounds(star).bounds(star, eps)),
        _ => None,
    };

    let member = |targets: &[f64]| -> Result<bool, DynamicsError> {
        Ok(match config.target {
            Target::CefEps => in_cef_eps(instance, targets, eps)?,
            Target::NcefEps => in_ncef_eps(instance, targets, eps)?,
            Target::Boundary => {
                in_cef_eps(instance, targets, eps)? || in_ncef_eps(instance, targets, eps)?
            }
            Target::Egalitarian => {
                let b = bounds.as_ref().expect("bounds computed above");
                targets.iter().zip(b).all(|(t, (lo, hi))| *t >= lo - TOL && *t <= hi + TOL)
            }
        })
    };

    let mut entered_at_step = None;
    let mut stayed = true;
    let mut last_entry_step = None;
    for (k, targets) in trace.states().enumerate() {
        let k = k as u64;
        if member(targets)? {
            entered_at_step.get_or_insert(k);
            last_entry_step.get_or_insert(k);
        } else {
            if entered_at_step.is_some() {
                stayed = false;
            }
            last_entry_step = None;
        }
    }
    let all_winners_first_step =
        trace.winner_flags().position(|w| w.iter().all(|&x| x)).map(|k| k as u64);

    Ok(ConvergenceReport {
        target: config.target,
        total_steps: trace.events.len() as u64,
        halted: trace.halted,
        entered_at_step,
        stayed: stayed && entered_at_step.is_some(),
        last_entry_step,
        all_winners_first_step,
        all_winners_bound: all_winners_bound(&trace.initial_targets, eps),
        final_targets: trace.final_targets().to_vec(),
        egalitarian_targets: egalitarian_targets.map(<[f64]>::to_vec),
        bounds,
    })
}
