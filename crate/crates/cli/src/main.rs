//! `utarget`: command-line front end for the utility-target auction laboratory.
//!
//! Exit codes: 0 success, 1 invalid input or failed verification, 2 simulation
//! did not converge within its step budget, 64 usage error.

mod scenario;
mod report;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use utarget::ad::{
    count_assignments, gfp_dynamics, optimal_assignment, price_assignment, Assignment, GfpReport, PricingResult,
    PricingScheme, SlotId,
};
use utarget::analysis::{check_equilibrium, EquilibriumCheck, VcgResult};
use utarget::dynamics::{simulate, AxiomSet, ConvergenceReport, SimConfig, Target, WinnerPolicy};
use utarget::{
    egalitarian, is_cef, levels_and_bounds, run_auction, second_price_threat, validate_instance, vcg, AuctionOutcome,
    BidProfile, CefReport, Egalitarian, LevelPartition, TieBreakContext, TOL,
};
use utarget_oracles::{compare, Comparison, GridSpec};

use report::{ids, json, label, num, vector};
use scenario::{parse_scenario, Body, Kind, Scenario, SimulationSpec};

const EXIT_INVALID: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "utarget", version, about = "Utility-target auction laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a scenario.
    Validate(Common),
    /// Egalitarian equilibrium, VCG prices, second-price threat and an equilibrium check.
    Solve(Common),
    /// Run the auction on a bid set or target vector and check cooperative envy-freeness.
    CheckCef {
        #[command(flatten)]
        common: Common,
        /// Named bid set from the scenario.
        #[arg(long, conflicts_with = "targets")]
        bids: Option<String>,
        /// Comma-separated utility targets, bid quasi-truthfully.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        targets: Option<Vec<f64>>,
        /// Break ties toward this outcome instead of the default.
        #[arg(long)]
        previous_winner: Option<usize>,
    },
    /// Simulate axiom-driven bid adjustment and check convergence.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// A1+A2, A1+A3, A1+A2+A3 or all.
        #[arg(long)]
        axioms: Option<AxiomSet>,
        /// cef_eps, ncef_eps, boundary or egalitarian (default follows the axiom set).
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// round-robin or seeded-random.
        #[arg(long)]
        winner_policy: Option<WinnerPolicy>,
        /// Trace output; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sponsored-search assignment with both pricing schemes.
    AdAuction {
        #[command(flatten)]
        common: Common,
        /// Also run generalized first price best-response dynamics.
        #[arg(long)]
        gfp: bool,
        #[arg(long, requires = "gfp")]
        gfp_epsilon: Option<f64>,
        #[arg(long, requires = "gfp")]
        gfp_max_steps: Option<u64>,
        /// GFP trace CSV.
        #[arg(long, requires = "gfp")]
        out: Option<PathBuf>,
    },
    /// Compare the library against brute-force grid oracles.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.125)]
        step: f64,
        #[arg(long, default_value_t = 2_000_000)]
        max_points: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Invalid(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

type CmdResult = Result<u8, Failure>;

fn emit<T: Serialize>(as_json: bool, value: &T, text: impl FnOnce() -> String) -> anyhow::Result<()> {
    if as_json {
        println!("{}", json(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    parse_scenario(path).map_err(|e| Failure::Invalid(e.into()))
}

#[derive(Serialize)]
struct ValidateReport {
    valid: bool,
    name: String,
    description: Option<String>,
    kind: Kind,
    num_bidders: usize,
    num_outcomes: usize,
    num_slots: Option<usize>,
    welfare: Vec<f64>,
    optimal_outcome: Option<usize>,
    unique_optimum: bool,
    bid_sets: Vec<String>,
    targets: Option<Vec<f64>>,
    simulation: SimulationSpec,
    warnings: Vec<String>,
}

fn cmd_validate(c: &Common) -> CmdResult {
    let s = load(&c.scenario)?;
    let (num_bidders, num_slots, explicit) = match &s.body {
        Body::Explicit { instance, .. } => (instance.num_bidders(), None, Some(instance.clone())),
        Body::Ad { setting, .. } => {
            let n = setting.num_bidders();
            let count = count_assignments(n, setting.num_slots());
            let inst = (count <= scenario::MAX_EXPLICIT_OUTCOMES as u128).then(|| s.instance()).transpose()?;
            (n, Some(setting.num_slots()), inst)
        }
    };
    let mut warnings = Vec::new();
    let checked = explicit.as_ref().map(|inst| validate_instance(&inst.rows()));
    if let Some(r) = &checked {
        if !r.unique_optimum {
            warnings.push("welfare optimum is not unique".to_string());
        }
    } else {
        warnings.push("too many assignments to expand into an explicit instance".to_string());
    }
    let r = ValidateReport {
        valid: true,
        name: s.name.clone(),
        description: s.description.clone(),
        kind: s.kind(),
        num_bidders,
        num_outcomes: explicit.as_ref().map_or(0, |i| i.num_outcomes()),
        num_slots,
        welfare: checked.as_ref().map_or_else(Vec::new, |r| r.welfare.clone()),
        optimal_outcome: checked.as_ref().and_then(|r| r.optimal_outcome),
        unique_optimum: checked.as_ref().is_some_and(|r| r.unique_optimum),
        bid_sets: s.bid_sets().map_or_else(Vec::new, |b| b.keys().cloned().collect()),
        targets: s.targets.clone(),
        simulation: s.simulation.clone(),
        warnings,
    };
    emit(c.json, &r, || {
        let mut t = format!("{}: valid {} scenario \"{}\"\n", c.scenario.display(), label(&r.kind), r.name);
        if let Some(d) = &r.description {
            t += &format!("{d}\n");
        }
        t += &format!("bidders: {}, outcomes: {}", r.num_bidders, r.num_outcomes);
        if let Some(m) = r.num_slots {
            t += &format!(", slots: {m}");
        }
        t += "\n";
        if let Some(o) = r.optimal_outcome {
            t += &format!(
                "welfare: {}\noptimal outcome: {o}{}\n",
                vector(&r.welfare),
                if r.unique_optimum { "" } else { " (tied)" }
            );
        }
        if !r.bid_sets.is_empty() {
            t += &format!("bid sets: {}\n", r.bid_sets.join(", "));
        }
        if let Some(tg) = &r.targets {
            t += &format!("targets: {}\n", vector(tg));
        }
        for w in &r.warnings {
            t += &format!("warning: {w}\n");
        }
        t
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct SolveReport {
    name: String,
    optimal_outcome: usize,
    welfare: f64,
    unique_optimum: bool,
    vcg: VcgResult,
    second_price_threat: f64,
    egalitarian: Egalitarian,
    levels: LevelPartition,
    equilibrium: EquilibriumCheck,
}

fn cmd_solve(c: &Common) -> CmdResult {
    let s = load(&c.scenario)?;
    let inst = s.instance()?;
    let v = vcg(&inst);
    let threat = second_price_threat(&inst, v.optimal_outcome)?;
    let e = egalitarian(&inst, TOL)?;
    let levels = levels_and_bounds(&e.targets);
    let profile = BidProfile::quasi_truthful(&inst, &e.targets)?;
    let eq = check_equilibrium(&inst, &profile, TieBreakContext::favoring(e.optimal_outcome), TOL)?;
    let opt = utarget::optimal_outcome(&inst);
    let r = SolveReport {
        name: s.name.clone(),
        optimal_outcome: opt.outcome,
        welfare: opt.welfare,
        unique_optimum: opt.unique,
        vcg: v,
        second_price_threat: threat,
        egalitarian: e,
        levels,
        equilibrium: eq,
    };
    emit(c.json, &r, || {
        let mut t = format!("scenario: {}\n", r.name);
        t += &format!(
            "optimal outcome: {} (welfare {}{})\n",
            r.optimal_outcome,
            num(r.welfare),
            if r.unique_optimum { "" } else { ", tied" }
        );
        t += &format!("VCG prices: {}\nVCG revenue: {}\n", vector(&r.vcg.prices), num(r.vcg.revenue));
        t += &format!("second-price threat: {}\n", num(r.second_price_threat));
        t += &format!(
            "egalitarian targets: {}\negalitarian payments: {}\negalitarian revenue: {}\n",
            vector(&r.egalitarian.targets),
            vector(&r.egalitarian.payments),
            num(r.egalitarian.revenue)
        );
        for (k, level) in r.levels.levels.iter().enumerate() {
            t += &format!(
                "level {k}: bidders {} target {} b- {} b+ {}\n",
                ids(level),
                num(r.levels.level_utilities[k]),
                r.levels.lower_multipliers[k],
                r.levels.upper_multipliers[k]
            );
        }
        let worst = r.equilibrium.best_deviations.iter().map(|d| d.gain).fold(f64::NEG_INFINITY, f64::max);
        t += &format!(
            "equilibrium: {} (largest deviation gain {})\n",
            if r.equilibrium.is_equilibrium { "yes" } else { "no" },
            num(worst)
        );
        for w in &r.egalitarian.warnings {
            t += &format!("warning: {w}\n");
        }
        t
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct CheckCefReport {
    name: String,
    source: String,
    favored_outcome: Option<usize>,
    auction: AuctionOutcome,
    cef: CefReport,
}

fn cmd_check_cef(c: &Common, bids: Option<&str>, targets: Option<&[f64]>, previous: Option<usize>) -> CmdResult {
    let s = load(&c.scenario)?;
    let inst = s.instance()?;
    let o_star = utarget::optimal_outcome(&inst).outcome;
    let (source, profile, favored) = match (bids, targets) {
        (Some(name), _) => {
            let sets = s.bid_sets().ok_or_else(|| Failure::Usage("ad scenarios have no bid sets".into()))?;
            let p = sets.get(name).ok_or_else(|| {
                let known: Vec<_> = sets.keys().cloned().collect();
                Failure::Usage(format!("no bid set named {name:?} (known: {})", known.join(", ")))
            })?;
            (format!("bid set {name}"), p.clone(), previous)
        }
        (None, Some(t)) => {
            if t.len() != inst.num_bidders() {
                return Err(Failure::Usage(format!("--targets has {} entries for {} bidders", t.len(), inst.num_bidders())));
            }
            ("targets".to_string(), BidProfile::quasi_truthful(&inst, t)?, Some(previous.unwrap_or(o_star)))
        }
        (None, None) => match (&s.targets, s.bid_sets()) {
            (Some(t), _) => ("scenario targets".to_string(), BidProfile::quasi_truthful(&inst, t)?, Some(previous.unwrap_or(o_star))),
            (None, Some(sets)) if sets.len() == 1 => {
                let (name, p) = sets.iter().next().expect("one bid set");
                (format!("bid set {name}"), p.clone(), previous)
            }
            _ => return Err(Failure::Usage("choose the bids with --bids NAME or --targets".into())),
        },
    };
    if let Some(o) = favored {
        inst.check_outcome(o)?;
    }
    let ctx = favored.map_or_else(TieBreakContext::fixed_order, TieBreakContext::favoring);
    let auction = run_auction(&inst, &profile, ctx)?;
    let cef = is_cef(&inst, &profile, ctx)?;
    let r = CheckCefReport { name: s.name.clone(), source, favored_outcome: favored, auction, cef };
    emit(c.json, &r, || {
        let a = &r.auction;
        let mut t = format!("scenario: {} ({})\n", r.name, r.source);
        t += &format!("totals: {}\n", vector(&a.totals));
        t += &format!("winning outcome: {}", a.winning_outcome);
        if a.is_tie() {
            t += &format!(" (tied {})", ids(&a.tied_outcomes));
        }
        t += &format!("\npayments: {}\nutilities: {}\n", vector(&a.payments), vector(&a.utilities));
        let winners: Vec<usize> = (0..a.is_winner.len()).filter(|&i| a.is_winner[i]).collect();
        t += &format!("winners: {}\n", ids(&winners));
        t += &format!("CEF: {}\n", if r.cef.is_cef { "yes" } else { "no" });
        for k in &r.cef.constraints {
            let status = if k.lhs > k.rhs + TOL { "violated" } else if k.slack().abs() <= TOL { "binding" } else { "ok" };
            t += &format!("  outcome {}: lhs {} rhs {} {status}\n", k.outcome, num(k.lhs), num(k.rhs));
        }
        t
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct SimulateReport {
    name: String,
    config: SimConfig,
    initial_targets: Vec<f64>,
    converged: bool,
    report: ConvergenceReport,
    trace: Option<PathBuf>,
}

/// Convergence set matching each axiom set's guarantee.
fn natural_target(axioms: AxiomSet) -> Target {
    match axioms {
        AxiomSet::A1A2 => Target::CefEps,
        AxiomSet::A1A3 => Target::NcefEps,
        AxiomSet::A1A2A3 => Target::Boundary,
        AxiomSet::All => Target::Egalitarian,
    }
}

struct SimFlags {
    epsilon: Option<f64>,
    seed: Option<u64>,
    axioms: Option<AxiomSet>,
    target: Option<Target>,
    max_steps: Option<u64>,
    winner_policy: Option<WinnerPolicy>,
    out: Option<PathBuf>,
}

fn cmd_simulate(c: &Common, f: SimFlags) -> CmdResult {
    let s = load(&c.scenario)?;
    let inst = s.instance()?;
    let spec = &s.simulation;
    let epsilon = f
        .epsilon
        .or(spec.epsilon)
        .ok_or_else(|| Failure::Usage("no epsilon: pass --epsilon or set simulation.epsilon".into()))?;
    let axioms = f.axioms.or(spec.axiom_set).unwrap_or(AxiomSet::All);
    let config = SimConfig {
        epsilon,
        max_steps: f.max_steps.or(spec.max_steps),
        seed: f.seed.or(spec.seed).unwrap_or(0),
        axiom_set: axioms,
        winner_policy: f.winner_policy.or(spec.winner_policy).unwrap_or_default(),
        // A scenario target belongs to the scenario's axiom set.
        target: f
            .target
            .or(if f.axioms.is_some() { None } else { spec.target })
            .unwrap_or_else(|| natural_target(axioms)),
    };
    let initial = s.targets.clone().unwrap_or_else(|| inst.caps());
    let (trace, report) = simulate(&inst, &initial, &config)?;
    if let Some(path) = &f.out {
        let file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        if path.extension().is_some_and(|e| e == "json") {
            trace.write_json(file)?;
        } else {
            trace.write_csv(file)?;
        }
    }
    let r = SimulateReport {
        name: s.name.clone(),
        config,
        initial_targets: initial,
        converged: report.converged(),
        report,
        trace: f.out.clone(),
    };
    emit(c.json, &r, || {
        let rep = &r.report;
        let mut t = format!("scenario: {}\n", r.name);
        t += &format!(
            "axioms: {}, target: {}, epsilon: {}, seed: {}, winner policy: {}\n",
            label(&r.config.axiom_set),
            label(&rep.target),
            num(r.config.epsilon),
            r.config.seed,
            label(&r.config.winner_policy)
        );
        t += &format!("steps: {}{}\n", rep.total_steps, if rep.halted { " (halted: everyone wins)" } else { "" });
        match rep.entered_at_step {
            Some(k) => t += &format!("entered target set at step {k}; stayed: {}\n", if rep.stayed { "yes" } else { "no" }),
            None => t += "never entered target set\n",
        }
        if let Some(k) = rep.last_entry_step {
            t += &format!("inside target set since step {k}\n");
        }
        match rep.all_winners_first_step {
            Some(k) => t += &format!("all bidders first won at step {k} (bound {})\n", rep.all_winners_bound),
            None => t += &format!("all bidders never won simultaneously (bound {})\n", rep.all_winners_bound),
        }
        t += &format!("final targets: {}\n", vector(&rep.final_targets));
        if let (Some(eg), Some(b)) = (&rep.egalitarian_targets, &rep.bounds) {
            t += &format!("egalitarian targets: {}\n", vector(eg));
            let lo: Vec<f64> = b.iter().map(|x| x.0).collect();
            let hi: Vec<f64> = b.iter().map(|x| x.1).collect();
            t += &format!("bounds: lower {} upper {}\n", vector(&lo), vector(&hi));
        }
        if let Some(p) = &r.trace {
            t += &format!("trace: {}\n", p.display());
        }
        t += &format!("converged: {}\n", if r.converged { "yes" } else { "no" });
        t
    })?;
    Ok(if r.converged { 0 } else { EXIT_NOT_CONVERGED })
}

#[derive(Serialize)]
struct GfpSummary {
    epsilon: f64,
    initial_bids: Vec<f64>,
    steps: u64,
    fixed_point: bool,
    cycle: Option<(u64, u64)>,
    final_bids: Vec<f64>,
}

#[derive(Serialize)]
struct AdReport {
    name: String,
    assignment: Assignment,
    slot_priced_ppc: PricingResult,
    rebate: PricingResult,
    gfp: Option<GfpSummary>,
}

fn slot_name(s: Option<SlotId>) -> String {
    s.map_or("-".into(), |j| j.to_string())
}

fn cmd_ad(c: &Common, gfp: bool, gfp_epsilon: Option<f64>, gfp_steps: Option<u64>, out: Option<&Path>) -> CmdResult {
    let s = load(&c.scenario)?;
    let Body::Ad { setting, gfp: spec } = &s.body else {
        return Err(Failure::Invalid(anyhow::anyhow!("{}: ad-auction needs an ad scenario", c.scenario.display())));
    };
    let assignment = optimal_assignment(setting);
    let slot = price_assignment(setting, &assignment, PricingScheme::SlotPricedPpc);
    let rebate = price_assignment(setting, &assignment, PricingScheme::Rebate);
    let gfp_report: Option<GfpReport> = if gfp {
        let eps = gfp_epsilon.unwrap_or(spec.epsilon);
        let initial = spec.initial_bids.clone().unwrap_or_else(|| vec![0.0; setting.num_bidders()]);
        Some(gfp_dynamics(setting, &initial, eps, gfp_steps.unwrap_or(spec.max_steps))?)
    } else {
        None
    };
    if let (Some(g), Some(path)) = (&gfp_report, out) {
        let file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        g.write_csv(file)?;
    }
    let r = AdReport {
        name: s.name.clone(),
        assignment,
        slot_priced_ppc: slot,
        rebate,
        gfp: gfp_report.map(|g| GfpSummary {
            epsilon: g.eps,
            initial_bids: g.initial_bids,
            steps: g.steps,
            fixed_point: g.fixed_point,
            cycle: g.cycle,
            final_bids: g.final_bids,
        }),
    };
    emit(c.json, &r, || {
        let a = &r.assignment;
        let mut t = format!("scenario: {}\n", r.name);
        t += &format!(
            "assignment: ({})\n",
            a.slot_of.iter().map(|&s| slot_name(s)).collect::<Vec<_>>().join(", ")
        );
        t += &format!("expected payments: {}\ntotal: {}\n", vector(&a.expected_payments), num(a.total));
        t += &format!(
            "slot-priced ppc: {} expected {}\n",
            vector(&r.slot_priced_ppc.ppc),
            vector(&r.slot_priced_ppc.expected_payments)
        );
        t += &format!(
            "rebate: ppc {} rebates {} expected {}\n",
            vector(&r.rebate.ppc),
            vector(&r.rebate.rebates),
            vector(&r.rebate.expected_payments)
        );
        if let Some(g) = &r.gfp {
            t += &format!("GFP (grid {}): {} steps, ", num(g.epsilon), g.steps);
            t += &match (g.fixed_point, g.cycle) {
                (true, _) => "fixed point".to_string(),
                (false, Some((at, first))) => format!("cycle: state at step {at} first seen at step {first}"),
                (false, None) => "step budget exhausted".to_string(),
            };
            t += &format!("\nGFP final bids: {}\n", vector(&g.final_bids));
        }
        t
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct OracleReport {
    name: String,
    agrees: bool,
    comparison: Comparison,
}

fn cmd_oracle(c: &Common, step: f64, max_points: u64) -> CmdResult {
    let s = load(&c.scenario)?;
    let inst = s.instance()?;
    let grid = GridSpec::for_instance(&inst, step, max_points).map_err(|e| Failure::Usage(e.to_string()))?;
    let comparison = compare(&inst, &grid).map_err(|e| Failure::Invalid(anyhow::anyhow!(e)))?;
    let r = OracleReport { name: s.name.clone(), agrees: comparison.agrees(), comparison };
    emit(c.json, &r, || {
        let k = &r.comparison;
        let mut t = format!("scenario: {}\n", r.name);
        t += &format!("grid step {}: {} points, {} CEF\n", num(k.grid_step), k.grid_points, k.cef_points);
        t += &format!("CEF disagreements: {}\n", k.cef_disagreements);
        t += &format!(
            "closure counterexamples: {} downward, {} upward\n",
            k.closure_counterexamples.0, k.closure_counterexamples.1
        );
        t += &format!("egalitarian: {}\n", vector(&k.egalitarian));
        for b in &k.brute_force_egalitarian {
            t += &format!("brute-force optimum: {}\n", vector(b));
        }
        t += &format!("distance: {}\n", k.egalitarian_distance.map_or("none".into(), num));
        t += &format!("agree: {}\n", if r.agrees { "yes" } else { "no" });
        t
    })?;
    Ok(if r.agrees { 0 } else { EXIT_INVALID })
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Validate(c) => cmd_validate(&c),
        Command::Solve(c) => cmd_solve(&c),
        Command::CheckCef { common, bids, targets, previous_winner } => {
            cmd_check_cef(&common, bids.as_deref(), targets.as_deref(), previous_winner)
        }
        Command::Simulate { common, epsilon, seed, axioms, target, max_steps, winner_policy, out } => {
            cmd_simulate(&common, SimFlags { epsilon, seed, axioms, target, max_steps, winner_policy, out })
        }
        Command::AdAuction { common, gfp, gfp_epsilon, gfp_max_steps, out } => {
            cmd_ad(&common, gfp, gfp_epsilon, gfp_max_steps, out.as_deref())
        }
        Command::OracleCompare { common, step, max_points } => cmd_oracle(&common, step, max_points),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
