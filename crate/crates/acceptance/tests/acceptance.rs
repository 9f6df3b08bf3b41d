//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use utarget::ad::{
    brute_force_assignment, expected_payment, gfp_dynamics, optimal_assignment, price_assignment, to_explicit_instance,
    AdBid, AdSetting, PricingScheme,
};
use utarget::analysis::{check_equilibrium, CefConstraint};
use utarget::dynamics::{simulate, AxiomSet, SimConfig, Target};
use utarget::fixtures::{e1, e1_example_bids, e3, e4, single_item};
use utarget::*;
use utarget_acceptance::{distinct_values, generic_instance, lattice_instance, second_highest, uniform_instance};
use utarget_oracles::{brute_force_egalitarian, enumerate_cef_grid, GridSpec};

const THIRD: f64 = 1.0 / 3.0;
const GRID_BUDGET: u64 = 2_000_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let inst = e1();
    let bids = e1_example_bids();
    let r = run_auction(&inst, &bids, TieBreakContext::fixed_order()).unwrap();
    let c = is_cef(&inst, &bids, TieBreakContext::fixed_order()).unwrap();
    let want = vec![CefConstraint { outcome: 1, lhs: 3.0, rhs: 2.0 }];
    verdict(
        r.tied_outcomes == vec![0, 2] && r.winning_outcome == 0 && !c.is_cef && c.violated_outcomes == want,
        format!(
            "tie {:?}, winner {}, cef={}, violations {:?}",
            r.tied_outcomes, r.winning_outcome, c.is_cef, c.violated_outcomes
        ),
    )
}

fn criterion_2() -> Verdict {
    let inst = e3();
    let v = vcg(&inst);
    let threat = second_price_threat(&inst, v.optimal_outcome).unwrap();
    let egal = egalitarian(&inst, TOL).unwrap();
    verdict(
        v.revenue == 0.0 && threat == 2.0 && (egal.revenue - 2.0).abs() <= 1e-6,
        format!("VCG revenue {}, threat {}, egalitarian revenue {:.9}", v.revenue, threat, egal.revenue),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (n, m) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let inst = uniform_instance(&mut rng, n, m, 2.0);
        let bids = (0..n)
            .map(|_| Bid::new((0..m).map(|_| rng.gen_range(0.0..2.5)).collect(), rng.gen_range(-0.5..2.0)).unwrap())
            .collect();
        let profile = BidProfile::new(bids);
        let ctx = TieBreakContext::fixed_order();
        let before = run_auction(&inst, &profile, ctx).unwrap();
        for i in 0..n {
            let q = quasi_truthful_equivalent(&inst, i, &profile, ctx).unwrap();
            let after = run_auction(&inst, &profile.with_bid(i, q), ctx).unwrap();
            worst = worst.max((after.utilities[i] - before.utilities[i]).abs());
        }
    }
    verdict(worst <= 1e-9, format!("1000 instances, max utility change {worst:.3e}"))
}

/// Shared random suite for criteria 4 and 12.
fn small_suite() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..50).map(|_| lattice_instance(&mut rng, (2, 4), (2, 4), 0.5, 2.0)).collect()
}

const SUITE_STEP: f64 = 0.125;

fn criterion_4_and_12() -> (Verdict, Verdict) {
    let per_instance: Vec<(usize, usize, usize, (usize, usize))> = small_suite()
        .par_iter()
        .map(|inst| {
            let grid = GridSpec::for_instance(inst, SUITE_STEP, GRID_BUDGET).unwrap();
            let cef = enumerate_cef_grid(inst, &grid).unwrap();
            let opt = optimal_outcome(inst);
            let prices = vcg(inst).prices;
            let threat = second_price_threat(inst, opt.outcome).unwrap();
            let mut checked = 0;
            let mut failures = 0;
            for (idx, _) in cef.in_cef.iter().enumerate().filter(|(_, &c)| c) {
                let pi = grid.point(idx);
                let profile = BidProfile::quasi_truthful(inst, &pi).unwrap();
                let r = run_auction(inst, &profile, TieBreakContext::favoring(opt.outcome)).unwrap();
                let efficient = (inst.welfare()[r.winning_outcome] - opt.welfare).abs() <= 1e-9;
                let above_vcg = r.payments.iter().zip(&prices).all(|(p, v)| *p >= v - 1e-9);
                let above_threat = r.revenue() >= threat - 1e-9;
                checked += 1;
                failures += usize::from(!(efficient && above_vcg && above_threat));
            }
            (cef.in_cef.len(), checked, failures, cef.closure_counterexamples())
        })
        .collect();
    let points: usize = per_instance.iter().map(|p| p.0).sum();
    let checked: usize = per_instance.iter().map(|p| p.1).sum();
    let failures: usize = per_instance.iter().map(|p| p.2).sum();
    let down: usize = per_instance.iter().map(|p| p.3 .0).sum();
    let up: usize = per_instance.iter().map(|p| p.3 .1).sum();
    (
        verdict(
            failures == 0 && checked > 0,
            format!("50 instances, {checked} CEF grid points of {points}, {failures} violations"),
        ),
        verdict(
            down == 0 && up == 0,
            format!("{points} grid points, {down} downward and {up} upward closure counterexamples"),
        ),
    )
}

fn criterion_5() -> Verdict {
    let exact = [(e1(), vec![0.5, 0.5, 0.0]), (e3(), vec![THIRD, THIRD, THIRD, 0.0]), (e4(), vec![5.0, 0.0])];
    let fixtures_ok = exact.iter().all(|(inst, want)| close(&egalitarian(inst, TOL).unwrap().targets, want, 1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let suite: Vec<Instance> = (0..50).map(|_| lattice_instance(&mut rng, (2, 4), (2, 4), 0.5, 2.0)).collect();
    let results: Vec<(bool, bool, Option<f64>)> = suite
        .par_iter()
        .map(|inst| {
            let e = egalitarian(inst, TOL).unwrap();
            let cef = in_cef(inst, &e.targets).unwrap();
            let profile = BidProfile::quasi_truthful(inst, &e.targets).unwrap();
            let eq = check_equilibrium(inst, &profile, TieBreakContext::favoring(e.optimal_outcome), TOL)
                .unwrap()
                .is_equilibrium;
            let grid = GridSpec::for_instance(inst, SUITE_STEP, GRID_BUDGET).unwrap();
            let dist = brute_force_egalitarian(inst, &grid)
                .unwrap()
                .iter()
                .map(|b| inf_norm(&b.targets, &e.targets))
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
            (cef, eq, dist)
        })
        .collect();
    let not_cef = results.iter().filter(|r| !r.0).count();
    let not_eq = results.iter().filter(|r| !r.1).count();
    let far = results.iter().filter(|r| r.2.is_none_or(|d| d > SUITE_STEP + 1e-9)).count();
    let worst = results.iter().filter_map(|r| r.2).fold(0.0, f64::max);
    verdict(
        fixtures_ok && not_cef == 0 && not_eq == 0 && far == 0,
        format!(
            "fixtures exact: {fixtures_ok}; 50 random: {not_cef} not CEF, {not_eq} not equilibria, {far} beyond one grid step (max distance {worst:.4}, step {SUITE_STEP})"
        ),
    )
}

const DYNAMICS_EPS: f64 = 0.01;

/// E1, E3, E4 and 20 random instances with generic values, where every positive
/// competing gap exceeds `n * eps` with room to spare.
fn dynamics_suite() -> Vec<(String, Instance)> {
    let mut suite = vec![("E1".to_string(), e1()), ("E3".to_string(), e3()), ("E4".to_string(), e4())];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    suite.extend(
        (0..20).map(|k| (format!("random {k}"), generic_instance(&mut rng, (2, 4), (2, 4), 2.0, 8.0 * DYNAMICS_EPS))),
    );
    suite
}

/// No bidder prefers any outcome to the welfare optimum.
fn no_competing_outcome(inst: &Instance) -> bool {
    let o_star = optimal_outcome(inst).outcome;
    (0..inst.num_bidders()).all(|j| (0..inst.num_outcomes()).all(|o| inst.value(j, o) <= inst.value(j, o_star) + TOL))
}

fn run_suite(axioms: AxiomSet, target: Target) -> Vec<(String, Instance, utarget::dynamics::ConvergenceReport)> {
    dynamics_suite()
        .into_par_iter()
        .enumerate()
        .map(|(k, (name, inst))| {
            let cfg = SimConfig { seed: k as u64, ..SimConfig::new(DYNAMICS_EPS, axioms, target) };
            let (_, report) = simulate(&inst, &inst.caps(), &cfg).unwrap();
            (name, inst, report)
        })
        .collect()
}

fn failures_summary(failed: &[String]) -> String {
    if failed.is_empty() {
        "all converged".into()
    } else {
        format!("failed: {}", failed.join(", "))
    }
}

fn criterion_6() -> Verdict {
    let runs = run_suite(AxiomSet::A1A2, Target::CefEps);
    let failed: Vec<String> = runs
        .iter()
        .filter(|(_, _, r)| !(r.converged() && r.all_winners_first_step.is_some_and(|s| s <= r.all_winners_bound)))
        .map(|(n, _, _)| n.clone())
        .collect();
    let worst = runs
        .iter()
        .filter_map(|(_, _, r)| r.all_winners_first_step.map(|s| s as f64 / r.all_winners_bound.max(1) as f64))
        .fold(0.0, f64::max);
    verdict(
        failed.is_empty(),
        format!("{} runs, {}; first all-winners step at most {:.2} of the bound", runs.len(), failures_summary(&failed), worst),
    )
}

fn criterion_7() -> Verdict {
    let runs = run_suite(AxiomSet::A1A3, Target::NcefEps);
    let mut degenerate = 0;
    let failed: Vec<String> = runs
        .iter()
        .filter(|(_, inst, r)| {
            if no_competing_outcome(inst) {
                degenerate += 1;
                let o_star = optimal_outcome(inst).outcome;
                let at_value: Vec<f64> = (0..inst.num_bidders()).map(|j| inst.value(j, o_star)).collect();
                r.final_targets != at_value
            } else {
                !r.converged()
            }
        })
        .map(|(n, _, _)| n.clone())
        .collect();
    verdict(
        failed.is_empty(),
        format!("{} runs ({degenerate} without a competing outcome), {}", runs.len(), failures_summary(&failed)),
    )
}

fn boundary_failures(runs: &[(String, Instance, utarget::dynamics::ConvergenceReport)]) -> Vec<String> {
    runs.iter().filter(|(_, _, r)| !r.converged()).map(|(n, _, _)| n.clone()).collect()
}

fn criterion_8() -> Verdict {
    let runs = run_suite(AxiomSet::A1A2A3, Target::Boundary);
    let failed = boundary_failures(&runs);
    verdict(failed.is_empty(), format!("{} runs, {}", runs.len(), failures_summary(&failed)))
}

fn criterion_9() -> Verdict {
    let results: Vec<(String, bool, String)> = [("E1", e1()), ("E3", e3()), ("E4", e4())]
        .into_par_iter()
        .map(|(name, inst)| {
            let cfg = SimConfig::new(1e-3, AxiomSet::All, Target::Egalitarian);
            let (_, r) = simulate(&inst, &inst.caps(), &cfg).unwrap();
            let fin: Vec<String> = r.final_targets.iter().map(|t| format!("{t:.4}")).collect();
            let ok = r.settled_for(0.1);
            let since = r.last_entry_step.map_or("never".to_string(), |s| s.to_string());
            (name.to_string(), ok, format!("{name}: final ({}) inside bounds since step {since} of {}", fin.join(", "), r.total_steps))
        })
        .collect();
    verdict(results.iter().all(|r| r.1), results.iter().map(|r| r.2.clone()).collect::<Vec<_>>().join("; "))
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let eps = 0.01;
    let cases: Vec<Vec<f64>> = (0..100).map(|_| {
        let n = rng.gen_range(2..=10);
        distinct_values(&mut rng, n, 40, 0.05)
    }).collect();
    let results: Vec<(f64, f64)> = cases
        .par_iter()
        .map(|values| {
            let inst = single_item(values);
            let second = second_highest(values);
            let e = egalitarian(&inst, TOL).unwrap();
            let cfg = SimConfig::new(eps, AxiomSet::All, Target::CefEps);
            let (trace, _) = simulate(&inst, &inst.caps(), &cfg).unwrap();
            let last_winner = trace.events.last().map_or(trace.initial_winner, |ev| ev.winner_after);
            let profile = BidProfile::quasi_truthful(&inst, trace.final_targets()).unwrap();
            let revenue = run_auction(&inst, &profile, TieBreakContext::favoring(last_winner)).unwrap().revenue();
            let levels = levels_and_bounds(&e.targets);
            let slack = eps * levels.upper_multipliers.last().copied().unwrap_or(1.0);
            ((e.revenue - second).abs(), revenue - (second - slack))
        })
        .collect();
    let worst_egal = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let short = results.iter().filter(|r| r.1 < 0.0).count();
    let min_margin = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    verdict(
        worst_egal <= 1e-6 && short == 0,
        format!(
            "100 instances: max |egalitarian revenue - second value| {worst_egal:.2e}; {short} dynamics runs below the floor (min margin {min_margin:.4})"
        ),
    )
}

fn random_ad_setting(rng: &mut ChaCha8Rng, n_max: usize, lattice: bool) -> AdSetting {
    let n = rng.gen_range(1..=n_max);
    let m = rng.gen_range(1..=n.min(4));
    let mut alpha: Vec<f64> = (0..m).map(|_| if lattice { rng.gen_range(1..=4) as f64 * 0.25 } else { rng.gen_range(0.01..=1.0) }).collect();
    alpha.sort_by(|a, b| b.total_cmp(a));
    let draw = |rng: &mut ChaCha8Rng, hi: f64| if lattice { rng.gen_range(0..=(hi as u32)) as f64 } else { rng.gen_range(0.0..hi) };
    let quality: Vec<f64> = (0..n).map(|_| if lattice { 1.0 } else { rng.gen_range(0.1..3.0) }).collect();
    let values: Vec<f64> = (0..n).map(|_| draw(rng, 20.0)).collect();
    let bids = values.iter().map(|&x| AdBid { x, target: draw(rng, 10.0) }).collect();
    AdSetting::new(alpha, quality, values, bids).unwrap()
}

fn criterion_11() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_rebate: f64 = 0.0;
    let mut worst_slot: f64 = 0.0;
    for _ in 0..1000 {
        let s = random_ad_setting(&mut rng, 5, false);
        let a = optimal_assignment(&s);
        let rebate = price_assignment(&s, &a, PricingScheme::Rebate);
        let slot = price_assignment(&s, &a, PricingScheme::SlotPricedPpc);
        for (i, j) in a.slot_of.iter().enumerate() {
            let Some(j) = *j else { continue };
            let want = expected_payment(&s, i, j).unwrap();
            worst_rebate = worst_rebate.max((rebate.expected_payments[i] - want).abs());
            worst_slot = worst_slot.max((slot.expected_payments[i] - want).abs() / want.max(1.0));
        }
    }
    let pricing_ok = worst_rebate == 0.0 && worst_slot <= 1e-12;

    let mut mismatches = 0;
    for k in 0..600 {
        let s = random_ad_setting(&mut rng, 6, k % 2 == 0);
        if (optimal_assignment(&s).total - brute_force_assignment(&s).total).abs() > 1e-9 {
            mismatches += 1;
        }
    }

    let gfp = AdSetting::truthful(vec![1.0, 0.5], vec![1.0; 3], vec![10.0, 8.0, 2.0]).unwrap();
    let g = gfp_dynamics(&gfp, &[0.0; 3], 0.1, 100_000).unwrap();
    let cycles = g.cycle.is_some() && !g.fixed_point;

    let (inst, _) = to_explicit_instance(&gfp, 1000).unwrap();
    let cfg = SimConfig::new(0.01, AxiomSet::A1A2A3, Target::Boundary);
    let (_, r) = simulate(&inst, &inst.caps(), &cfg).unwrap();
    verdict(
        pricing_ok && mismatches == 0 && cycles && r.converged(),
        format!(
            "pricing max error rebate {worst_rebate:.1e} slot-priced {worst_slot:.1e} (relative); assignment mismatches {mismatches}/600; GFP revisits step {:?} fixed point {}; explicit instance ({} outcomes) boundary entered at {:?}, stayed {}",
            g.cycle.map(|c| c.0),
            g.fixed_point,
            inst.num_outcomes(),
            r.entered_at_step,
            r.stayed
        ),
    )
}

fn report(n: usize, limit: Duration, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = run();
    report_timed(n, limit, start.elapsed(), v)
}

fn report_timed(n: usize, limit: Duration, elapsed: Duration, v: Verdict) -> bool {
    let pass = v.pass && elapsed <= limit;
    println!(
        "criterion {n:>2}: {} {} [{:.2}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report(1, secs(1), criterion_1);
    all &= report(2, secs(1), criterion_2);
    all &= report(3, secs(30), criterion_3);
    let start = Instant::now();
    let (c4, c12) = criterion_4_and_12();
    let shared = start.elapsed();
    all &= report_timed(4, secs(300), shared, c4);
    all &= report(5, secs(300), criterion_5);
    all &= report(6, secs(120), criterion_6);
    all &= report(7, secs(120), criterion_7);
    all &= report(8, secs(300), criterion_8);
    all &= report(9, secs(300), criterion_9);
    all &= report(10, secs(300), criterion_10);
    all &= report(11, secs(300), criterion_11);
    all &= report_timed(12, secs(300), shared, c12);
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
