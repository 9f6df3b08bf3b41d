use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("utarget-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn utarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utarget")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn write_scenario(name: &str, body: &str) -> PathBuf {
    let p = scratch(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn every_fixture_validates() {
    for f in ["e1.json", "e2.json", "e3.json", "e4.json", "ad_two_slots.json"] {
        let o = utarget(&["validate", fixture(f).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", stderr(&o));
        assert!(stdout(&o).contains("valid"));
    }
}

#[test]
fn validate_reports_fixture_contents() {
    let o = utarget(&["validate", "--json", fixture("e1.json").to_str().unwrap()]);
    let v = json(&o);
    assert_eq!(v["name"], "E1");
    assert_eq!(v["num_bidders"], 3);
    assert_eq!(v["optimal_outcome"], 1);
    assert_eq!(v["bid_sets"][0], "paper");
}

#[test]
fn solve_e3_gives_egalitarian_vcg_and_threat() {
    let o = utarget(&["solve", fixture("e3.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("egalitarian targets: (0.333333333, 0.333333333, 0.333333333, 0.000000000)"), "{out}");
    assert!(out.contains("VCG revenue: 0.000000000"));
    assert!(out.contains("second-price threat: 2.000000000"));
    assert!(out.contains("egalitarian revenue: 2.000000000"));
    assert!(out.contains("equilibrium: yes"));

    let v = json(&utarget(&["solve", "--json", fixture("e3.json").to_str().unwrap()]));
    assert_eq!(v["second_price_threat"], 2.0);
    assert_eq!(v["egalitarian"]["targets"][0], 0.333333333);
    assert_eq!(v["equilibrium"]["is_equilibrium"], true);
}

#[test]
fn check_cef_example_bids_violates_at_outcome_one() {
    let o = utarget(&["check-cef", fixture("e1.json").to_str().unwrap(), "--bids", "paper"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("winning outcome: 0 (tied {0, 2})"), "{out}");
    assert!(out.contains("CEF: no"));
    assert!(out.contains("outcome 1: lhs 3.000000000 rhs 2.000000000 violated"));
}

#[test]
fn check_cef_with_targets_and_previous_winner() {
    let e1 = fixture("e1.json");
    let v = json(&utarget(&["check-cef", "--json", e1.to_str().unwrap(), "--targets", "0.5,0.5,0"]));
    assert_eq!(v["cef"]["is_cef"], true);
    assert_eq!(v["auction"]["winning_outcome"], 1);

    let v = json(&utarget(&["check-cef", "--json", e1.to_str().unwrap(), "--bids", "paper", "--previous-winner", "2"]));
    assert_eq!(v["auction"]["winning_outcome"], 2);
}

#[test]
fn check_cef_unknown_bid_set_is_usage_error() {
    let o = utarget(&["check-cef", fixture("e1.json").to_str().unwrap(), "--bids", "nope"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("no bid set named"));
}

#[test]
fn simulate_e3_egalitarian_converges_and_writes_trace() {
    let out = scratch("e3.csv");
    let o = utarget(&[
        "simulate",
        fixture("e3.json").to_str().unwrap(),
        "--axioms",
        "all",
        "--epsilon",
        "0.001",
        "--target",
        "egalitarian",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("stayed: yes"));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,mover,direction,pi_0,pi_1,pi_2,pi_3,winner,cef_flag"));
    assert!(lines.next().unwrap().starts_with("0,,,1.000000000,"));
}

#[test]
fn simulate_is_deterministic() {
    let e1 = fixture("e1.json");
    let run = |name: &str| {
        let out = scratch(name);
        let args = ["simulate", e1.to_str().unwrap(), "--axioms", "A1+A3", "--epsilon", "0.01", "--seed", "7", "--json"];
        let o = utarget(&[&args[..], &["--out", out.to_str().unwrap()]].concat());
        (stdout(&o).replace(out.to_str().unwrap(), ""), std::fs::read(&out).unwrap())
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn simulate_reports_non_convergence_with_exit_two() {
    let o = utarget(&["simulate", fixture("e3.json").to_str().unwrap(), "--epsilon", "0.001", "--max-steps", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("converged: no"));
}

#[test]
fn simulate_without_epsilon_is_usage_error() {
    let p = write_scenario("noeps.json", r#"{"schema_version": 1, "kind": "explicit", "values": [[1, 0], [0, 2]]}"#);
    let o = utarget(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn ad_auction_assigns_and_prices_and_gfp_cycles() {
    let out = scratch("gfp.csv");
    let o = utarget(&["ad-auction", fixture("ad_two_slots.json").to_str().unwrap(), "--gfp", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("assignment: (0, 1, -)"), "{text}");
    assert!(text.contains("cycle"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("step,mover,direction,bid_0,bid_1,bid_2\n0,,,"));

    let v = json(&utarget(&["ad-auction", "--json", fixture("ad_two_slots.json").to_str().unwrap()]));
    assert_eq!(v["slot_priced_ppc"]["expected_payments"], v["rebate"]["expected_payments"]);
    assert!(v["gfp"].is_null());
}

#[test]
fn ad_scenario_simulates_through_explicit_instance() {
    let o = utarget(&["simulate", fixture("ad_two_slots.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn oracle_compare_agrees_on_e1() {
    let v = json(&utarget(&["oracle-compare", "--json", fixture("e1.json").to_str().unwrap(), "--step", "0.25"]));
    assert_eq!(v["agrees"], true);
    assert_eq!(v["comparison"]["cef_disagreements"], 0);
}

#[test]
fn negative_value_is_validation_error() {
    let p = write_scenario("neg.json", r#"{"schema_version": 1, "kind": "explicit", "values": [[1, -2], [0, 1]]}"#);
    let o = utarget(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonnegative"));
}

#[test]
fn increasing_ctrs_cite_slot_ordering() {
    let p = write_scenario(
        "alpha.json",
        r#"{"schema_version": 1, "kind": "ad", "setting": {"slot_ctrs": [0.5, 1.0], "quality": [1, 1], "values": [1, 2]}}"#,
    );
    let o = utarget(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("slot ordering"), "{}", stderr(&o));
}

#[test]
fn parse_errors_carry_line_and_field() {
    let p = write_scenario("bad.json", "{\"schema_version\": 1, \"kind\": \"explicit\",\n\"values\": [[1, \"x\"]]}");
    let o = utarget(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains(":2:") && err.contains("values[0][1]"), "{err}");
}

#[test]
fn unsupported_schema_version_is_rejected() {
    let p = write_scenario("v2.json", r#"{"schema_version": 2, "kind": "explicit", "values": [[1]]}"#);
    let o = utarget(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema_version"));
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    assert_eq!(utarget(&["validate", "--bogus", "x"]).status.code(), Some(64));
    assert_eq!(utarget(&[]).status.code(), Some(64));
    assert_eq!(utarget(&["--help"]).status.code(), Some(0));
    assert_eq!(utarget(&["--version"]).status.code(), Some(0));
}
