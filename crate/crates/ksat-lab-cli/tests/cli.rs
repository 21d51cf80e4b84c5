use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use ksat_lab::cover::enumerate_covers;
use ksat_lab::formula::read_dimacs;
use ksat_lab::moments::regular_threshold;
use ksat_lab::Exec;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksat-lab")).args(args).current_dir(dir).output().unwrap()
}

fn run_env(args: &[&str], dir: &Path, key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksat-lab")).args(args).current_dir(dir).env(key, val).output().unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn covers_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cnf = "p cnf 4 3\n1 2 3 0\n-1 2 4 0\n-2 -3 -4 0\n";
    std::fs::write(dir.path().join("f.cnf"), cnf).unwrap();
    let doc = json(&run(&["covers", "--dimacs", "f.cnf", "--max-vars", "12"], dir.path()));
    let f = read_dimacs(cnf).unwrap();
    let want: Vec<String> = enumerate_covers(&f, 12, Exec::Sequential).unwrap().iter().map(|z| z.to_string()).collect();
    let got: Vec<String> = serde_json::from_value(doc["result"]["covers"].clone()).unwrap();
    assert_eq!(got, want);
    assert_eq!(doc["schema"], "ksat-lab/1");

    let doc = json(&run(&["covers", "--dimacs", "f.cnf", "--check", "****"], dir.path()));
    assert_eq!(doc["result"]["verdict"]["is_cover"], true);
}

#[test]
fn bounds_k3() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json(&run(&["bounds", "--k", "3"], dir.path()));
    let main = doc["result"]["main"].as_f64().unwrap();
    assert!((main - 4.6986038).abs() < 1e-7);
    let raw = String::from_utf8(run(&["bounds", "--k", "3"], dir.path()).stdout).unwrap();
    assert!(raw.contains("4.6986038541995896e0"), "17 significant digits: {raw}");
}

#[test]
fn regular_xi_csv_and_dstar() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json(&run(&["regular-xi", "--k", "5", "--d-range", "40:70", "--csv", "xi.csv"], dir.path()));
    let lib = regular_threshold(5, Some((40, 70)), Exec::Sequential).unwrap();
    assert_eq!(doc["result"]["d_star"].as_u64().map(|d| d as u32), lib.d_star);
    let csv = std::fs::read_to_string(dir.path().join("xi.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "d,xi");
    assert_eq!(lines.len(), 32);
    assert!(lines[1].starts_with("40,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(&["no-such-command"], p)), 1);
    assert_eq!(code(&run(&["covers", "--dimacs", "missing.cnf"], p)), 1);
    // 8 clones do not split into clauses of width 3
    assert_eq!(code(&run(&["gen", "--kind", "regular", "--k", "3", "--d", "2", "--n", "2"], p)), 1);
    assert_eq!(code(&run(&["bounds", "--k", "2"], p)), 1);
    assert_eq!(code(&run(&["regular-xi", "--k", "5", "--d-range", "9"], p)), 1);
    assert_eq!(code(&run_env(&["bounds", "--k", "3"], p, "KSAT_LAB_THREADS", "zero")), 1);
    assert_eq!(code(&run(&["--help"], p)), 0);
    assert_eq!(code(&run(&["bounds", "--k", "3"], p)), 0);
}

#[test]
fn gen_prune_types_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = run(&["gen", "--k", "6", "--n", "120", "--m", "240", "--seed", "4", "--out", "f.cnf"], p);
    assert!(o.status.success());
    let f = read_dimacs(&std::fs::read_to_string(p.join("f.cnf")).unwrap()).unwrap();
    assert_eq!((f.n_vars(), f.n_clauses()), (120, 240));

    let doc = json(&run(&["prune", "--dimacs", "f.cnf", "--r", "2", "--pruned", "g.cnf"], p));
    assert_eq!(doc["result"]["r"], "2/1");
    assert!(p.join("g.cnf").exists());

    let doc = json(&run(&["types", "--dimacs", "g.cnf", "--r", "2"], p));
    assert_eq!(doc["result"]["identity"]["holds"], true);
    let w = &doc["result"]["system"]["literal_types"][0]["weight_exact"];
    assert!(w.as_str().unwrap().contains('/'));
}

#[test]
fn moments_on_regular_systems() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let first = json(&run(&["first-moment", "--regular", "6:130"], p));
    let rate = first["result"]["rate"]["rate"].as_f64().unwrap();
    let second = json(&run(&["second-moment", "evaluate", "--regular", "6:130"], p));
    let f = second["result"]["f"].as_f64().unwrap();
    assert!((f - 2.0 * rate).abs() < 1e-9, "f = {f}, first rate = {rate}");
    let st = json(&run(&["second-moment", "stationary", "--regular", "6:130"], p));
    assert!(st["result"]["max_abs"].as_f64().unwrap() < 1e-4);
}

#[test]
fn output_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["empirical", "--n", "25", "--trials", "20", "--tol", "0.5", "--curve", "3:5:1"];
    let a = run(&args, p);
    let b = run(&args, p);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let mut with_ck = args.to_vec();
    with_ck.extend(["--resume", "ck.json", "--meta", "meta.json"]);
    let c = run(&with_ck, p);
    assert_eq!(a.stdout, c.stdout);
    assert!(p.join("ck.json").exists());
    let meta: Value = serde_json::from_slice(&std::fs::read(p.join("meta.json")).unwrap()).unwrap();
    assert!(meta["elapsed_seconds"].is_number());
    let d = run(&with_ck, p);
    assert_eq!(a.stdout, d.stdout);
    assert!(String::from_utf8_lossy(&d.stderr).contains("resumed"));

    // a different configuration may not reuse the file
    let e = run(&["empirical", "--n", "26", "--trials", "20", "--tol", "0.5", "--resume", "ck.json"], p);
    assert_eq!(code(&e), 1);

    let t = run_env(&args, p, "KSAT_LAB_THREADS", "1");
    assert_eq!(a.stdout, t.stdout);
}

#[test]
fn regular_xi_resume_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let fresh = run(&["regular-xi", "--k", "6", "--d-range", "120:140"], p);
    let first = run(&["regular-xi", "--k", "6", "--d-range", "120:140", "--resume", "r.json"], p);
    let again = run(&["regular-xi", "--k", "6", "--d-range", "120:140", "--resume", "r.json"], p);
    assert_eq!(fresh.stdout, first.stdout);
    assert_eq!(fresh.stdout, again.stdout);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["selftest", "--cover-instances", "10", "--twosat-instances", "200"], dir.path());
    let doc = json(&o);
    assert_eq!(doc["result"]["suites"].as_array().unwrap().len(), 4);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{err}");
}

#[test]
fn sp_marginal_exact() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json(&run(&["sp-marginals", "--k", "3", "--delta", "0"], dir.path()));
    let m = &doc["result"]["marginals"][0]["exact"];
    assert_eq!((m["p1"].as_str(), m["p0"].as_str(), m["pstar"].as_str()), (Some("15/32"), Some("15/32"), Some("1/16")));
}
