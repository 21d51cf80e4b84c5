//! Desk-scale oracle suites: cover/shade bijection, 2-SAT against brute
//! force, first-moment fixed-point residuals and the Λ slot identity.
//!
//! The Λ map is injectable so that a corrupted implementation can be shown
//! to trip the identity suite.

use num_rational::Rational64;
use rand::Rng;
use serde::Serialize;

use crate::cover::{cover_from_shade, enumerate_covers, enumerate_valid_shades, shade_from_cover};
use crate::formula::{gen_uniform, rng_from_seed, Lit};
use crate::moments::first::first_moment_residual;
use crate::moments::solve_first_moment;
use crate::par::{map_range, Exec};
use crate::pruning::{prune, PruneOptions};
use crate::sp::{assign_types, check_type_identity, lambda_map, regular_type_system, CloneDist, Signature, SpError, TypeMode, TypeSystem};
use crate::thresholds::bound_main;
use crate::twosat::{brute_force_2sat, solve_2sat, TwoSatInstance};

pub type LambdaFn = fn(&[Signature]) -> Result<Vec<CloneDist>, SpError>;

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    pub cover_instances: usize,
    pub twosat_instances: usize,
    pub residual_tol: f64,
    pub lambda: LambdaFn,
    pub exec: Exec,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 1,
            cover_instances: 60,
            twosat_instances: 2000,
            residual_tol: 1e-10,
            lambda: lambda_map,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    /// The first few failures, for the report.
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn from_failures(name: &str, checked: usize, failures: Vec<String>) -> SuiteResult {
        let passed = failures.is_empty();
        SuiteResult { name: name.into(), passed, checked, failures: failures.into_iter().take(5).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    SelftestReport {
        seed: opts.seed,
        suites: vec![cover_bijection(opts), twosat_equivalence(opts), fixed_point_residuals(opts), type_identity(opts)],
    }
}

fn cover_bijection(opts: &SelftestOptions) -> SuiteResult {
    let rows = map_range(opts.exec, opts.cover_instances, |i| -> Option<String> {
        let seed = opts.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = rng_from_seed(seed);
        let n = rng.random_range(1..=6usize);
        let m = rng.random_range(0..=3 * n);
        let f = match gen_uniform(3, n, m, seed) {
            Ok(f) => f,
            Err(e) => return Some(format!("instance {i}: {e}")),
        };
        let covers = match enumerate_covers(&f, 16, Exec::Sequential) {
            Ok(c) => c,
            Err(e) => return Some(format!("instance {i}: {e}")),
        };
        let shades = match enumerate_valid_shades(&f, 16) {
            Ok(s) => s,
            Err(e) => return Some(format!("instance {i}: {e}")),
        };
        if covers.len() != shades.len() {
            return Some(format!("instance {i}: {} covers, {} valid shades", covers.len(), shades.len()));
        }
        for z in &covers {
            let back = shade_from_cover(&f, z).and_then(|s| cover_from_shade(&f, &s));
            if back.as_ref() != Ok(z) {
                return Some(format!("instance {i}: cover roundtrip failed"));
            }
        }
        for s in &shades {
            let back = cover_from_shade(&f, s).and_then(|z| shade_from_cover(&f, &z));
            if back.as_ref() != Ok(s) {
                return Some(format!("instance {i}: shade roundtrip failed"));
            }
        }
        None
    });
    SuiteResult::from_failures("cover bijection", opts.cover_instances, rows.into_iter().flatten().collect())
}

fn random_2sat(seed: u64) -> TwoSatInstance {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=4u32);
    let m = rng.random_range(0..=3 * n as usize);
    let lit = |rng: &mut rand_chacha::ChaCha8Rng| Lit::new(rng.random_range(1..=n), rng.random_bool(0.5));
    let clauses = (0..m).map(|_| (lit(&mut rng), lit(&mut rng))).collect();
    TwoSatInstance::new(n as usize, clauses)
}

fn twosat_equivalence(opts: &SelftestOptions) -> SuiteResult {
    let rows = map_range(opts.exec, opts.twosat_instances, |i| -> Option<String> {
        let t = random_2sat(opts.seed.wrapping_add(i as u64));
        let fast = solve_2sat(&t);
        let slow = brute_force_2sat(&t);
        match (&fast, &slow) {
            (Some(a), Some(_)) if t.satisfied_by(a) => None,
            (None, None) => None,
            _ => Some(format!("instance {i}: solver {:?}, brute force {:?}", fast.is_some(), slow.is_some())),
        }
    });
    SuiteResult::from_failures("2-SAT equivalence", opts.twosat_instances, rows.into_iter().flatten().collect())
}

fn regular_systems() -> Vec<(usize, u32)> {
    (4..=8)
        .map(|k| {
            let d = (k as f64 * bound_main(k).unwrap_or(1.0) / 2.0).round() as u32;
            (k, d)
        })
        .collect()
}

fn fixed_point_residuals(opts: &SelftestOptions) -> SuiteResult {
    let cases = regular_systems();
    let rows = map_range(opts.exec, cases.len(), |i| -> Option<String> {
        let (k, d) = cases[i];
        let ts = match regular_type_system(k, d) {
            Ok(ts) => ts,
            Err(e) => return Some(format!("k = {k}, d = {d}: {e}")),
        };
        match solve_first_moment(&ts, opts.residual_tol) {
            Ok(p) => {
                let res = first_moment_residual(&ts, &p);
                (res > opts.residual_tol).then(|| format!("k = {k}, d = {d}: residual {res:e}"))
            }
            Err(e) => Some(format!("k = {k}, d = {d}: {e}")),
        }
    });
    SuiteResult::from_failures("fixed-point residuals", cases.len(), rows.into_iter().flatten().collect())
}

/// Recomputes every slot distribution with `lambda` from the slot
/// signatures, then checks the Λ identity on the result.
fn rebuild_with(ts: &TypeSystem, lambda: LambdaFn) -> Result<TypeSystem, SpError> {
    let mut out = ts.clone();
    for l in &mut out.clause_types {
        let sigs: Vec<Signature> = l.slots.iter().map(|s| ts.literal_types[s.literal_type].signature.clone()).collect();
        let dists = lambda(&sigs)?;
        for (s, d) in l.slots.iter_mut().zip(dists) {
            s.f = d.f64s();
            s.dist = d;
        }
    }
    Ok(out)
}

fn desk_systems(seed: u64) -> Vec<Result<TypeSystem, SpError>> {
    let mut out: Vec<Result<TypeSystem, SpError>> =
        regular_systems().into_iter().map(|(k, d)| regular_type_system(k, d)).collect();
    // sparse enough that every degree difference stays inside the regime
    let (k, n) = (6usize, 120usize);
    let r = Rational64::new(2, 1);
    if let Ok(f) = gen_uniform(k, n, 2 * n, seed) {
        let (pruned, _) = prune(&f, k, r);
        out.push(assign_types(&pruned, k, r, TypeMode::Full, &PruneOptions::default()));
    }
    out
}

fn type_identity(opts: &SelftestOptions) -> SuiteResult {
    let systems = desk_systems(opts.seed);
    let mut failures = Vec::new();
    let mut checked = 0;
    for (i, ts) in systems.iter().enumerate() {
        let rebuilt = ts.as_ref().map_err(|e| e.clone()).and_then(|ts| rebuild_with(ts, opts.lambda));
        match rebuilt {
            Ok(ts) => {
                let rep = check_type_identity(&ts);
                checked += rep.checked;
                if !rep.holds() {
                    failures.push(format!(
                        "system {i}: {} identity and {} conservation failures",
                        rep.failures.len(),
                        rep.conservation_failures.len()
                    ));
                }
            }
            Err(e) => failures.push(format!("system {i}: {e}")),
        }
    }
    SuiteResult::from_failures("type identity", checked, failures)
}
