//! Exhaustive and DPLL satisfiability, plus Monte Carlo threshold estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{gen_uniform, Formula, Lit};
use crate::par::{self, Exec};

pub const BRUTE_FORCE_CAP: usize = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("{n} variables exceeds the brute-force cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Every satisfying assignment, in binary counting order (variable 1 lowest).
pub fn brute_force_sat(f: &Formula) -> Result<Vec<Vec<bool>>, SolverError> {
    let n = f.n_vars();
    if n > BRUTE_FORCE_CAP {
        return Err(SolverError::CapExceeded { n, cap: BRUTE_FORCE_CAP });
    }
    let mut a = vec![false; n];
    let mut out = Vec::new();
    for bits in 0u64..1 << n {
        for (v, x) in a.iter_mut().enumerate() {
            *x = bits >> v & 1 == 1;
        }
        if f.satisfied_by(&a) {
            out.push(a.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SatStatus {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub decisions: u64,
    pub propagations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatResult {
    pub status: SatStatus,
    pub assignment: Option<Vec<bool>>,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Val {
    Unset,
    True,
    False,
}

struct Dpll {
    clauses: Vec<Vec<Lit>>,
    occ: Vec<Vec<usize>>,
    n_false: Vec<usize>,
    n_true: Vec<usize>,
    /// Occurrences of each literal in clauses not yet satisfied.
    active: Vec<usize>,
    val: Vec<Val>,
    trail: Vec<Lit>,
    satisfied: usize,
    queue: Vec<usize>,
    stats: SolverStats,
}

impl Dpll {
    fn new(f: &Formula) -> Dpll {
        let n = f.n_vars();
        let mut clauses = Vec::new();
        for c in f.clauses() {
            let mut c = c.clone();
            c.sort();
            c.dedup();
            if c.windows(2).any(|w| w[0] == w[1].negate()) {
                continue;
            }
            clauses.push(c);
        }
        let mut occ = vec![Vec::new(); 2 * n];
        let mut active = vec![0; 2 * n];
        for (i, c) in clauses.iter().enumerate() {
            for l in c {
                occ[l.index()].push(i);
                active[l.index()] += 1;
            }
        }
        let m = clauses.len();
        Dpll {
            clauses,
            occ,
            n_false: vec![0; m],
            n_true: vec![0; m],
            active,
            val: vec![Val::Unset; n],
            trail: Vec::new(),
            satisfied: 0,
            queue: (0..m).collect(),
            stats: SolverStats::default(),
        }
    }

    fn lit_val(&self, l: Lit) -> Val {
        match (self.val[l.var_index()], l.is_positive()) {
            (Val::Unset, _) => Val::Unset,
            (Val::True, true) | (Val::False, false) => Val::True,
            _ => Val::False,
        }
    }

    fn assign(&mut self, l: Lit) {
        self.val[l.var_index()] = if l.is_positive() { Val::True } else { Val::False };
        self.trail.push(l);
        for idx in 0..self.occ[l.index()].len() {
            let c = self.occ[l.index()][idx];
            self.n_true[c] += 1;
            if self.n_true[c] == 1 {
                self.satisfied += 1;
                for &x in &self.clauses[c] {
                    self.active[x.index()] -= 1;
                }
            }
        }
        let nl = l.negate();
        for idx in 0..self.occ[nl.index()].len() {
            let c = self.occ[nl.index()][idx];
            self.n_false[c] += 1;
            if self.n_true[c] == 0 && self.n_false[c] + 1 >= self.clauses[c].len() {
                self.queue.push(c);
            }
        }
    }

    fn unassign_to(&mut self, len: usize) {
        while self.trail.len() > len {
            let l = self.trail.pop().expect("trail entry");
            for idx in 0..self.occ[l.index()].len() {
                let c = self.occ[l.index()][idx];
                self.n_true[c] -= 1;
                if self.n_true[c] == 0 {
                    self.satisfied -= 1;
                    for &x in &self.clauses[c] {
                        self.active[x.index()] += 1;
                    }
                }
            }
            let nl = l.negate();
            for &c in &self.occ[nl.index()] {
                self.n_false[c] -= 1;
            }
            self.val[l.var_index()] = Val::Unset;
        }
        self.queue.clear();
    }

    /// Unit propagation; false on conflict.
    fn propagate(&mut self) -> bool {
        while let Some(c) = self.queue.pop() {
            if self.n_true[c] > 0 {
                continue;
            }
            let len = self.clauses[c].len();
            if self.n_false[c] == len {
                self.queue.clear();
                return false;
            }
            if self.n_false[c] + 1 == len {
                let l = *self.clauses[c].iter().find(|&&l| self.lit_val(l) == Val::Unset).expect("unit literal");
                self.stats.propagations += 1;
                self.assign(l);
            }
        }
        true
    }

    fn assign_pure(&mut self) {
        for v in 0..self.val.len() {
            if self.val[v] != Val::Unset {
                continue;
            }
            let (p, q) = (self.active[2 * v], self.active[2 * v + 1]);
            if p > 0 && q == 0 {
                self.assign(Lit::new(v as u32 + 1, true));
            } else if q > 0 && p == 0 {
                self.assign(Lit::new(v as u32 + 1, false));
            }
        }
    }

    fn branch_literal(&self) -> Option<Lit> {
        let mut best: Option<(usize, usize)> = None;
        for v in 0..self.val.len() {
            if self.val[v] != Val::Unset {
                continue;
            }
            for i in [2 * v, 2 * v + 1] {
                let a = self.active[i];
                if a > 0 && best.is_none_or(|(b, _)| a > b) {
                    best = Some((a, i));
                }
            }
        }
        best.map(|(_, i)| Lit::from_index(i))
    }

    fn solve(&mut self, max_decisions: u64) -> SatStatus {
        // (trail length before the decision, decision literal, flipped)
        let mut stack: Vec<(usize, Lit, bool)> = Vec::new();
        let mut ok = self.propagate();
        loop {
            if ok {
                self.assign_pure();
                if self.satisfied == self.clauses.len() {
                    return SatStatus::Sat;
                }
                let Some(l) = self.branch_literal() else {
                    return SatStatus::Sat;
                };
                if self.stats.decisions >= max_decisions {
                    return SatStatus::Unknown;
                }
                self.stats.decisions += 1;
                stack.push((self.trail.len(), l, false));
                self.assign(l);
                ok = self.propagate();
            } else {
                loop {
                    let Some((len, l, flipped)) = stack.pop() else {
                        return SatStatus::Unsat;
                    };
                    self.unassign_to(len);
                    if !flipped {
                        stack.push((len, l.negate(), true));
                        self.assign(l.negate());
                        ok = self.propagate();
                        break;
                    }
                }
            }
        }
    }
}

pub fn dpll_solve(f: &Formula) -> SatResult {
    dpll_solve_limited(f, u64::MAX)
}

/// DPLL with a decision budget; an exhausted budget yields `Unknown`.
pub fn dpll_solve_limited(f: &Formula, max_decisions: u64) -> SatResult {
    let mut s = Dpll::new(f);
    let status = s.solve(max_decisions);
    let assignment = (status == SatStatus::Sat).then(|| s.val.iter().map(|&v| v == Val::True).collect::<Vec<_>>());
    if let Some(a) = &assignment {
        assert!(f.satisfied_by(a), "DPLL returned a non-satisfying assignment");
    }
    SatResult { status, assignment, stats: s.stats }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatEstimate {
    pub r: f64,
    pub m: usize,
    pub trials: usize,
    pub sat: usize,
    pub unknown: usize,
    pub fraction: f64,
    pub stderr: f64,
}

/// Fraction of satisfiable formulas among `trials` draws of
/// gen_uniform(k, n, ⌈rn⌉). Trial t uses seed `seed ^ t`, so the formulas for
/// a larger r extend those for a smaller one clause by clause.
pub fn estimate_sat_probability(
    k: usize,
    n: usize,
    r: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<SatEstimate, SolverError> {
    if trials == 0 || !(r >= 0.0) || n == 0 {
        return Err(SolverError::InvalidParameter(format!("trials={trials}, r={r}, n={n}")));
    }
    let m = (r * n as f64).ceil() as usize;
    let verdicts = par::map_range(exec, trials, |t| {
        let f = gen_uniform(k, n, m, seed ^ t as u64).expect("validated parameters");
        dpll_solve(&f).status
    });
    Ok(summarize(r, m, &verdicts))
}

/// Same as [`estimate_sat_probability`] for random regular formulas.
pub fn estimate_regular_sat_probability(
    k: usize,
    d: u32,
    n: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<SatEstimate, SolverError> {
    let verdicts = par::map_range(exec, trials, |t| {
        crate::formula::gen_regular(k, d, n, seed ^ t as u64).map(|f| dpll_solve(&f).status)
    });
    let verdicts: Vec<SatStatus> = verdicts
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| SolverError::InvalidParameter(e.to_string()))?;
    let m = 2 * n * d as usize / k;
    Ok(summarize(2.0 * d as f64 / k as f64, m, &verdicts))
}

fn summarize(r: f64, m: usize, verdicts: &[SatStatus]) -> SatEstimate {
    let sat = verdicts.iter().filter(|&&s| s == SatStatus::Sat).count();
    let unknown = verdicts.iter().filter(|&&s| s == SatStatus::Unknown).count();
    let trials = verdicts.len();
    let p = sat as f64 / trials as f64;
    SatEstimate { r, m, trials, sat, unknown, fraction: p, stderr: (p * (1.0 - p) / trials as f64).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub estimate: f64,
    /// Every evaluated point, sorted by r.
    pub curve: Vec<SatEstimate>,
    /// Adjacent pairs (r_i, r_j) where the fraction rises by more than 3σ.
    pub non_monotone: Vec<(f64, f64)>,
}

/// Bisection for P(sat) = 1/2 between `r_lo` and `r_hi`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_threshold(
    k: usize,
    n: usize,
    trials: usize,
    r_lo: f64,
    r_hi: f64,
    tol: f64,
    seed: u64,
    exec: Exec,
) -> Result<ThresholdEstimate, SolverError> {
    empirical_threshold_with(r_lo, r_hi, tol, |r| estimate_sat_probability(k, n, r, trials, seed, exec))
}

/// Bisection for P(sat) = 1/2 on [r_lo, r_hi] with the estimator supplied
/// by the caller.
pub fn empirical_threshold_with<F>(r_lo: f64, r_hi: f64, tol: f64, mut estimate: F) -> Result<ThresholdEstimate, SolverError>
where
    F: FnMut(f64) -> Result<SatEstimate, SolverError>,
{
    if !(r_lo < r_hi) || !(tol > 0.0) {
        return Err(SolverError::InvalidParameter(format!("need r_lo < r_hi and tol > 0, got {r_lo}, {r_hi}, {tol}")));
    }
    let mut curve = vec![estimate(r_lo)?, estimate(r_hi)?];
    let (mut lo, mut hi) = (r_lo, r_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let e = estimate(mid)?;
        if e.fraction > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        curve.push(e);
    }
    curve.sort_by(|a, b| a.r.total_cmp(&b.r));
    let non_monotone = monotonicity_violations(&curve);
    Ok(ThresholdEstimate { estimate: 0.5 * (lo + hi), curve, non_monotone })
}

pub fn sat_curve(k: usize, n: usize, trials: usize, rs: &[f64], seed: u64, exec: Exec) -> Result<Vec<SatEstimate>, SolverError> {
    rs.iter().map(|&r| estimate_sat_probability(k, n, r, trials, seed, exec)).collect()
}

pub fn monotonicity_violations(curve: &[SatEstimate]) -> Vec<(f64, f64)> {
    curve
        .windows(2)
        .filter(|w| {
            let sigma = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].fraction - w[0].fraction > 3.0 * sigma.max(0.5 / w[0].trials as f64)
        })
        .map(|w| (w[0].r, w[1].r))
        .collect()
}

/// Distance between the interpolated 90% and 10% crossings of a sorted curve.
pub fn transition_width(curve: &[SatEstimate]) -> Option<f64> {
    let cross = |level: f64| {
        curve.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            (a.fraction >= level && b.fraction < level)
                .then(|| a.r + (a.fraction - level) / (a.fraction - b.fraction) * (b.r - a.r))
        })
    };
    Some(cross(0.1)? - cross(0.9)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        let f = Formula::from_dimacs_clauses(3, &[&[1, 2, 3]]).unwrap();
        assert_eq!(brute_force_sat(&f).unwrap().len(), 7);
        let g = Formula::from_dimacs_clauses(1, &[&[1], &[-1]]).unwrap();
        assert!(brute_force_sat(&g).unwrap().is_empty());
        assert_eq!(dpll_solve(&g).status, SatStatus::Unsat);
        assert_eq!(brute_force_sat(&Formula::empty(2, 3)).unwrap().len(), 4);
        let chain = Formula::from_dimacs_clauses(2, &[&[1], &[-1, 2], &[-2]]).unwrap();
        assert_eq!(dpll_solve(&chain).status, SatStatus::Unsat);
        let r = dpll_solve(&f);
        assert_eq!(r.status, SatStatus::Sat);
        assert!(f.satisfied_by(r.assignment.as_ref().unwrap()));
        assert!(brute_force_sat(&Formula::empty(26, 3)).is_err());
    }

    #[test]
    fn extreme_densities() {
        let lo = estimate_sat_probability(3, 50, 0.1, 200, 1, Exec::Parallel).unwrap();
        assert!(lo.fraction >= 0.99);
        let hi = estimate_sat_probability(3, 50, 10.0, 200, 1, Exec::Parallel).unwrap();
        assert!(hi.fraction <= 0.01);
        let again = estimate_sat_probability(3, 50, 10.0, 200, 1, Exec::Sequential).unwrap();
        assert_eq!(hi, again);
    }

    #[test]
    fn decision_budget() {
        let f = gen_uniform(3, 60, 300, 3).unwrap();
        let r = dpll_solve_limited(&f, 0);
        assert!(matches!(r.status, SatStatus::Unknown | SatStatus::Unsat | SatStatus::Sat));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn dpll_agrees_with_brute_force(n in 1usize..11, m in 0usize..60, seed: u64) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            let sat = !brute_force_sat(&f).unwrap().is_empty();
            let r = dpll_solve(&f);
            prop_assert_eq!(r.status == SatStatus::Sat, sat);
            prop_assert_ne!(r.status, SatStatus::Unknown);
        }
    }
}
