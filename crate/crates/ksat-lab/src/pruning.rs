//! Degree pruning: remove variables whose literal degrees leave the window
//! around kr/2, delete the clauses they dominate, strip the rest.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::formula::{degree_profile, Formula, Lit};

#[derive(Debug, Clone, Default)]
pub struct PruneOptions {
    /// Recompute the kr/2 target from the surviving clause count after each round.
    pub recompute_target: bool,
    /// Replaces the window half-width k³·2^{k/2}. Used for desk-scale experiments.
    pub window: Option<Rational64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Original 1-based indices of the removed variables (the set U).
    pub removed_vars: Vec<u32>,
    /// Clauses deleted because they held at least three U-variables.
    pub removed_clauses: Vec<usize>,
    /// Clauses deleted because stripping left fewer than k−2 literals.
    pub narrow_clauses: Vec<usize>,
    pub rounds: usize,
    /// `kept_vars[i]` is the original index of variable i+1 of the pruned formula.
    pub kept_vars: Vec<u32>,
    pub n_kept: usize,
    pub m_kept: usize,
    pub widths_histogram: BTreeMap<usize, usize>,
}

/// Exact test of |d − kr/2| > w, with w² given.
struct Window {
    k: BigInt,
    r: BigRational,
    w_sq: BigRational,
}

impl Window {
    fn new(k: usize, r: Rational64, opts: &PruneOptions) -> Window {
        let to_big = |q: Rational64| BigRational::new(BigInt::from(*q.numer()), BigInt::from(*q.denom()));
        let w_sq = match opts.window {
            Some(w) => {
                let w = to_big(w);
                &w * &w
            }
            // (k³·2^{k/2})² = k⁶·2^k
            None => BigRational::from_integer(BigInt::from(k).pow(6) * (BigInt::one() << k)),
        };
        Window { k: BigInt::from(k), r: to_big(r), w_sq }
    }

    fn target(&self, r: &BigRational) -> BigRational {
        BigRational::from_integer(self.k.clone()) * r / BigInt::from(2)
    }

    fn outside(&self, d: u32, target: &BigRational) -> bool {
        let x = BigRational::from_integer(BigInt::from(d)) - target;
        &x * &x > self.w_sq
    }
}

fn var_outside(w: &Window, target: &BigRational, deg: &[u32], v: usize) -> bool {
    w.outside(deg[2 * v], target) || w.outside(deg[2 * v + 1], target)
}

fn alive_degrees(f: &Formula, alive: &[bool]) -> Vec<u32> {
    let mut deg = vec![0u32; 2 * f.n_vars()];
    for (c, _) in f.clauses().iter().zip(alive).filter(|(_, &a)| a) {
        for l in c {
            deg[l.index()] += 1;
        }
    }
    deg
}

fn distinct_in(c: &[Lit], in_u: &[bool]) -> usize {
    let mut vars: Vec<usize> = c.iter().map(|l| l.var_index()).filter(|&v| in_u[v]).collect();
    vars.sort_unstable();
    vars.dedup();
    vars.len()
}

pub fn prune(f: &Formula, k: usize, r: Rational64) -> (Formula, PruneReport) {
    prune_with(f, k, r, &PruneOptions::default())
}

pub fn prune_with(f: &Formula, k: usize, r: Rational64, opts: &PruneOptions) -> (Formula, PruneReport) {
    let n = f.n_vars();
    let m = f.n_clauses();
    let w = Window::new(k, r, opts);
    let target_for = |alive: &[bool]| {
        if opts.recompute_target && n > 0 {
            let live = alive.iter().filter(|&&a| a).count();
            w.target(&BigRational::new(BigInt::from(live), BigInt::from(n)))
        } else {
            w.target(&w.r)
        }
    };

    let mut alive = vec![true; m];
    let mut in_u = vec![false; n];
    let deg = degree_profile(f);
    let target = target_for(&alive);
    for v in 0..n {
        in_u[v] = var_outside(&w, &target, deg.counts(), v);
    }

    let mut removed_clauses = Vec::new();
    let mut narrow_clauses = Vec::new();
    let mut rounds = 0;
    loop {
        loop {
            let doomed: Vec<usize> =
                (0..m).filter(|&i| alive[i] && distinct_in(&f.clauses()[i], &in_u) >= 3).collect();
            if doomed.is_empty() {
                break;
            }
            rounds += 1;
            for &i in &doomed {
                alive[i] = false;
            }
            removed_clauses.extend(doomed);
            if !add_outliers(f, &w, &target_for(&alive), &alive, &mut in_u) {
                break;
            }
        }
        // Clauses left with fewer than k−2 literals after stripping U.
        let narrow: Vec<usize> = (0..m)
            .filter(|&i| {
                let c = &f.clauses()[i];
                alive[i] && c.iter().filter(|l| !in_u[l.var_index()]).count() + 2 < k
            })
            .collect();
        if narrow.is_empty() {
            break;
        }
        for &i in &narrow {
            alive[i] = false;
        }
        narrow_clauses.extend(narrow);
        if !add_outliers(f, &w, &target_for(&alive), &alive, &mut in_u) {
            break;
        }
    }

    let mut new_index = vec![0u32; n];
    let mut kept_vars = Vec::new();
    let mut removed_vars = Vec::new();
    for v in 0..n {
        if in_u[v] {
            removed_vars.push(v as u32 + 1);
        } else {
            kept_vars.push(v as u32 + 1);
            new_index[v] = kept_vars.len() as u32;
        }
    }
    let clauses: Vec<Vec<Lit>> = (0..m)
        .filter(|&i| alive[i])
        .map(|i| {
            f.clauses()[i]
                .iter()
                .filter(|l| !in_u[l.var_index()])
                .map(|l| Lit::new(new_index[l.var_index()], l.is_positive()))
                .collect::<Vec<_>>()
        })
        .filter(|c| !c.is_empty())
        .collect();
    let mut widths_histogram = BTreeMap::new();
    for c in &clauses {
        *widths_histogram.entry(c.len()).or_insert(0) += 1;
    }
    removed_clauses.sort_unstable();
    narrow_clauses.sort_unstable();
    let pruned = Formula::new(kept_vars.len(), k, clauses).expect("renumbered literals are in range");
    let report = PruneReport {
        removed_vars,
        removed_clauses,
        narrow_clauses,
        rounds,
        n_kept: pruned.n_vars(),
        m_kept: pruned.n_clauses(),
        kept_vars,
        widths_histogram,
    };
    (pruned, report)
}

/// Adds every variable outside the window over the alive clauses; true if U grew.
fn add_outliers(f: &Formula, w: &Window, target: &BigRational, alive: &[bool], in_u: &mut [bool]) -> bool {
    let deg = alive_degrees(f, alive);
    let mut grew = false;
    for v in 0..f.n_vars() {
        if !in_u[v] && var_outside(w, target, &deg, v) {
            in_u[v] = true;
            grew = true;
        }
    }
    grew
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeBoundReport {
    pub checked: usize,
    /// (literal, degree) pairs outside the window.
    pub violators: Vec<(Lit, u32)>,
}

/// Lists literals of variables that occur in `f` whose degree leaves the window.
pub fn check_degree_bounds(f: &Formula, k: usize, r: Rational64) -> DegreeBoundReport {
    check_degree_bounds_with(f, k, r, &PruneOptions::default())
}

pub fn check_degree_bounds_with(f: &Formula, k: usize, r: Rational64, opts: &PruneOptions) -> DegreeBoundReport {
    let w = Window::new(k, r, opts);
    let target = w.target(&w.r);
    let deg = degree_profile(f);
    let mut violators = Vec::new();
    for (i, &d) in deg.counts().iter().enumerate() {
        if w.outside(d, &target) {
            violators.push((Lit::from_index(i), d));
        }
    }
    DegreeBoundReport { checked: deg.counts().len(), violators }
}

/// Parses "p/q", an integer, or a finite decimal such as "4.25" exactly.
pub fn parse_density(s: &str) -> Option<Rational64> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let q: i64 = q.trim().parse().ok()?;
        let p: i64 = p.trim().parse().ok()?;
        return (q != 0).then(|| Rational64::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let num: i64 = digits.parse().ok()?;
        let den = 10i64.checked_pow(frac.len() as u32)?;
        let q = Rational64::new(num, den);
        return Some(if neg { -q } else { q });
    }
    s.parse::<i64>().ok().map(Rational64::from_integer)
}

/// Closest rational with a bounded denominator, for irrational densities.
pub fn density_from_f64(r: f64) -> Rational64 {
    let den = 1i64 << 20;
    Rational64::new((r * den as f64).round() as i64, den)
}

/// True when every removed clause had at least three distinct U-variables.
pub fn removed_clauses_are_heavy(f: &Formula, report: &PruneReport) -> bool {
    let mut in_u = vec![false; f.n_vars()];
    for &v in &report.removed_vars {
        in_u[v as usize - 1] = true;
    }
    report.removed_clauses.iter().all(|&i| distinct_in(&f.clauses()[i], &in_u) >= 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::gen_uniform;
    use proptest::prelude::*;

    fn lits(v: &[i32]) -> Vec<Lit> {
        v.iter().map(|&x| Lit::from_dimacs(x).unwrap()).collect()
    }

    /// a=1 b=2 c=3 y=4 u=5 v=6, k=4, r=150: target 300, half-width 256.
    fn cascade() -> Formula {
        let mut cs = vec![lits(&[1, 2, 3, 4]), lits(&[1, 2, 4, 5])];
        cs.extend(std::iter::repeat_n(lits(&[1, 1, 2, 2]), 299));
        cs.extend(std::iter::repeat_n(lits(&[3, 3, -3, -3]), 299));
        cs.extend(std::iter::repeat_n(lits(&[4, 5, -5, 6]), 42));
        cs.extend(std::iter::repeat_n(lits(&[-4, -4, -4, -4]), 75));
        cs.extend(std::iter::repeat_n(lits(&[5, -5, 6, -6]), 250));
        Formula::new(6, 4, cs).unwrap()
    }

    #[test]
    fn cascade_takes_two_rounds() {
        let f = cascade();
        let (g, rep) = prune(&f, 4, Rational64::from_integer(150));
        assert_eq!(rep.rounds, 2);
        assert_eq!(rep.removed_vars, vec![1, 2, 3, 4]);
        assert_eq!(rep.removed_clauses, vec![0, 1]);
        assert_eq!(rep.kept_vars, vec![5, 6]);
        assert!(removed_clauses_are_heavy(&f, &rep));
        assert_eq!(g.n_vars(), 2);
        // (y,u,¬u,v) loses y; the all-U clauses become narrow.
        assert_eq!(rep.narrow_clauses.len(), 299 + 299 + 75);
        assert_eq!(rep.widths_histogram, BTreeMap::from([(3, 42), (4, 250)]));
        assert!(check_degree_bounds(&g, 4, Rational64::from_integer(150)).violators.is_empty());
    }

    #[test]
    fn regular_input_is_untouched() {
        // k=3, r=2: every literal degree equals kr/2 = 3.
        let f = crate::formula::gen_regular(3, 3, 20, 1).unwrap();
        let (g, rep) = prune(&f, 3, Rational64::from_integer(2));
        assert!(rep.removed_vars.is_empty());
        assert_eq!(rep.rounds, 0);
        assert_eq!(g, f);
    }

    #[test]
    fn single_heavy_variable_is_stripped() {
        // Window [1, 5] around kr/2 = 3; x1 has degree 6 and is never with another U-variable.
        let f = Formula::from_dimacs_clauses(
            5,
            &[
                &[1, 2, 3], &[1, -2, -3], &[1, 4, 5], &[1, -4, -5], &[1, 2, -4],
                &[1, 3, 5], &[-1, -2, 4], &[-1, -3, -5], &[-1, 2, 3],
            ],
        )
        .unwrap();
        let opts = PruneOptions { window: Some(Rational64::from_integer(2)), ..Default::default() };
        let (g, rep) = prune_with(&f, 3, Rational64::from_integer(2), &opts);
        assert_eq!(rep.removed_vars, vec![1]);
        assert!(rep.removed_clauses.is_empty());
        assert!(rep.narrow_clauses.is_empty());
        assert_eq!(g.n_clauses(), 9);
        assert!(g.clauses().iter().all(|c| c.len() == 2));
        assert_eq!(rep.kept_vars, vec![2, 3, 4, 5]);
    }

    #[test]
    fn density_parsing() {
        assert_eq!(parse_density("17/4"), Some(Rational64::new(17, 4)));
        assert_eq!(parse_density("4.25"), Some(Rational64::new(17, 4)));
        assert_eq!(parse_density("3"), Some(Rational64::from_integer(3)));
        assert_eq!(parse_density("x"), None);
    }

    #[test]
    fn heavy_tail_has_violators() {
        let f = Formula::from_dimacs_clauses(2, &[&[1, 1, 1], &[1, 1, 2]]).unwrap();
        let rep = check_degree_bounds_with(&f, 3, Rational64::from_integer(1), &PruneOptions {
            window: Some(Rational64::from_integer(1)),
            ..Default::default()
        });
        assert!(!rep.violators.is_empty());
        assert!(check_degree_bounds(&Formula::empty(0, 3), 3, Rational64::from_integer(1)).violators.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn output_respects_window(n in 5usize..40, m in 0usize..80, seed: u64, w in 1i64..4) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            let r = Rational64::new(m as i64, n as i64);
            let opts = PruneOptions { window: Some(Rational64::from_integer(w)), ..Default::default() };
            let (g, rep) = prune_with(&f, 3, r, &opts);
            prop_assert!(check_degree_bounds_with(&g, 3, r, &opts).violators.is_empty());
            prop_assert!(removed_clauses_are_heavy(&f, &rep));
            prop_assert!(g.clauses().iter().all(|c| c.len() + 2 >= 3 && c.len() <= 3));
            prop_assert_eq!(rep.removed_vars.len() + rep.kept_vars.len(), n);
        }

        #[test]
        fn scan_order_invariance(n in 5usize..30, m in 0usize..60, seed: u64, perm_seed: u64) {
            use rand::seq::SliceRandom;
            let f = gen_uniform(3, n, m, seed).unwrap();
            let mut cs = f.clauses().to_vec();
            cs.shuffle(&mut crate::formula::rng_from_seed(perm_seed));
            let g = Formula::new(n, 3, cs).unwrap();
            let r = Rational64::new(m as i64, n as i64);
            let opts = PruneOptions { window: Some(Rational64::from_integer(2)), ..Default::default() };
            let (_, a) = prune_with(&f, 3, r, &opts);
            let (_, b) = prune_with(&g, 3, r, &opts);
            prop_assert_eq!(a.removed_vars, b.removed_vars);
        }
    }
}
