//! Extending covers to satisfying assignments through a 2-SAT residual.

use std::collections::{BTreeSet, HashSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cover::{self, Color, CoverError, CoverMap, CoverValue, Shade};
use crate::formula::{Formula, Lit};

pub const DEFAULT_MAX_H: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TwoSatError {
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error("clause {clause} survives the reduction with {greens} green clones")]
    TooFewGreens { clause: usize, greens: usize },
    #[error("extension violates clause {clause}")]
    Unsatisfied { clause: usize },
    #[error("{n} variables exceeds the brute-force cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
}

impl TwoSatError {
    pub fn is_contract_violation(&self) -> bool {
        matches!(self, TwoSatError::TooFewGreens { .. } | TwoSatError::Unsatisfied { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoSatInstance {
    pub n_vars: usize,
    pub clauses: Vec<(Lit, Lit)>,
}

impl TwoSatInstance {
    pub fn new(n_vars: usize, clauses: Vec<(Lit, Lit)>) -> TwoSatInstance {
        assert!(clauses.iter().all(|(a, b)| a.var() as usize <= n_vars && b.var() as usize <= n_vars));
        TwoSatInstance { n_vars, clauses }
    }

    pub fn from_dimacs_pairs(n_vars: usize, pairs: &[(i32, i32)]) -> TwoSatInstance {
        let lit = |v| Lit::from_dimacs(v).expect("nonzero literal");
        TwoSatInstance::new(n_vars, pairs.iter().map(|&(a, b)| (lit(a), lit(b))).collect())
    }

    pub fn satisfied_by(&self, a: &[bool]) -> bool {
        self.clauses.iter().all(|(x, y)| x.eval(a) || y.eval(a))
    }

    pub fn to_formula(&self) -> Formula {
        let cs = self.clauses.iter().map(|&(a, b)| vec![a, b]).collect();
        Formula::new(self.n_vars, 2, cs).expect("literals in range")
    }

    fn edge_set(&self) -> HashSet<(Lit, Lit)> {
        self.clauses.iter().flat_map(|&(a, b)| [(a.negate(), b), (b.negate(), a)]).collect()
    }
}

/// Drops clauses holding a red or blue clone and keeps the first two green
/// clones of every other clause.
pub fn reduce_to_2sat(f: &Formula, s: &Shade) -> Result<TwoSatInstance, TwoSatError> {
    let verdict = cover::is_valid_shade(f, s)?;
    if !verdict.valid {
        return Err(CoverError::InvalidShade(verdict.violations.join("; ")).into());
    }
    let offsets = f.slot_offsets();
    let mut clauses = Vec::new();
    for (i, c) in f.clauses().iter().enumerate() {
        let colors = &s.0[offsets[i]..offsets[i + 1]];
        if colors.iter().any(|&x| matches!(x, Color::Red | Color::Blue)) {
            continue;
        }
        let greens: Vec<Lit> = c.iter().zip(colors).filter(|(_, &x)| x == Color::Green).map(|(&l, _)| l).collect();
        if greens.len() < 2 {
            return Err(TwoSatError::TooFewGreens { clause: i, greens: greens.len() });
        }
        clauses.push((greens[0], greens[1]));
    }
    Ok(TwoSatInstance::new(f.n_vars(), clauses))
}

/// Implication graph plus strongly connected components.
pub fn solve_2sat(t: &TwoSatInstance) -> Option<Vec<bool>> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(2 * t.n_vars, 2 * t.clauses.len());
    for _ in 0..2 * t.n_vars {
        g.add_node(());
    }
    let node = |l: Lit| NodeIndex::new(l.index());
    for &(a, b) in &t.clauses {
        g.add_edge(node(a.negate()), node(b), ());
        g.add_edge(node(b.negate()), node(a), ());
    }
    // Components arrive in reverse topological order.
    let mut comp = vec![0usize; 2 * t.n_vars];
    for (ci, scc) in tarjan_scc(&g).into_iter().enumerate() {
        for v in scc {
            comp[v.index()] = ci;
        }
    }
    (0..t.n_vars)
        .map(|v| {
            let (p, q) = (comp[2 * v], comp[2 * v + 1]);
            (p != q).then_some(p < q)
        })
        .collect()
}

/// Brute-force satisfiability of a 2-SAT instance, for oracles.
pub fn brute_force_2sat(t: &TwoSatInstance) -> Option<Vec<bool>> {
    assert!(t.n_vars <= 24, "brute force over too many variables");
    (0u32..1 << t.n_vars)
        .map(|bits| (0..t.n_vars).map(|v| bits >> v & 1 == 1).collect::<Vec<_>>())
        .find(|a| t.satisfied_by(a))
}

/// l_0, …, l_{h+1}: every ¬l_i ∨ l_{i+1} is a clause, |l_1|…|l_h| are
/// distinct and both ends reuse one of those variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bicycle {
    pub lits: Vec<Lit>,
}

impl Bicycle {
    pub fn h(&self) -> usize {
        self.lits.len() - 2
    }

    /// The same witness read backwards through contrapositives.
    pub fn reversed(&self) -> Bicycle {
        Bicycle { lits: self.lits.iter().rev().map(|l| l.negate()).collect() }
    }

    pub fn is_valid_in(&self, t: &TwoSatInstance) -> bool {
        let edges = t.edge_set();
        let h = self.h();
        if h == 0 {
            return false;
        }
        let inner: Vec<u32> = self.lits[1..=h].iter().map(|l| l.var()).collect();
        let distinct: BTreeSet<u32> = inner.iter().copied().collect();
        self.lits.windows(2).all(|w| edges.contains(&(w[0], w[1])))
            && distinct.len() == h
            && distinct.contains(&self.lits[0].var())
            && distinct.contains(&self.lits[h + 1].var())
    }
}

/// All bicycles with h ≤ `max_h`, each reported once together with its reversal.
pub fn find_bicycles(t: &TwoSatInstance, max_h: usize) -> Vec<Bicycle> {
    find_bicycles_limited(t, max_h, usize::MAX)
}

pub fn find_bicycles_limited(t: &TwoSatInstance, max_h: usize, limit: usize) -> Vec<Bicycle> {
    let edges = t.edge_set();
    let mut succ: Vec<Vec<Lit>> = vec![Vec::new(); 2 * t.n_vars];
    let mut pred: Vec<Vec<Lit>> = vec![Vec::new(); 2 * t.n_vars];
    for &(a, b) in &edges {
        succ[a.index()].push(b);
        pred[b.index()].push(a);
    }
    for v in succ.iter_mut().chain(pred.iter_mut()) {
        v.sort();
    }
    let mut found = BTreeSet::new();
    let mut path = Vec::new();
    let mut used = vec![false; t.n_vars];
    for start in 0..2 * t.n_vars {
        extend_path(Lit::from_index(start), &succ, &pred, max_h, limit, &mut path, &mut used, &mut found);
        if found.len() >= limit {
            break;
        }
    }
    found.into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn extend_path(
    l: Lit,
    succ: &[Vec<Lit>],
    pred: &[Vec<Lit>],
    max_h: usize,
    limit: usize,
    path: &mut Vec<Lit>,
    used: &mut [bool],
    found: &mut BTreeSet<Bicycle>,
) {
    if used[l.var_index()] || path.len() >= max_h || found.len() >= limit {
        return;
    }
    used[l.var_index()] = true;
    path.push(l);
    let first = path[0];
    for &l0 in pred[first.index()].iter().filter(|x| used[x.var_index()]) {
        for &last in succ[l.index()].iter().filter(|x| used[x.var_index()]) {
            let mut lits = Vec::with_capacity(path.len() + 2);
            lits.push(l0);
            lits.extend_from_slice(path);
            lits.push(last);
            let b = Bicycle { lits };
            let r = b.reversed();
            found.insert(if r < b { r } else { b });
            if found.len() >= limit {
                break;
            }
        }
    }
    for &next in &succ[l.index()] {
        extend_path(next, succ, pred, max_h, limit, path, used, found);
    }
    path.pop();
    used[l.var_index()] = false;
}

pub fn has_bicycle(t: &TwoSatInstance, max_h: usize) -> bool {
    !find_bicycles_limited(t, max_h, 1).is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "assignment")]
pub enum Extension {
    Assignment(Vec<bool>),
    NotExtendible,
}

/// Fixes the 0/1 part of `z` and fills the stars from the residual 2-SAT
/// instance; stars the residual never mentions become true.
pub fn extend_cover(f: &Formula, z: &CoverMap) -> Result<Extension, TwoSatError> {
    let shade = cover::shade_from_cover(f, z)?;
    let t = reduce_to_2sat(f, &shade)?;
    let Some(sol) = solve_2sat(&t) else {
        return Ok(Extension::NotExtendible);
    };
    let mut mentioned = vec![false; f.n_vars()];
    for (a, b) in &t.clauses {
        mentioned[a.var_index()] = true;
        mentioned[b.var_index()] = true;
    }
    let sigma: Vec<bool> = z
        .0
        .iter()
        .enumerate()
        .map(|(v, val)| match val {
            CoverValue::One => true,
            CoverValue::Zero => false,
            CoverValue::Star => !mentioned[v] || sol[v],
        })
        .collect();
    if let Some(i) = f.clauses().iter().position(|c| !c.iter().any(|l| l.eval(&sigma))) {
        return Err(TwoSatError::Unsatisfied { clause: i });
    }
    Ok(Extension::Assignment(sigma))
}

/// Whether some satisfying assignment agrees with `z` on its 0/1 part.
pub fn extendible_by_brute_force(f: &Formula, z: &CoverMap, cap: usize) -> Result<bool, TwoSatError> {
    if z.len() != f.n_vars() {
        return Err(CoverError::DomainMismatch { expected: f.n_vars(), found: z.len() }.into());
    }
    let stars: Vec<usize> = (0..z.len()).filter(|&v| z.0[v] == CoverValue::Star).collect();
    if stars.len() > cap {
        return Err(TwoSatError::CapExceeded { n: stars.len(), cap });
    }
    let mut a: Vec<bool> = z.0.iter().map(|&v| v == CoverValue::One).collect();
    for bits in 0u64..1 << stars.len() {
        for (i, &v) in stars.iter().enumerate() {
            a[v] = bits >> i & 1 == 1;
        }
        if f.satisfied_by(&a) {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{enumerate_covers, shade_from_cover};
    use crate::formula::gen_uniform;
    use crate::par::Exec;
    use proptest::prelude::*;

    fn random_2sat(n: usize, m: usize, seed: u64) -> TwoSatInstance {
        let f = gen_uniform(2, n, m, seed).unwrap();
        TwoSatInstance::new(n, f.clauses().iter().map(|c| (c[0], c[1])).collect())
    }

    #[test]
    fn small_instances() {
        let t = TwoSatInstance::from_dimacs_pairs(2, &[(1, 2), (-1, 2)]);
        let a = solve_2sat(&t).unwrap();
        assert!(a[1]);
        let unsat = TwoSatInstance::from_dimacs_pairs(2, &[(1, 2), (1, -2), (-1, 2), (-1, -2)]);
        assert!(solve_2sat(&unsat).is_none());
        assert!(!find_bicycles(&unsat, DEFAULT_MAX_H).is_empty());
        assert!(find_bicycles(&unsat, DEFAULT_MAX_H).iter().all(|b| b.is_valid_in(&unsat)));
        assert!(solve_2sat(&TwoSatInstance::new(3, vec![])).is_some());
        assert!(find_bicycles(&TwoSatInstance::from_dimacs_pairs(2, &[(1, 2)]), DEFAULT_MAX_H).is_empty());
    }

    #[test]
    fn reduction() {
        let f = Formula::from_dimacs_clauses(3, &[&[1, 2, 3]]).unwrap();
        let s = shade_from_cover(&f, &CoverMap::all_star(3)).unwrap();
        let t = reduce_to_2sat(&f, &s).unwrap();
        assert_eq!(t.clauses, vec![(Lit::new(1, true), Lit::new(2, true))]);
        assert!(reduce_to_2sat(&f, &Shade(vec![Color::Blue; 3])).is_err());
        let g = Formula::from_dimacs_clauses(2, &[&[1, -2], &[-1, 2]]).unwrap();
        let s = shade_from_cover(&g, &CoverMap::parse("11").unwrap()).unwrap();
        assert!(reduce_to_2sat(&g, &s).unwrap().clauses.is_empty());
    }

    #[test]
    fn extension() {
        let f = Formula::from_dimacs_clauses(3, &[&[1, 2, 3]]).unwrap();
        match extend_cover(&f, &CoverMap::all_star(3)).unwrap() {
            Extension::Assignment(a) => assert!(f.satisfied_by(&a)),
            Extension::NotExtendible => panic!("all-star cover extends"),
        }
        assert!(extend_cover(&f, &CoverMap::parse("100").unwrap()).is_err());
        let g = Formula::from_dimacs_clauses(2, &[&[1, -2], &[-1, 2]]).unwrap();
        assert_eq!(
            extend_cover(&g, &CoverMap::parse("11").unwrap()).unwrap(),
            Extension::Assignment(vec![true, true])
        );
    }

    #[test]
    fn star_residual_can_be_unsat() {
        // Every 2-clause of the UNSAT square appears as the first two greens
        // of a 3-clause whose third literal is x3, and x3 is starred too.
        let f = Formula::from_dimacs_clauses(
            3,
            &[&[1, 2, 3], &[1, -2, 3], &[-1, 2, 3], &[-1, -2, 3], &[-3, -3, -3]],
        )
        .unwrap();
        let covers = enumerate_covers(&f, 16, Exec::Sequential).unwrap();
        for z in covers {
            let ext = extend_cover(&f, &z).unwrap();
            let brute = extendible_by_brute_force(&f, &z, 20).unwrap();
            if let Extension::Assignment(a) = &ext {
                assert!(f.satisfied_by(a));
                assert!(brute);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn scc_matches_brute_force(n in 1usize..5, m in 0usize..10, seed: u64) {
            let t = random_2sat(n, m, seed);
            let s = solve_2sat(&t);
            prop_assert_eq!(s.is_some(), brute_force_2sat(&t).is_some());
            if let Some(a) = s { prop_assert!(t.satisfied_by(&a)); }
        }

        #[test]
        fn unsat_has_bicycle(n in 1usize..6, m in 0usize..12, seed: u64) {
            let t = random_2sat(n, m, seed);
            let bikes = find_bicycles(&t, 2 * n);
            prop_assert!(bikes.iter().all(|b| b.is_valid_in(&t)));
            if solve_2sat(&t).is_none() { prop_assert!(!bikes.is_empty()); }
        }
    }
}
