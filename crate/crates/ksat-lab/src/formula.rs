//! k-CNF formulas, random generators and DIMACS I/O.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("clone/slot count mismatch: {clones} literal clones vs {slots} clause slots")]
    CloneSlotMismatch { clones: u64, slots: u64 },
    #[error("2*n*d = {clones} clones is not divisible by k = {k}")]
    NotDivisible { clones: u64, k: usize },
    #[error("literal {lit} out of range for {n_vars} variables")]
    LiteralOutOfRange { lit: i64, n_vars: usize },
    #[error("empty clause at index {0}")]
    EmptyClause(usize),
    #[error("DIMACS line {line}: {msg}")]
    Dimacs { line: usize, msg: String },
    #[error("DIMACS: last clause is missing its terminating 0")]
    MissingTerminator,
    #[error("DIMACS: header declares {declared} clauses, found {found}")]
    ClauseCountMismatch { declared: usize, found: usize },
}

/// A signed literal in DIMACS convention: `v` is x_v, `-v` is ¬x_v.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lit(i32);

impl Lit {
    /// Literal over the 1-based variable `var`.
    pub fn new(var: u32, positive: bool) -> Lit {
        assert!(var >= 1, "variables are 1-based");
        let v = var as i32;
        Lit(if positive { v } else { -v })
    }

    pub fn from_dimacs(v: i32) -> Option<Lit> {
        (v != 0).then_some(Lit(v))
    }

    /// Inverse of [`Lit::index`].
    pub fn from_index(i: usize) -> Lit {
        Lit::new((i / 2 + 1) as u32, i % 2 == 0)
    }

    pub fn dimacs(self) -> i32 {
        self.0
    }

    /// Underlying variable, 1-based.
    pub fn var(self) -> u32 {
        self.0.unsigned_abs()
    }

    /// Underlying variable as a 0-based index.
    pub fn var_index(self) -> usize {
        self.var() as usize - 1
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn negate(self) -> Lit {
        Lit(-self.0)
    }

    /// Dense index over the 2n literals: x_v ↦ 2(v−1), ¬x_v ↦ 2(v−1)+1.
    pub fn index(self) -> usize {
        2 * self.var_index() + usize::from(!self.is_positive())
    }

    /// Truth value under a 0-based assignment.
    pub fn eval(self, assignment: &[bool]) -> bool {
        assignment[self.var_index()] == self.is_positive()
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_positive() {
            write!(f, "x{}", self.var())
        } else {
            write!(f, "¬x{}", self.var())
        }
    }
}

pub type Clause = Vec<Lit>;

/// An ordered list of clauses over `n_vars` variables with nominal width `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    n_vars: usize,
    k: usize,
    clauses: Vec<Clause>,
}

impl Formula {
    pub fn new(n_vars: usize, k: usize, clauses: Vec<Clause>) -> Result<Formula, FormulaError> {
        for (i, c) in clauses.iter().enumerate() {
            if c.is_empty() {
                return Err(FormulaError::EmptyClause(i));
            }
            if let Some(l) = c.iter().find(|l| l.var() as usize > n_vars) {
                return Err(FormulaError::LiteralOutOfRange { lit: l.dimacs() as i64, n_vars });
            }
        }
        Ok(Formula { n_vars, k, clauses })
    }

    /// Builds from DIMACS-style integer clauses. Nominal width is the widest clause.
    pub fn from_dimacs_clauses(n_vars: usize, clauses: &[&[i32]]) -> Result<Formula, FormulaError> {
        let mut cs = Vec::with_capacity(clauses.len());
        for (i, c) in clauses.iter().enumerate() {
            let lits: Option<Vec<Lit>> = c.iter().map(|&v| Lit::from_dimacs(v)).collect();
            cs.push(lits.ok_or(FormulaError::EmptyClause(i))?);
        }
        let k = cs.iter().map(Vec::len).max().unwrap_or(0);
        Formula::new(n_vars, k, cs)
    }

    pub fn empty(n_vars: usize, k: usize) -> Formula {
        Formula { n_vars, k, clauses: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Total number of literal slots, Σ k_i.
    pub fn n_slots(&self) -> usize {
        self.clauses.iter().map(Vec::len).sum()
    }

    /// Start offset of each clause in the flattened slot sequence.
    pub fn slot_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.clauses.len() + 1);
        let mut acc = 0;
        out.push(0);
        for c in &self.clauses {
            acc += c.len();
            out.push(acc);
        }
        out
    }

    /// Literals in clause-major, slot-major order.
    pub fn slots(&self) -> impl Iterator<Item = Lit> + '_ {
        self.clauses.iter().flatten().copied()
    }

    /// For each flattened slot, the 0-based clone index of its literal: the
    /// number of earlier occurrences of the same literal.
    pub fn clone_indices(&self) -> Vec<u32> {
        let mut seen = vec![0u32; 2 * self.n_vars];
        self.slots()
            .map(|l| {
                let j = seen[l.index()];
                seen[l.index()] += 1;
                j
            })
            .collect()
    }

    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses.iter().all(|c| c.iter().any(|l| l.eval(assignment)))
    }

    /// Copy with a different nominal width.
    pub fn with_k(mut self, k: usize) -> Formula {
        self.k = k;
        self
    }
}

/// Occurrence counts per literal, indexed by [`Lit::index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeProfile {
    counts: Vec<u32>,
}

impl DegreeProfile {
    pub fn from_counts(counts: Vec<u32>) -> Result<DegreeProfile, FormulaError> {
        if counts.len() % 2 != 0 {
            return Err(FormulaError::InvalidParameter("profile needs one count per literal".into()));
        }
        Ok(DegreeProfile { counts })
    }

    /// Every one of the 2n literals gets degree `d`.
    pub fn constant(n_vars: usize, d: u32) -> DegreeProfile {
        DegreeProfile { counts: vec![d; 2 * n_vars] }
    }

    pub fn n_vars(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn get(&self, l: Lit) -> u32 {
        self.counts[l.index()]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

pub fn degree_profile(f: &Formula) -> DegreeProfile {
    let mut counts = vec![0u32; 2 * f.n_vars];
    for l in f.slots() {
        counts[l.index()] += 1;
    }
    DegreeProfile { counts }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` clauses of width `k`, every slot uniform over the 2n literals.
pub fn gen_uniform(k: usize, n_vars: usize, m: usize, seed: u64) -> Result<Formula, FormulaError> {
    if k < 2 {
        return Err(FormulaError::InvalidParameter(format!("k = {k} < 2")));
    }
    if n_vars < 1 {
        return Err(FormulaError::InvalidParameter("n_vars = 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let clauses = (0..m)
        .map(|_| (0..k).map(|_| Lit::from_index(rng.random_range(0..2 * n_vars))).collect())
        .collect();
    Ok(Formula { n_vars, k, clauses })
}

/// Uniformly random matching between literal clones and clause slots.
pub fn gen_configuration(
    profile: &DegreeProfile,
    clause_lengths: &[usize],
    seed: u64,
) -> Result<Formula, FormulaError> {
    let clones = profile.total();
    let slots: u64 = clause_lengths.iter().map(|&l| l as u64).sum();
    if clones != slots {
        return Err(FormulaError::CloneSlotMismatch { clones, slots });
    }
    if clause_lengths.contains(&0) {
        return Err(FormulaError::InvalidParameter("clause length 0".into()));
    }
    let mut pool: Vec<Lit> = profile
        .counts
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(Lit::from_index(i), d as usize))
        .collect();
    let mut rng = rng_from_seed(seed);
    pool.shuffle(&mut rng);
    let mut it = pool.into_iter();
    let clauses = clause_lengths.iter().map(|&len| it.by_ref().take(len).collect()).collect();
    let k = clause_lengths.iter().copied().max().unwrap_or(0);
    Ok(Formula { n_vars: profile.n_vars(), k, clauses })
}

/// Random d-regular k-CNF: every literal occurs exactly `d` times.
pub fn gen_regular(k: usize, d: u32, n_vars: usize, seed: u64) -> Result<Formula, FormulaError> {
    if k < 1 || n_vars < 1 {
        return Err(FormulaError::InvalidParameter(format!("k = {k}, n_vars = {n_vars}")));
    }
    let clones = 2 * n_vars as u64 * d as u64;
    if clones % k as u64 != 0 {
        return Err(FormulaError::NotDivisible { clones, k });
    }
    let m = (clones / k as u64) as usize;
    let f = gen_configuration(&DegreeProfile::constant(n_vars, d), &vec![k; m], seed)?;
    Ok(f.with_k(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub assignment: Vec<bool>,
    pub w_maj: f64,
    /// Set when the formula has no literal occurrences and `w_maj` is undefined.
    pub degenerate: bool,
}

/// Sets each variable to its more frequent sign; ties are broken by the seed.
pub fn majority_vote(f: &Formula, seed: u64) -> MajorityVote {
    let p = degree_profile(f);
    let mut rng = rng_from_seed(seed);
    let mut heavy = 0u64;
    let assignment = (1..=f.n_vars as u32)
        .map(|v| {
            let pos = p.get(Lit::new(v, true));
            let neg = p.get(Lit::new(v, false));
            heavy += pos.max(neg) as u64;
            match pos.cmp(&neg) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => rng.random_bool(0.5),
            }
        })
        .collect();
    let total = p.total();
    if total == 0 {
        MajorityVote { assignment, w_maj: 0.0, degenerate: true }
    } else {
        MajorityVote { assignment, w_maj: heavy as f64 / total as f64, degenerate: false }
    }
}

fn dimacs_err(line: usize, msg: impl Into<String>) -> FormulaError {
    FormulaError::Dimacs { line, msg: msg.into() }
}

/// Parses DIMACS CNF. Clauses may span lines; `c` lines are comments and a
/// `%` line ends the clause section.
pub fn read_dimacs(input: &str) -> Result<Formula, FormulaError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses: Vec<Clause> = Vec::new();
    let mut cur: Clause = Vec::new();
    for (ln, line) in input.lines().enumerate() {
        let ln = ln + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('c') {
            continue;
        }
        if t.starts_with('%') {
            break;
        }
        if t.starts_with('p') {
            if header.is_some() {
                return Err(dimacs_err(ln, "duplicate header"));
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(dimacs_err(ln, format!("malformed header {t:?}")));
            }
            let n = parts[2].parse().map_err(|_| dimacs_err(ln, "bad variable count"))?;
            let m = parts[3].parse().map_err(|_| dimacs_err(ln, "bad clause count"))?;
            header = Some((n, m));
            continue;
        }
        let (n_vars, _) = header.ok_or_else(|| dimacs_err(ln, "clause before header"))?;
        for tok in t.split_whitespace() {
            let v: i64 = tok.parse().map_err(|_| dimacs_err(ln, format!("bad literal {tok:?}")))?;
            if v == 0 {
                if cur.is_empty() {
                    return Err(dimacs_err(ln, "empty clause"));
                }
                clauses.push(std::mem::take(&mut cur));
            } else {
                if v.unsigned_abs() as usize > n_vars {
                    return Err(FormulaError::LiteralOutOfRange { lit: v, n_vars });
                }
                cur.push(Lit(v as i32));
            }
        }
    }
    let (n_vars, m) = header.ok_or_else(|| dimacs_err(0, "missing header"))?;
    if !cur.is_empty() {
        return Err(FormulaError::MissingTerminator);
    }
    if clauses.len() != m {
        return Err(FormulaError::ClauseCountMismatch { declared: m, found: clauses.len() });
    }
    let k = clauses.iter().map(Vec::len).max().unwrap_or(0);
    Formula::new(n_vars, k, clauses)
}

pub fn write_dimacs(f: &Formula) -> String {
    let mut out = format!("p cnf {} {}\n", f.n_vars, f.clauses.len());
    for c in &f.clauses {
        for l in c {
            out.push_str(&l.dimacs().to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}
