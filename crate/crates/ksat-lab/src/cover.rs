//! Covers, shades, their validity conditions and exhaustive oracles.
//!
//! A cover assigns each variable 0, 1 or * such that every clause has a true
//! literal or two starred ones (CV1), and every true literal is the unique
//! true literal of some clause whose other literals are all false (CV2).
//! CV2 ranges over all literals, so a literal that never occurs cannot be
//! true. A shade colors each literal clone red, blue, green or yellow.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{degree_profile, Formula, Lit};
use crate::par::{self, Exec};

pub const DEFAULT_ENUM_CAP: usize = 16;
pub const DEFAULT_COUNT_CAP: usize = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverError {
    #[error("{n} variables exceeds the enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("map covers {found} variables, formula has {expected}")]
    DomainMismatch { expected: usize, found: usize },
    #[error("shade has {found} clones, formula has {expected}")]
    MissingClone { expected: usize, found: usize },
    #[error("not a cover: {0}")]
    NotACover(String),
    #[error("invalid shade: {0}")]
    InvalidShade(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoverValue {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "*")]
    Star,
}

impl CoverValue {
    pub const ALL: [CoverValue; 3] = [CoverValue::Zero, CoverValue::One, CoverValue::Star];

    pub fn negate(self) -> CoverValue {
        match self {
            CoverValue::Zero => CoverValue::One,
            CoverValue::One => CoverValue::Zero,
            CoverValue::Star => CoverValue::Star,
        }
    }

    /// Position in the [0, 1, *] ordering used by overlap matrices.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            CoverValue::Zero => '0',
            CoverValue::One => '1',
            CoverValue::Star => '*',
        }
    }

    pub fn from_symbol(c: char) -> Option<CoverValue> {
        match c {
            '0' => Some(CoverValue::Zero),
            '1' => Some(CoverValue::One),
            '*' => Some(CoverValue::Star),
            _ => None,
        }
    }
}

/// Values per variable; entry i belongs to variable i+1. Serializes as an
/// array of "0"/"1"/"*" strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoverMap(pub Vec<CoverValue>);

impl CoverMap {
    pub fn all_star(n: usize) -> CoverMap {
        CoverMap(vec![CoverValue::Star; n])
    }

    /// Parses a string such as "10*".
    pub fn parse(s: &str) -> Option<CoverMap> {
        s.chars().map(CoverValue::from_symbol).collect::<Option<Vec<_>>>().map(CoverMap)
    }

    /// Map number `idx` in base-3 order, variable 1 least significant.
    pub fn from_index(mut idx: u64, n: usize) -> CoverMap {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(CoverValue::ALL[(idx % 3) as usize]);
            idx /= 3;
        }
        CoverMap(v)
    }

    pub fn from_assignment(a: &[bool]) -> CoverMap {
        CoverMap(a.iter().map(|&b| if b { CoverValue::One } else { CoverValue::Zero }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn lit(&self, l: Lit) -> CoverValue {
        let v = self.0[l.var_index()];
        if l.is_positive() {
            v
        } else {
            v.negate()
        }
    }
}

impl fmt::Display for CoverMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.0 {
            write!(f, "{}", v.symbol())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    #[serde(rename = "r")]
    Red,
    #[serde(rename = "b")]
    Blue,
    #[serde(rename = "g")]
    Green,
    #[serde(rename = "y")]
    Yellow,
}

impl Color {
    pub fn is_cyan(self) -> bool {
        matches!(self, Color::Blue | Color::Green)
    }

    pub fn is_purple(self) -> bool {
        self != Color::Yellow
    }

    pub fn symbol(self) -> char {
        match self {
            Color::Red => 'r',
            Color::Blue => 'b',
            Color::Green => 'g',
            Color::Yellow => 'y',
        }
    }
}

/// One color per clone. Clones are stored in the formula's flattened slot
/// order; clone j of literal l is its j-th occurrence in that order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shade(pub Vec<Color>);

impl Shade {
    pub fn uniform(f: &Formula, c: Color) -> Shade {
        Shade(vec![c; f.n_slots()])
    }

    /// JSON object mapping each literal (DIMACS integer) to its clone colors.
    pub fn to_json(&self, f: &Formula) -> serde_json::Value {
        let mut per_lit: Vec<Vec<String>> = vec![Vec::new(); 2 * f.n_vars()];
        for (l, c) in f.slots().zip(&self.0) {
            per_lit[l.index()].push(c.symbol().to_string());
        }
        let mut obj = serde_json::Map::new();
        for (i, cs) in per_lit.into_iter().enumerate() {
            if !cs.is_empty() {
                obj.insert(Lit::from_index(i).dimacs().to_string(), cs.into());
            }
        }
        serde_json::Value::Object(obj)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum CoverViolation {
    /// Clause with no true literal and fewer than two stars.
    Cv1 { clause: usize },
    /// True literal that is not the true literal of any critical clause.
    Cv2 { literal: Lit },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverVerdict {
    pub is_cover: bool,
    pub violations: Vec<CoverViolation>,
}

fn check_domain(f: &Formula, z: &CoverMap) -> Result<(), CoverError> {
    if z.len() != f.n_vars() {
        return Err(CoverError::DomainMismatch { expected: f.n_vars(), found: z.len() });
    }
    Ok(())
}

/// The single true literal of a critical clause, if the clause is critical.
fn critical_literal(c: &[Lit], z: &CoverMap) -> Option<Lit> {
    let mut one = None;
    for &l in c {
        match z.lit(l) {
            CoverValue::One if one.is_none() => one = Some(l),
            CoverValue::Zero => {}
            _ => return None,
        }
    }
    one
}

pub fn critical_clauses(f: &Formula, z: &CoverMap) -> Result<Vec<usize>, CoverError> {
    check_domain(f, z)?;
    Ok((0..f.n_clauses()).filter(|&i| critical_literal(&f.clauses()[i], z).is_some()).collect())
}

fn cv1_holds(c: &[Lit], z: &CoverMap) -> bool {
    let mut stars = 0;
    for &l in c {
        match z.lit(l) {
            CoverValue::One => return true,
            CoverValue::Star => stars += 1,
            CoverValue::Zero => {}
        }
    }
    stars >= 2
}

pub fn is_cover(f: &Formula, z: &CoverMap) -> Result<CoverVerdict, CoverError> {
    check_domain(f, z)?;
    let mut violations = Vec::new();
    let mut supported = vec![false; 2 * f.n_vars()];
    for (i, c) in f.clauses().iter().enumerate() {
        if !cv1_holds(c, z) {
            violations.push(CoverViolation::Cv1 { clause: i });
        }
        if let Some(l) = critical_literal(c, z) {
            supported[l.index()] = true;
        }
    }
    for i in 0..2 * f.n_vars() {
        let l = Lit::from_index(i);
        if z.lit(l) == CoverValue::One && !supported[i] {
            violations.push(CoverViolation::Cv2 { literal: l });
        }
    }
    Ok(CoverVerdict { is_cover: violations.is_empty(), violations })
}

/// Allocation-light cover test for enumeration loops.
fn is_cover_fast(f: &Formula, z: &CoverMap, supported: &mut [bool]) -> bool {
    supported.iter_mut().for_each(|s| *s = false);
    for c in f.clauses() {
        if !cv1_holds(c, z) {
            return false;
        }
        if let Some(l) = critical_literal(c, z) {
            supported[l.index()] = true;
        }
    }
    z.0.iter().enumerate().all(|(v, val)| match val {
        CoverValue::Star => true,
        CoverValue::One => supported[2 * v],
        CoverValue::Zero => supported[2 * v + 1],
    })
}

fn pow3(n: usize, cap: usize) -> Result<u64, CoverError> {
    if n > cap || n > 40 {
        return Err(CoverError::CapExceeded { n, cap });
    }
    Ok(3u64.pow(n as u32))
}

const CHUNK: u64 = 1 << 14;

/// Every cover of `f`, in base-3 index order.
pub fn enumerate_covers(f: &Formula, cap: usize, exec: Exec) -> Result<Vec<CoverMap>, CoverError> {
    let total = pow3(f.n_vars(), cap)?;
    let n = f.n_vars();
    let chunks = par::map_chunks(exec, total, CHUNK, |lo, hi| {
        let mut supported = vec![false; 2 * n];
        (lo..hi)
            .map(|i| CoverMap::from_index(i, n))
            .filter(|z| is_cover_fast(f, z, &mut supported))
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

pub fn count_covers(f: &Formula, cap: usize, exec: Exec) -> Result<u64, CoverError> {
    let total = pow3(f.n_vars(), cap)?;
    let n = f.n_vars();
    let counts = par::map_chunks(exec, total, CHUNK, |lo, hi| {
        let mut supported = vec![false; 2 * n];
        (lo..hi).filter(|&i| is_cover_fast(f, &CoverMap::from_index(i, n), &mut supported)).count() as u64
    });
    Ok(counts.into_iter().sum())
}

pub fn shade_from_cover(f: &Formula, z: &CoverMap) -> Result<Shade, CoverError> {
    let verdict = is_cover(f, z)?;
    if !verdict.is_cover {
        return Err(CoverError::NotACover(format!("{:?}", verdict.violations)));
    }
    let mut colors = Vec::with_capacity(f.n_slots());
    for c in f.clauses() {
        let critical = critical_literal(c, z).is_some();
        for &l in c {
            colors.push(match z.lit(l) {
                CoverValue::Star => Color::Green,
                CoverValue::Zero => Color::Yellow,
                CoverValue::One if critical => Color::Red,
                CoverValue::One => Color::Blue,
            });
        }
    }
    Ok(Shade(colors))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadeVerdict {
    pub valid: bool,
    pub violations: Vec<String>,
}

/// Value of each variable implied by the clone colors, or the SD1 failure.
fn shade_values(f: &Formula, s: &Shade) -> Result<Vec<CoverValue>, String> {
    let n = f.n_vars();
    // Per literal: all clones r/b, all yellow, all green. Vacuous without clones.
    let mut all_rb = vec![true; 2 * n];
    let mut all_y = vec![true; 2 * n];
    let mut all_g = vec![true; 2 * n];
    for (l, &c) in f.slots().zip(&s.0) {
        let i = l.index();
        all_rb[i] &= matches!(c, Color::Red | Color::Blue);
        all_y[i] &= c == Color::Yellow;
        all_g[i] &= c == Color::Green;
    }
    (0..n)
        .map(|v| {
            let (p, q) = (2 * v, 2 * v + 1);
            if all_g[p] && all_g[q] {
                Ok(CoverValue::Star)
            } else if all_rb[p] && all_y[q] {
                Ok(CoverValue::One)
            } else if all_y[p] && all_rb[q] {
                Ok(CoverValue::Zero)
            } else {
                Err(format!("SD1: clones of x{} and ¬x{} disagree", v + 1, v + 1))
            }
        })
        .collect()
}

/// Checks SD1, SD2, V1 and V2. SD2 applies to literals whose value under SD1 is 1.
pub fn is_valid_shade(f: &Formula, s: &Shade) -> Result<ShadeVerdict, CoverError> {
    if s.0.len() != f.n_slots() {
        return Err(CoverError::MissingClone { expected: f.n_slots(), found: s.0.len() });
    }
    let mut violations = Vec::new();
    match shade_values(f, s) {
        Err(e) => violations.push(e),
        Ok(values) => {
            let z = CoverMap(values);
            let mut has_red = vec![false; 2 * f.n_vars()];
            for (l, &c) in f.slots().zip(&s.0) {
                has_red[l.index()] |= c == Color::Red;
            }
            for i in 0..2 * f.n_vars() {
                let l = Lit::from_index(i);
                if z.lit(l) == CoverValue::One && !has_red[i] {
                    violations.push(format!("SD2: true literal {l} has no red clone"));
                }
            }
        }
    }
    let offsets = f.slot_offsets();
    for (i, _) in f.clauses().iter().enumerate() {
        let cs = &s.0[offsets[i]..offsets[i + 1]];
        let reds = cs.iter().filter(|&&c| c == Color::Red).count();
        if reds > 0 {
            let ok = reds == 1 && cs.iter().all(|&c| c == Color::Red || c == Color::Yellow);
            if !ok {
                violations.push(format!("V1: clause {i} has a red clone next to a non-yellow clone"));
            }
        } else if cs.iter().filter(|c| c.is_cyan()).count() < 2 {
            violations.push(format!("V2: clause {i} has no red and fewer than two cyan clones"));
        }
    }
    Ok(ShadeVerdict { valid: violations.is_empty(), violations })
}

/// Reads each variable's value off its first clone, or its negation's first clone.
pub fn cover_from_shade(f: &Formula, s: &Shade) -> Result<CoverMap, CoverError> {
    let verdict = is_valid_shade(f, s)?;
    if !verdict.valid {
        return Err(CoverError::InvalidShade(verdict.violations.join("; ")));
    }
    let mut first: Vec<Option<Color>> = vec![None; 2 * f.n_vars()];
    for (l, &c) in f.slots().zip(&s.0) {
        first[l.index()].get_or_insert(c);
    }
    let value = |c: Color| match c {
        Color::Red | Color::Blue => CoverValue::One,
        Color::Yellow => CoverValue::Zero,
        Color::Green => CoverValue::Star,
    };
    Ok(CoverMap(
        (0..f.n_vars())
            .map(|v| match (first[2 * v], first[2 * v + 1]) {
                (Some(c), _) => value(c),
                (None, Some(c)) => value(c).negate(),
                (None, None) => CoverValue::Star,
            })
            .collect(),
    ))
}

/// Every valid shade, found by a search over clone colorings that never
/// consults the cover definitions.
pub fn enumerate_valid_shades(f: &Formula, cap: usize) -> Result<Vec<Shade>, CoverError> {
    let n = f.n_vars();
    if n > cap {
        return Err(CoverError::CapExceeded { n, cap });
    }
    let deg = degree_profile(f);
    let slots: Vec<Lit> = f.slots().collect();
    let offsets = f.slot_offsets();
    let clause_of: Vec<usize> =
        (0..f.n_clauses()).flat_map(|i| std::iter::repeat_n(i, offsets[i + 1] - offsets[i])).collect();
    let mut out = Vec::new();
    let mut modes = vec![0u8; n];
    shade_modes(f, &deg, &slots, &offsets, &clause_of, 0, &mut modes, &mut out);
    out.sort();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn shade_modes(
    f: &Formula,
    deg: &crate::formula::DegreeProfile,
    slots: &[Lit],
    offsets: &[usize],
    clause_of: &[usize],
    v: usize,
    modes: &mut Vec<u8>,
    out: &mut Vec<Shade>,
) {
    if v == modes.len() {
        // 0: all green, 1: positive clones r/b and negative yellow, 2: the reverse.
        let mut colors: Vec<Option<Color>> = slots
            .iter()
            .map(|l| match (modes[l.var_index()], l.is_positive()) {
                (0, _) => Some(Color::Green),
                (1, true) | (2, false) => None,
                _ => Some(Color::Yellow),
            })
            .collect();
        let open: Vec<usize> = (0..slots.len()).filter(|&i| colors[i].is_none()).collect();
        fill_open(f, offsets, clause_of, &open, 0, &mut colors, out);
        return;
    }
    let x = Lit::new(v as u32 + 1, true);
    let occurs = deg.get(x) + deg.get(x.negate()) > 0;
    let choices: &[u8] = if occurs { &[0, 1, 2] } else { &[0] };
    for &m in choices {
        modes[v] = m;
        shade_modes(f, deg, slots, offsets, clause_of, v + 1, modes, out);
    }
}

fn fill_open(
    f: &Formula,
    offsets: &[usize],
    clause_of: &[usize],
    open: &[usize],
    pos: usize,
    colors: &mut Vec<Option<Color>>,
    out: &mut Vec<Shade>,
) {
    if pos == open.len() {
        let s = Shade(colors.iter().map(|c| c.expect("all clones colored")).collect());
        if is_valid_shade(f, &s).map(|v| v.valid).unwrap_or(false) {
            out.push(s);
        }
        return;
    }
    let i = open[pos];
    let c = clause_of[i];
    // A red clone needs every other clone of its clause yellow.
    let others_yellow =
        (offsets[c]..offsets[c + 1]).filter(|&j| j != i).all(|j| colors[j] == Some(Color::Yellow));
    for col in [Color::Red, Color::Blue] {
        if col == Color::Red && !others_yellow {
            continue;
        }
        colors[i] = Some(col);
        fill_open(f, offsets, clause_of, open, pos + 1, colors, out);
    }
    colors[i] = None;
}

/// 3×3 overlap over the 2N literals, rows and columns ordered [0, 1, *].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub counts: [[u64; 3]; 3],
    pub entries: [[f64; 3]; 3],
    pub delta: f64,
}

impl OverlapMatrix {
    pub fn row_sums(&self) -> [f64; 3] {
        self.entries.map(|r| r.iter().sum())
    }

    pub fn col_sums(&self) -> [f64; 3] {
        std::array::from_fn(|j| self.entries.iter().map(|r| r[j]).sum())
    }
}

pub fn overlap(z1: &CoverMap, z2: &CoverMap) -> Result<OverlapMatrix, CoverError> {
    if z1.len() != z2.len() {
        return Err(CoverError::DomainMismatch { expected: z1.len(), found: z2.len() });
    }
    let mut counts = [[0u64; 3]; 3];
    for (&a, &b) in z1.0.iter().zip(&z2.0) {
        counts[a.ordinal()][b.ordinal()] += 1;
        counts[a.negate().ordinal()][b.negate().ordinal()] += 1;
    }
    let denom = (2 * z1.len()).max(1) as f64;
    let entries = counts.map(|r| r.map(|c| c as f64 / denom));
    let diag: u64 = (0..3).map(|i| counts[i][i]).sum();
    let delta = if z1.is_empty() { 0.0 } else { 1.0 - diag as f64 / denom };
    Ok(OverlapMatrix { counts, entries, delta })
}

fn assignments<T, F>(f: &Formula, cap: usize, exec: Exec, per: F) -> Result<Vec<T>, CoverError>
where
    T: Send,
    F: Fn(&[bool]) -> Option<T> + Sync + Send,
{
    let n = f.n_vars();
    if n > cap || n > 40 {
        return Err(CoverError::CapExceeded { n, cap });
    }
    let chunks = par::map_chunks(exec, 1u64 << n, CHUNK, |lo, hi| {
        let mut a = vec![false; n];
        let mut out = Vec::new();
        for bits in lo..hi {
            for (v, x) in a.iter_mut().enumerate() {
                *x = bits >> v & 1 == 1;
            }
            if let Some(t) = per(&a) {
                out.push(t);
            }
        }
        out
    });
    Ok(chunks.into_iter().flatten().collect())
}

pub fn count_sat(f: &Formula, cap: usize, exec: Exec) -> Result<u64, CoverError> {
    Ok(assignments(f, cap, exec, |a| f.satisfied_by(a).then_some(()))?.len() as u64)
}

/// Assignments σ such that σ and its complement both satisfy `f`.
pub fn count_nae(f: &Formula, cap: usize, exec: Exec) -> Result<u64, CoverError> {
    Ok(assignments(f, cap, exec, |a| {
        let comp: Vec<bool> = a.iter().map(|x| !x).collect();
        (f.satisfied_by(a) && f.satisfied_by(&comp)).then_some(())
    })?
    .len() as u64)
}

/// Satisfying assignments whose fraction of true literal occurrences is
/// within `tol` of 1/2.
pub fn count_balanced(f: &Formula, tol: f64, cap: usize, exec: Exec) -> Result<u64, CoverError> {
    let slots = f.n_slots();
    Ok(assignments(f, cap, exec, |a| {
        if !f.satisfied_by(a) {
            return None;
        }
        let truthy = f.slots().filter(|l| l.eval(a)).count();
        let frac = if slots == 0 { 0.5 } else { truthy as f64 / slots as f64 };
        ((frac - 0.5).abs() <= tol).then_some(())
    })?
    .len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::gen_uniform;
    use proptest::prelude::*;

    fn single() -> Formula {
        Formula::from_dimacs_clauses(3, &[&[1, 2, 3]]).unwrap()
    }

    fn cm(s: &str) -> CoverMap {
        CoverMap::parse(s).unwrap()
    }

    #[test]
    fn single_clause_covers() {
        let f = single();
        // ¬x2 and ¬x3 would be true without occurring anywhere.
        let v = is_cover(&f, &cm("100")).unwrap();
        assert!(!v.is_cover);
        assert_eq!(v.violations.len(), 2);
        let v = is_cover(&f, &cm("1*0")).unwrap();
        assert!(v.violations.contains(&CoverViolation::Cv2 { literal: Lit::new(1, true) }));
        assert!(is_cover(&f, &cm("***")).unwrap().is_cover);
        assert_eq!(enumerate_covers(&f, 16, Exec::Sequential).unwrap(), vec![cm("***")]);
    }

    #[test]
    fn two_clause_and_empty() {
        let f = Formula::from_dimacs_clauses(3, &[&[1, 2, 3], &[-1, 2, 3]]).unwrap();
        assert_eq!(enumerate_covers(&f, 16, Exec::Parallel).unwrap(), vec![cm("***")]);
        assert_eq!(enumerate_covers(&Formula::empty(4, 3), 16, Exec::Parallel).unwrap(), vec![cm("****")]);
        assert!(matches!(
            enumerate_covers(&Formula::empty(17, 3), 16, Exec::Parallel),
            Err(CoverError::CapExceeded { .. })
        ));
    }

    #[test]
    fn occurring_literals_can_be_frozen() {
        // (x1 ∨ x2) ∧ (¬x1 ∨ ¬x2): both literals of both variables occur.
        let f = Formula::from_dimacs_clauses(2, &[&[1, -2], &[-1, 2]]).unwrap();
        let covers = enumerate_covers(&f, 16, Exec::Sequential).unwrap();
        assert!(covers.contains(&cm("11")));
        assert!(covers.contains(&cm("00")));
        assert!(covers.contains(&cm("**")));
    }

    #[test]
    fn critical_sets() {
        let f = single();
        assert_eq!(critical_clauses(&f, &cm("100")).unwrap(), vec![0]);
        assert!(critical_clauses(&f, &cm("***")).unwrap().is_empty());
        assert!(critical_clauses(&f, &cm("110")).unwrap().is_empty());
        let unit = Formula::from_dimacs_clauses(1, &[&[1]]).unwrap();
        assert_eq!(critical_clauses(&unit, &cm("1")).unwrap(), vec![0]);
        assert!(is_cover(&f, &cm("11")).is_err());
    }

    #[test]
    fn shades() {
        let f = Formula::from_dimacs_clauses(2, &[&[1, -2], &[-1, 2]]).unwrap();
        let s = shade_from_cover(&f, &cm("11")).unwrap();
        assert_eq!(s.0, vec![Color::Red, Color::Yellow, Color::Yellow, Color::Red]);
        assert!(is_valid_shade(&f, &s).unwrap().valid);
        assert_eq!(cover_from_shade(&f, &s).unwrap(), cm("11"));
        let g = single();
        let all_g = shade_from_cover(&g, &cm("***")).unwrap();
        assert_eq!(all_g, Shade::uniform(&g, Color::Green));
        assert_eq!(cover_from_shade(&g, &all_g).unwrap(), cm("***"));
        assert!(shade_from_cover(&g, &cm("100")).is_err());
        let blue = Formula::from_dimacs_clauses(2, &[&[1, 2]]).unwrap();
        let s = Shade(vec![Color::Blue, Color::Green]);
        assert!(!is_valid_shade(&blue, &s).unwrap().valid);
        assert!(is_valid_shade(&blue, &Shade(vec![])).is_err());
    }

    #[test]
    fn overlaps() {
        let z = cm("10*");
        assert_eq!(overlap(&z, &z).unwrap().delta, 0.0);
        let o = overlap(&cm("***"), &cm("000")).unwrap();
        assert_eq!(o.entries[2][0], 0.5);
        assert_eq!(o.entries[2][1], 0.5);
        let c = overlap(&cm("101"), &cm("010")).unwrap();
        assert_eq!(c.entries[0][1], 0.5);
        assert_eq!(c.entries[1][0], 0.5);
        assert_eq!(c.delta, 1.0);
    }

    #[test]
    fn counts() {
        let f = single();
        assert_eq!(count_sat(&f, 25, Exec::Parallel).unwrap(), 7);
        assert_eq!(count_nae(&f, 25, Exec::Parallel).unwrap(), 6);
        assert_eq!(count_balanced(&f, 0.5, 25, Exec::Parallel).unwrap(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shade_roundtrip(n in 1usize..6, m in 0usize..6, seed: u64) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            let covers = enumerate_covers(&f, 16, Exec::Sequential).unwrap();
            let shades = enumerate_valid_shades(&f, 16).unwrap();
            prop_assert_eq!(covers.len(), shades.len());
            for z in &covers {
                let s = shade_from_cover(&f, z).unwrap();
                prop_assert!(is_valid_shade(&f, &s).unwrap().valid);
                prop_assert_eq!(&cover_from_shade(&f, &s).unwrap(), z);
            }
            for s in &shades {
                let z = cover_from_shade(&f, s).unwrap();
                prop_assert_eq!(&shade_from_cover(&f, &z).unwrap(), s);
            }
        }

        #[test]
        fn satisfying_assignments_meet_cv1(n in 1usize..7, m in 0usize..8, seed: u64) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            for bits in 0u32..(1 << n) {
                let a: Vec<bool> = (0..n).map(|v| bits >> v & 1 == 1).collect();
                if !f.satisfied_by(&a) { continue; }
                let z = CoverMap::from_assignment(&a);
                let v = is_cover(&f, &z).unwrap();
                let only_cv2 = v.violations.iter().all(|x| matches!(x, CoverViolation::Cv2 { .. }));
                prop_assert!(only_cv2);
                let crit = critical_clauses(&f, &z).unwrap();
                let frozen = (0..2 * n).map(Lit::from_index).filter(|&l| z.lit(l) == CoverValue::One)
                    .all(|l| crit.iter().any(|&i| f.clauses()[i].contains(&l)));
                prop_assert_eq!(v.is_cover, frozen);
            }
        }

        #[test]
        fn nae_is_even(n in 1usize..8, m in 0usize..10, seed: u64) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            prop_assert_eq!(count_nae(&f, 25, Exec::Sequential).unwrap() % 2, 0);
        }

        #[test]
        fn overlap_properties(a in proptest::collection::vec(0u8..3, 1..12), b in proptest::collection::vec(0u8..3, 1..12)) {
            let n = a.len().min(b.len());
            let z1 = CoverMap(a[..n].iter().map(|&i| CoverValue::ALL[i as usize]).collect());
            let z2 = CoverMap(b[..n].iter().map(|&i| CoverValue::ALL[i as usize]).collect());
            let o = overlap(&z1, &z2).unwrap();
            let t = overlap(&z2, &z1).unwrap();
            let total: f64 = o.entries.iter().flatten().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for i in 0..3 { for j in 0..3 { prop_assert_eq!(o.counts[i][j], t.counts[j][i]); } }
            prop_assert!((0.0..=1.0).contains(&o.delta));
            prop_assert_eq!(overlap(&z1, &z1).unwrap().delta, 0.0);
        }

        #[test]
        fn parallel_matches_sequential(n in 1usize..8, m in 0usize..8, seed: u64) {
            let f = gen_uniform(3, n, m, seed).unwrap();
            prop_assert_eq!(enumerate_covers(&f, 16, Exec::Parallel).unwrap(),
                            enumerate_covers(&f, 16, Exec::Sequential).unwrap());
            prop_assert_eq!(count_covers(&f, 16, Exec::Parallel).unwrap(),
                            enumerate_covers(&f, 16, Exec::Sequential).unwrap().len() as u64);
        }
    }
}
