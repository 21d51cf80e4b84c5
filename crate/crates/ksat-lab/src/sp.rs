//! SP signatures, the Λ map, literal/clause type systems and the Poisson
//! degree ensemble.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};
use statrs::distribution::{Discrete, Poisson};
use thiserror::Error;

use crate::cover::{Color, Shade};
use crate::formula::{degree_profile, Formula, Lit};
use crate::pruning::{check_degree_bounds_with, PruneOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpError {
    #[error("delta {delta} is outside the pruned regime for k = {k}")]
    DeltaOutOfRegime { k: usize, delta: i64 },
    #[error("blue mass is negative at slot {0}")]
    NegativeBlue(usize),
    #[error("{count} literal degrees lie outside the pruning window (first: {first} with degree {degree}); prune first")]
    DegreeBound { count: usize, first: String, degree: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shade length {got} does not match {expected} clause slots")]
    ShadeLength { got: usize, expected: usize },
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// SP prediction over {1, 0, *} for one literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub p1: BigRational,
    pub p0: BigRational,
    pub pstar: BigRational,
}

impl Signature {
    pub fn f64s(&self) -> [f64; 3] {
        [rat_f64(&self.p1), rat_f64(&self.p0), rat_f64(&self.pstar)]
    }

    /// The signature of the negated literal.
    pub fn negate(&self) -> Signature {
        Signature { p1: self.p0.clone(), p0: self.p1.clone(), pstar: self.pstar.clone() }
    }

    pub fn to_json(&self) -> Value {
        let [a, b, c] = self.f64s();
        json!({
            "p1": a, "p0": b, "pstar": c,
            "exact": {"p1": self.p1.to_string(), "p0": self.p0.to_string(), "pstar": self.pstar.to_string()},
        })
    }
}

/// Largest |δ| accepted by [`sp_marginal`]: 2·k³·2^{k/2}.
pub fn delta_regime(k: usize) -> f64 {
    2.0 * (k as f64).powi(3) * (k as f64 / 2.0).exp2()
}

/// p1 = 1/2 + δ/2^{k+1} − 2^{−k−2}, p0 = 1/2 − δ/2^{k+1} − 2^{−k−2}, p* = 2^{−k−1}.
pub fn sp_marginal(k: usize, delta: i64) -> Result<Signature, SpError> {
    if k == 0 || k > 60 {
        return Err(SpError::InvalidParameter(format!("k = {k}")));
    }
    if delta.unsigned_abs() as f64 > delta_regime(k) {
        return Err(SpError::DeltaOutOfRegime { k, delta });
    }
    let den = BigInt::one() << (k + 2);
    let base = (BigInt::one() << (k + 1)) - 1;
    let p1 = BigRational::new(&base + 2 * delta, den.clone());
    let p0 = BigRational::new(&base - 2 * delta, den.clone());
    if p1.is_negative() || p0.is_negative() {
        return Err(SpError::DeltaOutOfRegime { k, delta });
    }
    Ok(Signature { p1, p0, pstar: BigRational::new(BigInt::from(2), den) })
}

/// Clone distribution over {r, b, g, y}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CloneDist {
    pub r: BigRational,
    pub b: BigRational,
    pub g: BigRational,
    pub y: BigRational,
}

impl CloneDist {
    pub fn get(&self, c: Color) -> &BigRational {
        match c {
            Color::Red => &self.r,
            Color::Blue => &self.b,
            Color::Green => &self.g,
            Color::Yellow => &self.y,
        }
    }

    pub fn f64s(&self) -> DistF {
        DistF { r: rat_f64(&self.r), b: rat_f64(&self.b), g: rat_f64(&self.g), y: rat_f64(&self.y) }
    }

    pub fn fingerprint(&self) -> String {
        format!("{},{},{},{}", self.r, self.b, self.g, self.y)
    }

    pub fn sum(&self) -> BigRational {
        &self.r + &self.b + &self.g + &self.y
    }

    fn scale(&self, s: &BigRational) -> CloneDist {
        CloneDist { r: &self.r * s, b: &self.b * s, g: &self.g * s, y: &self.y * s }
    }

    fn add(&self, o: &CloneDist) -> CloneDist {
        CloneDist { r: &self.r + &o.r, b: &self.b + &o.b, g: &self.g + &o.g, y: &self.y + &o.y }
    }

    fn zero() -> CloneDist {
        CloneDist { r: BigRational::zero(), b: BigRational::zero(), g: BigRational::zero(), y: BigRational::zero() }
    }
}

/// Float mirror of a [`CloneDist`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistF {
    pub r: f64,
    pub b: f64,
    pub g: f64,
    pub y: f64,
}

impl DistF {
    /// Mass of {r, b, g}: the clone's literal is not 0.
    pub fn p(&self) -> f64 {
        self.r + self.b + self.g
    }

    /// Cyan mass b + g.
    pub fn c(&self) -> f64 {
        self.b + self.g
    }
}

/// Λ: clause signature tuple → per-slot clone distributions.
pub fn lambda_map(sigs: &[Signature]) -> Result<Vec<CloneDist>, SpError> {
    let kappa = sigs.len();
    // prefix/suffix products of p0 so each slot gets ∏_{j'≠j} p0_{j'}
    let mut prefix = vec![BigRational::one(); kappa + 1];
    for j in 0..kappa {
        prefix[j + 1] = &prefix[j] * &sigs[j].p0;
    }
    let mut suffix = vec![BigRational::one(); kappa + 1];
    for j in (0..kappa).rev() {
        suffix[j] = &suffix[j + 1] * &sigs[j].p0;
    }
    let mut out = Vec::with_capacity(kappa);
    for (j, s) in sigs.iter().enumerate() {
        let others = &prefix[j] * &suffix[j + 1];
        let r = (&s.p1 + &s.pstar) * others;
        let b = &s.p1 - &r;
        if b.is_negative() {
            return Err(SpError::NegativeBlue(j));
        }
        out.push(CloneDist { r, b, g: s.pstar.clone(), y: s.p0.clone() });
    }
    Ok(out)
}

/// Float version of [`lambda_map`] for streamed ensembles. Returns (r, p, y) per slot.
pub fn lambda_map_f64(p1: &[f64], p0: &[f64], pstar: &[f64], out: &mut Vec<(f64, f64, f64)>) {
    out.clear();
    let kappa = p1.len();
    let mut prefix = 1.0;
    let mut suffix = vec![1.0; kappa + 1];
    for j in (0..kappa).rev() {
        suffix[j] = suffix[j + 1] * p0[j];
    }
    for j in 0..kappa {
        let r = (p1[j] + pstar[j]) * prefix * suffix[j + 1];
        out.push((r, p1[j] + pstar[j], p0[j]));
        prefix *= p0[j];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeMode {
    /// Keys include the full clone-distribution tuples of l and ¬l.
    Full,
    /// Keys are the degree pair only; clone distributions are averaged per type.
    DegreePair,
}

#[derive(Debug, Clone)]
pub struct CloneClass {
    pub dist: CloneDist,
    pub f: DistF,
    /// Number of clones of each literal of the type in this class.
    pub mult: u32,
}

#[derive(Debug, Clone)]
pub struct LiteralType {
    pub key: String,
    pub d_pos: u32,
    pub d_neg: u32,
    pub signature: Signature,
    pub classes: Vec<CloneClass>,
    /// Index of ¬t.
    pub negation: usize,
    /// n_t; absent for ensembles.
    pub count: Option<usize>,
    pub weight: f64,
    pub weight_exact: Option<BigRational>,
}

impl LiteralType {
    /// (t^0, t^1, t^*).
    pub fn sig_f64(&self) -> (f64, f64, f64) {
        let [p1, p0, ps] = self.signature.f64s();
        (p0, p1, ps)
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub literal_type: usize,
    pub class: usize,
    pub dist: CloneDist,
    pub f: DistF,
}

#[derive(Debug, Clone)]
pub struct ClauseType {
    pub key: String,
    pub slots: Vec<Slot>,
    pub count: Option<usize>,
    pub weight: f64,
    pub weight_exact: Option<BigRational>,
}

/// Where each literal, clone and clause of a concrete formula landed.
#[derive(Debug, Clone)]
pub struct TypeAssignment {
    /// Indexed by `Lit::index()`.
    pub literal_type: Vec<usize>,
    /// Class of each clause slot (flattened slot order).
    pub slot_class: Vec<usize>,
    pub clause_type: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TypeSystem {
    pub k: usize,
    /// Nominal density used for the degree window.
    pub r: f64,
    /// m/n.
    pub density: f64,
    pub density_exact: Option<BigRational>,
    pub n_vars: Option<usize>,
    pub n_clauses: Option<usize>,
    pub mode: TypeMode,
    pub literal_types: Vec<LiteralType>,
    pub clause_types: Vec<ClauseType>,
    pub assignment: Option<TypeAssignment>,
    /// Probability mass dropped by truncation (ensembles only).
    pub truncation_error: f64,
}

impl TypeSystem {
    /// (clause type, slot) pairs attached to each (literal type, class).
    pub fn incidence(&self) -> Vec<Vec<Vec<(usize, usize)>>> {
        let mut inc: Vec<Vec<Vec<(usize, usize)>>> =
            self.literal_types.iter().map(|t| vec![Vec::new(); t.classes.len()]).collect();
        for (li, l) in self.clause_types.iter().enumerate() {
            for (j, s) in l.slots.iter().enumerate() {
                inc[s.literal_type][s.class].push((li, j));
            }
        }
        inc
    }

    /// Checks Σπ_t = Σπ_ℓ = 1 (exactly when exact weights exist), incidence and
    /// flow balance: Σ_{(ℓ,j)∈∂(t,c)} m_ℓ = n_t·mult_c.
    pub fn validate(&self) -> Result<(), String> {
        let st: f64 = self.literal_types.iter().map(|t| t.weight).sum();
        let sl: f64 = self.clause_types.iter().map(|l| l.weight).sum();
        if (st - 1.0).abs() > 1e-12 || (sl - 1.0).abs() > 1e-12 {
            return Err(format!("weights sum to {st} and {sl}"));
        }
        if let (Some(_), true) = (
            self.literal_types.first().and_then(|t| t.weight_exact.as_ref()),
            self.clause_types.iter().all(|l| l.weight_exact.is_some()),
        ) {
            let st: BigRational = self.literal_types.iter().filter_map(|t| t.weight_exact.clone()).sum();
            let sl: BigRational = self.clause_types.iter().filter_map(|l| l.weight_exact.clone()).sum();
            if !st.is_one() || !sl.is_one() {
                return Err("exact weights do not sum to 1".into());
            }
        }
        for (i, t) in self.literal_types.iter().enumerate() {
            let nt = &self.literal_types[t.negation];
            if nt.negation != i || nt.d_pos != t.d_neg || nt.d_neg != t.d_pos {
                return Err(format!("negation of type {i} is inconsistent"));
            }
            // TY2
            if t.signature.p1 != nt.signature.p0 || t.signature.pstar != nt.signature.pstar {
                return Err(format!("type {i} and its negation disagree on the signature"));
            }
            let mult: u32 = t.classes.iter().map(|c| c.mult).sum();
            if mult != t.d_pos {
                return Err(format!("type {i} has {mult} clones in classes, degree {}", t.d_pos));
            }
            // TY1
            for c in &t.classes {
                if &c.dist.r + &c.dist.b != t.signature.p1 || c.dist.y != t.signature.p0 || c.dist.g != t.signature.pstar {
                    return Err(format!("type {i} has a class off its signature"));
                }
            }
        }
        let inc = self.incidence();
        let m_over_n = self.density;
        for (ti, t) in self.literal_types.iter().enumerate() {
            for (c, class) in t.classes.iter().enumerate() {
                let flow: f64 = inc[ti][c].iter().map(|&(l, _)| self.clause_types[l].weight * m_over_n).sum();
                let want = 2.0 * t.weight * class.mult as f64;
                if (flow - want).abs() > 1e-9 * want.max(1e-300) {
                    return Err(format!("flow imbalance at type {ti} class {c}: {flow} vs {want}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let lits: Vec<Value> = self
            .literal_types
            .iter()
            .map(|t| {
                json!({
                    "key": t.key,
                    "d_pos": t.d_pos,
                    "d_neg": t.d_neg,
                    "negation": t.negation,
                    "count": t.count,
                    "weight": t.weight,
                    "weight_exact": t.weight_exact.as_ref().map(|w| w.to_string()),
                    "signature": t.signature.to_json(),
                    "classes": t.classes.iter().map(|c| json!({
                        "mult": c.mult,
                        "dist": [c.f.r, c.f.b, c.f.g, c.f.y],
                        "exact": [c.dist.r.to_string(), c.dist.b.to_string(), c.dist.g.to_string(), c.dist.y.to_string()],
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let clauses: Vec<Value> = self
            .clause_types
            .iter()
            .map(|l| {
                json!({
                    "key": l.key,
                    "width": l.slots.len(),
                    "count": l.count,
                    "weight": l.weight,
                    "weight_exact": l.weight_exact.as_ref().map(|w| w.to_string()),
                    "slots": l.slots.iter().map(|s| json!({
                        "literal_type": s.literal_type,
                        "class": s.class,
                        "dist": [s.f.r, s.f.b, s.f.g, s.f.y],
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "k": self.k,
            "r": self.r,
            "density": self.density,
            "n_vars": self.n_vars,
            "n_clauses": self.n_clauses,
            "mode": match self.mode { TypeMode::Full => "full", TypeMode::DegreePair => "degree-pair" },
            "truncation_error": self.truncation_error,
            "literal_types": lits,
            "clause_types": clauses,
        })
    }
}

impl fmt::Display for TypeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} literal types, {} clause types", self.literal_types.len(), self.clause_types.len())
    }
}

fn build_class(dist: CloneDist, mult: u32) -> CloneClass {
    let f = dist.f64s();
    CloneClass { dist, f, mult }
}

fn make_slot(literal_type: usize, class: usize, dist: CloneDist) -> Slot {
    let f = dist.f64s();
    Slot { literal_type, class, dist, f }
}

/// Builds the type system of a pruned formula. Fails if a literal degree
/// leaves the pruning window (`opts.window` overrides its half-width).
pub fn assign_types(
    f: &Formula,
    k: usize,
    r: Rational64,
    mode: TypeMode,
    opts: &PruneOptions,
) -> Result<TypeSystem, SpError> {
    let bounds = check_degree_bounds_with(f, k, r, opts);
    if let Some(&(l, d)) = bounds.violators.first() {
        return Err(SpError::DegreeBound { count: bounds.violators.len(), first: l.to_string(), degree: d });
    }
    let n = f.n_vars();
    if n == 0 {
        return Err(SpError::InvalidParameter("formula has no variables".into()));
    }
    let deg = degree_profile(f);
    let n_lits = 2 * n;
    let mut sigs = Vec::with_capacity(n_lits);
    for i in 0..n_lits {
        let l = Lit::from_index(i);
        let delta = deg.get(l) as i64 - deg.get(l.negate()) as i64;
        sigs.push(sp_marginal(k, delta)?);
    }

    // per-slot clone distributions, clause by clause
    let mut slot_dists: Vec<CloneDist> = Vec::with_capacity(f.n_slots());
    for c in f.clauses() {
        let cs: Vec<Signature> = c.iter().map(|l| sigs[l.index()].clone()).collect();
        slot_dists.extend(lambda_map(&cs)?);
    }
    // clones of each literal in occurrence order
    let mut clones: Vec<Vec<usize>> = vec![Vec::new(); n_lits];
    for (s, l) in f.slots().enumerate() {
        clones[l.index()].push(s);
    }

    let own_fps = |i: usize| -> Vec<String> {
        let mut v: Vec<String> = clones[i].iter().map(|&s| slot_dists[s].fingerprint()).collect();
        v.sort();
        v
    };
    let key_of = |i: usize| -> String {
        let l = Lit::from_index(i);
        let (dp, dn) = (deg.get(l), deg.get(l.negate()));
        match mode {
            TypeMode::DegreePair => format!("{dp}:{dn}"),
            TypeMode::Full => format!("{dp}:{dn}|{}|{}", own_fps(i).join(";"), own_fps(l.negate().index()).join(";")),
        }
    };
    let keys: Vec<String> = (0..n_lits).map(key_of).collect();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for k in &keys {
        index.entry(k.as_str()).or_insert(0);
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let literal_type: Vec<usize> = keys.iter().map(|k| index[k.as_str()]).collect();
    let n_types = index.len();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_types];
    for (i, &t) in literal_type.iter().enumerate() {
        members[t].push(i);
    }
    let two_n = BigInt::from(2 * n);
    let mut slot_class = vec![0usize; f.n_slots()];
    let mut literal_types = Vec::with_capacity(n_types);
    for (t, key) in index.keys().enumerate() {
        let rep = members[t][0];
        let l = Lit::from_index(rep);
        let classes = match mode {
            TypeMode::Full => {
                let mut counts: BTreeMap<String, (CloneDist, u32)> = BTreeMap::new();
                for &s in &clones[rep] {
                    counts.entry(slot_dists[s].fingerprint()).or_insert((slot_dists[s].clone(), 0)).1 += 1;
                }
                let order: BTreeMap<&String, usize> = counts.keys().enumerate().map(|(i, k)| (k, i)).collect();
                for &i in &members[t] {
                    for &s in &clones[i] {
                        slot_class[s] = order[&slot_dists[s].fingerprint()];
                    }
                }
                counts.into_values().map(|(d, m)| build_class(d, m)).collect()
            }
            TypeMode::DegreePair => {
                let d = deg.get(l);
                if d == 0 {
                    Vec::new()
                } else {
                    let mut sum = CloneDist::zero();
                    for &i in &members[t] {
                        for &s in &clones[i] {
                            sum = sum.add(&slot_dists[s]);
                        }
                    }
                    let total = BigRational::from_integer(BigInt::from(members[t].len() as u64 * d as u64));
                    vec![build_class(sum.scale(&total.recip()), d)]
                }
            }
        };
        let w = BigRational::new(BigInt::from(members[t].len()), two_n.clone());
        literal_types.push(LiteralType {
            key: key.to_string(),
            d_pos: deg.get(l),
            d_neg: deg.get(l.negate()),
            signature: sigs[rep].clone(),
            classes,
            negation: literal_type[l.negate().index()],
            count: Some(members[t].len()),
            weight: rat_f64(&w),
            weight_exact: Some(w),
        });
    }

    // clause types
    let offsets = f.slot_offsets();
    let mut ckeys: Vec<String> = Vec::with_capacity(f.n_clauses());
    for (i, c) in f.clauses().iter().enumerate() {
        let parts: Vec<String> = (0..c.len())
            .map(|j| {
                let s = offsets[i] + j;
                let t = literal_type[f.clauses()[i][j].index()];
                match mode {
                    TypeMode::Full => format!("{t}.{}", slot_class[s]),
                    // slot dists are determined by the literal types of the clause
                    TypeMode::DegreePair => format!("{t}"),
                }
            })
            .collect();
        ckeys.push(parts.join(","));
    }
    let mut cindex: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, k) in ckeys.iter().enumerate() {
        cindex.entry(k.as_str()).or_insert((i, 0)).1 += 1;
    }
    let order: BTreeMap<&str, usize> = cindex.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let m = f.n_clauses();
    let mut clause_types = Vec::with_capacity(cindex.len());
    for (key, &(rep, count)) in &cindex {
        let slots = (0..f.clauses()[rep].len())
            .map(|j| {
                let s = offsets[rep] + j;
                let t = literal_type[f.clauses()[rep][j].index()];
                make_slot(t, slot_class[s], slot_dists[s].clone())
            })
            .collect();
        let w = BigRational::new(BigInt::from(count), BigInt::from(m.max(1)));
        clause_types.push(ClauseType {
            key: key.to_string(),
            slots,
            count: Some(count),
            weight: rat_f64(&w),
            weight_exact: Some(w),
        });
    }
    let clause_type: Vec<usize> = ckeys.iter().map(|k| order[k.as_str()]).collect();

    Ok(TypeSystem {
        k,
        r: *r.numer() as f64 / *r.denom() as f64,
        density: m as f64 / n as f64,
        density_exact: Some(BigRational::new(BigInt::from(m), BigInt::from(n))),
        n_vars: Some(n),
        n_clauses: Some(m),
        mode,
        literal_types,
        clause_types,
        assignment: Some(TypeAssignment { literal_type, slot_class, clause_type }),
        truncation_error: 0.0,
    })
}

/// The single-type system of regular k-SAT with literal degree d: δ = 0, one
/// clone class of multiplicity d, one clause type with k identical slots.
pub fn regular_type_system(k: usize, d: u32) -> Result<TypeSystem, SpError> {
    if k < 2 || d == 0 {
        return Err(SpError::InvalidParameter(format!("k = {k}, d = {d}")));
    }
    let sig = sp_marginal(k, 0)?;
    let dists = lambda_map(&vec![sig.clone(); k])?;
    let dist = dists[0].clone();
    let t = LiteralType {
        key: format!("{d}:{d}"),
        d_pos: d,
        d_neg: d,
        signature: sig,
        classes: vec![build_class(dist.clone(), d)],
        negation: 0,
        count: None,
        weight: 1.0,
        weight_exact: Some(BigRational::one()),
    };
    let l = ClauseType {
        key: vec!["0.0"; k].join(","),
        slots: (0..k).map(|_| make_slot(0, 0, dist.clone())).collect(),
        count: None,
        weight: 1.0,
        weight_exact: Some(BigRational::one()),
    };
    Ok(TypeSystem {
        k,
        r: 2.0 * d as f64 / k as f64,
        density: 2.0 * d as f64 / k as f64,
        density_exact: Some(BigRational::new(BigInt::from(2 * d), BigInt::from(k))),
        n_vars: None,
        n_clauses: None,
        mode: TypeMode::DegreePair,
        literal_types: vec![t],
        clause_types: vec![l],
        assignment: None,
        truncation_error: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeIdentityReport {
    pub checked: usize,
    /// (clause type, slot) pairs where ℓ_j^r ≠ ℓ_j^p ∏_{j'≠j} ℓ_{j'}^y.
    pub failures: Vec<(usize, usize)>,
    /// Λ conservation failures: r + b ≠ p1, y ≠ p0 or g ≠ p*.
    pub conservation_failures: Vec<(usize, usize)>,
    pub max_dev_from_2_pow_minus_k: f64,
}

impl TypeIdentityReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty() && self.conservation_failures.is_empty()
    }
}

/// Verifies ℓ_j^r = ℓ_j^p ∏_{j'≠j} ℓ_{j'}^y in exact arithmetic for every slot.
pub fn check_type_identity(ts: &TypeSystem) -> TypeIdentityReport {
    let mut rep = TypeIdentityReport {
        checked: 0,
        failures: Vec::new(),
        conservation_failures: Vec::new(),
        max_dev_from_2_pow_minus_k: 0.0,
    };
    let target = (-(ts.k as f64)).exp2();
    for (li, l) in ts.clause_types.iter().enumerate() {
        for (j, s) in l.slots.iter().enumerate() {
            rep.checked += 1;
            let mut prod = BigRational::one();
            for (j2, s2) in l.slots.iter().enumerate() {
                if j2 != j {
                    prod *= &s2.dist.y;
                }
            }
            let p = &s.dist.r + &s.dist.b + &s.dist.g;
            if s.dist.r != p * prod {
                rep.failures.push((li, j));
            }
            let sig = &ts.literal_types[s.literal_type].signature;
            if &s.dist.r + &s.dist.b != sig.p1 || s.dist.y != sig.p0 || s.dist.g != sig.pstar || !s.dist.sum().is_one() {
                rep.conservation_failures.push((li, j));
            }
            rep.max_dev_from_2_pow_minus_k = rep.max_dev_from_2_pow_minus_k.max((s.f.r - target).abs());
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaShadeVerdict {
    pub holds: bool,
    /// Largest |count − expected| / n_t over literal (type, class, colour) cells.
    pub max_literal_dev: f64,
    /// Largest |count − expected| / m_ℓ over clause (type, slot) yellow cells.
    pub max_clause_dev: f64,
}

/// Compares the colour statistics of a shade with the type system. Literal
/// cells are aggregated per clone class (count n_t·mult·t_c^z).
pub fn is_theta_shade(f: &Formula, ts: &TypeSystem, s: &Shade, slack: f64) -> Result<ThetaShadeVerdict, SpError> {
    let asg = ts
        .assignment
        .as_ref()
        .ok_or_else(|| SpError::InvalidParameter("type system has no formula assignment".into()))?;
    if s.0.len() != f.n_slots() {
        return Err(SpError::ShadeLength { got: s.0.len(), expected: f.n_slots() });
    }
    let colors = [Color::Red, Color::Blue, Color::Green, Color::Yellow];
    let mut lit_counts: Vec<Vec<[u64; 4]>> = ts.literal_types.iter().map(|t| vec![[0; 4]; t.classes.len()]).collect();
    let mut clause_yellow: Vec<Vec<u64>> = ts.clause_types.iter().map(|l| vec![0; l.slots.len()]).collect();
    let offsets = f.slot_offsets();
    for (i, c) in f.clauses().iter().enumerate() {
        let lt = asg.clause_type[i];
        for (j, l) in c.iter().enumerate() {
            let slot = offsets[i] + j;
            let col = s.0[slot];
            let ci = colors.iter().position(|&z| z == col).unwrap_or(0);
            lit_counts[asg.literal_type[l.index()]][asg.slot_class[slot]][ci] += 1;
            if col == Color::Yellow {
                clause_yellow[lt][j] += 1;
            }
        }
    }
    let mut max_lit: f64 = 0.0;
    for (t, lt) in ts.literal_types.iter().enumerate() {
        let nt = lt.count.unwrap_or(0) as f64;
        for (c, class) in lt.classes.iter().enumerate() {
            for (zi, &z) in colors.iter().enumerate() {
                let expected = nt * class.mult as f64 * rat_f64(class.dist.get(z));
                let dev = (lit_counts[t][c][zi] as f64 - expected).abs() / nt.max(1.0);
                max_lit = max_lit.max(dev);
            }
        }
    }
    let mut max_cl: f64 = 0.0;
    for (li, l) in ts.clause_types.iter().enumerate() {
        let ml = l.count.unwrap_or(0) as f64;
        for (j, slot) in l.slots.iter().enumerate() {
            let dev = (clause_yellow[li][j] as f64 - ml * slot.f.y).abs() / ml.max(1.0);
            max_cl = max_cl.max(dev);
        }
    }
    // a little room for the integer rounding of exact targets
    let eps = 1e-12;
    Ok(ThetaShadeVerdict {
        holds: max_lit <= slack + eps && max_cl <= slack + eps,
        max_literal_dev: max_lit,
        max_clause_dev: max_cl,
    })
}

/// Random k-SAT literal degrees: independent Po(kr/2) pairs (d+, d−), truncated
/// to the pruning window and to where the pmf is numerically visible.
#[derive(Debug, Clone)]
pub struct PoissonEnsemble {
    pub k: usize,
    pub r: f64,
    pub lambda: f64,
    pub d_min: u32,
    /// Renormalized pmf on d_min..d_min+len.
    pub pmf: Vec<f64>,
    /// Size-biased pmf d·P(d)/E[d] on the same range.
    pub size_biased: Vec<f64>,
    /// Half-width of the pruning window.
    pub window: f64,
    /// 1 − (retained one-sided mass)², before renormalization.
    pub truncation_error: f64,
    pub point_mass: bool,
}

/// Relative pmf level below which degrees are dropped.
const PMF_FLOOR: f64 = 1e-17;

impl PoissonEnsemble {
    pub fn new(k: usize, r: f64, window: Option<f64>) -> Result<PoissonEnsemble, SpError> {
        if k < 3 || !(r > 0.0) || !r.is_finite() {
            return Err(SpError::InvalidParameter(format!("k = {k}, r = {r}")));
        }
        let lambda = k as f64 * r / 2.0;
        let window = window.unwrap_or((k as f64).powi(3) * (k as f64 / 2.0).exp2());
        let po = Poisson::new(lambda).map_err(|e| SpError::InvalidParameter(e.to_string()))?;
        let lo = (lambda - window).ceil().max(0.0) as u64;
        let hi = (lambda + window).floor() as u64;
        let mode = lambda.floor() as u64;
        let peak = po.pmf(mode.clamp(lo, hi));
        let mut d_min = mode.clamp(lo, hi);
        while d_min > lo && po.pmf(d_min - 1) >= PMF_FLOOR * peak {
            d_min -= 1;
        }
        let mut d_max = mode.clamp(lo, hi);
        while d_max < hi && po.pmf(d_max + 1) >= PMF_FLOOR * peak {
            d_max += 1;
        }
        let mut pmf: Vec<f64> = (d_min..=d_max).map(|d| po.pmf(d)).collect();
        let mass: f64 = pmf.iter().sum();
        for p in &mut pmf {
            *p /= mass;
        }
        let mean: f64 = pmf.iter().enumerate().map(|(i, p)| (d_min + i as u64) as f64 * p).sum();
        let size_biased = pmf.iter().enumerate().map(|(i, p)| (d_min + i as u64) as f64 * p / mean).collect();
        Ok(PoissonEnsemble {
            k,
            r,
            lambda,
            d_min: d_min as u32,
            pmf,
            size_biased,
            window,
            truncation_error: (1.0 - mass * mass).max(0.0),
            point_mass: false,
        })
    }

    /// Every literal has degrees (d, d); equals the regular single-type system.
    pub fn point_mass(k: usize, d: u32) -> PoissonEnsemble {
        PoissonEnsemble {
            k,
            r: 2.0 * d as f64 / k as f64,
            lambda: d as f64,
            d_min: d,
            pmf: vec![1.0],
            size_biased: vec![1.0],
            window: 0.0,
            truncation_error: 0.0,
            point_mass: true,
        }
    }

    pub fn degrees(&self) -> std::ops::Range<u32> {
        self.d_min..self.d_min + self.pmf.len() as u32
    }

    pub fn prob(&self, d: u32) -> f64 {
        d.checked_sub(self.d_min).and_then(|i| self.pmf.get(i as usize)).copied().unwrap_or(0.0)
    }

    /// Signature floats (p1, p0, p*) at δ, computed without the regime check.
    pub fn signature_f64(&self, delta: i64) -> (f64, f64, f64) {
        let k = self.k as i32;
        let a = 0.5 - (-(k + 2) as f64).exp2();
        let b = delta as f64 * (-(k + 1) as f64).exp2();
        (a + b, a - b, (-(k + 1) as f64).exp2())
    }

    /// s = E_ρ[ϑ^0] over the size-biased slot law.
    pub fn mean_theta0(&self) -> f64 {
        let mean_neg: f64 = self.degrees().map(|d| d as f64 * self.prob(d)).sum();
        let mean_pos_sb: f64 = self.degrees().zip(&self.size_biased).map(|(d, p)| d as f64 * p).sum();
        let k = self.k as i32;
        0.5 - (-(k + 2) as f64).exp2() - (mean_pos_sb - mean_neg) * (-(k + 1) as f64).exp2()
    }

    /// Expands the ensemble to a type system when the clause tuple count stays
    /// under `cap`. Only the point mass yields exact weights.
    pub fn materialize(&self, cap: usize) -> Result<TypeSystem, SpError> {
        if self.point_mass {
            return regular_type_system(self.k, self.d_min);
        }
        let nd = self.pmf.len();
        let pairs = nd * nd;
        let tuples = (pairs as f64).powi(self.k as i32);
        if tuples > cap as f64 {
            return Err(SpError::InvalidParameter(format!("{tuples:.3e} clause types exceed the cap {cap}")));
        }
        Err(SpError::InvalidParameter("materializing non-degenerate ensembles is not supported".into()))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "k": self.k,
            "r": self.r,
            "lambda": self.lambda,
            "d_min": self.d_min,
            "d_max": self.d_min as usize + self.pmf.len() - 1,
            "window": self.window,
            "truncation_error": self.truncation_error,
            "mean_theta0": self.mean_theta0(),
            "point_mass": self.point_mass,
        })
    }
}
