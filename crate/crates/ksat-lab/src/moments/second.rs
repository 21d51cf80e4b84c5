//! Second moment: the rate f(ω, γ) = f_ent + f_disc + f_val + f_occ of pairs
//! of shades with a prescribed overlap, its implicit parameters, the product
//! overlap and the stationarity/concavity checks around it.
//!
//! Coordinates are laid out in one flat vector (see [`OverlapLayout`]):
//! literal joints ω_t over {0,1,*}², clone joints ω_{t,c} over
//! (rr, rc, cr, ry, yr), slot joints ω_{ℓ,j} over (pp, py, yp, yy) and the
//! clause overlap γ_ℓ.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::kl::{entropy, kl, kl_split};
use super::newton::{newton, solve_near, Factor};
use super::{first_moment_rate, solve_first_moment, Dual, FirstMomentParams, MomentError, Result, Scalar};
use crate::par::{map_range, Exec};
use crate::sp::{rat_f64, TypeSystem};

const RR: usize = 0;
const RC: usize = 1;
const CR: usize = 2;
const RY: usize = 3;
const YR: usize = 4;

const PP: usize = 0;
const PY: usize = 1;
const YP: usize = 2;
const YY: usize = 3;

pub const CLONE_STATES: [&str; 5] = ["rr", "rc", "cr", "ry", "yr"];
pub const SLOT_STATES: [&str; 4] = ["pp", "py", "yp", "yy"];
const Z: [&str; 3] = ["0", "1", "*"];

/// Literal cells {0,1,*}² feeding each slot state (p = {1,*}, y = {0}).
const AGG: [&[(usize, usize)]; 4] = [&[(1, 1), (1, 2), (2, 1), (2, 2)], &[(1, 0), (2, 0)], &[(0, 1), (0, 2)], &[(0, 0)]];

fn neg(z: usize) -> usize {
    [1, 0, 2][z]
}

const SOLVE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Serialize)]
pub struct OverlapLayout {
    pub lit_base: Vec<usize>,
    pub clone_base: Vec<Vec<usize>>,
    pub slot_base: Vec<Vec<usize>>,
    pub gamma_base: Vec<usize>,
    pub widths: Vec<usize>,
    pub dim: usize,
    pub labels: Vec<String>,
}

impl OverlapLayout {
    pub fn new(ts: &TypeSystem) -> OverlapLayout {
        let mut labels = Vec::new();
        let mut lit_base = Vec::new();
        let mut clone_base = Vec::new();
        for (t, lt) in ts.literal_types.iter().enumerate() {
            lit_base.push(labels.len());
            for a in Z {
                for b in Z {
                    labels.push(format!("lit[{t}].{a}{b}"));
                }
            }
            let mut cb = Vec::new();
            for c in 0..lt.classes.len() {
                cb.push(labels.len());
                for s in CLONE_STATES {
                    labels.push(format!("clone[{t},{c}].{s}"));
                }
            }
            clone_base.push(cb);
        }
        let mut slot_base = Vec::new();
        for (l, ct) in ts.clause_types.iter().enumerate() {
            let mut sb = Vec::new();
            for j in 0..ct.slots.len() {
                sb.push(labels.len());
                for s in SLOT_STATES {
                    labels.push(format!("slot[{l},{j}].{s}"));
                }
            }
            slot_base.push(sb);
        }
        let mut gamma_base = Vec::new();
        let mut widths = Vec::new();
        for (l, ct) in ts.clause_types.iter().enumerate() {
            let k = ct.slots.len();
            gamma_base.push(labels.len());
            widths.push(k);
            for j in 0..k {
                for s in CLONE_STATES {
                    labels.push(format!("gamma[{l}].{s}[{j}]"));
                }
            }
            for j in 0..k {
                for j2 in (0..k).filter(|&j2| j2 != j) {
                    labels.push(format!("gamma[{l}].yy[{j},{j2}]"));
                }
            }
            labels.push(format!("gamma[{l}].cc"));
        }
        OverlapLayout { lit_base, clone_base, slot_base, gamma_base, widths, dim: labels.len(), labels }
    }

    pub fn gamma_len(k: usize) -> usize {
        5 * k + k * (k - 1) + 1
    }

    pub fn lit(&self, t: usize, a: usize, b: usize) -> usize {
        self.lit_base[t] + 3 * a + b
    }

    pub fn clone_at(&self, t: usize, c: usize, s: usize) -> usize {
        self.clone_base[t][c] + s
    }

    pub fn slot(&self, l: usize, j: usize, z: usize) -> usize {
        self.slot_base[l][j] + z
    }

    pub fn gamma(&self, l: usize, j: usize, s: usize) -> usize {
        self.gamma_base[l] + 5 * j + s
    }

    pub fn gamma_yy(&self, l: usize, j: usize, j2: usize) -> usize {
        self.gamma_base[l] + local_yy(self.widths[l], j, j2)
    }

    pub fn gamma_cc(&self, l: usize) -> usize {
        self.gamma_base[l] + Self::gamma_len(self.widths[l]) - 1
    }
}

fn local_yy(k: usize, j: usize, j2: usize) -> usize {
    5 * k + j * (k - 1) + if j2 > j { j2 - 1 } else { j2 }
}

#[derive(Debug, Clone)]
pub struct Overlap {
    pub layout: Arc<OverlapLayout>,
    pub x: Vec<f64>,
    /// Exact coordinates when known (the product overlap).
    pub exact: Option<Vec<BigRational>>,
}

impl Overlap {
    pub fn literal(&self, t: usize) -> &[f64] {
        let b = self.layout.lit_base[t];
        &self.x[b..b + 9]
    }

    pub fn slot(&self, l: usize, j: usize) -> &[f64] {
        let b = self.layout.slot_base[l][j];
        &self.x[b..b + 4]
    }

    pub fn gamma(&self, l: usize) -> &[f64] {
        let b = self.layout.gamma_base[l];
        &self.x[b..b + OverlapLayout::gamma_len(self.layout.widths[l])]
    }

    /// Moves by `dx`; the result has no exact coordinates.
    pub fn shifted(&self, dx: &[f64]) -> Overlap {
        Overlap { layout: self.layout.clone(), x: self.x.iter().zip(dx).map(|(a, b)| a + b).collect(), exact: None }
    }

    /// Whether every slot joint equals the aggregated literal joint exactly,
    /// i.e. f_disc = 0 with no rounding. `None` without exact coordinates.
    pub fn disc_exact_zero(&self, ts: &TypeSystem) -> Option<bool> {
        let e = self.exact.as_ref()?;
        let lay = &self.layout;
        for (l, ct) in ts.clause_types.iter().enumerate() {
            for (j, s) in ct.slots.iter().enumerate() {
                for (z, cells) in AGG.iter().enumerate() {
                    let agg = cells.iter().fold(BigRational::zero(), |acc, &(a, b)| acc + &e[lay.lit(s.literal_type, a, b)]);
                    if e[lay.slot(l, j, z)] != agg {
                        return Some(false);
                    }
                }
            }
        }
        Some(true)
    }

    pub fn to_json(&self) -> Value {
        let coords: Vec<Value> = self
            .layout
            .labels
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let mut v = json!({ "name": name, "value": self.x[i] });
                if let Some(e) = &self.exact {
                    v["exact"] = json!(e[i].to_string());
                }
                v
            })
            .collect();
        json!({ "dim": self.layout.dim, "coordinates": coords })
    }
}

fn weight_exact(w: &Option<BigRational>, what: &str) -> Result<BigRational> {
    w.clone().ok_or_else(|| MomentError::InvalidParameter(format!("{what} has no exact weight")))
}

fn signature_exact(ts: &TypeSystem, t: usize) -> [BigRational; 3] {
    let s = &ts.literal_types[t].signature;
    [s.p0.clone(), s.p1.clone(), s.pstar.clone()]
}

fn exact_product(ts: &TypeSystem, lay: &OverlapLayout) -> Vec<BigRational> {
    let mut x = vec![BigRational::zero(); lay.dim];
    for (t, lt) in ts.literal_types.iter().enumerate() {
        let s = signature_exact(ts, t);
        for a in 0..3 {
            for b in 0..3 {
                x[lay.lit(t, a, b)] = &s[a] * &s[b];
            }
        }
        for (c, class) in lt.classes.iter().enumerate() {
            let d = &class.dist;
            let cy = &d.b + &d.g;
            let v = [&d.r * &d.r, &d.r * &cy, &cy * &d.r, &d.r * &d.y, &d.y * &d.r];
            for (s, val) in v.into_iter().enumerate() {
                x[lay.clone_at(t, c, s)] = val;
            }
        }
    }
    let one = BigRational::one();
    for (l, ct) in ts.clause_types.iter().enumerate() {
        let k = ct.slots.len();
        let lr: Vec<BigRational> = ct.slots.iter().map(|s| s.dist.r.clone()).collect();
        let ly: Vec<BigRational> = ct.slots.iter().map(|s| s.dist.y.clone()).collect();
        let lp: Vec<BigRational> = ly.iter().map(|y| &one - y).collect();
        let total = lr.iter().fold(BigRational::zero(), |a, b| a + b);
        for j in 0..k {
            let v = [&lp[j] * &lp[j], &lp[j] * &ly[j], &ly[j] * &lp[j], &ly[j] * &ly[j]];
            for (z, val) in v.into_iter().enumerate() {
                x[lay.slot(l, j, z)] = val;
            }
            let ry = &lr[j] * (&one - &lp[j] - (&total - &lr[j]));
            x[lay.gamma(l, j, RR)] = &lr[j] * &lr[j];
            x[lay.gamma(l, j, RC)] = &lr[j] * (&lp[j] - &lr[j]);
            x[lay.gamma(l, j, CR)] = &lr[j] * (&lp[j] - &lr[j]);
            x[lay.gamma(l, j, YR)] = ry.clone();
            x[lay.gamma(l, j, RY)] = ry;
            for j2 in (0..k).filter(|&j2| j2 != j) {
                x[lay.gamma_yy(l, j, j2)] = &lr[j] * &lr[j2];
            }
        }
        let rest = &one - &total;
        x[lay.gamma_cc(l)] = &rest * &rest;
    }
    x
}

/// One affine relation Σ coef·x = rhs.
#[derive(Debug, Clone)]
pub struct AffineRow {
    pub coefs: Vec<(usize, BigRational)>,
    pub rhs: BigRational,
    pub label: String,
}

impl AffineRow {
    fn eval_exact(&self, x: &[BigRational]) -> BigRational {
        self.coefs.iter().fold(BigRational::zero(), |acc, (i, c)| acc + c * &x[*i])
    }
}

/// Marginals, conjugation symmetry, clone and slot flows, and the clause
/// marginals tying γ to ℓ^r.
pub fn affine_rows(ts: &TypeSystem, lay: &OverlapLayout) -> Result<Vec<AffineRow>> {
    let density = weight_exact(&ts.density_exact, "the clause density")?;
    let one = BigRational::one();
    let two = &one + &one;
    let mut rows = Vec::new();
    let mut push = |coefs: Vec<(usize, BigRational)>, rhs: BigRational, label: String| {
        rows.push(AffineRow { coefs, rhs, label });
    };
    for (t, lt) in ts.literal_types.iter().enumerate() {
        let s = signature_exact(ts, t);
        for a in 0..3 {
            push((0..3).map(|b| (lay.lit(t, a, b), one.clone())).collect(), s[a].clone(), format!("lit[{t}] row {}", Z[a]));
            push((0..3).map(|b| (lay.lit(t, b, a), one.clone())).collect(), s[a].clone(), format!("lit[{t}] column {}", Z[a]));
        }
        let u = lt.negation;
        for a in 0..3 {
            for b in 0..3 {
                let (i, j) = (lay.lit(u, neg(a), neg(b)), lay.lit(t, a, b));
                if i < j {
                    push(vec![(i, one.clone()), (j, -one.clone())], BigRational::zero(), format!("conjugation lit[{t}].{}{}", Z[a], Z[b]));
                }
            }
        }
    }
    let inc = ts.incidence();
    let wl: Vec<BigRational> = ts
        .clause_types
        .iter()
        .enumerate()
        .map(|(l, ct)| weight_exact(&ct.weight_exact, &format!("clause type {l}")).map(|w| w * &density))
        .collect::<Result<_>>()?;
    for (t, lt) in ts.literal_types.iter().enumerate() {
        let pit = weight_exact(&lt.weight_exact, &format!("literal type {t}"))?;
        for (c, class) in lt.classes.iter().enumerate() {
            let flow = &two * &pit * BigRational::from_integer(class.mult.into());
            for s in 0..5 {
                let mut coefs = vec![(lay.clone_at(t, c, s), -flow.clone())];
                for &(l, j) in &inc[t][c] {
                    coefs.push((lay.gamma(l, j, s), wl[l].clone()));
                    let k = lay.widths[l];
                    for j2 in (0..k).filter(|&j2| j2 != j) {
                        match s {
                            RY => coefs.push((lay.gamma_yy(l, j, j2), wl[l].clone())),
                            YR => coefs.push((lay.gamma_yy(l, j2, j), wl[l].clone())),
                            _ => {}
                        }
                    }
                }
                push(coefs, BigRational::zero(), format!("clone flow ({t},{c}).{}", CLONE_STATES[s]));
            }
            for z in [PP, PY, YP] {
                let mut coefs: Vec<(usize, BigRational)> =
                    AGG[z].iter().map(|&(a, b)| (lay.lit(t, a, b), -flow.clone())).collect();
                for &(l, j) in &inc[t][c] {
                    coefs.push((lay.slot(l, j, z), wl[l].clone()));
                }
                push(coefs, BigRational::zero(), format!("slot flow ({t},{c}).{}", SLOT_STATES[z]));
            }
        }
    }
    for (l, ct) in ts.clause_types.iter().enumerate() {
        let k = ct.slots.len();
        for (j, s) in ct.slots.iter().enumerate() {
            let lp = &one - &s.dist.y;
            push(vec![(lay.slot(l, j, PP), one.clone()), (lay.slot(l, j, PY), one.clone())], lp.clone(), format!("slot[{l},{j}] first p"));
            push(vec![(lay.slot(l, j, PP), one.clone()), (lay.slot(l, j, YP), one.clone())], lp, format!("slot[{l},{j}] second p"));
            push((0..4).map(|z| (lay.slot(l, j, z), one.clone())).collect(), one.clone(), format!("slot[{l},{j}] total"));
            let mut first: Vec<(usize, BigRational)> =
                [RR, RC, RY].iter().map(|&x| (lay.gamma(l, j, x), one.clone())).collect();
            let mut second: Vec<(usize, BigRational)> =
                [RR, CR, YR].iter().map(|&x| (lay.gamma(l, j, x), one.clone())).collect();
            for j2 in (0..k).filter(|&j2| j2 != j) {
                first.push((lay.gamma_yy(l, j, j2), one.clone()));
                second.push((lay.gamma_yy(l, j2, j), one.clone()));
            }
            push(first, s.dist.r.clone(), format!("gamma[{l}] first red at {j}"));
            push(second, s.dist.r.clone(), format!("gamma[{l}] second red at {j}"));
        }
        let base = lay.gamma_base[l];
        push((base..base + OverlapLayout::gamma_len(k)).map(|i| (i, one.clone())).collect(), one.clone(), format!("gamma[{l}] total"));
    }
    Ok(rows)
}

/// The product overlap ω̄ = t⊗t, γ̄ as for two independent shades. Every
/// affine relation is verified in exact arithmetic.
pub fn product_overlap(ts: &TypeSystem) -> Result<Overlap> {
    let lay = Arc::new(OverlapLayout::new(ts));
    let exact = exact_product(ts, &lay);
    let rows = affine_rows(ts, &lay)?;
    if let Some(bad) = rows.iter().find(|r| r.eval_exact(&exact) != r.rhs) {
        return Err(MomentError::Contract(format!("product overlap violates {}", bad.label)));
    }
    if exact.iter().any(|v| v < &BigRational::zero()) {
        return Err(MomentError::Contract("product overlap has a negative entry".into()));
    }
    let x = exact.iter().map(rat_f64).collect();
    Ok(Overlap { layout: lay, x, exact: Some(exact) })
}

/// Labels of the affine relations violated in exact arithmetic.
pub fn exact_violations(ts: &TypeSystem, ov: &Overlap) -> Result<Option<Vec<String>>> {
    let Some(e) = &ov.exact else { return Ok(None) };
    let rows = affine_rows(ts, &ov.layout)?;
    Ok(Some(rows.iter().filter(|r| r.eval_exact(e) != r.rhs).map(|r| r.label.clone()).collect()))
}

/// g_ℓ(q) in the local γ order. Each entry is multilinear and homogeneous of
/// degree one in every slot vector q_j = (pp, py, yp, yy), so replacing q_j
/// by a unit vector gives the partial derivative.
fn gvec(q: &[[f64; 4]]) -> Vec<f64> {
    let k = q.len();
    let a: Vec<f64> = q.iter().map(|v| v[YP] + v[YY]).collect();
    let b: Vec<f64> = q.iter().map(|v| v[PY] + v[YY]).collect();
    let c: Vec<f64> = q.iter().map(|v| v[YY]).collect();
    let tot: Vec<f64> = q.iter().map(|v| v.iter().sum()).collect();
    let excl1 = |v: &[f64], j: usize| (0..k).filter(|&m| m != j).map(|m| v[m]).product::<f64>();
    let excl2 = |j: usize, j2: usize| (0..k).filter(|&m| m != j && m != j2).map(|m| c[m]).product::<f64>();
    let mut out = vec![0.0; OverlapLayout::gamma_len(k)];
    let mut yy_sum = 0.0;
    for j in 0..k {
        let (pa, pb, pc) = (excl1(&a, j), excl1(&b, j), excl1(&c, j));
        let mut sy = 0.0;
        let mut sx = 0.0;
        for j2 in (0..k).filter(|&j2| j2 != j) {
            let e = excl2(j, j2);
            sy += q[j2][YP] * e;
            sx += q[j2][PY] * e;
            let yy = q[j][PY] * q[j2][YP] * e;
            out[local_yy(k, j, j2)] = yy;
            yy_sum += yy;
        }
        out[5 * j + RR] = q[j][PP] * pc;
        out[5 * j + RC] = q[j][PP] * (pa - pc);
        out[5 * j + CR] = q[j][PP] * (pb - pc);
        out[5 * j + RY] = q[j][PY] * (pa - pc - sy);
        out[5 * j + YR] = q[j][YP] * (pb - pc - sx);
    }
    let all = |v: &[f64]| v.iter().product::<f64>();
    let p1 = all(&a) + (0..k).map(|j| (q[j][PP] + q[j][PY]) * excl1(&a, j)).sum::<f64>();
    let p2 = all(&b) + (0..k).map(|j| (q[j][PP] + q[j][YP]) * excl1(&b, j)).sum::<f64>();
    let p12 = all(&c) + (0..k).map(|j| (tot[j] - c[j]) * excl1(&c, j)).sum::<f64>() + yy_sum;
    out[OverlapLayout::gamma_len(k) - 1] = all(&tot) - p1 - p2 + p12;
    out
}

/// ShiftVal defect (e_j^z − ω_j^z)/ω_j^z for z ∈ {pp, py, yp}; the unknowns
/// are the first three entries of each q_j.
fn shiftval_residual(gamma: &[f64], omega: &[[f64; 4]], v: &[f64]) -> Option<Vec<f64>> {
    let k = omega.len();
    let q: Vec<[f64; 4]> = (0..k).map(|j| [v[3 * j], v[3 * j + 1], v[3 * j + 2], 1.0 - v[3 * j] - v[3 * j + 1] - v[3 * j + 2]]).collect();
    if q.iter().flatten().any(|&x| !(x > 0.0)) {
        return None;
    }
    let g = gvec(&q);
    if g.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let ratio: Vec<f64> = gamma.iter().zip(&g).map(|(a, b)| a / b).collect();
    let mut out = Vec::with_capacity(3 * k);
    let mut qq = q.clone();
    for j in 0..k {
        for z in [PP, PY, YP] {
            let mut unit = [0.0; 4];
            unit[z] = 1.0;
            qq[j] = unit;
            let gz = gvec(&qq);
            let e = q[j][z] * ratio.iter().zip(&gz).map(|(r, g)| r * g).sum::<f64>();
            out.push((e - omega[j][z]) / omega[j][z]);
        }
        qq[j] = q[j];
    }
    Some(out)
}

/// Occupancy quantities of one literal type: s^{z1z2} and the no-red
/// probabilities PA (first shade) and PB (second shade).
struct OccAux {
    s: [f64; 9],
    pa: f64,
    pb: f64,
}

fn occ_aux(q: &[[f64; 5]], mult: &[u32]) -> Option<OccAux> {
    let mut la = 0.0;
    let mut lb = 0.0;
    let mut lab = 0.0;
    let mut lry = 0.0;
    let mut lyr = 0.0;
    for (v, &m) in q.iter().zip(mult) {
        if v.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let (a, b, ab) = (1.0 - v[RR] - v[RC], 1.0 - v[RR] - v[CR], 1.0 - v[RR] - v[RC] - v[CR]);
        if !(ab > 0.0) || !(v[RY] < 1.0) || !(v[YR] < 1.0) {
            return None;
        }
        let m = m as f64;
        la += m * a.ln();
        lb += m * b.ln();
        lab += m * ab.ln();
        lry += m * (-v[RY]).ln_1p();
        lyr += m * (-v[YR]).ln_1p();
    }
    let (pa, pb, pab, pry, pyr) = (la.exp(), lb.exp(), lab.exp(), lry.exp(), lyr.exp());
    let mut s = [0.0; 9];
    s[0] = 1.0;
    s[3 * 1 + 1] = 1.0 - pa - pb + pab;
    s[3 * 1 + 2] = pb - pab;
    s[3 * 2 + 1] = pa - pab;
    s[3 * 2 + 2] = pab;
    s[3 * 1] = 1.0 - pry;
    s[3 * 2] = pry;
    s[1] = 1.0 - pyr;
    s[2] = pyr;
    if s.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    Some(OccAux { s, pa, pb })
}

fn occ_residual(om: &[f64], clone_om: &[[f64; 5]], mult: &[u32], v: &[f64]) -> Option<Vec<f64>> {
    let q: Vec<[f64; 5]> = v.chunks(5).map(|c| [c[0], c[1], c[2], c[3], c[4]]).collect();
    let aux = occ_aux(&q, mult)?;
    let s = &aux.s;
    let (w11, w1s, ws1, w10, w01) = (om[4], om[5], om[7], om[3], om[1]);
    let mut out = Vec::with_capacity(v.len());
    for (qc, target) in q.iter().zip(clone_om) {
        let a = 1.0 - qc[RR] - qc[RC];
        let b = 1.0 - qc[RR] - qc[CR];
        let fb = aux.pb / b;
        let fa = aux.pa / a;
        let e = [
            w11 * qc[RR] / s[4],
            w11 * qc[RC] * (1.0 - fb) / s[4] + w1s * qc[RC] * fb / s[5],
            w11 * qc[CR] * (1.0 - fa) / s[4] + ws1 * qc[CR] * fa / s[7],
            w10 * qc[RY] / s[3],
            w01 * qc[YR] / s[1],
        ];
        for (x, t) in e.iter().zip(target) {
            out.push((x - t) / t);
        }
    }
    Some(out)
}

/// Implicit parameters of f at one overlap.
#[derive(Debug, Clone)]
pub struct QState {
    /// q_{ℓ,j} over (pp, py, yp, yy).
    pub clause: Vec<Vec<[f64; 4]>>,
    /// q_{t,c} over (rr, rc, cr, ry, yr).
    pub occ: Vec<Vec<[f64; 5]>>,
    g: Vec<Vec<f64>>,
    s: Vec<[f64; 9]>,
    pub residual: f64,
}

#[derive(Clone)]
struct Lus {
    clause: Vec<Option<Factor>>,
    occ: Vec<Option<Factor>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentComponents {
    pub entropy: f64,
    pub disc: f64,
    pub validity: f64,
    pub occupancy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondMoment {
    pub f: f64,
    pub components: SecondMomentComponents,
    /// Max relative defect of the implicit equations.
    pub residual: f64,
    /// First-moment rate of the same type system, for comparison with f/2.
    pub first_rate: f64,
}

/// Everything needed to evaluate f repeatedly on one type system.
pub struct SecondMomentModel {
    pub layout: Arc<OverlapLayout>,
    pub product: Overlap,
    pub first: FirstMomentParams,
    pub first_rate: f64,
    pub rows: Vec<AffineRow>,
    a: DMatrix<f64>,
    rhs: Vec<f64>,
    /// Orthonormal basis (columns) of the feasible directions in the scaled
    /// coordinates u, x = x̄ + √x̄ ⊙ u.
    pub basis: DMatrix<f64>,
    scale: Vec<f64>,
    pi_t: Vec<f64>,
    w_l: Vec<f64>,
    mults: Vec<Vec<u32>>,
    slot_types: Vec<Vec<usize>>,
    q0: QState,
    lus0: Lus,
    pub exec: Exec,
    pub h_step: f64,
}

/// Columns spanning {v : M·diag(scale)·v = 0}, orthonormal.
fn null_space(m: &DMatrix<f64>, scale: &[f64]) -> (DMatrix<f64>, usize) {
    let n = m.ncols();
    let rows = m.nrows().max(n);
    let mut ms = DMatrix::zeros(rows, n);
    for i in 0..m.nrows() {
        for j in 0..n {
            ms[(i, j)] = m[(i, j)] * scale[j];
        }
    }
    let svd = ms.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] < 1e-9 * smax).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| vt[(null[c], r)]);
    (basis, n - null.len())
}

impl SecondMomentModel {
    pub fn new(ts: &TypeSystem) -> Result<SecondMomentModel> {
        let product = product_overlap(ts)?;
        let layout = product.layout.clone();
        let rows = affine_rows(ts, &layout)?;
        let n = layout.dim;
        let mut a = DMatrix::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in &r.coefs {
                a[(i, *j)] += rat_f64(c);
            }
        }
        let rhs = rows.iter().map(|r| rat_f64(&r.rhs)).collect();
        let scale: Vec<f64> = product.x.iter().map(|v| v.sqrt()).collect();
        if product.x.iter().any(|&v| !(v > 0.0)) {
            return Err(MomentError::OutOfRegion("the product overlap has a zero coordinate".into()));
        }
        let (basis, _) = null_space(&a, &scale);
        let first = solve_first_moment(ts, 1e-12)?;
        let first_rate = first_moment_rate(ts, &first)?.rate;
        let q_start = QState {
            clause: first
                .q_p
                .iter()
                .map(|ql| ql.iter().map(|&p| [p * p, p * (1.0 - p), (1.0 - p) * p, (1.0 - p) * (1.0 - p)]).collect())
                .collect(),
            occ: first.q_r.iter().map(|qt| qt.iter().map(|&q| [q * q, q * (1.0 - q), q * (1.0 - q), q, q]).collect()).collect(),
            g: Vec::new(),
            s: Vec::new(),
            residual: f64::INFINITY,
        };
        let mut model = SecondMomentModel {
            layout,
            first,
            first_rate,
            rows,
            a,
            rhs,
            basis,
            scale,
            pi_t: ts.literal_types.iter().map(|t| t.weight).collect(),
            w_l: ts.clause_types.iter().map(|l| l.weight * ts.density).collect(),
            mults: ts.literal_types.iter().map(|t| t.classes.iter().map(|c| c.mult).collect()).collect(),
            slot_types: ts.clause_types.iter().map(|l| l.slots.iter().map(|s| s.literal_type).collect()).collect(),
            q0: q_start.clone(),
            lus0: Lus { clause: Vec::new(), occ: Vec::new() },
            product,
            exec: Exec::Parallel,
            h_step: 1e-5,
        };
        let (q0, lus) = model.solve_q(&model.product.x, &q_start, None)?;
        model.q0 = q0;
        model.lus0 = lus.expect("fresh factorizations");
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Max-norm violation of the affine relations at x.
    pub fn affine_violation(&self, x: &[f64]) -> f64 {
        let ax = &self.a * DVector::from_column_slice(x);
        ax.iter().zip(&self.rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Feasible direction i in the unscaled coordinates.
    pub fn direction(&self, i: usize) -> Vec<f64> {
        (0..self.layout.dim).map(|r| self.scale[r] * self.basis[(r, i)]).collect()
    }

    /// Solves ShiftVal and the occupancy equations at x, from `warm`. With
    /// factorizations it uses chord steps; without, Newton, returning fresh
    /// factorizations.
    fn solve_q(&self, x: &[f64], warm: &QState, lus: Option<&Lus>) -> Result<(QState, Option<Lus>)> {
        let lay = &self.layout;
        let mut out = QState { clause: Vec::new(), occ: Vec::new(), g: Vec::new(), s: Vec::new(), residual: 0.0 };
        let mut new_lus = Lus { clause: Vec::new(), occ: Vec::new() };
        for l in 0..lay.widths.len() {
            let k = lay.widths[l];
            let gb = lay.gamma_base[l];
            let gamma = &x[gb..gb + OverlapLayout::gamma_len(k)];
            let om: Vec<[f64; 4]> = (0..k).map(|j| {
                let b = lay.slot_base[l][j];
                [x[b], x[b + 1], x[b + 2], x[b + 3]]
            }).collect();
            let f = |v: &[f64]| shiftval_residual(gamma, &om, v);
            let v0: Vec<f64> = warm.clause[l].iter().flat_map(|q| [q[0], q[1], q[2]]).collect();
            let sol = match lus {
                Some(lu) => solve_near("clause overlap parameters", v0, f, lu.clause[l].as_ref().expect("factor"), SOLVE_TOL)?,
                None => {
                    let (s, lu) = newton("clause overlap parameters", v0, f, SOLVE_TOL, 100)?;
                    new_lus.clause.push(Some(lu));
                    s
                }
            };
            out.residual = out.residual.max(sol.residual);
            let q: Vec<[f64; 4]> = sol.x.chunks(3).map(|c| [c[0], c[1], c[2], 1.0 - c[0] - c[1] - c[2]]).collect();
            out.g.push(gvec(&q));
            out.clause.push(q);
        }
        for t in 0..lay.lit_base.len() {
            let lb = lay.lit_base[t];
            let om = &x[lb..lb + 9];
            let mult = &self.mults[t];
            if mult.is_empty() {
                out.occ.push(Vec::new());
                new_lus.occ.push(None);
                let s = occ_aux(&[], &[]).map(|a| a.s).unwrap_or([1.0; 9]);
                out.s.push(s);
                continue;
            }
            let clone_om: Vec<[f64; 5]> = (0..mult.len()).map(|c| {
                let b = lay.clone_base[t][c];
                [x[b], x[b + 1], x[b + 2], x[b + 3], x[b + 4]]
            }).collect();
            let f = |v: &[f64]| occ_residual(om, &clone_om, mult, v);
            let v0: Vec<f64> = warm.occ[t].iter().flatten().copied().collect();
            let sol = match lus {
                Some(lu) => solve_near("occupancy overlap parameters", v0, f, lu.occ[t].as_ref().expect("factor"), SOLVE_TOL)?,
                None => {
                    let (s, lu) = newton("occupancy overlap parameters", v0, f, SOLVE_TOL, 100)?;
                    new_lus.occ.push(Some(lu));
                    s
                }
            };
            out.residual = out.residual.max(sol.residual);
            let q: Vec<[f64; 5]> = sol.x.chunks(5).map(|c| [c[0], c[1], c[2], c[3], c[4]]).collect();
            let aux = occ_aux(&q, mult).ok_or_else(|| MomentError::OutOfRegion("occupancy parameters".into()))?;
            out.s.push(aux.s);
            out.occ.push(q);
        }
        Ok((out, if lus.is_none() { Some(new_lus) } else { None }))
    }

    /// The four components of L(x; q) at frozen q.
    fn lagrangian<T: Scalar>(&self, x: &[T], q: &QState) -> [T; 4] {
        let lay = &self.layout;
        let c = T::cst;
        let mut ent = c(0.0);
        let mut occ = c(0.0);
        for (t, &pi) in self.pi_t.iter().enumerate() {
            let lb = lay.lit_base[t];
            let om = &x[lb..lb + 9];
            ent = ent + c(pi) * entropy(om);
            let mut v = c(0.0);
            for (i, &w) in om.iter().enumerate().skip(1) {
                if w.val() != 0.0 {
                    v = v + w * c(q.s[t][i].ln());
                }
            }
            let pp = om[4] + om[5] + om[7] + om[8];
            let py = om[3] + om[6];
            let yp = om[1] + om[2];
            for (ci, &m) in self.mults[t].iter().enumerate() {
                let b = lay.clone_base[t][ci];
                let w = &x[b..b + 5];
                let qc = q.occ[t][ci];
                let part = kl_split(&[w[RY], py - w[RY]], &[c(qc[RY]), c(1.0 - qc[RY])])
                    + kl_split(&[w[YR], yp - w[YR]], &[c(qc[YR]), c(1.0 - qc[YR])])
                    + kl_split(
                        &[w[RR], w[RC], w[CR], pp - w[RR] - w[RC] - w[CR]],
                        &[c(qc[RR]), c(qc[RC]), c(qc[CR]), c(1.0 - qc[RR] - qc[RC] - qc[CR])],
                    );
                v = v + c(m as f64) * part;
            }
            occ = occ + c(2.0 * pi) * v;
        }
        let mut disc = c(0.0);
        let mut val = c(0.0);
        for (l, &w) in self.w_l.iter().enumerate() {
            let k = lay.widths[l];
            let gb = lay.gamma_base[l];
            let gamma = &x[gb..gb + OverlapLayout::gamma_len(k)];
            let g: Vec<T> = q.g[l].iter().map(|&v| c(v)).collect();
            let mut v = -kl(gamma, &g);
            for j in 0..k {
                let sb = lay.slot_base[l][j];
                let slot = &x[sb..sb + 4];
                let lb = lay.lit_base[self.slot_types[l][j]];
                let agg: Vec<T> = AGG.iter().map(|cells| cells.iter().fold(c(0.0), |a, &(p, r)| a + x[lb + 3 * p + r])).collect();
                disc = disc - c(w) * kl(slot, &agg);
                let qj: Vec<T> = q.clause[l][j].iter().map(|&v| c(v)).collect();
                v = v + kl(slot, &qj);
            }
            val = val + c(w) * v;
        }
        [ent, disc, val, occ]
    }

    fn value_with(&self, x: &[f64], q: &QState) -> SecondMoment {
        let [entropy, disc, validity, occupancy] = self.lagrangian(x, q);
        SecondMoment {
            f: entropy + disc + validity + occupancy,
            components: SecondMomentComponents { entropy, disc, validity, occupancy },
            residual: q.residual,
            first_rate: self.first_rate,
        }
    }

    /// f at x, solving the implicit parameters from the product solution.
    pub fn evaluate(&self, x: &[f64]) -> Result<SecondMoment> {
        if x.len() != self.layout.dim {
            return Err(MomentError::Contract(format!("overlap has {} coordinates, expected {}", x.len(), self.layout.dim)));
        }
        if x.iter().any(|&v| v < 0.0) {
            return Err(MomentError::OutOfRegion("negative overlap coordinate".into()));
        }
        let (q, _) = self.solve_q(x, &self.q0, Some(&self.lus0))?;
        Ok(self.value_with(x, &q))
    }

    pub fn evaluate_product(&self) -> SecondMoment {
        self.value_with(&self.product.x, &self.q0)
    }

    /// dL/dd along each direction at frozen q (the envelope gradient).
    fn envelope_gradient(&self, x: &[f64], q: &QState, dirs: &[Vec<f64>]) -> Vec<f64> {
        dirs.iter()
            .map(|d| {
                let xd: Vec<Dual> = x.iter().zip(d).map(|(&a, &b)| Dual::new(a, b)).collect();
                self.lagrangian(&xd, q).iter().fold(0.0, |s, v| s + v.d)
            })
            .collect()
    }

    fn directions(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.direction(i)).collect()
    }

    /// Central differences of f along every feasible direction at x.
    pub fn stationarity_at(&self, x: &[f64], h: f64) -> Result<StationarityReport> {
        let dirs = self.directions();
        let (qc, _) = self.solve_q(x, &self.q0, Some(&self.lus0))?;
        let env = self.envelope_gradient(x, &qc, &dirs);
        let fd = map_range(self.exec, dirs.len(), |i| -> Result<f64> {
            let xp: Vec<f64> = x.iter().zip(&dirs[i]).map(|(a, d)| a + h * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dirs[i]).map(|(a, d)| a - h * d).collect();
            Ok((self.evaluate(&xp)?.f - self.evaluate(&xm)?.f) / (2.0 * h))
        });
        let derivatives = fd.into_iter().collect::<Result<Vec<f64>>>()?;
        let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(StationarityReport {
            dim: dirs.len(),
            ambient: self.layout.dim,
            excluded: self.layout.dim - dirs.len(),
            h,
            max_abs: max(&derivatives),
            envelope_max_abs: max(&env),
            derivatives,
        })
    }

    /// Hessian of f in the orthonormal feasible coordinates at x, by central
    /// differences of the envelope gradient.
    pub fn hessian_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let dirs = self.directions();
        let (qc, lus) = self.solve_q(x, &self.q0, None)?;
        let lus = lus.expect("fresh factorizations");
        let h = self.h_step;
        let cols = map_range(self.exec, dirs.len(), |j| -> Result<Vec<f64>> {
            let xp: Vec<f64> = x.iter().zip(&dirs[j]).map(|(a, d)| a + h * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dirs[j]).map(|(a, d)| a - h * d).collect();
            let (qp, _) = self.solve_q(&xp, &qc, Some(&lus))?;
            let (qm, _) = self.solve_q(&xm, &qc, Some(&lus))?;
            let gp = self.envelope_gradient(&xp, &qp, &dirs);
            let gm = self.envelope_gradient(&xm, &qm, &dirs);
            Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        });
        let n = dirs.len();
        let mut hm = DMatrix::zeros(n, n);
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col?.into_iter().enumerate() {
                hm[(i, j)] = v;
            }
        }
        Ok((&hm + hm.transpose()) * 0.5)
    }

    /// Allowed |Δx_i| around the product: k^{−9} for slot yy entries,
    /// 2^{−k/4}·x̄ for the γ entries rr, rc, cr, yy, and x̄/2 elsewhere.
    pub fn tame_limits(&self) -> Vec<f64> {
        let lay = &self.layout;
        let mut lim: Vec<f64> = self.product.x.iter().map(|v| 0.5 * v).collect();
        for (l, &k) in lay.widths.iter().enumerate() {
            let kf = k as f64;
            let rel = (-kf / 4.0).exp2();
            for j in 0..k {
                lim[lay.slot(l, j, YY)] = kf.powi(-9);
                for s in [RR, RC, CR] {
                    let i = lay.gamma(l, j, s);
                    lim[i] = rel * self.product.x[i];
                }
                for j2 in (0..k).filter(|&j2| j2 != j) {
                    let i = lay.gamma_yy(l, j, j2);
                    lim[i] = rel * self.product.x[i];
                }
            }
        }
        lim
    }

    pub fn is_tame(&self, x: &[f64]) -> bool {
        self.tame_limits().iter().zip(x.iter().zip(&self.product.x)).all(|(l, (a, b))| (a - b).abs() <= *l)
    }

    /// Projection of the unit vector e_i onto the feasible subspace, in the
    /// unscaled coordinates: returns (coefficients c in the basis, |S·B·c|²).
    fn coordinate_projection(&self, i: usize) -> Option<(DVector<f64>, f64)> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] = (0..self.layout.dim).map(|r| self.scale[r].powi(2) * self.basis[(r, a)] * self.basis[(r, b)]).sum();
            }
        }
        let rhs = DVector::from_fn(n, |a, _| self.scale[i] * self.basis[(i, a)]);
        let c = m.clone().lu().solve(&rhs)?;
        let norm2 = (&c.transpose() * &m * &c)[(0, 0)];
        if !(norm2 > 0.0) {
            return None;
        }
        Some((c, norm2))
    }

    /// Mean |Rayleigh quotient| of the Hessian `hu` over the projected unit
    /// vectors of the given coordinates.
    fn rayleigh(&self, hu: &DMatrix<f64>, coords: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for &i in coords {
            if let Some((c, norm2)) = self.coordinate_projection(i) {
                sum += ((c.transpose() * hu * &c)[(0, 0)] / norm2).abs();
                n += 1;
            }
        }
        if n == 0 { f64::NAN } else { sum / n as f64 }
    }

    /// x̄ moved by `size`·x̄_i along the feasible direction closest to e_i in
    /// the scaled coordinates.
    pub fn perturb_coordinate(&self, i: usize, size: f64) -> Vec<f64> {
        let row: Vec<f64> = (0..self.dim()).map(|a| self.basis[(i, a)]).collect();
        let d: Vec<f64> = (0..self.layout.dim)
            .map(|r| self.scale[r] * (0..self.dim()).map(|a| self.basis[(r, a)] * row[a]).sum::<f64>())
            .collect();
        let f = size * self.product.x[i] / d[i];
        self.product.x.iter().zip(&d).map(|(a, b)| a + f * b).collect()
    }

    fn sub_basis_without_slot_yy(&self) -> DMatrix<f64> {
        let lay = &self.layout;
        let mut extra = Vec::new();
        for (l, &k) in lay.widths.iter().enumerate() {
            for j in 0..k {
                extra.push(lay.slot(l, j, YY));
            }
        }
        let mut m = DMatrix::zeros(self.a.nrows() + extra.len(), lay.dim);
        m.rows_mut(0, self.a.nrows()).copy_from(&self.a);
        for (r, &i) in extra.iter().enumerate() {
            m[(self.a.nrows() + r, i)] = 1.0;
        }
        null_space(&m, &self.scale).0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub dim: usize,
    pub ambient: usize,
    /// Coordinates' directions removed by the affine relations.
    pub excluded: usize,
    pub h: f64,
    /// max |central difference| over the feasible basis.
    pub max_abs: f64,
    /// max |exact directional derivative| at frozen parameters.
    pub envelope_max_abs: f64,
    pub derivatives: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcavityReport {
    pub dim: usize,
    pub samples: usize,
    pub rejected: usize,
    pub radius: f64,
    pub center_eigenvalues: Vec<f64>,
    /// Largest Hessian eigenvalue at each tame sample.
    pub sample_max: Vec<f64>,
    pub max_eigenvalue: f64,
    /// Mean |Rayleigh quotient| along the projected γ^{rr} coordinates.
    pub rayleigh_gamma_rr: f64,
    /// Mean |Rayleigh quotient| along the projected slot pp coordinates.
    pub rayleigh_slot_pp: f64,
}

/// f at an overlap that satisfies the affine relations within `tol`.
pub fn second_moment_f(ts: &TypeSystem, ov: &Overlap, tol: f64) -> Result<SecondMoment> {
    let model = SecondMomentModel::new(ts)?;
    let v = model.affine_violation(&ov.x);
    if v > tol {
        return Err(MomentError::InvalidParameter(format!("overlap violates the affine relations by {v:e}")));
    }
    model.evaluate(&ov.x).map_err(|e| match e {
        MomentError::NoConvergence { .. } | MomentError::OutOfRegion(_) => {
            let fh = rough_bound_fhat(ts, &FhatInput::from_overlap(ts, ov)).map(|v| format!("{v}")).unwrap_or_else(|e| e.to_string());
            MomentError::OutOfRegion(format!("{e}; rough bound f̂ = {fh}"))
        }
        e => e,
    })
}

/// Finite-difference gradient of f at the product overlap.
pub fn check_stationary(ts: &TypeSystem, h: f64) -> Result<StationarityReport> {
    let model = SecondMomentModel::new(ts)?;
    model.stationarity_at(&model.product.x, h)
}

fn max_eig(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
}

/// Hessian spectra at the product overlap and at `n_samples` random tame
/// points at most `radius` away in the scaled coordinates.
pub fn check_concavity(ts: &TypeSystem, n_samples: usize, radius: f64, seed: u64) -> Result<ConcavityReport> {
    let model = SecondMomentModel::new(ts)?;
    let center = model.hessian_at(&model.product.x)?;
    let mut center_eigenvalues: Vec<f64> = SymmetricEigen::new(center.clone()).eigenvalues.iter().copied().collect();
    center_eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let lay = &model.layout;
    let mut rr = Vec::new();
    let mut pp = Vec::new();
    for (l, &k) in lay.widths.iter().enumerate() {
        for j in 0..k {
            rr.push(lay.gamma(l, j, RR));
            pp.push(lay.slot(l, j, PP));
        }
    }
    let rayleigh_gamma_rr = model.rayleigh(&center, &rr);
    let rayleigh_slot_pp = model.rayleigh(&center, &pp);

    let sub = model.sub_basis_without_slot_yy();
    let limits = model.tame_limits();
    let n = lay.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_samples);
    let mut attempts = 0;
    while points.len() < n_samples && attempts < 20 * n_samples.max(1) {
        attempts += 1;
        let step = |b: &DMatrix<f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let g = DVector::from_fn(b.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = b * g;
            let norm = u.norm();
            (0..n).map(|r| model.scale[r] * u[r] / norm).collect()
        };
        let d = if sub.ncols() > 0 { step(&sub, &mut rng) } else { vec![0.0; n] };
        let amax = (0..n).filter(|&r| d[r] != 0.0).map(|r| limits[r] / d[r].abs()).fold(radius, f64::min);
        let alpha = 0.9 * amax * rng.random_range(0.1..1.0);
        let e = step(&model.basis, &mut rng);
        let bmax = (0..n).filter(|&r| e[r] != 0.0).map(|r| 0.05 * limits[r] / e[r].abs()).fold(radius, f64::min);
        let beta = bmax * rng.random_range(0.0..1.0);
        let x: Vec<f64> = (0..n).map(|r| model.product.x[r] + alpha * d[r] + beta * e[r]).collect();
        if model.is_tame(&x) {
            points.push(x);
        }
    }
    let spectra = map_range(Exec::Sequential, points.len(), |i| model.hessian_at(&points[i]).map(|h| max_eig(&h)));
    let mut sample_max = Vec::new();
    let mut rejected = attempts - points.len();
    for s in spectra {
        match s {
            Ok(v) => sample_max.push(v),
            Err(_) => rejected += 1,
        }
    }
    let max_eigenvalue = sample_max.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok(ConcavityReport {
        dim: model.dim(),
        samples: sample_max.len(),
        rejected,
        radius,
        center_eigenvalues,
        sample_max,
        max_eigenvalue,
        rayleigh_gamma_rr,
        rayleigh_slot_pp,
    })
}

/// Literal joints and slot yellow–yellow masses for the rough bound f̂.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FhatInput {
    pub omega_t: Vec<[f64; 9]>,
    pub slot_yy: Vec<Vec<f64>>,
}

impl FhatInput {
    /// ω(λ) = (1 − λ)·t⊗t + λ·diag(t), slot yy = (1 − λ)y² + λy.
    pub fn interpolate(ts: &TypeSystem, lambda: f64) -> FhatInput {
        let omega_t = ts
            .literal_types
            .iter()
            .map(|lt| {
                let (t0, t1, ts_) = lt.sig_f64();
                let t = [t0, t1, ts_];
                let mut om = [0.0; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        om[3 * a + b] = (1.0 - lambda) * t[a] * t[b] + if a == b { lambda * t[a] } else { 0.0 };
                    }
                }
                om
            })
            .collect();
        let slot_yy = ts
            .clause_types
            .iter()
            .map(|l| l.slots.iter().map(|s| (1.0 - lambda) * s.f.y * s.f.y + lambda * s.f.y).collect())
            .collect();
        FhatInput { omega_t, slot_yy }
    }

    pub fn product(ts: &TypeSystem) -> FhatInput {
        Self::interpolate(ts, 0.0)
    }

    pub fn from_overlap(ts: &TypeSystem, ov: &Overlap) -> FhatInput {
        let omega_t = (0..ts.literal_types.len())
            .map(|t| {
                let mut a = [0.0; 9];
                a.copy_from_slice(ov.literal(t));
                a
            })
            .collect();
        let slot_yy = ts.clause_types.iter().enumerate().map(|(l, ct)| (0..ct.slots.len()).map(|j| ov.slot(l, j)[YY]).collect()).collect();
        FhatInput { omega_t, slot_yy }
    }
}

/// f̂(ω) = Σ_t π_t H(ω_t) + (m/n) Σ_ℓ π_ℓ ln[1 − 2∏_j ℓ_j^y + ∏_j ω_{ℓ,j}^{yy}].
pub fn rough_bound_fhat(ts: &TypeSystem, input: &FhatInput) -> Result<f64> {
    if input.omega_t.len() != ts.literal_types.len() || input.slot_yy.len() != ts.clause_types.len() {
        return Err(MomentError::InvalidParameter("input does not match the type system".into()));
    }
    let mut v = 0.0;
    for (lt, om) in ts.literal_types.iter().zip(&input.omega_t) {
        v += lt.weight * entropy(om);
    }
    let mut val = 0.0;
    for (l, (ct, yy)) in ts.clause_types.iter().zip(&input.slot_yy).enumerate() {
        if yy.len() != ct.slots.len() {
            return Err(MomentError::InvalidParameter(format!("clause type {l} needs {} slot entries", ct.slots.len())));
        }
        let mut py = 1.0;
        let mut pyy = 1.0;
        for (s, &w) in ct.slots.iter().zip(yy) {
            if !(0.0..=s.f.y).contains(&w) {
                return Err(MomentError::InvalidParameter(format!("slot yy mass {w} outside [0, {}]", s.f.y)));
            }
            py *= s.f.y;
            pyy *= w;
        }
        let arg = 1.0 - 2.0 * py + pyy;
        if !(arg > 0.0) {
            return Err(MomentError::LogDomain(format!("f̂ logarithm argument {arg}")));
        }
        val += ct.weight * arg.ln();
    }
    Ok(v + ts.density * val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sp::regular_type_system;

    fn normalized_gvec_sum(q: &[[f64; 4]]) -> (f64, f64) {
        let g = gvec(q);
        let all = |f: &dyn Fn(&[f64; 4]) -> f64| q.iter().map(f).product::<f64>();
        let want = 1.0 - all(&|v| v[YP] + v[YY]) - all(&|v| v[PY] + v[YY]) + all(&|v| v[YY]);
        (g.iter().sum(), want)
    }

    #[test]
    fn g_vector_covers_doubly_valid_clauses() {
        let q = vec![[0.3, 0.2, 0.25, 0.25], [0.1, 0.4, 0.2, 0.3], [0.25, 0.25, 0.25, 0.25], [0.5, 0.1, 0.1, 0.3]];
        let (s, want) = normalized_gvec_sum(&q);
        assert!((s - want).abs() < 1e-14, "{s} vs {want}");
        assert!(gvec(&q).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn g_vector_is_linear_in_each_slot() {
        let q = vec![[0.3, 0.2, 0.25, 0.25], [0.1, 0.4, 0.2, 0.3], [0.2, 0.3, 0.1, 0.4]];
        let g = gvec(&q);
        let mut sum = vec![0.0; g.len()];
        for z in 0..4 {
            let mut qq = q.clone();
            qq[1] = [0.0; 4];
            qq[1][z] = 1.0;
            for (s, v) in sum.iter_mut().zip(gvec(&qq)) {
                *s += q[1][z] * v;
            }
        }
        for (a, b) in g.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn product_overlap_is_exact() {
        let ts = regular_type_system(5, 53).unwrap();
        let ov = product_overlap(&ts).unwrap();
        assert_eq!(exact_violations(&ts, &ov).unwrap().unwrap(), Vec::<String>::new());
        assert_eq!(ov.disc_exact_zero(&ts), Some(true));
        let e = ov.exact.as_ref().unwrap();
        let lay = &ov.layout;
        let s = &ts.literal_types[0].signature;
        for a in 0..3 {
            let m = (0..3).fold(BigRational::zero(), |acc, b| acc + &e[lay.lit(0, a, b)]);
            assert_eq!(m, [&s.p0, &s.p1, &s.pstar][a].clone());
        }
        let r = &ts.clause_types[0].slots[0].dist.r;
        assert_eq!(e[lay.gamma(0, 0, RR)], r * r);
    }

    #[test]
    fn product_value_is_twice_first_moment() {
        let ts = regular_type_system(5, 53).unwrap();
        let m = SecondMomentModel::new(&ts).unwrap();
        let v = m.evaluate_product();
        assert_eq!(v.components.disc, 0.0);
        assert!((v.f - 2.0 * m.first_rate).abs() < 1e-8, "{} vs {}", v.f, 2.0 * m.first_rate);
        let again = m.evaluate(&m.product.x).unwrap();
        assert!((again.f - v.f).abs() < 1e-12);
    }

    #[test]
    fn stationary_at_product_k5() {
        let ts = regular_type_system(5, 53).unwrap();
        let m = SecondMomentModel::new(&ts).unwrap();
        let st = m.stationarity_at(&m.product.x, 1e-5).unwrap();
        assert!(st.max_abs <= 1e-6, "{}", st.max_abs);
        assert!(st.envelope_max_abs <= 1e-9, "{}", st.envelope_max_abs);
        let shifted = m.perturb_coordinate(m.layout.gamma_cc(0), 1e-3);
        let off = m.stationarity_at(&shifted, 1e-5).unwrap();
        assert!(off.max_abs > 1e-4);
    }

    // At k = 5 the flip direction (lit 10/01) is still convex, about +0.02;
    // negativity sets in from k = 6.
    #[test]
    fn concave_at_product_k6() {
        let m = SecondMomentModel::new(&regular_type_system(6, 130).unwrap()).unwrap();
        let h = m.hessian_at(&m.product.x).unwrap();
        assert!(max_eig(&h) < 0.0);
    }

    #[test]
    fn coordinate_perturbation_decreases_f() {
        let ts = regular_type_system(5, 53).unwrap();
        let m = SecondMomentModel::new(&ts).unwrap();
        let f0 = m.evaluate_product().f;
        for size in [1e-3, -1e-3] {
            let x = m.perturb_coordinate(m.layout.gamma_cc(0), size);
            assert!(m.affine_violation(&x) < 1e-12);
            assert!(m.evaluate(&x).unwrap().f < f0);
        }
    }

    #[test]
    fn fhat_bounds_product_value() {
        let ts = regular_type_system(5, 53).unwrap();
        let m = SecondMomentModel::new(&ts).unwrap();
        let fh = rough_bound_fhat(&ts, &FhatInput::product(&ts)).unwrap();
        assert!(fh >= m.evaluate_product().f);
        // identical shades: ln[1 − 2∏y + ∏y] = ln[1 − ∏y]
        let one = rough_bound_fhat(&ts, &FhatInput::interpolate(&ts, 1.0)).unwrap();
        let y = ts.clause_types[0].slots[0].f.y;
        let (t0, t1, t2) = ts.literal_types[0].sig_f64();
        let want = entropy(&[t0, t1, t2]) + ts.density * (1.0 - y.powi(5)).ln();
        assert!((one - want).abs() < 1e-12);
        let mut bad = FhatInput::product(&ts);
        bad.slot_yy[0][0] = 0.9;
        assert!(rough_bound_fhat(&ts, &bad).is_err());
    }
}
