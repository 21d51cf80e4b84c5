//! First moment: the fixed points q^r (occupancy) and q^p (validity) and the
//! exponential growth rate of the expected number of θ-shades.

use serde::{Deserialize, Serialize};

use super::kl::{entropy, kl, kl_bern};
use super::newton::newton;
use super::{MomentError, Result};
use crate::par::{map_slice, Exec};
use crate::sp::TypeSystem;

/// Which occupancy divergence to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccVariant {
    /// t^1 ln s + t^* ln(1−s) + t^p Σ_h KL(t_h^r/t^p ‖ q_h).
    #[default]
    Derived,
    /// The same without the t^p prefactor.
    Figure,
}

#[derive(Debug, Clone)]
pub struct FirstMomentOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub exec: Exec,
}

impl Default for FirstMomentOptions {
    fn default() -> Self {
        FirstMomentOptions { tol: 1e-12, max_iter: 10_000, damping: 0.5, exec: Exec::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstMomentParams {
    /// q^r per (literal type, clone class).
    pub q_r: Vec<Vec<f64>>,
    /// q^p per (clause type, slot); q^y = 1 − q^p.
    pub q_p: Vec<Vec<f64>>,
    /// Max-norm of e − target over all equations.
    pub residual: f64,
    pub iterations: usize,
}

/// 1 − s = ∏_c (1 − q_c)^{mult_c}.
pub(crate) fn one_minus_s(q: &[f64], mult: &[u32]) -> f64 {
    q.iter().zip(mult).map(|(&x, &m)| m as f64 * (-x).ln_1p()).sum::<f64>().exp()
}

/// e_c^r − t_c^r for one literal type.
fn literal_defect(t1: f64, tr: &[f64], mult: &[u32], q: &[f64]) -> Vec<f64> {
    let s = 1.0 - one_minus_s(q, mult);
    q.iter().zip(tr).map(|(&x, &r)| t1 * x / s - r).collect()
}

/// (g^r_j, g^c, ∏_{j'≠j} q^y) for one clause type.
pub(crate) fn clause_g(q: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let k = q.len();
    let mut others = vec![1.0; k];
    let mut acc = 1.0;
    for j in 0..k {
        others[j] = acc;
        acc *= 1.0 - q[j];
    }
    let all = acc;
    acc = 1.0;
    for j in (0..k).rev() {
        others[j] *= acc;
        acc *= 1.0 - q[j];
    }
    let gr: Vec<f64> = q.iter().zip(&others).map(|(x, o)| x * o).collect();
    let gc = 1.0 - all - gr.iter().sum::<f64>();
    (gr, gc, others)
}

/// e_j^p − ℓ_j^p for one clause type.
fn clause_defect(lr: &[f64], lp: &[f64], q: &[f64]) -> Option<Vec<f64>> {
    if q.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return None;
    }
    let (_, gc, others) = clause_g(q);
    if !(gc > 0.0) {
        return None;
    }
    let rest = 1.0 - lr.iter().sum::<f64>();
    Some((0..q.len()).map(|j| lr[j] + q[j] / gc * rest * (1.0 - others[j]) - lp[j]).collect())
}

struct LiteralBlock {
    t1: f64,
    tr: Vec<f64>,
    mult: Vec<u32>,
}

struct ClauseBlock {
    lr: Vec<f64>,
    lp: Vec<f64>,
}

fn solve_literal(b: &LiteralBlock, opts: &FirstMomentOptions) -> Result<(Vec<f64>, f64, usize)> {
    if b.tr.is_empty() {
        return Ok((Vec::new(), 0.0, 0));
    }
    let mut q: Vec<f64> = b.tr.iter().map(|r| r / b.t1).collect();
    let defect = |q: &[f64]| literal_defect(b.t1, &b.tr, &b.mult, q);
    let res = |d: &[f64]| d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut it = 0;
    while it < opts.max_iter {
        let d = defect(&q);
        if res(&d) <= 1e-3 * opts.tol.sqrt() {
            break;
        }
        let s = 1.0 - one_minus_s(&q, &b.mult);
        for (x, r) in q.iter_mut().zip(&b.tr) {
            *x = (1.0 - opts.damping) * *x + opts.damping * r * s / b.t1;
        }
        it += 1;
    }
    // relative equations for the polish: the targets are of order 2^{-k}
    let rel = |q: &[f64]| {
        if q.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return None;
        }
        Some(defect(q).iter().zip(&b.tr).map(|(d, r)| d / r).collect())
    };
    let scale = b.tr.iter().fold(0.0f64, |m, &r| m.max(r));
    let (sol, _) = newton("occupancy fixed point", q, rel, opts.tol / scale.max(1e-300) * 1e-2, 100)?;
    let r = res(&defect(&sol.x));
    Ok((sol.x, r, it + sol.iterations))
}

fn solve_clause(b: &ClauseBlock, opts: &FirstMomentOptions) -> Result<(Vec<f64>, f64, usize)> {
    let k = b.lp.len();
    let mut q: Vec<f64> = b.lp.iter().map(|p| p - (-(k as f64) - 1.0).exp2()).collect();
    let rest = 1.0 - b.lr.iter().sum::<f64>();
    let res = |d: &[f64]| d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut it = 0;
    while it < opts.max_iter {
        let Some(d) = clause_defect(&b.lr, &b.lp, &q) else {
            return Err(MomentError::OutOfRegion("validity iteration left (0,1)".into()));
        };
        if res(&d) <= 1e-3 * opts.tol.sqrt() {
            break;
        }
        let (_, gc, others) = clause_g(&q);
        let next: Vec<f64> =
            (0..k).map(|j| (b.lp[j] - b.lr[j]) * gc / (rest * (1.0 - others[j]))).collect();
        for (x, n) in q.iter_mut().zip(next) {
            *x = (1.0 - opts.damping) * *x + opts.damping * n;
        }
        it += 1;
    }
    let (sol, _) = newton("validity fixed point", q, |q| clause_defect(&b.lr, &b.lp, q), opts.tol * 1e-2, 100)?;
    Ok((sol.x, sol.residual, it + sol.iterations))
}

/// q^p for a single clause with the given ℓ^r, ℓ^p.
pub(crate) fn solve_validity(lr: &[f64], lp: &[f64], tol: f64) -> Result<Vec<f64>> {
    let b = ClauseBlock { lr: lr.to_vec(), lp: lp.to_vec() };
    solve_clause(&b, &FirstMomentOptions { tol, exec: Exec::Sequential, ..Default::default() }).map(|r| r.0)
}

pub fn solve_first_moment(ts: &TypeSystem, tol: f64) -> Result<FirstMomentParams> {
    solve_first_moment_with(ts, &FirstMomentOptions { tol, ..Default::default() })
}

/// Damped fixed-point iteration from the asymptotic initial values, then a
/// Newton polish. Blocks (one per literal type and per clause type) are
/// independent and solved in parallel.
pub fn solve_first_moment_with(ts: &TypeSystem, opts: &FirstMomentOptions) -> Result<FirstMomentParams> {
    let lblocks: Vec<LiteralBlock> = ts
        .literal_types
        .iter()
        .map(|t| {
            let (_, t1, _) = t.sig_f64();
            LiteralBlock {
                t1,
                tr: t.classes.iter().map(|c| c.f.r).collect(),
                mult: t.classes.iter().map(|c| c.mult).collect(),
            }
        })
        .collect();
    let cblocks: Vec<ClauseBlock> = ts
        .clause_types
        .iter()
        .map(|l| ClauseBlock { lr: l.slots.iter().map(|s| s.f.r).collect(), lp: l.slots.iter().map(|s| s.f.p()).collect() })
        .collect();
    let lit = map_slice(opts.exec, &lblocks, |b| solve_literal(b, opts));
    let cl = map_slice(opts.exec, &cblocks, |b| solve_clause(b, opts));
    let mut out = FirstMomentParams { q_r: Vec::new(), q_p: Vec::new(), residual: 0.0, iterations: 0 };
    for r in lit {
        let (q, res, it) = r?;
        out.q_r.push(q);
        out.residual = out.residual.max(res);
        out.iterations = out.iterations.max(it);
    }
    for r in cl {
        let (q, res, it) = r?;
        out.q_p.push(q);
        out.residual = out.residual.max(res);
        out.iterations = out.iterations.max(it);
    }
    if out.residual > opts.tol {
        return Err(MomentError::NoConvergence {
            what: "first moment".into(),
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok(out)
}

/// Recomputes the residual of `params` by direct substitution.
pub fn first_moment_residual(ts: &TypeSystem, params: &FirstMomentParams) -> f64 {
    let mut res: f64 = 0.0;
    for (t, q) in ts.literal_types.iter().zip(&params.q_r) {
        if q.is_empty() {
            continue;
        }
        let (_, t1, _) = t.sig_f64();
        let tr: Vec<f64> = t.classes.iter().map(|c| c.f.r).collect();
        let mult: Vec<u32> = t.classes.iter().map(|c| c.mult).collect();
        for d in literal_defect(t1, &tr, &mult, q) {
            res = res.max(d.abs());
        }
    }
    for (l, q) in ts.clause_types.iter().zip(&params.q_p) {
        let lr: Vec<f64> = l.slots.iter().map(|s| s.f.r).collect();
        let lp: Vec<f64> = l.slots.iter().map(|s| s.f.p()).collect();
        match clause_defect(&lr, &lp, q) {
            Some(d) => d.iter().for_each(|x| res = res.max(x.abs())),
            None => return f64::INFINITY,
        }
    }
    res
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateComponents {
    /// Σ_t π_t H(t^0, t^1, t^*).
    pub entropy: f64,
    /// 2 Σ_t π_t F_occ,t.
    pub occupancy: f64,
    /// (m/n) Σ_ℓ π_ℓ F_val,ℓ.
    pub validity: f64,
    /// Σ_ℓ π_ℓ F_val,ℓ, the per-clause validity term.
    pub validity_per_clause: f64,
    /// Polynomial prefactor exponent C; not part of the rate.
    pub polylog_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rate: f64,
    pub components: RateComponents,
    pub params: FirstMomentParams,
    pub variant: OccVariant,
    /// Smallest KL term met during the evaluation.
    pub min_kl: f64,
}

/// F_occ,t and the smallest KL term in it.
pub(crate) fn f_occ(t1: f64, tstar: f64, tr: &[f64], mult: &[u32], q: &[f64], variant: OccVariant) -> Result<(f64, f64)> {
    let tp = t1 + tstar;
    let om = if q.is_empty() { 1.0 } else { one_minus_s(q, mult) };
    let s = 1.0 - om;
    let mut v = 0.0;
    if t1 > 0.0 {
        if !(s > 0.0) {
            return Err(MomentError::LogDomain(format!("s = {s} with t^1 = {t1}")));
        }
        v += t1 * s.ln();
    }
    if tstar > 0.0 {
        if !(om > 0.0) {
            return Err(MomentError::LogDomain(format!("1 − s = {om} with t^* = {tstar}")));
        }
        v += tstar * om.ln();
    }
    let mut min_kl = f64::INFINITY;
    let mut sum = 0.0;
    for ((&r, &m), &qc) in tr.iter().zip(mult).zip(q) {
        let d = kl_bern(r / tp, qc);
        min_kl = min_kl.min(d);
        sum += m as f64 * d;
    }
    v += match variant {
        OccVariant::Derived => tp * sum,
        OccVariant::Figure => sum,
    };
    Ok((v, min_kl))
}

/// F_val,ℓ and the smallest KL term in it.
pub(crate) fn f_val(lr: &[f64], lp: &[f64], q: &[f64]) -> (f64, f64) {
    let (gr, gc, _) = clause_g(q);
    let mut p = lr.to_vec();
    p.push(1.0 - lr.iter().sum::<f64>());
    let mut g = gr;
    g.push(gc);
    let a = kl(&p, &g);
    let mut min_kl = a;
    let mut v = -a;
    for (&x, &y) in lp.iter().zip(q) {
        let d = kl_bern(x, y);
        min_kl = min_kl.min(d);
        v += d;
    }
    (v, min_kl)
}

pub fn first_moment_rate(ts: &TypeSystem, params: &FirstMomentParams) -> Result<RateResult> {
    first_moment_rate_with(ts, params, OccVariant::Derived)
}

/// rate = Σ_t π_t [H(t) + 2 F_occ,t] + (m/n) Σ_ℓ π_ℓ F_val,ℓ.
pub fn first_moment_rate_with(ts: &TypeSystem, params: &FirstMomentParams, variant: OccVariant) -> Result<RateResult> {
    if params.q_r.len() != ts.literal_types.len() || params.q_p.len() != ts.clause_types.len() {
        return Err(MomentError::Contract("parameters do not match the type system".into()));
    }
    let mut ent = 0.0;
    let mut occ = 0.0;
    let mut min_kl = f64::INFINITY;
    for (t, q) in ts.literal_types.iter().zip(&params.q_r) {
        let (t0, t1, ts_) = t.sig_f64();
        ent += t.weight * entropy(&[t0, t1, ts_]);
        let tr: Vec<f64> = t.classes.iter().map(|c| c.f.r).collect();
        let mult: Vec<u32> = t.classes.iter().map(|c| c.mult).collect();
        let (v, m) = f_occ(t1, ts_, &tr, &mult, q, variant)?;
        occ += 2.0 * t.weight * v;
        min_kl = min_kl.min(m);
    }
    let mut val = 0.0;
    for (l, q) in ts.clause_types.iter().zip(&params.q_p) {
        let lr: Vec<f64> = l.slots.iter().map(|s| s.f.r).collect();
        let lp: Vec<f64> = l.slots.iter().map(|s| s.f.p()).collect();
        let (v, m) = f_val(&lr, &lp, q);
        val += l.weight * v;
        min_kl = min_kl.min(m);
    }
    if min_kl < -1e-15 {
        return Err(MomentError::Contract(format!("negative KL term {min_kl:e}")));
    }
    let components = RateComponents {
        entropy: ent,
        occupancy: occ,
        validity: ts.density * val,
        validity_per_clause: val,
        polylog_c: polylog_c(ts),
    };
    Ok(RateResult {
        rate: components.entropy + components.occupancy + components.validity,
        components,
        params: params.clone(),
        variant,
        min_kl,
    })
}

/// |[T]| + Σ_ℓ k_ℓ/2 + Σ_{(t,h)} (|∂(t,h)| − 1)/2, with clones of one class
/// sharing the class's incidence count.
fn polylog_c(ts: &TypeSystem) -> f64 {
    let pairs = ts.literal_types.iter().enumerate().filter(|(i, t)| t.negation >= *i).count() as f64;
    let widths: f64 = ts.clause_types.iter().map(|l| l.slots.len() as f64 / 2.0).sum();
    let inc = ts.incidence();
    let mut clones = 0.0;
    for (t, lt) in ts.literal_types.iter().enumerate() {
        for (c, class) in lt.classes.iter().enumerate() {
            clones += class.mult as f64 * (inc[t][c].len() as f64 - 1.0) / 2.0;
        }
    }
    pairs + widths + clones
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sp::regular_type_system;

    #[test]
    fn regular_k5() {
        let ts = regular_type_system(5, 53).unwrap();
        let p = solve_first_moment(&ts, 1e-12).unwrap();
        assert!(p.residual <= 1e-10);
        assert!(first_moment_residual(&ts, &p) <= 1e-10);
        let r = first_moment_rate(&ts, &p).unwrap();
        assert!(r.min_kl >= 0.0);
        let c = &r.components;
        assert!((r.rate - (c.entropy + c.occupancy + c.validity)).abs() < 1e-15);
        let fig = first_moment_rate_with(&ts, &p, OccVariant::Figure).unwrap();
        assert!((fig.rate - r.rate).abs() < 1e-3);
    }

    #[test]
    fn asymptotic_windows() {
        for k in [8usize, 10, 12] {
            let d = (k as f64 * crate::thresholds::bound_main(k).unwrap() / 2.0).round() as u32;
            let ts = regular_type_system(k, d).unwrap();
            let p = solve_first_moment(&ts, 1e-12).unwrap();
            let kf = k as f64;
            let slot = &ts.clause_types[0].slots[0].f;
            let dp = (p.q_p[0][0] - (slot.p() - (-kf - 1.0).exp2())).abs();
            assert!(dp <= kf * kf * (-1.5 * kf).exp2(), "k={k}: {dp:e}");
            let (_, t1, _) = ts.literal_types[0].sig_f64();
            let dr = (p.q_r[0][0] - ts.literal_types[0].classes[0].f.r / t1).abs();
            assert!(dr <= kf * kf * (-2.0 * kf).exp2(), "k={k}: {dr:e}");
        }
    }
}
