//! First moment and the rough bound f̂ on the Poisson degree ensemble.
//!
//! Literal types are degree pairs (d+, d−), streamed row by row. Clause types
//! are k-tuples of slot literals, too many to enumerate, so the validity term
//! is a Monte Carlo average over sampled tuples with ∏ϑ^0 as control variate.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::first::{f_occ, f_val, solve_validity, RateComponents};
use super::kl::entropy;
use super::{MomentError, OccVariant, Result};
use crate::par::{map_chunks, map_range, Exec};
use crate::sp::{lambda_map_f64, PoissonEnsemble};

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Clause tuples drawn for the validity term.
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
    pub variant: OccVariant,
    /// Degree window half-width; defaults to k³2^{k/2}.
    pub window: Option<f64>,
    pub tol: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions { samples: 16_384, seed: 0, exec: Exec::Parallel, variant: OccVariant::Derived, window: None, tol: 1e-13 }
    }
}

const CHUNK: u64 = 512;

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleRate {
    pub k: usize,
    pub r: f64,
    pub rate: f64,
    pub components: RateComponents,
    /// Standard error of the validity term (per clause).
    pub validity_stderr: f64,
    pub samples: usize,
    pub literal_types: usize,
    /// Mass outside the degree window plus mass of degree pairs whose
    /// signature has a non-positive entry.
    pub truncation_error: f64,
    /// s = E[ϑ^0] over a slot literal.
    pub mean_theta0: f64,
}

/// Solves t^1 q = t^r (1 − (1 − q)^m) for q by Newton's method.
fn occupancy_q(t1: f64, tr: f64, m: u32) -> Result<f64> {
    let m = m as f64;
    let mut q = tr / t1;
    for _ in 0..100 {
        let u = (m * (-q).ln_1p()).exp();
        let s = 1.0 - u;
        let phi = t1 * q / s - tr;
        let dphi = t1 / s - t1 * q * m * u / ((1.0 - q) * s * s);
        let next = q - phi / dphi;
        if !(next > 0.0 && next < 1.0) {
            q *= 0.5;
            continue;
        }
        let done = (next - q).abs() <= 1e-15 * q;
        q = next;
        if done {
            return Ok(q);
        }
    }
    Err(MomentError::NoConvergence { what: format!("occupancy at degree {m}"), iterations: 100, residual: f64::NAN })
}

fn feasible((p1, p0, _): (f64, f64, f64)) -> bool {
    p1 > 0.0 && p0 > 0.0
}

/// Sums π_t·(H(t), 2F_occ,t) over all degree pairs with a feasible
/// signature; also returns the number of types and the dropped mass.
fn literal_terms(ens: &PoissonEnsemble, opts: &EnsembleOptions) -> Result<(f64, f64, usize, f64)> {
    let k = ens.k as i32;
    let s = ens.mean_theta0();
    let degrees: Vec<u32> = ens.degrees().collect();
    let rows = map_range(opts.exec, degrees.len(), |i| -> Result<(f64, f64, usize, f64)> {
        let dp = degrees[i];
        let mut ent = 0.0;
        let mut occ = 0.0;
        let mut types = 0;
        let mut dropped = 0.0;
        for &dn in &degrees {
            let pi = ens.prob(dp) * ens.prob(dn);
            let sig = ens.signature_f64(dp as i64 - dn as i64);
            if !feasible(sig) {
                dropped += pi;
                continue;
            }
            types += 1;
            let (p1, p0, ps) = sig;
            ent += pi * entropy(&[p0, p1, ps]);
            if dp == 0 {
                return Err(MomentError::LogDomain("degree-0 literal with t^1 > 0".into()));
            }
            let tr = (p1 + ps) * s.powi(k - 1);
            let q = occupancy_q(p1, tr, dp)?;
            let (v, _) = f_occ(p1, ps, &[tr], &[dp], &[q], opts.variant)?;
            occ += 2.0 * pi * v;
        }
        Ok((ent, occ, types, dropped))
    });
    let (mut ent, mut occ, mut types, mut dropped) = (0.0, 0.0, 0, 0.0);
    for r in rows {
        let (e, o, t, d) = r?;
        ent += e;
        occ += o;
        types += t;
        dropped += d;
    }
    Ok((ent, occ, types, dropped))
}

/// Per-sample ∏ϑ^0 values of random slot tuples, in a deterministic order.
fn sample_tuples(ens: &PoissonEnsemble, opts: &EnsembleOptions) -> Result<Vec<Vec<(f64, f64, f64)>>> {
    let pos = WeightedIndex::new(&ens.size_biased).map_err(|e| MomentError::InvalidParameter(e.to_string()))?;
    let neg = WeightedIndex::new(&ens.pmf).map_err(|e| MomentError::InvalidParameter(e.to_string()))?;
    let chunks = map_chunks(opts.exec, opts.samples as u64, CHUNK, |lo, hi| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (lo / CHUNK));
        (lo..hi)
            .map(|_| {
                (0..ens.k)
                    .map(|_| loop {
                        let dp = ens.d_min as i64 + pos.sample(&mut rng) as i64;
                        let dn = ens.d_min as i64 + neg.sample(&mut rng) as i64;
                        let sig = ens.signature_f64(dp - dn);
                        if feasible(sig) {
                            break sig;
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Control-variate mean of `f` given `x` with known mean `mx`; returns
/// (estimate, standard error).
fn control_variate(f: &[f64], x: &[f64], mx: f64) -> (f64, f64) {
    let n = f.len() as f64;
    let mf = f.iter().sum::<f64>() / n;
    let mxs = x.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (a, b) in f.iter().zip(x) {
        cov += (a - mf) * (b - mxs);
        var += (b - mxs) * (b - mxs);
    }
    let beta = if var > 0.0 { cov / var } else { 0.0 };
    let est = mf - beta * (mxs - mx);
    let resid: f64 = f.iter().zip(x).map(|(a, b)| (a - mf - beta * (b - mxs)).powi(2)).sum();
    (est, (resid / (n - 1.0).max(1.0) / n).sqrt())
}

/// The first-moment rate on the ensemble at density r.
pub fn ensemble_first_moment(k: usize, r: f64, opts: &EnsembleOptions) -> Result<EnsembleRate> {
    if opts.samples < 2 {
        return Err(MomentError::InvalidParameter("need at least two samples".into()));
    }
    let ens = PoissonEnsemble::new(k, r, opts.window)?;
    let (ent, occ, literal_types, dropped) = literal_terms(&ens, opts)?;
    let tuples = sample_tuples(&ens, opts)?;
    let vals = map_range(opts.exec, tuples.len(), |i| -> Result<(f64, f64)> {
        let t = &tuples[i];
        let p1: Vec<f64> = t.iter().map(|s| s.0).collect();
        let p0: Vec<f64> = t.iter().map(|s| s.1).collect();
        let ps: Vec<f64> = t.iter().map(|s| s.2).collect();
        let mut out = Vec::with_capacity(k);
        lambda_map_f64(&p1, &p0, &ps, &mut out);
        let lr: Vec<f64> = out.iter().map(|o| o.0).collect();
        let lp: Vec<f64> = out.iter().map(|o| o.1).collect();
        let q = solve_validity(&lr, &lp, opts.tol)?;
        Ok((f_val(&lr, &lp, &q).0, p0.iter().product()))
    });
    let mut fv = Vec::with_capacity(vals.len());
    let mut xv = Vec::with_capacity(vals.len());
    for v in vals {
        let (a, b) = v?;
        fv.push(a);
        xv.push(b);
    }
    let s = ens.mean_theta0();
    let (val, se) = control_variate(&fv, &xv, s.powi(k as i32));
    let components = RateComponents {
        entropy: ent,
        occupancy: occ,
        validity: r * val,
        validity_per_clause: val,
        polylog_c: f64::NAN,
    };
    Ok(EnsembleRate {
        k,
        r,
        rate: ent + occ + r * val,
        components,
        validity_stderr: se,
        samples: opts.samples,
        literal_types,
        truncation_error: ens.truncation_error + dropped,
        mean_theta0: s,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticTerm {
    pub name: String,
    pub value: f64,
    pub claim: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticReport {
    pub k: usize,
    pub r: f64,
    pub rate: EnsembleRate,
    pub terms: Vec<AsymptoticTerm>,
    /// Deviation of the validity term from −2^{−k} + k2^{−2k}, the other
    /// constant in circulation.
    pub validity_alt_deviation: f64,
}

impl AsymptoticReport {
    pub fn all_within(&self) -> bool {
        self.terms.iter().all(|t| t.within)
    }
}

/// Compares the three rate components with their leading-order expansions.
pub fn asymptotic_terms(k: usize, r: f64, opts: &EnsembleOptions) -> Result<AsymptoticReport> {
    if k < 6 {
        return Err(MomentError::InvalidParameter(format!("the expansion needs k ≥ 6, got {k}")));
    }
    let rate = ensemble_first_moment(k, r, opts)?;
    let kf = k as f64;
    let ln2 = std::f64::consts::LN_2;
    let p = |e: f64| e.exp2();
    let main_tol = kf.powi(3) * p(-1.5 * kf);
    let val_tol = kf.powi(3) * p(-2.5 * kf) + rate.truncation_error;
    let term = |name: &str, value: f64, claim: f64, tolerance: f64| {
        let deviation = (value - claim).abs();
        AsymptoticTerm { name: name.into(), value, claim, deviation, tolerance, within: deviation <= tolerance }
    };
    let c = &rate.components;
    let terms = vec![
        term("entropy", c.entropy, ln2 + p(-kf - 1.0), main_tol),
        term("occupancy", c.occupancy, -p(-kf) - kf * p(-kf) * ln2, main_tol),
        term("validity", c.validity_per_clause, -p(-kf) + kf * p(-2.0 * kf - 1.0), val_tol),
    ];
    let validity_alt_deviation = (c.validity_per_clause - (-p(-kf) + kf * p(-2.0 * kf))).abs();
    Ok(AsymptoticReport { k, r, rate, terms, validity_alt_deviation })
}

#[derive(Debug, Clone, Serialize)]
pub struct FhatPoint {
    /// Interpolation weight between t⊗t (0) and diag(t) (1).
    pub lambda: f64,
    /// Disagreement fraction (1 − λ)/2.
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleFhat {
    pub k: usize,
    pub r: f64,
    pub points: Vec<FhatPoint>,
    pub max: f64,
    pub argmax_lambda: f64,
}

/// f̂ along ω(λ) = (1 − λ)t⊗t + λ·diag(t) with slot yellow overlap
/// (1 − λ)y² + λy, for λ in the mid-overlap range
/// [2^{1−0.49k}, 1 − 2^{1−0.99k}].
pub fn ensemble_fhat(k: usize, r: f64, grid: usize, opts: &EnsembleOptions) -> Result<EnsembleFhat> {
    if grid < 2 {
        return Err(MomentError::InvalidParameter("grid needs two points".into()));
    }
    let ens = PoissonEnsemble::new(k, r, opts.window)?;
    // the literal joint depends on δ only
    let degrees: Vec<u32> = ens.degrees().collect();
    let nd = degrees.len();
    let mut by_delta = vec![0.0; 2 * nd - 1];
    for (i, &a) in degrees.iter().enumerate() {
        for (j, &b) in degrees.iter().enumerate() {
            by_delta[i + nd - 1 - j] += ens.prob(a) * ens.prob(b);
        }
    }
    let tuples = sample_tuples(&ens, opts)?;
    let y0: Vec<Vec<f64>> = tuples.iter().map(|t| t.iter().map(|s| s.1).collect()).collect();
    let kf = k as f64;
    let lo = (1.0 - 0.49 * kf).exp2();
    let hi = 1.0 - (1.0 - 0.99 * kf).exp2();
    let points = map_range(opts.exec, grid, |g| {
        let lambda = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let mut ent = 0.0;
        for (i, &w) in by_delta.iter().enumerate() {
            let sig = ens.signature_f64(i as i64 - (nd as i64 - 1));
            if w == 0.0 || !feasible(sig) {
                continue;
            }
            let (p1, p0, ps) = sig;
            let t = [p0, p1, ps];
            let mut om = [0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    om[3 * a + b] = (1.0 - lambda) * t[a] * t[b] + if a == b { lambda * t[a] } else { 0.0 };
                }
            }
            ent += w * entropy(&om);
        }
        let mut val = 0.0;
        for y in &y0 {
            let py: f64 = y.iter().product();
            let pyy: f64 = y.iter().map(|&v| (1.0 - lambda) * v * v + lambda * v).product();
            val += (1.0 - 2.0 * py + pyy).ln();
        }
        val /= y0.len() as f64;
        FhatPoint { lambda, y: (1.0 - lambda) / 2.0, value: ent + r * val }
    });
    let (mut max, mut argmax_lambda) = (f64::NEG_INFINITY, f64::NAN);
    for p in &points {
        if p.value > max {
            max = p.value;
            argmax_lambda = p.lambda;
        }
    }
    Ok(EnsembleFhat { k, r, points, max, argmax_lambda })
}
