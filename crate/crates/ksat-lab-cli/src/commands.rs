use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use num_rational::{BigRational, Rational64};
use serde_json::{json, Value};

use ksat_lab::cover::{critical_clauses, enumerate_covers, enumerate_valid_shades, is_cover, CoverMap};
use ksat_lab::formula::{gen_regular, gen_uniform, read_dimacs, write_dimacs, Formula};
use ksat_lab::moments::ensemble::{ensemble_fhat, ensemble_first_moment, EnsembleOptions};
use ksat_lab::moments::{
    check_concavity, check_stationary, epsilon_k, first_moment_rate, product_overlap, psi_at_origin,
    regular_threshold, regular_threshold_with, regular_xi, scan_middle_ground, second_moment_f, solve_first_moment,
};
use ksat_lab::pruning::{check_degree_bounds_with, parse_density, prune_with, PruneOptions};
use ksat_lab::selftest::{run_selftest, SelftestOptions};
use ksat_lab::solver::{
    empirical_threshold_with, estimate_sat_probability, monotonicity_violations, transition_width, SatEstimate,
};
use ksat_lab::sp::{
    assign_types, check_type_identity, delta_regime, regular_type_system, sp_marginal, CloneDist, Signature, TypeMode,
    TypeSystem,
};
use ksat_lab::thresholds::{bound_main, report};
use ksat_lab::twosat::{extend_cover, extendible_by_brute_force, Extension};
use ksat_lab::Exec;

use crate::checkpoint::{float_key, Checkpoint};
use crate::output::{envelope, f17, to_json_string, write_csv, write_text};
use crate::*;

/// A failed self-check; exit status 2.
#[derive(Debug)]
pub struct ContractViolation(pub String);

impl fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ContractViolation {}

pub fn dispatch(cmd: &Command, out: Option<&Path>) -> Result<()> {
    // the subcommand's own arguments, without the variant tag
    let config = match serde_json::to_value(cmd)? {
        Value::Object(o) => o.into_iter().next().map(|(_, v)| v).unwrap_or(Value::Null),
        v => v,
    };
    let name = cmd.name();
    let result = match cmd {
        Command::Gen(a) => return write_text(out, &gen(a)?),
        Command::Prune(a) => prune(a)?,
        Command::Covers(a) => covers(a)?,
        Command::Extend(a) => extend(a)?,
        Command::SpMarginals(a) => sp_marginals(a)?,
        Command::Types(a) => types(a)?,
        Command::FirstMoment(a) => first_moment(a)?,
        Command::SecondMoment(a) => second_moment(a)?,
        Command::PsiScan(a) => psi_scan(a)?,
        Command::Fhat(a) => fhat(a)?,
        Command::RegularXi(a) => regular(a, name, &config)?,
        Command::Bounds(a) => bounds(a)?,
        Command::Empirical(a) => empirical(a, name, &config)?,
        Command::Selftest(a) => {
            let (doc, passed) = selftest(a)?;
            write_text(out, &to_json_string(&envelope(name, config, doc))?)?;
            if !passed {
                return Err(ContractViolation("self-test failed".into()).into());
            }
            return Ok(());
        }
    };
    write_text(out, &to_json_string(&envelope(name, config, result))?)
}

fn read_formula(path: &Path) -> Result<Formula> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_dimacs(&text).with_context(|| format!("parsing {}", path.display()))
}

fn density(s: &str) -> Result<Rational64> {
    parse_density(s).ok_or_else(|| anyhow!("invalid density {s:?}; expected a decimal or p/q"))
}

fn density_f64(s: &str) -> Result<f64> {
    let q = density(s)?;
    Ok(*q.numer() as f64 / *q.denom() as f64)
}

fn range<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T)> {
    let parsed = s.split_once(':').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    parsed.ok_or_else(|| anyhow!("invalid {what} {s:?}; expected lo:hi"))
}

/// Always "p/q", integers included.
fn pq(x: &BigRational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

fn pq64(x: &Rational64) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

fn signature_json(s: &Signature) -> Value {
    let [p1, p0, ps] = s.f64s();
    json!({"p1": p1, "p0": p0, "pstar": ps, "exact": {"p1": pq(&s.p1), "p0": pq(&s.p0), "pstar": pq(&s.pstar)}})
}

fn dist_json(d: &CloneDist) -> Value {
    let f = d.f64s();
    json!({"r": f.r, "b": f.b, "g": f.g, "y": f.y, "exact": {"r": pq(&d.r), "b": pq(&d.b), "g": pq(&d.g), "y": pq(&d.y)}})
}

fn gen(a: &GenArgs) -> Result<String> {
    let f = match a.kind {
        GenKind::Uniform => {
            let m = match (a.m, a.r) {
                (Some(m), _) => m,
                (None, Some(r)) if r >= 0.0 => (r * a.n as f64).ceil() as usize,
                _ => bail!("uniform generation needs --m or a non-negative --r"),
            };
            gen_uniform(a.k, a.n, m, a.seed)?
        }
        GenKind::Regular => {
            let d = a.d.ok_or_else(|| anyhow!("regular generation needs --d"))?;
            gen_regular(a.k, d, a.n, a.seed)?
        }
    };
    Ok(write_dimacs(&f))
}

fn prune(a: &PruneArgs) -> Result<Value> {
    let f = read_formula(&a.dimacs)?;
    let k = a.k.unwrap_or(f.k());
    let r = density(&a.r)?;
    let opts = PruneOptions { recompute_target: a.recompute_target, window: a.window.as_deref().map(density).transpose()? };
    let (pruned, rep) = prune_with(&f, k, r, &opts);
    let after = check_degree_bounds_with(&pruned, k, r, &opts);
    if let Some(p) = &a.pruned {
        write_text(Some(p), &write_dimacs(&pruned))?;
    }
    Ok(json!({
        "k": k,
        "r": pq64(&r),
        "input": {"n_vars": f.n_vars(), "n_clauses": f.n_clauses()},
        "report": rep,
        "degree_bounds_after": after,
    }))
}

fn covers(a: &CoversArgs) -> Result<Value> {
    let f = read_formula(&a.dimacs)?;
    if let Some(s) = &a.check {
        let z = CoverMap::parse(s).ok_or_else(|| anyhow!("invalid cover map {s:?}; use the symbols 0, 1 and *"))?;
        let verdict = is_cover(&f, &z)?;
        let critical = critical_clauses(&f, &z)?;
        return Ok(json!({"map": s, "verdict": verdict, "critical_clauses": critical}));
    }
    let cs = enumerate_covers(&f, a.max_vars, Exec::Parallel)?;
    let mut doc = json!({
        "n_vars": f.n_vars(),
        "n_clauses": f.n_clauses(),
        "count": cs.len(),
        "covers": cs.iter().map(|z| z.to_string()).collect::<Vec<_>>(),
    });
    if a.shades {
        let shades = enumerate_valid_shades(&f, a.max_vars)?;
        doc["shades"] = shades.iter().map(|s| s.to_json(&f)).collect();
    }
    Ok(doc)
}

fn bits(a: &[bool]) -> String {
    a.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn extend(a: &ExtendArgs) -> Result<Value> {
    let f = read_formula(&a.dimacs)?;
    let maps = match &a.cover {
        Some(s) => vec![CoverMap::parse(s).ok_or_else(|| anyhow!("invalid cover map {s:?}"))?],
        None => enumerate_covers(&f, a.max_vars, Exec::Parallel)?,
    };
    let mut rows = Vec::with_capacity(maps.len());
    for z in &maps {
        let mut row = match extend_cover(&f, z)? {
            Extension::Assignment(s) => json!({"cover": z.to_string(), "status": "assignment", "assignment": bits(&s)}),
            Extension::NotExtendible => json!({"cover": z.to_string(), "status": "not-extendible"}),
        };
        if a.brute_force {
            row["brute_force_extendible"] = json!(extendible_by_brute_force(&f, z, a.max_vars)?);
        }
        rows.push(row);
    }
    Ok(json!({"n_vars": f.n_vars(), "extensions": rows}))
}

fn sp_marginals(a: &SpArgs) -> Result<Value> {
    let (lo, hi) = match (&a.delta, &a.delta_range) {
        (Some(d), _) => (*d, *d),
        (None, Some(s)) => range::<i64>(s, "delta range")?,
        (None, None) => (0, 0),
    };
    if lo > hi {
        bail!("empty delta range {lo}:{hi}");
    }
    let mut rows = Vec::new();
    for d in lo..=hi {
        let mut v = signature_json(&sp_marginal(a.k, d)?);
        v["delta"] = json!(d);
        rows.push(v);
    }
    Ok(json!({"k": a.k, "delta_regime": delta_regime(a.k), "marginals": rows}))
}

fn parse_regular(s: &str) -> Result<(usize, u32)> {
    range::<u32>(s, "regular system").map(|(k, d)| (k as usize, d))
}

fn build_system(a: &SystemArgs) -> Result<TypeSystem> {
    if let Some(s) = &a.regular {
        let (k, d) = parse_regular(s)?;
        return Ok(regular_type_system(k, d)?);
    }
    let Some(path) = &a.dimacs else {
        bail!("need --regular K:D or --dimacs FILE with --r");
    };
    let r = density(a.r.as_deref().ok_or_else(|| anyhow!("--dimacs needs --r"))?)?;
    let f = read_formula(path)?;
    let k = a.k.unwrap_or(f.k());
    let opts = PruneOptions { recompute_target: false, window: a.window.as_deref().map(density).transpose()? };
    let f = if a.prune { prune_with(&f, k, r, &opts).0 } else { f };
    let mode = match a.mode {
        Mode::Full => TypeMode::Full,
        Mode::DegreePair => TypeMode::DegreePair,
    };
    Ok(assign_types(&f, k, r, mode, &opts)?)
}

fn system_json(ts: &TypeSystem) -> Value {
    let lits: Vec<Value> = ts
        .literal_types
        .iter()
        .map(|t| {
            json!({
                "key": t.key,
                "degrees": [t.d_pos, t.d_neg],
                "signature": signature_json(&t.signature),
                "classes": t.classes.iter().map(|c| json!({"mult": c.mult, "dist": dist_json(&c.dist)})).collect::<Vec<_>>(),
                "negation": t.negation,
                "count": t.count,
                "weight": t.weight,
                "weight_exact": t.weight_exact.as_ref().map(pq),
            })
        })
        .collect();
    let clauses: Vec<Value> = ts
        .clause_types
        .iter()
        .map(|l| {
            json!({
                "key": l.key,
                "slots": l.slots.iter().map(|s| json!([s.literal_type, s.class])).collect::<Vec<_>>(),
                "count": l.count,
                "weight": l.weight,
                "weight_exact": l.weight_exact.as_ref().map(pq),
            })
        })
        .collect();
    json!({
        "k": ts.k,
        "r": ts.r,
        "density": ts.density,
        "density_exact": ts.density_exact.as_ref().map(pq),
        "n_vars": ts.n_vars,
        "n_clauses": ts.n_clauses,
        "mode": match ts.mode { TypeMode::Full => "full", TypeMode::DegreePair => "degree-pair" },
        "truncation_error": ts.truncation_error,
        "literal_types": lits,
        "clause_types": clauses,
    })
}

fn types(a: &SystemArgs) -> Result<Value> {
    let ts = build_system(a)?;
    let id = check_type_identity(&ts);
    if !id.holds() {
        return Err(ContractViolation(format!(
            "Λ identity fails on {} slots ({} conservation failures)",
            id.failures.len(),
            id.conservation_failures.len()
        ))
        .into());
    }
    Ok(json!({
        "system": system_json(&ts),
        "identity": {"holds": true, "checked": id.checked, "max_dev_from_2_pow_minus_k": id.max_dev_from_2_pow_minus_k},
    }))
}

fn first_moment(a: &FirstArgs) -> Result<Value> {
    if let Some(k) = a.ensemble {
        let r = density_f64(a.system.r.as_deref().ok_or_else(|| anyhow!("--ensemble needs --r"))?)?;
        let opts = EnsembleOptions { samples: a.samples, seed: a.seed, ..Default::default() };
        return Ok(serde_json::to_value(ensemble_first_moment(k, r, &opts)?)?);
    }
    let ts = build_system(&a.system)?;
    let params = solve_first_moment(&ts, a.tol)?;
    let rate = first_moment_rate(&ts, &params)?;
    Ok(json!({
        "k": ts.k,
        "density": ts.density,
        "literal_types": ts.literal_types.len(),
        "clause_types": ts.clause_types.len(),
        "rate": rate,
    }))
}

fn second_moment(a: &SecondArgs) -> Result<Value> {
    let ts = build_system(&a.system)?;
    Ok(match a.check {
        SecondCheck::Evaluate => {
            let ov = product_overlap(&ts)?;
            let sm = second_moment_f(&ts, &ov, 1e-9)?;
            json!({
                "f": sm.f,
                "components": sm.components,
                "residual": sm.residual,
                "first_rate": sm.first_rate,
                "f_minus_twice_first": sm.f - 2.0 * sm.first_rate,
            })
        }
        SecondCheck::Stationary => serde_json::to_value(check_stationary(&ts, a.h)?)?,
        SecondCheck::Concavity => serde_json::to_value(check_concavity(&ts, a.samples, a.radius, a.seed)?)?,
    })
}

fn default_r(k: usize, r: Option<f64>) -> Result<f64> {
    Ok(match r {
        Some(r) => r,
        None => bound_main(k)?,
    })
}

fn psi_scan(a: &PsiArgs) -> Result<Value> {
    let r = default_r(a.k, a.r)?;
    let origin = psi_at_origin(a.k, r)?;
    let scan = scan_middle_ground(a.k, r, a.grid, Exec::Parallel)?;
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<String>> = scan.points.iter().map(|&(y, v)| vec![f17(y), f17(v)]).collect();
        write_csv(p, &["y", "value"], &rows)?;
    }
    let eps = epsilon_k(a.k, a.eps_c);
    let mut scan = serde_json::to_value(&scan)?;
    scan.as_object_mut().map(|o| o.remove("points"));
    Ok(json!({
        "r": r,
        "origin": origin,
        "epsilon_k": eps,
        "origin_bound": eps * (-(a.k as f64)).exp2(),
        "middle_ground": scan,
    }))
}

fn fhat(a: &FhatArgs) -> Result<Value> {
    let r = default_r(a.k, a.r)?;
    let opts = EnsembleOptions { samples: a.samples, seed: a.seed, ..Default::default() };
    let res = ensemble_fhat(a.k, r, a.grid, &opts)?;
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<String>> = res.points.iter().map(|q| vec![f17(q.lambda), f17(q.y), f17(q.value)]).collect();
        write_csv(p, &["lambda", "y", "value"], &rows)?;
    }
    Ok(serde_json::to_value(res)?)
}

/// Reports restored checkpoint entries on stderr, never in the primary output.
fn note_restored(ck: &Checkpoint) {
    if ck.restored > 0 {
        eprintln!("resumed {} entries from the checkpoint", ck.restored);
    }
}

fn regular(a: &RegularArgs, name: &str, config: &Value) -> Result<Value> {
    let range = a.d_range.as_deref().map(|s| range::<u32>(s, "degree range")).transpose()?;
    let ck = Checkpoint::open(a.resume.as_deref(), name, config)?;
    note_restored(&ck);
    let ck = Mutex::new(ck);
    let io_error: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let xi = |d: u32| {
        let key = d.to_string();
        if let Some(v) = ck.lock().unwrap().get::<f64>(&key) {
            return Ok(v);
        }
        let v = regular_xi(a.k, d)?;
        if let Err(e) = ck.lock().unwrap().put(&key, &v) {
            io_error.lock().unwrap().get_or_insert(e);
        }
        Ok(v)
    };
    let scan = regular_threshold_with(a.k, range, Exec::Parallel, &xi)?;
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<String>> = scan.values.iter().map(|&(d, x)| vec![d.to_string(), f17(x)]).collect();
        write_csv(p, &["d", "xi"], &rows)?;
    }
    Ok(json!({
        "k": scan.k,
        "d_star": scan.d_star,
        "density_star": scan.density_star(),
        "monotone": scan.monotone,
        "values": scan.values,
    }))
}

fn bounds(a: &BoundsArgs) -> Result<Value> {
    let (lo, hi) = match (a.k, &a.k_range) {
        (Some(k), _) => (k, k),
        (None, Some(s)) => range::<usize>(s, "k range")?,
        (None, None) => bail!("need --k or --k-range"),
    };
    if lo > hi {
        bail!("empty k range {lo}:{hi}");
    }
    let mut tables = Vec::new();
    for k in lo..=hi {
        let dstar = if a.regular { regular_threshold(k, None, Exec::Parallel)?.d_star } else { None };
        tables.push(report(k, dstar)?);
    }
    if let Some(p) = &a.csv {
        let rows: Vec<Vec<String>> = tables
            .iter()
            .map(|t| {
                vec![
                    t.k.to_string(),
                    f17(t.main),
                    f17(t.ap_lower),
                    f17(t.condensation),
                    f17(t.first_moment_ceiling),
                    f17(t.gap),
                    t.regular_dstar.map(|d| d.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(p, &["k", "main", "ap_lower", "condensation", "first_moment_ceiling", "gap", "regular_dstar"], &rows)?;
    }
    Ok(if a.k.is_some() { serde_json::to_value(&tables[0])? } else { serde_json::to_value(&tables)? })
}

fn grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| anyhow!("invalid curve {s:?}"))?;
    let [lo, hi, step] = parts[..] else {
        bail!("invalid curve {s:?}; expected lo:hi:step");
    };
    if !(step > 0.0) || !(lo <= hi) {
        bail!("invalid curve {s:?}; need lo ≤ hi and step > 0");
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn empirical(a: &EmpiricalArgs, name: &str, config: &Value) -> Result<Value> {
    let mut ck = Checkpoint::open(a.resume.as_deref(), name, config)?;
    note_restored(&ck);
    let mut io_error = None;
    let mut estimate = |r: f64| {
        let key = float_key(r);
        if let Some(e) = ck.get::<SatEstimate>(&key) {
            return Ok(e);
        }
        let e = estimate_sat_probability(a.k, a.n, r, a.trials, a.seed, Exec::Parallel)?;
        if let Err(err) = ck.put(&key, &e) {
            io_error.get_or_insert(err);
        }
        Ok(e)
    };
    let th = empirical_threshold_with(a.r_lo, a.r_hi, a.tol, &mut estimate)?;
    let curve = match &a.curve {
        Some(s) => Some(grid(s)?.into_iter().map(&mut estimate).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };
    if let Some(e) = io_error {
        return Err(e);
    }
    if let Some(p) = &a.csv {
        let mut all: Vec<&SatEstimate> = th.curve.iter().chain(curve.iter().flatten()).collect();
        all.sort_by(|x, y| x.r.total_cmp(&y.r));
        all.dedup_by(|x, y| x.r == y.r);
        let rows: Vec<Vec<String>> = all
            .iter()
            .map(|e| vec![f17(e.r), e.m.to_string(), e.trials.to_string(), e.sat.to_string(), f17(e.fraction), f17(e.stderr)])
            .collect();
        write_csv(p, &["r", "m", "trials", "sat", "fraction", "stderr"], &rows)?;
    }
    let curve_json = curve.as_ref().map(|c| {
        json!({
            "points": c,
            "non_monotone": monotonicity_violations(c),
            "transition_width": transition_width(c),
        })
    });
    Ok(json!({"threshold": th, "curve": curve_json}))
}

fn selftest(a: &SelftestArgs) -> Result<(Value, bool)> {
    let opts = SelftestOptions {
        seed: a.seed,
        cover_instances: a.cover_instances,
        twosat_instances: a.twosat_instances,
        ..Default::default()
    };
    let rep = run_selftest(&opts);
    for s in &rep.suites {
        eprintln!("{} {} ({} checked)", if s.passed { "PASS" } else { "FAIL" }, s.name, s.checked);
        for f in &s.failures {
            eprintln!("    {f}");
        }
    }
    Ok((serde_json::to_value(&rep)?, rep.all_passed()))
}
