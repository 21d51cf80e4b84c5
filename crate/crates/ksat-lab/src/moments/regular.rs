//! Ξ(k, d): the first-moment rate of the single-type system of random
//! d-regular k-SAT, and its sign-change threshold d*(k).

use serde::Serialize;

use super::{first_moment_rate, solve_first_moment, MomentError, Result};
use crate::par::{map_range, Exec};
use crate::sp::regular_type_system;

pub fn regular_xi(k: usize, d: u32) -> Result<f64> {
    let ts = regular_type_system(k, d)?;
    let p = solve_first_moment(&ts, 1e-12)?;
    Ok(first_moment_rate(&ts, &p)?.rate)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularScan {
    pub k: usize,
    /// (d, Ξ(k, d)) in increasing d.
    pub values: Vec<(u32, f64)>,
    /// max{d : Ξ(k, d) ≥ 0} within the scan.
    pub d_star: Option<u32>,
    /// Ξ strictly decreasing over the scan.
    pub monotone: bool,
}

impl RegularScan {
    /// 2d*/k, the clause density at the threshold.
    pub fn density_star(&self) -> Option<f64> {
        self.d_star.map(|d| 2.0 * d as f64 / self.k as f64)
    }
}

/// Default window around k·2^k ln 2 / 2.
pub fn default_range(k: usize) -> (u32, u32) {
    let kf = k as f64;
    let c = kf.exp2() * std::f64::consts::LN_2;
    let lo = ((kf * (c - 3.0) / 2.0).floor()).max(1.0) as u32;
    let hi = (kf * c / 2.0).ceil() as u32 + k as u32;
    (lo, hi)
}

fn scan<F>(lo: u32, hi: u32, exec: Exec, xi: &F) -> Result<Vec<(u32, f64)>>
where
    F: Fn(u32) -> Result<f64> + Sync + Send,
{
    let ds: Vec<u32> = (lo..=hi).collect();
    map_range(exec, ds.len(), |i| xi(ds[i]).map(|x| (ds[i], x))).into_iter().collect()
}

/// Integer scan of Ξ(k, ·). Without an explicit range the default window is
/// widened until it contains a sign change.
pub fn regular_threshold(k: usize, range: Option<(u32, u32)>, exec: Exec) -> Result<RegularScan> {
    regular_threshold_with(k, range, exec, &|d| regular_xi(k, d))
}

/// [`regular_threshold`] with Ξ(k, ·) supplied by the caller, e.g. backed by
/// a cache of earlier evaluations.
pub fn regular_threshold_with<F>(k: usize, range: Option<(u32, u32)>, exec: Exec, xi: &F) -> Result<RegularScan>
where
    F: Fn(u32) -> Result<f64> + Sync + Send,
{
    let explicit = range.is_some();
    let (mut lo, mut hi) = range.unwrap_or_else(|| default_range(k));
    if lo > hi || lo == 0 {
        return Err(MomentError::InvalidParameter(format!("degree range {lo}:{hi}")));
    }
    let mut values = scan(lo, hi, exec, xi)?;
    if !explicit {
        for _ in 0..8 {
            let width = (hi - lo + 1).max(4);
            if values.first().is_some_and(|v| v.1 < 0.0) && lo > 1 {
                let nlo = lo.saturating_sub(width).max(1);
                let mut more = scan(nlo, lo - 1, exec, xi)?;
                more.append(&mut values);
                values = more;
                lo = nlo;
            } else if values.last().is_some_and(|v| v.1 >= 0.0) {
                let mut more = scan(hi + 1, hi + width, exec, xi)?;
                values.append(&mut more);
                hi += width;
            } else {
                break;
            }
        }
    }
    let monotone = values.windows(2).all(|w| w[1].1 < w[0].1);
    let d_star = values.iter().filter(|v| v.1 >= 0.0).map(|v| v.0).max();
    Ok(RegularScan { k, values, d_star, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_change_k5() {
        let s = regular_threshold(5, None, Exec::Parallel).unwrap();
        assert!(s.monotone);
        let d = s.d_star.unwrap();
        assert!(regular_xi(5, d).unwrap() >= 0.0);
        assert!(regular_xi(5, d + 1).unwrap() < 0.0);
    }

    #[test]
    fn explicit_range_is_not_widened() {
        let s = regular_threshold(5, Some((40, 45)), Exec::Sequential).unwrap();
        assert_eq!(s.values.len(), 6);
        assert_eq!(s.values[0].0, 40);
    }
}
