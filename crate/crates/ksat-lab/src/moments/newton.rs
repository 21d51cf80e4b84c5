//! Newton and chord iterations with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{MomentError, Result};

#[derive(Debug, Clone)]
pub struct Solved {
    pub x: Vec<f64>,
    /// Max-norm of the residual at `x`.
    pub residual: f64,
    pub iterations: usize,
}

pub type Factor = LU<f64, Dyn, Dyn>;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Central differences with steps relative to |x_i|, so positive
/// coordinates stay positive.
pub fn jacobian<F>(f: &F, x: &[f64]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = 1e-6 * x[i].abs().max(1e-12);
        xp[i] = x[i] + h;
        let a = f(&xp)?;
        xp[i] = x[i] - h;
        let b = f(&xp)?;
        xp[i] = x[i];
        cols.push(a.iter().zip(&b).map(|(u, v)| (u - v) / (2.0 * h)).collect::<Vec<f64>>());
    }
    let m = cols.first().map_or(0, |c| c.len());
    Some(DMatrix::from_fn(m, n, |r, c| cols[c][r]))
}

fn fail(what: &str, iterations: usize, residual: f64) -> MomentError {
    MomentError::NoConvergence { what: what.to_string(), iterations, residual }
}

/// Newton's method with backtracking on the max-norm residual. `f` returns
/// `None` outside its domain. Returns the last Jacobian factorization too.
pub fn newton<F>(what: &str, x0: Vec<f64>, f: F, tol: f64, max_iter: usize) -> Result<(Solved, Factor)>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0;
    let mut fx = f(&x).ok_or_else(|| MomentError::OutOfRegion(format!("{what}: initial point")))?;
    let mut res = max_norm(&fx);
    for it in 0..max_iter {
        let jac = jacobian(&f, &x).ok_or_else(|| fail(what, it, res))?;
        let lu = jac.lu();
        if res <= tol {
            return Ok((Solved { x, residual: res, iterations: it }, lu));
        }
        let step = lu.solve(&DVector::from_column_slice(&fx)).ok_or_else(|| fail(what, it, res))?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            if let Some(ft) = f(&trial) {
                let rt = max_norm(&ft);
                if rt < res || (rt <= tol && rt.is_finite()) {
                    x = trial;
                    fx = ft;
                    res = rt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(fail(what, it, res));
            }
        }
    }
    if res <= tol {
        let lu = jacobian(&f, &x).ok_or_else(|| fail(what, max_iter, res))?.lu();
        return Ok((Solved { x, residual: res, iterations: max_iter }, lu));
    }
    Err(fail(what, max_iter, res))
}

/// Chord iteration reusing a fixed factorization; for points near the one
/// where it was computed.
pub fn chord<F>(what: &str, x0: Vec<f64>, f: F, lu: &Factor, tol: f64, max_iter: usize) -> Result<Solved>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0;
    let mut fx = f(&x).ok_or_else(|| MomentError::OutOfRegion(format!("{what}: initial point")))?;
    let mut res = max_norm(&fx);
    for it in 0..max_iter {
        if res <= tol {
            return Ok(Solved { x, residual: res, iterations: it });
        }
        let step = lu.solve(&DVector::from_column_slice(&fx)).ok_or_else(|| fail(what, it, res))?;
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
        let ft = f(&trial).ok_or_else(|| fail(what, it, res))?;
        let rt = max_norm(&ft);
        if !(rt < res) {
            return Err(fail(what, it, res));
        }
        x = trial;
        fx = ft;
        res = rt;
    }
    if res <= tol {
        Ok(Solved { x, residual: res, iterations: max_iter })
    } else {
        Err(fail(what, max_iter, res))
    }
}

/// Chord first, falling back to full Newton.
pub fn solve_near<F>(what: &str, x0: Vec<f64>, f: F, lu: &Factor, tol: f64) -> Result<Solved>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    match chord(what, x0.clone(), &f, lu, tol, 30) {
        Ok(s) => Ok(s),
        Err(_) => newton(what, x0, f, tol, 100).map(|(s, _)| s),
    }
}
