//! The separability bound ψ(O, γ) on the 3×3 literal overlap matrix O of two
//! covers, and the one-dimensional middle-ground bound.

use serde::Serialize;

use super::kl::{entropy, kl};
use super::{MomentError, Result};
use crate::par::{map_range, Exec};

/// Clause overlap classes in the order (yy, rg, ry, gr, yr, cc).
pub const PSI_CLASSES: [&str; 6] = ["yy", "rg", "ry", "gr", "yr", "cc"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiInput {
    pub o10: f64,
    pub o1s: f64,
    pub gamma: [f64; 6],
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiValue {
    pub psi: f64,
    /// O[z1][z2] with z ordered (0, 1, *).
    pub o: [[f64; 3]; 3],
    pub g: [f64; 6],
    pub entropy: f64,
    pub kl: f64,
    /// 1 − Σ_z O^{zz}.
    pub delta: f64,
}

/// ε_k = c·2^{−k/3}.
pub fn epsilon_k(k: usize, c: f64) -> f64 {
    c * (-(k as f64) / 3.0).exp2()
}

/// Rebuilds O from (O^{10}, O^{1*}) using the symmetry relations.
pub fn overlap_matrix(k: usize, o10: f64, o1s: f64) -> Result<[[f64; 3]; 3]> {
    let h = 0.5 - (-(k as f64) - 1.0).exp2();
    let diag = h - o10 - o1s;
    let ss = (-(k as f64)).exp2() - 2.0 * o1s;
    let o = [[diag, o10, o1s], [o10, diag, o1s], [o1s, o1s, ss]];
    if o.iter().flatten().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(MomentError::Infeasible(format!("O^10 = {o10}, O^1* = {o1s} give entries outside [0, 1]")));
    }
    Ok(o)
}

/// g(O) in the order (yy, rg, ry, gr, yr, cc). The (r,g) and (r,y) entries
/// use the exponents of the underlying clause counts: k−1 free slots besides
/// the red one, and k−2 besides the red and the single non-yellow partner.
pub fn g_of_o(k: usize, o: &[[f64; 3]; 3]) -> [f64; 6] {
    let kf = k as f64;
    let ki = k as i32;
    let (o00, o01, o0s) = (o[0][0], o[0][1], o[0][2]);
    let (o10, o1s) = (o[1][0], o[1][2]);
    let (os0, os_) = (o[2][0], o[2][2]);
    let row0 = o00 + o01 + o0s;
    let col0 = o00 + o[1][0] + o[2][0];
    let row_s = o[2][0] + o[2][1] + o[2][2];
    let col_s = o[0][2] + o[1][2] + o[2][2];
    let yy = kf * (kf - 1.0) * o10 * o01 * o00.powi(ki - 2);
    let rg = kf * o1s * (row0.powi(ki - 1) - o00.powi(ki - 1));
    let ry = kf * o10 * (row0.powi(ki - 1) - o00.powi(ki - 1) - (kf - 1.0) * (o01 + o0s) * o00.powi(ki - 2));
    let cc = 1.0 - row0.powi(ki) - col0.powi(ki) - kf * row_s * row0.powi(ki - 1) - kf * col_s * col0.powi(ki - 1)
        + o00.powi(ki)
        + kf * os0 * o00.powi(ki - 1)
        + kf * o0s * o00.powi(ki - 1)
        + kf * os_ * o00.powi(ki - 1)
        + kf * (kf - 1.0) * os0 * o0s * o00.powi(ki - 2);
    [yy, rg, ry, rg, ry, cc]
}

/// ψ(O, γ) = H(O) − (1 − 8^{−k})·r·KL(γ ‖ g) + 2^{−k}O^{11}.
pub fn separability_psi(k: usize, r: f64, input: &PsiInput) -> Result<PsiValue> {
    if k < 3 || !(r > 0.0) {
        return Err(MomentError::InvalidParameter(format!("k = {k}, r = {r}")));
    }
    let o = overlap_matrix(k, input.o10, input.o1s)?;
    let gamma = input.gamma;
    if gamma.iter().any(|&x| x < 0.0) || (gamma.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(MomentError::Infeasible(format!("γ = {gamma:?} is not a distribution")));
    }
    let slack = (-3.0 * k as f64).exp2();
    let lower = [
        (gamma[0] + gamma[2], 2.0 / r * o[1][0], "γ^yy + γ^ry"),
        (gamma[0] + gamma[4], 2.0 / r * o[0][1], "γ^yy + γ^yr"),
        (gamma[1], 2.0 / r * o[1][2], "γ^rg"),
        (gamma[3], 2.0 / r * o[2][1], "γ^gr"),
    ];
    for (v, b, name) in lower {
        if v < b - slack {
            return Err(MomentError::Infeasible(format!("{name} = {v} below its lower bound {b}")));
        }
    }
    let g = g_of_o(k, &o);
    if gamma.iter().zip(&g).any(|(&x, &y)| x > 0.0 && !(y > 0.0)) {
        return Err(MomentError::LogDomain(format!("g = {g:?} vanishes where γ does not")));
    }
    let flat: Vec<f64> = o.iter().flatten().copied().collect();
    let h = entropy(&flat);
    let d = kl(&gamma, &g);
    let psi = h - (1.0 - slack) * r * d + (-(k as f64)).exp2() * o[1][1];
    Ok(PsiValue { psi, o, g, entropy: h, kl: d, delta: 1.0 - o[0][0] - o[1][1] - o[2][2] })
}

/// ψ at Δ(O) = 0 with all clause mass on (c, c).
pub fn psi_at_origin(k: usize, r: f64) -> Result<PsiValue> {
    separability_psi(k, r, &PsiInput { o10: 0.0, o1s: 0.0, gamma: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0] })
}

fn binary_entropy(y: f64) -> f64 {
    entropy(&[y, 1.0 - y])
}

#[derive(Debug, Clone, Serialize)]
pub struct MiddleGroundScan {
    pub k: usize,
    pub r: f64,
    pub grid: usize,
    /// max of H(y) + r·ln[1 − 2^{1−k} + ((1 − y)/2)^k].
    pub max: f64,
    pub argmax: f64,
    /// The same with the ln 2 choice of the first cover added.
    pub max_with_base_entropy: f64,
    pub argmax_with_base_entropy: f64,
    pub points: Vec<(f64, f64)>,
}

/// Scans y over [2^{−0.99k}, 1/2 − 2^{−0.49k}] ∪ [1/2 + 2^{−0.49k}, 1],
/// splitting the grid between the two pieces by length.
pub fn scan_middle_ground(k: usize, r: f64, grid: usize, exec: Exec) -> Result<MiddleGroundScan> {
    if grid < 4 || k < 3 {
        return Err(MomentError::InvalidParameter(format!("k = {k}, grid = {grid}")));
    }
    let kf = k as f64;
    let a = (-0.99 * kf).exp2();
    let b = 0.5 - (-0.49 * kf).exp2();
    let c = 0.5 + (-0.49 * kf).exp2();
    if b <= a {
        return Err(MomentError::InvalidParameter(format!("empty scan range at k = {k}")));
    }
    let n1 = (((b - a) / (b - a + 1.0 - c)) * grid as f64).round().clamp(2.0, grid as f64 - 2.0) as usize;
    let n2 = grid - n1;
    let base = 1.0 - (1.0 - kf).exp2();
    let points = map_range(exec, grid, |i| {
        let y = if i < n1 {
            a + (b - a) * i as f64 / (n1 - 1) as f64
        } else {
            c + (1.0 - c) * (i - n1) as f64 / (n2 - 1) as f64
        };
        (y, binary_entropy(y) + r * (base + ((1.0 - y) / 2.0).powi(k as i32)).ln())
    });
    let ln2 = std::f64::consts::LN_2;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut best2 = (f64::NEG_INFINITY, f64::NAN);
    for &(y, v) in &points {
        if v > best.0 {
            best = (v, y);
        }
        if v + ln2 > best2.0 {
            best2 = (v + ln2, y);
        }
    }
    Ok(MiddleGroundScan {
        k,
        r,
        grid,
        max: best.0,
        argmax: best.1,
        max_with_base_entropy: best2.0,
        argmax_with_base_entropy: best2.1,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::bound_main;

    #[test]
    fn overlap_matrix_sums_to_one() {
        let o = overlap_matrix(8, 0.01, 0.0005).unwrap();
        let s: f64 = o.iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(overlap_matrix(8, 0.6, 0.0).is_err());
    }

    #[test]
    fn g_sums_below_one() {
        let o = overlap_matrix(6, 0.05, 0.002).unwrap();
        let g = g_of_o(6, &o);
        assert!(g.iter().all(|&x| x >= 0.0));
        assert!(g.iter().sum::<f64>() <= 1.0);
    }

    #[test]
    fn origin_value() {
        let k = 10;
        let r = bound_main(k).unwrap();
        let v = psi_at_origin(k, r).unwrap();
        assert_eq!(v.delta, 0.0);
        assert!(v.psi.is_finite());
        // of order 2^{-k}
        assert!(v.psi.abs() < 4.0 * (-(k as f64)).exp2());
    }

    #[test]
    fn infeasible_gamma_rejected() {
        let r = bound_main(8).unwrap();
        let bad = PsiInput { o10: 0.05, o1s: 0.0, gamma: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0] };
        assert!(matches!(separability_psi(8, r, &bad), Err(MomentError::Infeasible(_))));
        let unnormalized = PsiInput { o10: 0.0, o1s: 0.0, gamma: [0.0, 0.0, 0.0, 0.0, 0.0, 0.9] };
        assert!(separability_psi(8, r, &unnormalized).is_err());
    }

    #[test]
    fn middle_ground_k10() {
        let s = scan_middle_ground(10, bound_main(10).unwrap(), 10_000, Exec::Parallel).unwrap();
        assert_eq!(s.points.len(), 10_000);
        assert!(s.max < 0.0);
        assert!(s.max_with_base_entropy > s.max);
    }
}
