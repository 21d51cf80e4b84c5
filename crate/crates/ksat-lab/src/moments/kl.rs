//! Entropy and Kullback–Leibler divergence with the 0·ln 0 = 0 convention.

use super::Scalar;

pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter().fold(T::cst(0.0), |acc, &x| acc - x.xlnx())
}

/// Σ p ln(p/q). `q` need not be normalized; terms with p = 0 vanish.
pub fn kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).fold(T::cst(0.0), |acc, (&a, &b)| acc + a.xlogy(b))
}

/// KL between Bernoulli(p) and Bernoulli(q).
pub fn kl_bern<T: Scalar>(p: T, q: T) -> T {
    let one = T::cst(1.0);
    p.xlogy(q) + (one - p).xlogy(one - q)
}

/// Mass-weighted divergence T·KL(x/T ‖ q) for a split x of total T = Σx.
pub fn kl_split<T: Scalar>(x: &[T], q: &[T]) -> T {
    let total = x.iter().fold(T::cst(0.0), |a, &b| a + b);
    if total.val() == 0.0 {
        return T::cst(0.0);
    }
    x.iter().zip(q).fold(T::cst(0.0), |acc, (&a, &b)| acc + a.xlogy(total * b))
}
