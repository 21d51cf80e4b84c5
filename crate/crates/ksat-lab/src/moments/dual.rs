use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the rate functions, so they can run on plain floats
/// or on dual numbers for exact directional derivatives.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(x: f64) -> Self;
    fn ln(self) -> Self;
    fn val(self) -> f64;

    /// x·ln(x/y), zero when x = 0.
    fn xlogy(self, y: Self) -> Self {
        if self.val() == 0.0 {
            Self::cst(0.0)
        } else {
            self * (self / y).ln()
        }
    }

    fn xlnx(self) -> Self {
        if self.val() == 0.0 {
            Self::cst(0.0)
        } else {
            self * self.ln()
        }
    }
}

impl Scalar for f64 {
    fn cst(x: f64) -> f64 {
        x
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn val(self) -> f64 {
        self
    }
}

/// Forward-mode dual number a + b·ε with ε² = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Dual {
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Scalar for Dual {
    fn cst(x: f64) -> Dual {
        Dual::new(x, 0.0)
    }
    fn ln(self) -> Dual {
        Dual::new(self.v.ln(), self.d / self.v)
    }
    fn val(self) -> f64 {
        self.v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Scalar>(x: T) -> T {
        x.xlnx() + (x * x + T::cst(1.0)).ln() / x
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let x = 0.37;
        let d = f(Dual::new(x, 1.0)).d;
        let h = 1e-6;
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
        assert_eq!(Dual::cst(0.0).xlnx(), Dual::cst(0.0));
    }
}
