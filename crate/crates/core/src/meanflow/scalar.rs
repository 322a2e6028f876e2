use core::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

/// Scalar arithmetic shared by `f64` and [`DualScalar`], so oracles can be
/// written once and differentiated exactly in forward mode.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn value(self) -> f64 {
        self
    }

    fn exp(self) -> Self {
        Float::exp(self)
    }
}

/// First-order dual number `re + du·ε`, ε² = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScalar {
    pub re: f64,
    pub du: f64,
}

impl DualScalar {
    pub fn new(re: f64, du: f64) -> Self {
        Self { re, du }
    }
}

impl Add for DualScalar {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for DualScalar {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for DualScalar {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl Div for DualScalar {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.du - q * o.du) / o.re)
    }
}

impl Neg for DualScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl Real for DualScalar {
    fn from_f64(v: f64) -> Self {
        Self::new(v, 0.0)
    }

    fn value(self) -> f64 {
        self.re
    }

    fn exp(self) -> Self {
        let e = Float::exp(self.re);
        Self::new(e, e * self.du)
    }
}
