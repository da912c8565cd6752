//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`
//! carrying about 106 bits of significand.
//!
//! Only what the reference evaluator needs is here: the four operations,
//! `sqrt`, `exp`, `ln`, `tanh`, `acos` and `powf`. Transcendentals start
//! from the `f64` result and refine it (Newton steps or a reduced Taylor
//! series), giving relative errors near `1e-30` on the ranges the model uses.
//!
//! [`Real`] abstracts over `f64` and [`Dd`] so the same straight-line code
//! runs in either precision.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar operations shared by `f64` and [`Dd`].
pub trait Real:
    Copy
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn acos(self) -> Self;
    fn powf(self, e: f64) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self < Self::from_f64(lo) {
            Self::from_f64(lo)
        } else if self > Self::from_f64(hi) {
            Self::from_f64(hi)
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn sigmoid(self) -> Self {
        crate::numerics::sigmoid(self)
    }
}

/// `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};
pub const PI: Dd = Dd {
    hi: std::f64::consts::PI,
    lo: 1.2246467991473532e-16,
};
const HALF_PI: Dd = Dd {
    hi: std::f64::consts::FRAC_PI_2,
    lo: 6.123233995736766e-17,
};

impl Dd {
    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let (s, f) = two_sum(self.hi, -p);
        let q2 = (s + (f - e + self.lo)) / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    /// `(sin t, cos t)` for `|t| ≤ π/2` by Taylor series.
    fn sin_cos_small(t: Dd) -> (Dd, Dd) {
        let mut sin = t;
        let mut cos = Dd::one();
        let mut term = t;
        let mut n = 1.0;
        loop {
            // term holds t^n / n!; advance two orders for each series
            let cos_term = (term * t).div_f64(n + 1.0);
            term = (cos_term * t).div_f64(n + 2.0);
            let sign = if ((n as i64 + 1) / 2) % 2 == 1 { -1.0 } else { 1.0 };
            cos = cos + cos_term.mul_f64(sign);
            sin = sin + term.mul_f64(sign);
            if term.hi.abs() < 1e-36 && cos_term.hi.abs() < 1e-36 {
                break;
            }
            n += 2.0;
        }
        (sin, cos)
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

impl Real for Dd {
    fn from_f64(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        // x = k·ln2 + r, then exp(r) = (exp(r / 2^10))^(2^10)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).scale_pow2(-10);
        let mut sum = Dd::one() + r;
        let mut term = r;
        let mut n = 2.0;
        while term.hi.abs() > 1e-36 {
            term = (term * r).div_f64(n);
            sum = sum + term;
            n += 1.0;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::from_f64(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        // one Newton step doubles the f64 start's ~53 correct bits
        let y = Dd::from_f64(self.hi.ln());
        y + self * (-y).exp() - Dd::one()
    }

    fn tanh(self) -> Self {
        if self.hi == 0.0 {
            return self;
        }
        let a = if self.hi < 0.0 { -self } else { self };
        if a.hi > 40.0 {
            let one = Dd::one();
            return if self.hi < 0.0 { -one } else { one };
        }
        let t = if a.hi < 0.5 {
            // sinh by series avoids the cancellation in 1 − e^{−2a}
            let a2 = a * a;
            let mut sinh = a;
            let mut term = a;
            let mut n = 2.0;
            while term.hi.abs() > 1e-36 * a.hi {
                term = (term * a2).div_f64(n * (n + 1.0));
                sinh = sinh + term;
                n += 2.0;
            }
            sinh / (Dd::one() + sinh * sinh).sqrt()
        } else {
            let e = (a.mul_f64(-2.0)).exp();
            (Dd::one() - e) / (Dd::one() + e)
        };
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::from_f64(if self.hi == 0.0 { 0.0 } else { f64::NAN });
        }
        let y = self.hi.sqrt();
        let (p, e) = two_prod(y, y);
        let residual = self - Dd::new(p, e);
        Dd::from_f64(y) + Dd::from_f64(residual.hi / (2.0 * y))
    }

    fn acos(self) -> Self {
        if self.hi >= 1.0 {
            return Dd::zero();
        }
        if self.hi <= -1.0 {
            return PI;
        }
        // Newton on cos(y) = x, started from the f64 value
        let y = Dd::from_f64(self.hi.acos());
        let (s, c) = Dd::sin_cos_small(y - HALF_PI);
        // sin(y) = cos(y − π/2), cos(y) = −sin(y − π/2)
        y + (-s - self) / c
    }

    fn powf(self, e: f64) -> Self {
        if self.hi == 0.0 {
            return Dd::from_f64(0f64.powf(e));
        }
        (self.ln().mul_f64(e)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(got: Dd, want: (f64, f64), tol: f64) {
        let err = (got - Dd::new(want.0, want.1)).to_f64().abs() / want.0.abs();
        assert!(err < tol, "{got:?} vs {want:?}: {err:e}");
    }

    #[test]
    fn arithmetic_keeps_the_low_word() {
        let third = Dd::one() / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::one();
        assert!(back.to_f64().abs() < 1e-31);
        let tiny = Dd::one() + Dd::from_f64(1e-20) - Dd::one();
        assert_eq!(tiny.to_f64(), 1e-20);
    }

    // reference values computed to 60 digits and split into hi + lo
    #[test]
    fn transcendentals_match_high_precision_values() {
        close(Dd::from_f64(-1.7).exp(), (0.18268352405273466, -5.430659906894856e-18), 1e-28);
        close(Dd::from_f64(30.5).exp(), (17619017951355.633, -0.001400339015239068), 1e-28);
        close(Dd::from_f64(4.0).ln(), (1.3862943611198906, 4.638093627692599e-17), 1e-28);
        close(Dd::from_f64(1e-300).ln(), (-690.7755278982137, -2.3670096176709832e-14), 1e-28);
        close(Dd::from_f64(0.3).tanh(), (0.2913126124515909, -6.4602656586469586e-18), 1e-28);
        close(Dd::from_f64(-4e-7).tanh(), (-3.9999999999997865e-07, -1.3090256357246865e-24), 1e-24);
        close(Dd::from_f64(0.3).acos(), (1.2661036727794992, -7.78313736852488e-17), 1e-28);
        close(Dd::from_f64(-0.9999).acos(), (3.127450400112281, -8.416672404414502e-18), 1e-28);
        close(Dd::from_f64(2.0).sqrt(), (std::f64::consts::SQRT_2, -9.667293313452913e-17), 1e-28);
        close(Dd::from_f64(0.7).powf(-0.5), (1.1952286093343938, -1.0995079579273288e-16), 1e-28);
        close(Dd::from_f64(0.0).acos(), (HALF_PI.hi, HALF_PI.lo), 1e-28);
    }

    #[test]
    fn f64_and_dd_agree_to_f64_precision() {
        for x in [-3.0, -0.4, 0.0, 0.25, 2.0] {
            assert!((Real::sigmoid(Dd::from_f64(x)).to_f64() - Real::sigmoid(x)).abs() < 4e-16);
            assert!((Real::tanh(Dd::from_f64(x)).to_f64() - x.tanh()).abs() < 4e-16);
        }
        assert_eq!(Dd::from_f64(2.0).clamp(-1.0, 1.0), Dd::one());
        assert_eq!(Dd::from_f64(-2.0).relu(), Dd::zero());
    }
}
