//! Closed real intervals with outward-padded elementary functions, enough to
//! enclose the registered orbit maps.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};

/// Relative padding applied after transcendental evaluations.
const PAD: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "[{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Self::new(lo, hi))
    }

    fn padded(self) -> Self {
        let p = PAD * self.lo.abs().max(self.hi.abs()).max(1.0);
        Self::new(self.lo - p, self.hi + p)
    }

    pub fn scale(&self, c: f64) -> Self {
        if c >= 0.0 {
            Self::new(self.lo * c, self.hi * c)
        } else {
            Self::new(self.hi * c, self.lo * c)
        }
    }

    pub fn cos(&self) -> Self {
        if self.width() >= TAU {
            return Self::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // a maximum at 2 pi k, a minimum at pi + 2 pi k
        if (self.lo / TAU).ceil() * TAU <= self.hi {
            hi = 1.0;
        }
        if ((self.lo - PI) / TAU).ceil() * TAU + PI <= self.hi {
            lo = -1.0;
        }
        Self::new(lo, hi).padded().clamp_unit()
    }

    pub fn sin(&self) -> Self {
        Self::new(self.lo - PI / 2.0, self.hi - PI / 2.0).cos()
    }

    fn clamp_unit(self) -> Self {
        Self::new(self.lo.max(-1.0), self.hi.min(1.0))
    }
}

impl Add for Interval {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.lo + o.lo, self.hi + o.hi)
    }
}

impl Sub for Interval {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.lo - o.hi, self.hi - o.lo)
    }
}

impl Mul for Interval {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let p = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Self::new(
            p.iter().cloned().fold(f64::INFINITY, f64::min),
            p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}
