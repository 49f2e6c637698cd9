//! Truncated Taylor jets in the surface inputs.
//!
//! A [`Jet`] carries a value together with `∂m`, `∂mm` and `∂τ`, which is
//! exactly what the arbitrage conditions consume. Arithmetic propagates the
//! three derivatives by the chain rule; mixed `∂mτ` terms are never needed
//! and are not tracked.
//!
//! The `*_adjoint` helpers are the reverse-mode rules of the same primitives
//! and are used when differentiating penalties with respect to parameters.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet<T> {
    pub v: T,
    pub dm: T,
    pub dmm: T,
    pub dt: T,
}

impl<T: Scalar> Jet<T> {
    pub fn new(v: T, dm: T, dmm: T, dt: T) -> Self {
        Jet { v, dm, dmm, dt }
    }

    pub fn constant(v: T) -> Self {
        Jet { v, dm: T::zero(), dmm: T::zero(), dt: T::zero() }
    }

    pub fn zero() -> Self {
        Self::constant(T::zero())
    }

    /// The moneyness coordinate itself.
    pub fn var_m(m: T) -> Self {
        Jet { v: m, dm: T::one(), dmm: T::zero(), dt: T::zero() }
    }

    /// The maturity coordinate itself.
    pub fn var_tau(tau: T) -> Self {
        Jet { v: tau, dm: T::zero(), dmm: T::zero(), dt: T::one() }
    }

    pub fn scale(self, k: T) -> Self {
        Jet { v: self.v * k, dm: self.dm * k, dmm: self.dmm * k, dt: self.dt * k }
    }

    /// `f(self)` given `f`, `f'`, `f''` evaluated at `self.v`.
    #[inline]
    pub fn compose(self, f0: T, f1: T, f2: T) -> Self {
        Jet {
            v: f0,
            dm: f1 * self.dm,
            dmm: f2 * self.dm * self.dm + f1 * self.dmm,
            dt: f1 * self.dt,
        }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = self.v.recip();
        self.compose(self.v.ln(), r, -r * r)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let d1 = T::lit(0.5) / s;
        self.compose(s, d1, -d1 / (T::lit(2.0) * self.v))
    }

    pub fn recip(self) -> Self {
        let r = self.v.recip();
        self.compose(r, -r * r, T::lit(2.0) * r * r * r)
    }

    pub fn square(self) -> Self {
        self * self
    }

    /// Full inner product of two jets, treating them as 4-vectors.
    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.v * other.v + self.dm * other.dm + self.dmm * other.dmm + self.dt * other.dt
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Jet { v: self.v + o.v, dm: self.dm + o.dm, dmm: self.dmm + o.dmm, dt: self.dt + o.dt }
    }
}

impl<T: Scalar> Sub for Jet<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Jet { v: self.v - o.v, dm: self.dm - o.dm, dmm: self.dmm - o.dmm, dt: self.dt - o.dt }
    }
}

impl<T: Scalar> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Scalar> Mul for Jet<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet {
            v: self.v * o.v,
            dm: self.dm * o.v + self.v * o.dm,
            dmm: self.dmm * o.v + T::lit(2.0) * self.dm * o.dm + self.v * o.dmm,
            dt: self.dt * o.v + self.v * o.dt,
        }
    }
}

impl<T: Scalar> Div for Jet<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Scalar> Add<T> for Jet<T> {
    type Output = Self;
    fn add(self, k: T) -> Self {
        Jet { v: self.v + k, ..self }
    }
}

impl<T: Scalar> Mul<T> for Jet<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        self.scale(k)
    }
}

/// Adjoint of `c = a * b`: accumulates into `ga` and `gb` given `gc`.
#[inline]
pub(crate) fn mul_adjoint<T: Scalar>(gc: Jet<T>, a: Jet<T>, b: Jet<T>, ga: &mut Jet<T>, gb: &mut Jet<T>) {
    let two = T::lit(2.0);
    ga.v += gc.dot(b);
    ga.dm += gc.dm * b.v + two * gc.dmm * b.dm;
    ga.dmm += gc.dmm * b.v;
    ga.dt += gc.dt * b.v;
    gb.v += gc.dot(a);
    gb.dm += gc.dm * a.v + two * gc.dmm * a.dm;
    gb.dmm += gc.dmm * a.v;
    gb.dt += gc.dt * a.v;
}

/// Adjoint of `c = f(a)` given `f'`, `f''`, `f'''` at `a.v`.
#[inline]
pub(crate) fn compose_adjoint<T: Scalar>(gc: Jet<T>, a: Jet<T>, f1: T, f2: T, f3: T) -> Jet<T> {
    Jet {
        v: gc.v * f1 + gc.dm * f2 * a.dm + gc.dmm * (f3 * a.dm * a.dm + f2 * a.dmm) + gc.dt * f2 * a.dt,
        dm: gc.dm * f1 + T::lit(2.0) * gc.dmm * f2 * a.dm,
        dmm: gc.dmm * f1,
        dt: gc.dt * f1,
    }
}
