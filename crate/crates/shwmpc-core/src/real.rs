//! Scalar abstraction shared by plain evaluation, forward-mode directional
//! derivatives and the reverse-mode tape.
//!
//! Model code (networks, residuals, Jacobian products) is written once against
//! [`Real`] and instantiated with `f64` for inference, [`Dual`] for
//! Jacobian-vector products and [`crate::tape::Var`] for training gradients.

use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// The underlying primal value (used for pivoting and branching only).
    fn val(self) -> f64;

    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn tanh(self) -> Self;
    fn asinh(self) -> Self;
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn exp(self) -> f64 {
        math::exp(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        math::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> f64 {
        math::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        math::sqrt(self)
    }
    #[inline]
    fn sinh(self) -> f64 {
        math::sinh(self)
    }
    #[inline]
    fn cosh(self) -> f64 {
        math::cosh(self)
    }
    #[inline]
    fn tanh(self) -> f64 {
        math::tanh(self)
    }
    #[inline]
    fn asinh(self) -> f64 {
        math::asinh(self)
    }
    #[inline]
    fn softplus(self) -> f64 {
        math::softplus(self)
    }
    #[inline]
    fn sigmoid(self) -> f64 {
        math::sigmoid(self)
    }
}

/// Forward-mode dual number over any [`Real`], carrying one directional
/// derivative. Nesting `Dual<Var>` inside a tape yields derivatives of
/// Jacobian-vector products with respect to parameters.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Real> Dual<T> {
    #[inline]
    pub fn new(re: T, du: T) -> Self {
        Self { re, du }
    }

    /// A constant (zero derivative) built in `exemplar`'s context.
    #[inline]
    pub fn constant(exemplar: T, c: f64) -> Self {
        Self { re: exemplar.lift(c), du: exemplar.lift(0.0) }
    }

    /// Promote a value with zero derivative.
    #[inline]
    pub fn passive(re: T) -> Self {
        Self { du: re.lift(0.0), re }
    }

    /// Promote a value with unit derivative (the seeded direction).
    #[inline]
    pub fn seeded(re: T) -> Self {
        Self { du: re.lift(1.0), re }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, du: self.du + o.du }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, du: self.du - o.du }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, du: self.du * o.re + self.re * o.du }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Self { re, du: (self.du - re * o.du) / o.re }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { re: -self.re, du: -self.du }
    }
}

impl<T: Real> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Self { re: self.re + c, du: self.du }
    }
}

impl<T: Real> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Self { re: self.re - c, du: self.du }
    }
}

impl<T: Real> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Self { re: self.re * c, du: self.du * c }
    }
}

impl<T: Real> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Self { re: self.re / c, du: self.du / c }
    }
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn val(self) -> f64 {
        self.re.val()
    }

    #[inline]
    fn lift(self, c: f64) -> Self {
        Self::constant(self.re, c)
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self { re: e, du: self.du * e }
    }

    #[inline]
    fn ln(self) -> Self {
        Self { re: self.re.ln(), du: self.du / self.re }
    }

    #[inline]
    fn ln_1p(self) -> Self {
        Self { re: self.re.ln_1p(), du: self.du / (self.re + 1.0) }
    }

    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self { re: r, du: self.du / (r * 2.0) }
    }

    #[inline]
    fn sinh(self) -> Self {
        Self { re: self.re.sinh(), du: self.du * self.re.cosh() }
    }

    #[inline]
    fn cosh(self) -> Self {
        Self { re: self.re.cosh(), du: self.du * self.re.sinh() }
    }

    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self { re: t, du: self.du * (t.lift(1.0) - t * t) }
    }

    #[inline]
    fn asinh(self) -> Self {
        let den = (self.re * self.re + 1.0).sqrt();
        Self { re: self.re.asinh(), du: self.du / den }
    }

    #[inline]
    fn softplus(self) -> Self {
        Self { re: self.re.softplus(), du: self.du * self.re.sigmoid() }
    }

    #[inline]
    fn sigmoid(self) -> Self {
        let s = self.re.sigmoid();
        Self { re: s, du: self.du * s * (s.lift(1.0) - s) }
    }
}

/// The activation used throughout the bijective networks:
/// `phi(xi, alpha) = asinh(alpha + sinh(xi))`.
///
/// For |xi| > 20 the naive form loses the alpha contribution and eventually
/// overflows, so the tail is evaluated in the log domain:
/// `asinh(alpha + sinh xi) = xi + ln1p(2 alpha e^-xi - e^-2xi)` for xi > 20,
/// and by oddness `phi(xi, alpha) = -phi(-xi, -alpha)` for xi < -20.
pub fn asinh_sinh<T: Real>(xi: T, alpha: T) -> T {
    let x = xi.val();
    // The log-domain tail is valid while alpha is small against sinh(xi);
    // otherwise the direct form is both safe (no overflow below |xi| ~ 700)
    // and accurate (no cancellation worse than the f64 ulp of sinh).
    let tail_ok = 2.0 * crate::math::abs(alpha.val()) * crate::math::exp(-crate::math::abs(x))
        < 0.5
        || crate::math::abs(x) > 700.0;
    if x > 20.0 && tail_ok {
        let em = (-xi).exp();
        xi + (alpha * em * 2.0 - em * em).ln_1p()
    } else if x < -20.0 && tail_ok {
        let em = xi.exp();
        xi - ((-alpha) * em * 2.0 - em * em).ln_1p()
    } else {
        (alpha + xi.sinh()).asinh()
    }
}

/// Inverse of [`asinh_sinh`] in its first argument:
/// `phi^-1(w, alpha) = asinh(sinh(w) - alpha) = phi(w, -alpha)`.
#[inline]
pub fn asinh_sinh_inv<T: Real>(w: T, alpha: T) -> T {
    asinh_sinh(w, -alpha)
}

/// Derivative of [`asinh_sinh`] with respect to `xi`:
/// `cosh(xi) / sqrt(1 + (alpha + sinh xi)^2)`, evaluated as
/// `1 / sqrt(1 + 2 alpha tanh(xi) sech(xi) + alpha^2 sech(xi)^2)` which stays
/// finite for any argument. Strictly positive everywhere.
pub fn asinh_sinh_deriv<T: Real>(xi: T, alpha: T) -> T {
    let t = xi.tanh();
    let sech = sech(xi);
    let r = alpha * t * sech * 2.0 + alpha * alpha * sech * sech;
    let s = (r + 1.0).sqrt();
    s.lift(1.0) / s
}

/// 1 / cosh(xi) without overflow: `2 e^-|xi| / (1 + e^-2|xi|)`.
fn sech<T: Real>(xi: T) -> T {
    let ax = if xi.val() >= 0.0 { xi } else { -xi };
    let e = (-ax).exp();
    e * 2.0 / (e * e + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn activation_identity_when_alpha_zero() {
        for &x in &[-3.0, -0.5, 0.0, 1.7, 9.0] {
            assert!(close(asinh_sinh(x, 0.0), x, 1e-14));
        }
    }

    #[test]
    fn activation_closed_form_at_zero() {
        // asinh(1) = ln(1 + sqrt 2)
        let got = asinh_sinh(0.0f64, 1.0);
        assert!(close(got, (1.0 + 2.0f64.sqrt()).ln(), 1e-15));
    }

    #[test]
    fn activation_roundtrip_including_tails() {
        let mut r = crate::rng::Rng::new(11);
        for i in 0..10_000 {
            let xi = if i % 10 == 0 { r.range(-60.0, 60.0) } else { r.range(-5.0, 5.0) };
            let alpha = r.range(-3.0, 3.0);
            let w = asinh_sinh(xi, alpha);
            let back = asinh_sinh_inv(w, alpha);
            assert!(close(back, xi, 1e-10), "xi={xi} alpha={alpha} back={back}");
        }
    }

    #[test]
    fn activation_derivative_positive_and_matches_fd() {
        let mut r = crate::rng::Rng::new(5);
        for _ in 0..2000 {
            let xi = r.range(-6.0, 6.0);
            let alpha = r.range(-3.0, 3.0);
            let d = asinh_sinh_deriv(xi, alpha);
            assert!(d > 0.0);
            let h = 1e-6;
            let fd = (asinh_sinh(xi + h, alpha) - asinh_sinh(xi - h, alpha)) / (2.0 * h);
            assert!(close(d, fd, 1e-6), "xi={xi} alpha={alpha} d={d} fd={fd}");
        }
    }

    #[test]
    fn activation_derivative_stable_in_tails() {
        for &xi in &[-500.0, -30.0, 30.0, 500.0] {
            let d = asinh_sinh_deriv(xi, 2.5);
            assert!(d.is_finite() && d > 0.0);
        }
    }

    #[test]
    fn dual_chain_rule_through_activation() {
        let mut r = crate::rng::Rng::new(17);
        for _ in 0..500 {
            let x = r.range(-4.0, 4.0);
            let a = r.range(-2.0, 2.0);
            let d = asinh_sinh(Dual::seeded(x), Dual::passive(a));
            let analytic = asinh_sinh_deriv(x, a);
            assert!(close(d.du, analytic, 1e-12));
        }
    }

    #[test]
    fn dual_div_and_sqrt() {
        let x = Dual::seeded(2.0f64);
        let y = (x * x + 1.0).sqrt(); // d/dx sqrt(x^2+1) = x/sqrt(x^2+1)
        assert!(close(y.du, 2.0 / 5.0f64.sqrt(), 1e-14));
        let q = x / (x * x); // 1/x, derivative -1/x^2
        assert!(close(q.du, -0.25, 1e-14));
    }
}
