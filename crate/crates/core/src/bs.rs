//! Black–Scholes under the forward measure.
//!
//! Prices are normalized by the forward (`C/F`) and strikes enter through the
//! log-forward moneyness `m = ln(K/F)`, so rates and dividends never appear.

use crate::error::{check_tau, Error, Result};
use crate::Scalar;

/// Lower end of the implied-volatility bracket.
pub const VOL_LOWER: f64 = 1e-6;
/// Upper end of the implied-volatility bracket.
pub const VOL_UPPER: f64 = 10.0;
/// Iteration cap for the implied-volatility solver.
pub const MAX_ITERATIONS: usize = 200;

/// Standard normal density and distribution function at `x`.
pub fn std_normal<T: Scalar>(x: T) -> Result<(T, T)> {
    if !x.is_finite() {
        return Err(Error::domain(format!("normal cdf of non-finite {x}")));
    }
    Ok((norm_pdf(x), norm_cdf(x)))
}

#[inline]
pub(crate) fn norm_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() * T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * T::lit(0.5)
}

#[inline]
pub(crate) fn norm_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (-x * T::FRAC_1_SQRT_2()).erfc()
}

/// The pair `d± = -m/(√τ v) ± ½√τ v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPair<T> {
    pub d_plus: T,
    pub d_minus: T,
}

impl<T: Scalar> DPair<T> {
    /// Builds the pair for `(m, τ, v)`; rejects `τ ≤ 0` and `v ≤ 0`.
    pub fn new(m: T, tau: T, v: T) -> Result<Self> {
        check_tau(tau)?;
        if !(v.is_finite() && v > T::zero()) {
            return Err(Error::domain(format!("volatility must be positive, got {v}")));
        }
        if !m.is_finite() {
            return Err(Error::domain(format!("non-finite moneyness {m}")));
        }
        let sd = tau.sqrt() * v;
        let centre = -m / sd;
        let half = T::lit(0.5) * sd;
        let pair = DPair { d_plus: centre + half, d_minus: centre - half };
        debug_assert!(
            ((pair.d_plus - pair.d_minus) - sd).abs() <= T::epsilon() * T::lit(8.0) * (T::one() + centre.abs())
        );
        Ok(pair)
    }
}

pub fn d_pair<T: Scalar>(m: T, tau: T, v: T) -> Result<DPair<T>> {
    DPair::new(m, tau, v)
}

/// Normalized call `C/F = N(d+) - e^m N(d-)`.
pub fn bs_call_forward<T: Scalar>(m: T, tau: T, v: T) -> Result<T> {
    let d = DPair::new(m, tau, v)?;
    Ok(norm_cdf(d.d_plus) - m.exp() * norm_cdf(d.d_minus))
}

/// Normalized put `P/F = e^m N(-d-) - N(-d+)`.
pub fn bs_put_forward<T: Scalar>(m: T, tau: T, v: T) -> Result<T> {
    let d = DPair::new(m, tau, v)?;
    Ok(m.exp() * norm_cdf(-d.d_minus) - norm_cdf(-d.d_plus))
}

/// Normalized out-of-the-money price: the call for `m ≥ 0`, the put otherwise.
///
/// This is the representation with full relative precision in the wings.
pub fn bs_otm_forward<T: Scalar>(m: T, tau: T, v: T) -> Result<T> {
    if m >= T::zero() {
        bs_call_forward(m, tau, v)
    } else {
        bs_put_forward(m, tau, v)
    }
}

/// Sensitivity of the normalized price to volatility, `√τ n(d+)`.
pub fn bs_vega_forward<T: Scalar>(m: T, tau: T, v: T) -> Result<T> {
    let d = DPair::new(m, tau, v)?;
    Ok(tau.sqrt() * norm_pdf(d.d_plus))
}

/// Implied volatility of a normalized call price.
///
/// The price must lie strictly inside `(max(0, 1 - e^m), 1)`. Internally the
/// call is mapped to its out-of-the-money twin before solving.
pub fn implied_vol<T: Scalar>(price_norm: T, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    let lower = (T::one() - m.exp()).max(T::zero());
    let upper = T::one();
    if !(price_norm.is_finite() && price_norm > lower && price_norm < upper) {
        return Err(Error::ArbitrageViolation {
            price: price_norm.as_f64(),
            lower: lower.as_f64(),
            upper: upper.as_f64(),
        });
    }
    let otm = if m >= T::zero() { price_norm } else { price_norm - lower };
    implied_vol_otm(otm, m, tau)
}

/// Implied volatility of a normalized out-of-the-money price (call for
/// `m ≥ 0`, put for `m < 0`).
///
/// Bisection on `[1e-6, 10]` with safeguarded Newton steps.
pub fn implied_vol_otm<T: Scalar>(price: T, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    let upper_band = T::one().min(m.exp());
    if !(price.is_finite() && price > T::zero() && price < upper_band) {
        return Err(Error::ArbitrageViolation {
            price: price.as_f64(),
            lower: 0.0,
            upper: upper_band.as_f64(),
        });
    }

    let mut lo = T::lit(VOL_LOWER);
    let mut hi = T::lit(VOL_UPPER);
    let f_lo = bs_otm_forward(m, tau, lo)? - price;
    let f_hi = bs_otm_forward(m, tau, hi)? - price;
    if f_lo > T::zero() || f_hi < T::zero() {
        return Err(Error::domain(format!(
            "implied volatility for price {price} lies outside [{VOL_LOWER}, {VOL_UPPER}]"
        )));
    }

    let tol = T::epsilon() * T::lit(16.0);
    let mut v = T::lit(0.5) * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        let f = bs_otm_forward(m, tau, v)? - price;
        if f == T::zero() {
            return Ok(v);
        }
        if f > T::zero() {
            hi = v;
        } else {
            lo = v;
        }
        let vega = bs_vega_forward(m, tau, v)?;
        let newton = v - f / vega;
        let next = if vega > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            T::lit(0.5) * (lo + hi)
        };
        let step = (next - v).abs();
        v = next;
        if step <= tol * v || hi - lo <= tol * v {
            return Ok(v);
        }
    }
    Err(Error::Convergence { iterations: MAX_ITERATIONS })
}

/// Forward implied by put-call parity: `F = K + (C - P)/D`.
pub fn forward_from_parity<T: Scalar>(call_mid: T, put_mid: T, strike: T, discount: T) -> Result<T> {
    if !(strike.is_finite() && strike > T::zero()) {
        return Err(Error::domain(format!("strike must be positive, got {strike}")));
    }
    if !(discount.is_finite() && discount > T::zero()) {
        return Err(Error::domain(format!("discount factor must be positive, got {discount}")));
    }
    Ok(strike + (call_mid - put_mid) / discount)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Values from a 40-digit erf evaluation.
    const CDF_0_1: f64 = 0.539_827_837_277_028_98;
    const CDF_M3: f64 = 0.001_349_898_031_630_094_5;
    const CDF_M8: f64 = 6.220_960_574_271_784e-16;
    const CALL_0_1_02: f64 = 0.079_655_674_554_057_96;
    const CALL_03_05_025: f64 = 0.003_771_996_028_050_516_6;
    const CALL_M04_2_035: f64 = 0.376_839_241_106_189_9;

    #[test]
    fn normal_reference_points() {
        let (pdf, cdf) = std_normal(0.0).unwrap();
        assert_abs_diff_eq!(pdf, 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(std_normal(0.1).unwrap().1, CDF_0_1, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal(-0.1).unwrap().1, 1.0 - CDF_0_1, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal(-3.0).unwrap().1, CDF_M3, epsilon = 1e-12);
        let tail = std_normal(-8.0).unwrap().1;
        assert!((tail - CDF_M8).abs() < 1e-12 * CDF_M8);
    }

    #[test]
    fn normal_rejects_non_finite() {
        assert!(std_normal(f64::NAN).is_err());
        assert!(std_normal(f64::INFINITY).is_err());
    }

    #[test]
    fn d_pair_examples() {
        let d = d_pair(0.0, 1.0, 0.2).unwrap();
        assert_abs_diff_eq!(d.d_plus, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d.d_minus, -0.1, epsilon = 1e-15);
        let d = d_pair(0.0, 4.0, 0.3).unwrap();
        assert_abs_diff_eq!(d.d_plus, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(d.d_minus, -0.3, epsilon = 1e-15);
        let d = d_pair(0.5, 1.0, 0.2).unwrap();
        assert_abs_diff_eq!(d.d_plus, -2.4, epsilon = 1e-14);
        assert_abs_diff_eq!(d.d_minus, -2.6, epsilon = 1e-14);
        assert!(d_pair(0.0, 0.0, 0.2).is_err());
        assert!(d_pair(0.0, 1.0, -0.2).is_err());
    }

    #[test]
    fn call_reference_points() {
        assert_abs_diff_eq!(bs_call_forward(0.0, 1.0, 0.2).unwrap(), CALL_0_1_02, epsilon = 1e-14);
        assert_abs_diff_eq!(bs_call_forward(0.3, 0.5, 0.25).unwrap(), CALL_03_05_025, epsilon = 1e-14);
        assert_abs_diff_eq!(bs_call_forward(-0.4, 2.0, 0.35).unwrap(), CALL_M04_2_035, epsilon = 1e-14);
        assert!(bs_call_forward(0.0, 1.0, 1e-12).unwrap() < 1e-12);
        let deep = bs_call_forward(-30.0, 1.0, 0.2).unwrap();
        assert_abs_diff_eq!(deep, 1.0 - (-30.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn call_matches_payoff_quadrature() {
        // Trapezoid rule of E[(X - e^m)^+] with X lognormal, split at the kink.
        let (m, tau, v) = (0.1f64, 0.75f64, 0.3f64);
        let sd = tau.sqrt() * v;
        let kink = (m + 0.5 * sd * sd) / sd;
        let n = 200_000;
        let (a, b) = (kink, 12.0);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let z = a + h * i as f64;
            let payoff = ((sd * z - 0.5 * sd * sd).exp() - m.exp()).max(0.0);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * payoff * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        }
        assert_abs_diff_eq!(bs_call_forward(m, tau, v).unwrap(), acc * h, epsilon = 1e-9);
    }

    #[test]
    fn implied_vol_examples() {
        let v = implied_vol(CALL_0_1_02, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.2, epsilon = 1e-12);
        assert!(matches!(implied_vol(1.5, 0.0, 1.0), Err(Error::ArbitrageViolation { .. })));
        assert!(matches!(implied_vol(0.0, 0.0, 1.0), Err(Error::ArbitrageViolation { .. })));
        // Below intrinsic for an in-the-money call.
        assert!(implied_vol(0.3, -0.5, 1.0).is_err());
    }

    #[test]
    fn implied_vol_price_residual() {
        for &(m, tau, v) in &[(0.0f64, 1.0f64, 0.2f64), (-1.0, 0.1, 0.6), (0.4, 2.5, 0.15), (-2.5, 3.0, 1.2)] {
            let c = bs_call_forward(m, tau, v).unwrap();
            let iv = implied_vol(c, m, tau).unwrap();
            assert!((bs_call_forward(m, tau, iv).unwrap() - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn parity_examples() {
        assert_abs_diff_eq!(forward_from_parity(10.0, 5.0, 100.0, 1.0).unwrap(), 105.0);
        assert_abs_diff_eq!(forward_from_parity(5.0, 10.0, 100.0, 0.5).unwrap(), 90.0);
        assert_abs_diff_eq!(forward_from_parity(7.25, 7.25, 80.0, 0.97).unwrap(), 80.0);
        assert!(forward_from_parity(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(forward_from_parity(1.0, 1.0, 100.0, 0.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let c = bs_call_forward(0.0f32, 1.0, 0.2).unwrap();
        assert!((c - CALL_0_1_02 as f32).abs() < 1e-6);
        let v = implied_vol(c, 0.0f32, 1.0).unwrap();
        assert!((v - 0.2).abs() < 1e-4);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cdf_symmetry(x in -40.0f64..40.0) {
                let s = norm_cdf(x) + norm_cdf(-x);
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn cdf_increasing(x in -8.0f64..8.0, dx in 1e-3f64..1.0) {
                prop_assert!(norm_cdf(x + dx) > norm_cdf(x));
            }

            #[test]
            fn d_pair_gap(m in -3.0f64..3.0, tau in 0.002f64..3.0, v in 0.01f64..3.0) {
                let d = d_pair(m, tau, v).unwrap();
                prop_assert!(((d.d_plus - d.d_minus) - tau.sqrt() * v).abs() <= 1e-14 * (1.0 + d.d_plus.abs()));
            }

            #[test]
            fn implied_vol_inverts_call_price(m in -3.0f64..3.0, tau in 0.002f64..3.0, v in 0.02f64..2.0) {
                // Only where the price still pins down the vol.
                prop_assume!(bs_vega_forward(m, tau, v).unwrap() >= 1e-4);
                let c = bs_call_forward(m, tau, v).unwrap();
                prop_assert!((implied_vol(c, m, tau).unwrap() - v).abs() <= 1e-8);
            }

            #[test]
            fn call_increasing_in_vol(m in -3.0f64..1.0, tau in 0.002f64..3.0, v in 0.05f64..2.0, dv in 0.01f64..0.5) {
                let c0 = bs_call_forward(m, tau, v).unwrap();
                let c1 = bs_call_forward(m, tau, v + dv).unwrap();
                prop_assert!(c1 >= c0);
                let lower = (1.0 - m.exp()).max(0.0);
                prop_assert!(c0 >= lower - 1e-15 && c0 <= 1.0);
            }
        }
    }
}
