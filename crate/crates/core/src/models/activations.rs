//! Activation functions with the derivative ladders the penalties need.

use crate::Scalar;

/// Default `ε` of the smile activation.
pub const DEFAULT_SMILE_EPS: f64 = 0.01;

/// Floor applied to the smile radicand before the square root.
///
/// Below the floor the activation is treated as locally constant, and the
/// derivative ladder returns zeros so that values and derivatives agree.
pub const RADICAND_FLOOR: f64 = 1e-12;

/// Smile activation `√(z·tanh(z + ½) + tanh(ε - z/2))`.
pub fn smile_phi<T: Scalar>(z: T, eps: T) -> T {
    let r = z * (z + T::lit(0.5)).tanh() + (eps - T::lit(0.5) * z).tanh();
    r.max(T::lit(RADICAND_FLOOR)).sqrt()
}

/// `[φ, φ', φ'', φ''']` of the smile activation at `z`.
pub(crate) fn smile_ladder<T: Scalar>(z: T, eps: T) -> [T; 4] {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let t1 = (z + half).tanh();
    let s1 = T::one() - t1 * t1;
    let t2 = (eps - half * z).tanh();
    let s2 = T::one() - t2 * t2;

    let r0 = z * t1 + t2;
    if r0 < T::lit(RADICAND_FLOOR) {
        return [T::lit(RADICAND_FLOOR).sqrt(), T::zero(), T::zero(), T::zero()];
    }
    let r1 = t1 + z * s1 - half * s2;
    let r2 = two * s1 - two * z * t1 * s1 - half * t2 * s2;
    let r3 = -T::lit(6.0) * t1 * s1 - two * z * (s1 * s1 - two * t1 * t1 * s1)
        - half * (t2 * t2 * s2 - half * s2 * s2);

    let p0 = r0.sqrt();
    let p1 = r1 / (two * p0);
    let p2 = (r2 - two * p1 * p1) / (two * p0);
    let p3 = (r3 - T::lit(6.0) * p1 * p2) / (two * p0);
    [p0, p1, p2, p3]
}

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `[ψ, ψ', ψ'', ψ''']` of the sigmoid at `x`.
#[inline]
pub(crate) fn sigmoid_ladder<T: Scalar>(x: T) -> [T; 4] {
    let s = sigmoid(x);
    let one_minus = T::one() - s;
    let d1 = s * one_minus;
    let d2 = d1 * (one_minus - s);
    let d3 = d2 * (one_minus - s) - T::lit(2.0) * d1 * d1;
    [s, d1, d2, d3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const EPS: f64 = DEFAULT_SMILE_EPS;

    #[test]
    fn smile_reference_points() {
        // 40-digit evaluations of the closed form.
        assert_abs_diff_eq!(smile_phi(0.0, EPS), 0.099_998_333_386_109_29, epsilon = 1e-14);
        assert_abs_diff_eq!(smile_phi(10.0, EPS), 3.000_015_435_740_772_6, epsilon = 1e-13);
        assert_abs_diff_eq!(smile_phi(-10.0, EPS), 3.316_611_356_490_645_9, epsilon = 1e-13);
        assert_abs_diff_eq!(smile_phi(1.0, EPS), 0.671_514_572_412_697_07, epsilon = 1e-14);
        assert_abs_diff_eq!(smile_phi(-1.0, EPS), 0.965_433_765_823_967_5, epsilon = 1e-14);
    }

    #[test]
    fn smile_radicand_stays_above_floor_on_wide_range() {
        let mut z = -50.0;
        while z <= 50.0 {
            let r = z * (z + 0.5f64).tanh() + (EPS - 0.5 * z).tanh();
            assert!(r > RADICAND_FLOOR, "radicand {r} at {z}");
            z += 0.001;
        }
    }

    #[test]
    fn smile_ladder_matches_high_precision_derivatives() {
        // Derivative ladders from 30-digit numerical differentiation.
        let reference: [(f64, [f64; 4]); 7] = [
            (-4.0, [2.2265306891586627, -0.23520718606560357, -0.037247511904251032, -0.02689035670179962]),
            (-1.3, [1.2006711516450745, -0.71774705637927031, -0.44552866368753364, -0.067087720426903385]),
            (-0.2, [0.22648608726390093, -0.85151643391331131, 0.95508760233739491, 8.3692940356284772]),
            (0.0, [0.099998333386109292, -0.18916738305555617, 7.4817623666792914, 32.806279330528963]),
            (0.15, [0.14436717818856916, 0.60524680805375138, 1.837688241654989, -30.272638311905365]),
            (0.9, [0.61900891850998488, 0.53750414873115053, -0.25730615051847714, 0.24902623542017605]),
            (3.7, [1.6575708771288643, 0.28803673555242767, -0.037750885215599095, 0.0096690171706799114]),
        ];
        for (z, expected) in reference {
            let got = smile_ladder(z, EPS);
            for (g, e) in got.iter().zip(expected.iter()) {
                assert!((g - e).abs() <= 1e-10 * e.abs().max(1.0), "z={z}: {got:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(37.0) - 1.0f64).abs() < 1e-15);
        let low = sigmoid(-37.0f64);
        assert!(low > 0.0 && low < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert_abs_diff_eq!(sigmoid(0.5), 0.622_459_331_201_854_56, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_ladder_matches_finite_differences() {
        let h = 1e-4;
        for &x in &[-6.0, -0.7, 0.0, 1.2, 4.5] {
            let l = |x: f64| sigmoid_ladder(x);
            let [_, d1, d2, d3] = l(x);
            assert_abs_diff_eq!(d1, (l(x + h)[0] - l(x - h)[0]) / (2.0 * h), epsilon = 1e-8);
            assert_abs_diff_eq!(d2, (l(x + h)[1] - l(x - h)[1]) / (2.0 * h), epsilon = 1e-8);
            assert_abs_diff_eq!(d3, (l(x + h)[2] - l(x - h)[2]) / (2.0 * h), epsilon = 1e-8);
        }
    }
}
