//! The single model: a sum of smile-by-sigmoid units plus a positive floor.
//!
//! `v̂(m, τ) = Σ_j φ(m·w̄_j + b̄_j) · ψ(τ·w̃_j + b̃_j) · e^{ŵ_j} + e^{b̂}`
//!
//! Every summand is nonnegative and the floor `e^{b̂}` is positive, so the
//! surface is positive for any parameter values.

use super::activations::{sigmoid, sigmoid_ladder, smile_ladder, smile_phi};
use crate::jet::Jet;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SingleModelParams<T> {
    /// Moneyness weights `w̄`.
    pub w_bar: Vec<T>,
    /// Moneyness biases `b̄`.
    pub b_bar: Vec<T>,
    /// Maturity weights `w̃`.
    pub w_tilde: Vec<T>,
    /// Maturity biases `b̃`.
    pub b_tilde: Vec<T>,
    /// Output log-weights `ŵ`.
    pub w_hat: Vec<T>,
    /// Output log-floor `b̂`.
    pub b_hat: T,
}

impl<T: Scalar> SingleModelParams<T> {
    pub fn zeros(hidden: usize) -> Self {
        SingleModelParams {
            w_bar: vec![T::zero(); hidden],
            b_bar: vec![T::zero(); hidden],
            w_tilde: vec![T::zero(); hidden],
            b_tilde: vec![T::zero(); hidden],
            w_hat: vec![T::zero(); hidden],
            b_hat: T::zero(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_bar.len()
    }

    /// `5J + 1`.
    pub fn n_params(&self) -> usize {
        5 * self.hidden() + 1
    }

    pub(crate) fn is_consistent(&self) -> bool {
        let j = self.hidden();
        j >= 1 && [&self.b_bar, &self.w_tilde, &self.b_tilde, &self.w_hat].iter().all(|v| v.len() == j)
    }

    /// Appends parameters in the order `w̄, b̄, w̃, b̃, ŵ, b̂`.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.w_bar);
        out.extend_from_slice(&self.b_bar);
        out.extend_from_slice(&self.w_tilde);
        out.extend_from_slice(&self.b_tilde);
        out.extend_from_slice(&self.w_hat);
        out.push(self.b_hat);
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); `flat` must hold `5J + 1` values.
    pub fn assign_from_flat(&mut self, flat: &[T]) {
        let j = self.hidden();
        debug_assert_eq!(flat.len(), 5 * j + 1);
        self.w_bar.copy_from_slice(&flat[..j]);
        self.b_bar.copy_from_slice(&flat[j..2 * j]);
        self.w_tilde.copy_from_slice(&flat[2 * j..3 * j]);
        self.b_tilde.copy_from_slice(&flat[3 * j..4 * j]);
        self.w_hat.copy_from_slice(&flat[4 * j..5 * j]);
        self.b_hat = flat[5 * j];
    }

    /// `½Σw̄² + ½Σw̃² + ½Σŵ²`; biases are not regularized.
    pub fn frobenius_penalty(&self) -> T {
        let half = T::lit(0.5);
        half * [&self.w_bar, &self.w_tilde, &self.w_hat]
            .iter()
            .flat_map(|w| w.iter())
            .map(|&w| w * w)
            .sum::<T>()
    }

    pub(crate) fn frobenius_gradient(&self, scale: T, grad: &mut [T]) {
        let j = self.hidden();
        for (offset, w) in [(0, &self.w_bar), (2 * j, &self.w_tilde), (4 * j, &self.w_hat)] {
            for (g, &x) in grad[offset..offset + j].iter_mut().zip(w.iter()) {
                *g += scale * x;
            }
        }
    }

    pub(crate) fn exp_w_hat(&self) -> Vec<T> {
        self.w_hat.iter().map(|w| w.exp()).collect()
    }

    /// Plain evaluation of the surface.
    pub fn value(&self, m: T, tau: T, eps: T) -> T {
        let mut acc = self.b_hat.exp();
        for j in 0..self.hidden() {
            acc += smile_phi(m * self.w_bar[j] + self.b_bar[j], eps)
                * sigmoid(tau * self.w_tilde[j] + self.b_tilde[j])
                * self.w_hat[j].exp();
        }
        acc
    }
}

/// Per-unit activations kept between the forward and backward sweep.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct UnitCache<T> {
    phi: [T; 4],
    psi: [T; 3],
    scale: T,
}

/// Forward sweep in jet form; fills `cache` for [`expert_backward`].
pub(crate) fn expert_jet<T: Scalar>(
    p: &SingleModelParams<T>,
    m: T,
    tau: T,
    eps: T,
    exp_w_hat: &[T],
    exp_b_hat: T,
    cache: &mut Vec<UnitCache<T>>,
) -> Jet<T> {
    cache.clear();
    let mut out = Jet::constant(exp_b_hat);
    for j in 0..p.hidden() {
        let wb = p.w_bar[j];
        let wt = p.w_tilde[j];
        let phi = smile_ladder(m * wb + p.b_bar[j], eps);
        let [s0, s1, s2, _] = sigmoid_ladder(tau * wt + p.b_tilde[j]);
        let c = exp_w_hat[j];
        let cp = c * s0;
        out.v += cp * phi[0];
        out.dm += cp * phi[1] * wb;
        out.dmm += cp * phi[2] * wb * wb;
        out.dt += c * phi[0] * s1 * wt;
        cache.push(UnitCache { phi, psi: [s0, s1, s2], scale: c });
    }
    out
}

/// Reverse sweep: accumulates `∂⟨adj, jet⟩/∂θ` into `grad` (layout of
/// [`SingleModelParams::flatten_into`]).
pub(crate) fn expert_backward<T: Scalar>(
    p: &SingleModelParams<T>,
    m: T,
    tau: T,
    cache: &[UnitCache<T>],
    adj: Jet<T>,
    exp_b_hat: T,
    grad: &mut [T],
) {
    let j_count = p.hidden();
    let two = T::lit(2.0);
    let (gy, gym, gymm, gyt) = (adj.v, adj.dm, adj.dmm, adj.dt);
    for (j, unit) in cache.iter().enumerate() {
        let wb = p.w_bar[j];
        let wt = p.w_tilde[j];
        let [f0, f1, f2, f3] = unit.phi;
        let [s0, s1, s2] = unit.psi;
        let c = unit.scale;

        // Coefficient of ψ(s)·c in the value/∂m/∂mm components.
        let a = gy * f0 + gym * f1 * wb + gymm * f2 * wb * wb;
        let d_u = c * (s0 * (gy * f1 + gym * f2 * wb + gymm * f3 * wb * wb) + gyt * f1 * s1 * wt);
        let d_s = c * (s1 * a + gyt * f0 * s2 * wt);

        grad[j] += d_u * m + c * s0 * (gym * f1 + two * gymm * f2 * wb);
        grad[j_count + j] += d_u;
        grad[2 * j_count + j] += d_s * tau + c * gyt * f0 * s1;
        grad[3 * j_count + j] += d_s;
        grad[4 * j_count + j] += c * (s0 * a + gyt * f0 * s1 * wt);
    }
    grad[5 * j_count] += gy * exp_b_hat;
}
