//! The vanilla benchmark: one sigmoid hidden layer over `(m, τ)` with the
//! same exponentiated output weights as the single model, which keeps the
//! output positive.

use super::activations::{sigmoid, sigmoid_ladder};
use crate::jet::Jet;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaModelParams<T> {
    /// Moneyness input weights.
    pub w1: Vec<T>,
    /// Maturity input weights.
    pub w2: Vec<T>,
    /// Hidden biases.
    pub b: Vec<T>,
    /// Output log-weights.
    pub w_hat: Vec<T>,
    /// Output log-floor.
    pub b_hat: T,
}

impl<T: Scalar> VanillaModelParams<T> {
    pub fn zeros(hidden: usize) -> Self {
        VanillaModelParams {
            w1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b: vec![T::zero(); hidden],
            w_hat: vec![T::zero(); hidden],
            b_hat: T::zero(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.len()
    }

    /// `4J + 1`: two input weights, a bias and an output log-weight per unit.
    pub fn n_params(&self) -> usize {
        4 * self.hidden() + 1
    }

    pub(crate) fn is_consistent(&self) -> bool {
        let j = self.hidden();
        j >= 1 && [&self.w2, &self.b, &self.w_hat].iter().all(|v| v.len() == j)
    }

    /// Order: `w1, w2, b, ŵ, b̂`.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.w_hat);
        out.push(self.b_hat);
    }

    pub fn assign_from_flat(&mut self, flat: &[T]) {
        let j = self.hidden();
        debug_assert_eq!(flat.len(), 4 * j + 1);
        self.w1.copy_from_slice(&flat[..j]);
        self.w2.copy_from_slice(&flat[j..2 * j]);
        self.b.copy_from_slice(&flat[2 * j..3 * j]);
        self.w_hat.copy_from_slice(&flat[3 * j..4 * j]);
        self.b_hat = flat[4 * j];
    }

    pub fn frobenius_penalty(&self) -> T {
        T::lit(0.5)
            * [&self.w1, &self.w2, &self.w_hat]
                .iter()
                .flat_map(|w| w.iter())
                .map(|&w| w * w)
                .sum::<T>()
    }

    pub(crate) fn frobenius_gradient(&self, scale: T, grad: &mut [T]) {
        let j = self.hidden();
        for (offset, w) in [(0, &self.w1), (j, &self.w2), (3 * j, &self.w_hat)] {
            for (g, &x) in grad[offset..offset + j].iter_mut().zip(w.iter()) {
                *g += scale * x;
            }
        }
    }

    pub fn value(&self, m: T, tau: T) -> T {
        let mut acc = self.b_hat.exp();
        for j in 0..self.hidden() {
            acc += sigmoid(m * self.w1[j] + tau * self.w2[j] + self.b[j]) * self.w_hat[j].exp();
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct VanillaUnitCache<T> {
    psi: [T; 4],
    scale: T,
}

pub(crate) fn vanilla_jet<T: Scalar>(
    p: &VanillaModelParams<T>,
    m: T,
    tau: T,
    exp_w_hat: &[T],
    exp_b_hat: T,
    cache: &mut Vec<VanillaUnitCache<T>>,
) -> Jet<T> {
    cache.clear();
    let mut out = Jet::constant(exp_b_hat);
    for j in 0..p.hidden() {
        let (w1, w2) = (p.w1[j], p.w2[j]);
        let psi = sigmoid_ladder(m * w1 + tau * w2 + p.b[j]);
        let c = exp_w_hat[j];
        out.v += c * psi[0];
        out.dm += c * psi[1] * w1;
        out.dmm += c * psi[2] * w1 * w1;
        out.dt += c * psi[1] * w2;
        cache.push(VanillaUnitCache { psi, scale: c });
    }
    out
}

pub(crate) fn vanilla_backward<T: Scalar>(
    p: &VanillaModelParams<T>,
    m: T,
    tau: T,
    cache: &[VanillaUnitCache<T>],
    adj: Jet<T>,
    exp_b_hat: T,
    grad: &mut [T],
) {
    let j_count = p.hidden();
    let two = T::lit(2.0);
    for (j, unit) in cache.iter().enumerate() {
        let (w1, w2) = (p.w1[j], p.w2[j]);
        let [p0, p1, p2, p3] = unit.psi;
        let c = unit.scale;
        let term = c * (adj.v * p0 + adj.dm * p1 * w1 + adj.dmm * p2 * w1 * w1 + adj.dt * p1 * w2);
        let d_s = c * (adj.v * p1 + adj.dm * p2 * w1 + adj.dmm * p3 * w1 * w1 + adj.dt * p2 * w2);
        grad[j] += d_s * m + c * (adj.dm * p1 + two * adj.dmm * p2 * w1);
        grad[j_count + j] += d_s * tau + c * adj.dt * p1;
        grad[2 * j_count + j] += d_s;
        grad[3 * j_count + j] += term;
    }
    grad[4 * j_count] += adj.v * exp_b_hat;
}
