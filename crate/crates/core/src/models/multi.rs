//! The gated multi-model: `I` single-model experts mixed by a softmax gate
//! whose logits come from a `K`-unit sigmoid layer over `(m, τ)`.

use super::activations::{sigmoid, sigmoid_ladder};
use super::single::{expert_backward, expert_jet, SingleModelParams, UnitCache};
use crate::jet::{compose_adjoint, mul_adjoint, Jet};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModelParams<T> {
    pub experts: Vec<SingleModelParams<T>>,
    /// Gate hidden weights, `2 × K` row-major: row 0 multiplies `m`, row 1 `τ`.
    pub w_dot: Vec<T>,
    /// Gate hidden biases (`K`).
    pub b_dot: Vec<T>,
    /// Gate output weights, `K × I` row-major.
    pub w_ddot: Vec<T>,
    /// Gate output biases (`I`).
    pub b_ddot: Vec<T>,
}

/// Result of a plain multi-model evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEval<T> {
    pub v_hat: T,
    pub weights: Vec<T>,
    pub expert_values: Vec<T>,
}

impl<T: Scalar> MultiModelParams<T> {
    pub fn zeros(experts: usize, hidden: usize, gate_hidden: usize) -> Self {
        MultiModelParams {
            experts: vec![SingleModelParams::zeros(hidden); experts],
            w_dot: vec![T::zero(); 2 * gate_hidden],
            b_dot: vec![T::zero(); gate_hidden],
            w_ddot: vec![T::zero(); gate_hidden * experts],
            b_ddot: vec![T::zero(); experts],
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn hidden(&self) -> usize {
        self.experts.first().map_or(0, |e| e.hidden())
    }

    pub fn gate_hidden(&self) -> usize {
        self.b_dot.len()
    }

    /// `(5J + K + 2)·I + 3K`.
    pub fn n_params(&self) -> usize {
        self.experts.iter().map(|e| e.n_params()).sum::<usize>()
            + self.w_dot.len()
            + self.b_dot.len()
            + self.w_ddot.len()
            + self.b_ddot.len()
    }

    pub(crate) fn is_consistent(&self) -> bool {
        let (i, j, k) = (self.n_experts(), self.hidden(), self.gate_hidden());
        i >= 1
            && k >= 1
            && self.experts.iter().all(|e| e.is_consistent() && e.hidden() == j)
            && self.w_dot.len() == 2 * k
            && self.w_ddot.len() == k * i
            && self.b_ddot.len() == i
    }

    fn gate_offset(&self) -> usize {
        self.experts.iter().map(|e| e.n_params()).sum()
    }

    /// Experts in order, then `Ẇ, ḃ, Ẅ, b̈`.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        for e in &self.experts {
            e.flatten_into(out);
        }
        out.extend_from_slice(&self.w_dot);
        out.extend_from_slice(&self.b_dot);
        out.extend_from_slice(&self.w_ddot);
        out.extend_from_slice(&self.b_ddot);
    }

    pub fn assign_from_flat(&mut self, flat: &[T]) {
        let mut at = 0;
        for e in &mut self.experts {
            let n = e.n_params();
            e.assign_from_flat(&flat[at..at + n]);
            at += n;
        }
        for dst in [&mut self.w_dot, &mut self.b_dot, &mut self.w_ddot, &mut self.b_ddot] {
            let n = dst.len();
            dst.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        debug_assert_eq!(at, flat.len());
    }

    pub fn frobenius_penalty(&self) -> T {
        let half = T::lit(0.5);
        self.experts.iter().map(|e| e.frobenius_penalty()).sum::<T>()
            + half * self.w_dot.iter().chain(self.w_ddot.iter()).map(|&w| w * w).sum::<T>()
    }

    pub(crate) fn frobenius_gradient(&self, scale: T, grad: &mut [T]) {
        let mut at = 0;
        for e in &self.experts {
            let n = e.n_params();
            e.frobenius_gradient(scale, &mut grad[at..at + n]);
            at += n;
        }
        let k = self.gate_hidden();
        for (g, &w) in grad[at..at + 2 * k].iter_mut().zip(&self.w_dot) {
            *g += scale * w;
        }
        at += 3 * k;
        for (g, &w) in grad[at..at + self.w_ddot.len()].iter_mut().zip(&self.w_ddot) {
            *g += scale * w;
        }
    }

    /// Softmax gate weights at `(m, τ)`.
    pub fn gate_weights(&self, m: T, tau: T) -> Vec<T> {
        let (i_count, k_count) = (self.n_experts(), self.gate_hidden());
        let hidden: Vec<T> = (0..k_count)
            .map(|k| sigmoid(m * self.w_dot[k] + tau * self.w_dot[k_count + k] + self.b_dot[k]))
            .collect();
        let mut logits: Vec<T> = (0..i_count)
            .map(|i| {
                self.b_ddot[i]
                    + hidden.iter().enumerate().map(|(k, &g)| g * self.w_ddot[k * i_count + i]).sum::<T>()
            })
            .collect();
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for z in logits.iter_mut() {
            *z = (*z - top).exp();
            total += *z;
        }
        for z in logits.iter_mut() {
            *z /= total;
        }
        logits
    }

    pub fn evaluate(&self, m: T, tau: T, eps: T) -> MultiEval<T> {
        let weights = self.gate_weights(m, tau);
        let expert_values: Vec<T> = self.experts.iter().map(|e| e.value(m, tau, eps)).collect();
        let v_hat = expert_values.iter().zip(&weights).map(|(&y, &w)| y * w).sum();
        MultiEval { v_hat, weights, expert_values }
    }
}

/// Intermediate jets of one forward sweep.
#[derive(Debug, Clone, Default)]
pub(crate) struct MultiCache<T> {
    experts: Vec<Vec<UnitCache<T>>>,
    y: Vec<Jet<T>>,
    h: Vec<Jet<T>>,
    psi: Vec<[T; 4]>,
    g: Vec<Jet<T>>,
    z: Vec<Jet<T>>,
    e: Vec<Jet<T>>,
    sum: Jet<T>,
    inv: Jet<T>,
    w: Vec<Jet<T>>,
    // adjoint scratch
    gy: Vec<Jet<T>>,
    ge: Vec<Jet<T>>,
    gg: Vec<Jet<T>>,
}

pub(crate) fn multi_jet<T: Scalar>(
    p: &MultiModelParams<T>,
    m: T,
    tau: T,
    eps: T,
    exp_w_hat: &[Vec<T>],
    exp_b_hat: &[T],
    cache: &mut MultiCache<T>,
) -> Jet<T> {
    let (i_count, k_count) = (p.n_experts(), p.gate_hidden());
    cache.experts.resize_with(i_count, Vec::new);
    cache.y.clear();
    for (i, expert) in p.experts.iter().enumerate() {
        let y = expert_jet(expert, m, tau, eps, &exp_w_hat[i], exp_b_hat[i], &mut cache.experts[i]);
        cache.y.push(y);
    }

    cache.h.clear();
    cache.psi.clear();
    cache.g.clear();
    for k in 0..k_count {
        let (a, b) = (p.w_dot[k], p.w_dot[k_count + k]);
        let h = Jet::new(m * a + tau * b + p.b_dot[k], a, T::zero(), b);
        let ladder = sigmoid_ladder(h.v);
        cache.g.push(h.compose(ladder[0], ladder[1], ladder[2]));
        cache.h.push(h);
        cache.psi.push(ladder);
    }

    cache.z.clear();
    for i in 0..i_count {
        let mut z = Jet::constant(p.b_ddot[i]);
        for k in 0..k_count {
            z = z + cache.g[k].scale(p.w_ddot[k * i_count + i]);
        }
        cache.z.push(z);
    }
    let top = cache.z.iter().map(|z| z.v).fold(T::neg_infinity(), T::max);
    cache.e.clear();
    let mut sum = Jet::zero();
    for z in &cache.z {
        let ex = (z.v - top).exp();
        let e = z.compose(ex, ex, ex);
        sum = sum + e;
        cache.e.push(e);
    }
    let inv = sum.recip();
    cache.sum = sum;
    cache.inv = inv;
    cache.w.clear();
    let mut out = Jet::zero();
    for i in 0..i_count {
        let w = cache.e[i] * inv;
        out = out + cache.y[i] * w;
        cache.w.push(w);
    }
    out
}

pub(crate) fn multi_backward<T: Scalar>(
    p: &MultiModelParams<T>,
    m: T,
    tau: T,
    cache: &mut MultiCache<T>,
    adj: Jet<T>,
    exp_b_hat: &[T],
    grad: &mut [T],
) {
    let (i_count, k_count) = (p.n_experts(), p.gate_hidden());
    let mut g_inv = Jet::zero();
    cache.gy.clear();
    cache.gy.resize(i_count, Jet::zero());
    cache.ge.clear();
    cache.ge.resize(i_count, Jet::zero());
    cache.gg.clear();
    cache.gg.resize(k_count, Jet::zero());

    // out = Σ y_i w_i, w_i = e_i · inv
    for i in 0..i_count {
        let mut gw = Jet::zero();
        mul_adjoint(adj, cache.y[i], cache.w[i], &mut cache.gy[i], &mut gw);
        mul_adjoint(gw, cache.e[i], cache.inv, &mut cache.ge[i], &mut g_inv);
    }
    // inv = 1/sum
    let s = cache.sum.v;
    let r = s.recip();
    let g_sum = compose_adjoint(g_inv, cache.sum, -r * r, T::lit(2.0) * r * r * r, -T::lit(6.0) * r * r * r * r);

    let gate_at = p.gate_offset();
    let w_dot_at = gate_at;
    let b_dot_at = w_dot_at + 2 * k_count;
    let w_ddot_at = b_dot_at + k_count;
    let b_ddot_at = w_ddot_at + k_count * i_count;

    for i in 0..i_count {
        let ge = cache.ge[i] + g_sum;
        let ex = cache.e[i].v;
        let gz = compose_adjoint(ge, cache.z[i], ex, ex, ex);
        grad[b_ddot_at + i] += gz.v;
        for k in 0..k_count {
            grad[w_ddot_at + k * i_count + i] += gz.dot(cache.g[k]);
            cache.gg[k] = cache.gg[k] + gz.scale(p.w_ddot[k * i_count + i]);
        }
    }

    for k in 0..k_count {
        let [_, d1, d2, d3] = cache.psi[k];
        let gh = compose_adjoint(cache.gg[k], cache.h[k], d1, d2, d3);
        grad[w_dot_at + k] += gh.v * m + gh.dm;
        grad[w_dot_at + k_count + k] += gh.v * tau + gh.dt;
        grad[b_dot_at + k] += gh.v;
    }

    let mut at = 0;
    for (i, expert) in p.experts.iter().enumerate() {
        let n = expert.n_params();
        expert_backward(expert, m, tau, &cache.experts[i], cache.gy[i], exp_b_hat[i], &mut grad[at..at + n]);
        at += n;
    }
}
