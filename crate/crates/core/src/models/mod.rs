//! Network architectures for the implied-volatility surface.
//!
//! Three layouts are provided: the gated [`MultiModelParams`], its building
//! block [`SingleModelParams`], and the [`VanillaModelParams`] benchmark. All
//! are wrapped by [`SurfaceModel`], which carries the smile `ε` and exposes
//! evaluation, input derivatives and the parameter-gradient sweep used in
//! training.

mod activations;
mod init;
mod io;
mod multi;
mod single;
mod vanilla;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use activations::{sigmoid, smile_phi, DEFAULT_SMILE_EPS, RADICAND_FLOOR};
pub use init::init_params;
pub use io::{ModelFile, SCHEMA_VERSION};
pub use multi::{MultiEval, MultiModelParams};
pub use single::SingleModelParams;
pub use vanilla::VanillaModelParams;

use crate::error::{check_tau, Error, Result};
use crate::jet::Jet;
use crate::Scalar;
use multi::{multi_backward, multi_jet, MultiCache};
use single::{expert_backward, expert_jet, UnitCache};
use vanilla::{vanilla_backward, vanilla_jet, VanillaUnitCache};

/// Anything that maps `(m, τ)` to an implied volatility with the input
/// derivatives the arbitrage conditions require.
pub trait VolSurface<T: Scalar> {
    fn vol(&self, m: T, tau: T) -> Result<T>;

    /// Value with `∂m`, `∂mm` and `∂τ`.
    fn vol_jet(&self, m: T, tau: T) -> Result<Jet<T>>;

    /// `(∂v/∂m, ∂²v/∂m², ∂v/∂τ)`.
    fn input_derivatives(&self, m: T, tau: T) -> Result<(T, T, T)> {
        let j = self.vol_jet(m, tau)?;
        Ok((j.dm, j.dmm, j.dt))
    }
}

impl<T: Scalar, S: VolSurface<T> + ?Sized> VolSurface<T> for &S {
    fn vol(&self, m: T, tau: T) -> Result<T> {
        (**self).vol(m, tau)
    }
    fn vol_jet(&self, m: T, tau: T) -> Result<Jet<T>> {
        (**self).vol_jet(m, tau)
    }
}

/// A constant surface `v(m, τ) = level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSurface<T>(pub T);

impl<T: Scalar> VolSurface<T> for FlatSurface<T> {
    fn vol(&self, _m: T, tau: T) -> Result<T> {
        check_tau(tau)?;
        Ok(self.0)
    }
    fn vol_jet(&self, _m: T, tau: T) -> Result<Jet<T>> {
        check_tau(tau)?;
        Ok(Jet::constant(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Single,
    Multi,
    Vanilla,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Single => "single",
            Architecture::Multi => "multi",
            Architecture::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Architecture::Single),
            "multi" => Ok(Architecture::Multi),
            "vanilla" => Ok(Architecture::Vanilla),
            other => Err(Error::Parse(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Network sizes: `experts` (I), `hidden` (J) and `gate_hidden` (K).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    #[serde(rename = "I")]
    pub experts: usize,
    #[serde(rename = "J")]
    pub hidden: usize,
    #[serde(rename = "K")]
    pub gate_hidden: usize,
}

impl ModelDims {
    pub fn new(experts: usize, hidden: usize, gate_hidden: usize) -> Result<Self> {
        let dims = ModelDims { experts, hidden, gate_hidden };
        if experts == 0 || hidden == 0 {
            return Err(Error::domain(format!("model dims must be positive, got {dims:?}")));
        }
        Ok(dims)
    }

    pub fn single(hidden: usize) -> Self {
        ModelDims { experts: 1, hidden, gate_hidden: 0 }
    }

    pub fn validate_for(&self, arch: Architecture) -> Result<()> {
        if self.experts == 0 || self.hidden == 0 {
            return Err(Error::domain(format!("model dims must be positive, got {self:?}")));
        }
        if arch == Architecture::Multi && self.gate_hidden == 0 {
            return Err(Error::domain("multi-model needs at least one gate unit"));
        }
        if arch != Architecture::Multi && self.experts != 1 {
            return Err(Error::domain(format!("{arch} model has exactly one expert")));
        }
        Ok(())
    }

    /// Number of scalars for the given architecture.
    pub fn param_count(&self, arch: Architecture) -> usize {
        match arch {
            Architecture::Single => 5 * self.hidden + 1,
            Architecture::Vanilla => 4 * self.hidden + 1,
            Architecture::Multi => {
                (5 * self.hidden + self.gate_hidden + 2) * self.experts + 3 * self.gate_hidden
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<T> {
    Single(SingleModelParams<T>),
    Multi(MultiModelParams<T>),
    Vanilla(VanillaModelParams<T>),
}

impl<T: Scalar> ModelParams<T> {
    pub fn arch(&self) -> Architecture {
        match self {
            ModelParams::Single(_) => Architecture::Single,
            ModelParams::Multi(_) => Architecture::Multi,
            ModelParams::Vanilla(_) => Architecture::Vanilla,
        }
    }

    pub fn dims(&self) -> ModelDims {
        match self {
            ModelParams::Single(p) => ModelDims::single(p.hidden()),
            ModelParams::Vanilla(p) => ModelDims::single(p.hidden()),
            ModelParams::Multi(p) => ModelDims {
                experts: p.n_experts(),
                hidden: p.hidden(),
                gate_hidden: p.gate_hidden(),
            },
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ModelParams::Single(p) => p.n_params(),
            ModelParams::Multi(p) => p.n_params(),
            ModelParams::Vanilla(p) => p.n_params(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self {
            ModelParams::Single(p) => p.is_consistent(),
            ModelParams::Multi(p) => p.is_consistent(),
            ModelParams::Vanilla(p) => p.is_consistent(),
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        match self {
            ModelParams::Single(p) => p.flatten_into(&mut out),
            ModelParams::Multi(p) => p.flatten_into(&mut out),
            ModelParams::Vanilla(p) => p.flatten_into(&mut out),
        }
        out
    }

    /// Overwrites every parameter from a flat vector in [`to_flat`](Self::to_flat) order.
    pub fn assign_from_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::domain(format!(
                "flat parameter vector has {} entries, model needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        match self {
            ModelParams::Single(p) => p.assign_from_flat(flat),
            ModelParams::Multi(p) => p.assign_from_flat(flat),
            ModelParams::Vanilla(p) => p.assign_from_flat(flat),
        }
        Ok(())
    }

    /// Squared Frobenius norms (with the ½ factor) of every weight term.
    pub fn frobenius_penalty(&self) -> T {
        match self {
            ModelParams::Single(p) => p.frobenius_penalty(),
            ModelParams::Multi(p) => p.frobenius_penalty(),
            ModelParams::Vanilla(p) => p.frobenius_penalty(),
        }
    }

    /// Adds `scale · ∂(frobenius_penalty)/∂θ` into `grad`.
    pub fn frobenius_gradient(&self, scale: T, grad: &mut [T]) {
        match self {
            ModelParams::Single(p) => p.frobenius_gradient(scale, grad),
            ModelParams::Multi(p) => p.frobenius_gradient(scale, grad),
            ModelParams::Vanilla(p) => p.frobenius_gradient(scale, grad),
        }
    }
}

/// A parameterized network together with its smile `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceModel<T> {
    pub params: ModelParams<T>,
    pub smile_eps: T,
}

impl<T: Scalar> SurfaceModel<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        SurfaceModel { params, smile_eps: T::lit(DEFAULT_SMILE_EPS) }
    }

    pub fn with_smile_eps(params: ModelParams<T>, smile_eps: T) -> Result<Self> {
        if !(smile_eps.is_finite() && smile_eps > T::zero()) {
            return Err(Error::domain(format!("smile epsilon must be positive, got {smile_eps}")));
        }
        Ok(SurfaceModel { params, smile_eps })
    }

    pub fn arch(&self) -> Architecture {
        self.params.arch()
    }

    pub fn dims(&self) -> ModelDims {
        self.params.dims()
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    pub(crate) fn prepare(&self) -> Prepared<T> {
        match &self.params {
            ModelParams::Single(p) => Prepared { exp_w_hat: vec![p.exp_w_hat()], exp_b_hat: vec![p.b_hat.exp()] },
            ModelParams::Vanilla(p) => Prepared {
                exp_w_hat: vec![p.w_hat.iter().map(|w| w.exp()).collect()],
                exp_b_hat: vec![p.b_hat.exp()],
            },
            ModelParams::Multi(p) => Prepared {
                exp_w_hat: p.experts.iter().map(|e| e.exp_w_hat()).collect(),
                exp_b_hat: p.experts.iter().map(|e| e.b_hat.exp()).collect(),
            },
        }
    }

    /// Forward sweep; `tau` is assumed valid.
    pub(crate) fn jet_prepared(&self, prep: &Prepared<T>, ws: &mut Workspace<T>, m: T, tau: T) -> Jet<T> {
        match &self.params {
            ModelParams::Single(p) => {
                expert_jet(p, m, tau, self.smile_eps, &prep.exp_w_hat[0], prep.exp_b_hat[0], &mut ws.units)
            }
            ModelParams::Vanilla(p) => vanilla_jet(p, m, tau, &prep.exp_w_hat[0], prep.exp_b_hat[0], &mut ws.vanilla),
            ModelParams::Multi(p) => {
                multi_jet(p, m, tau, self.smile_eps, &prep.exp_w_hat, &prep.exp_b_hat, &mut ws.multi)
            }
        }
    }

    /// Reverse sweep for the point of the preceding [`jet_prepared`](Self::jet_prepared) call.
    pub(crate) fn backward_prepared(
        &self,
        prep: &Prepared<T>,
        ws: &mut Workspace<T>,
        m: T,
        tau: T,
        adj: Jet<T>,
        grad: &mut [T],
    ) {
        match &self.params {
            ModelParams::Single(p) => expert_backward(p, m, tau, &ws.units, adj, prep.exp_b_hat[0], grad),
            ModelParams::Vanilla(p) => vanilla_backward(p, m, tau, &ws.vanilla, adj, prep.exp_b_hat[0], grad),
            ModelParams::Multi(p) => multi_backward(p, m, tau, &mut ws.multi, adj, &prep.exp_b_hat, grad),
        }
    }

    /// Gradient of `⟨adj, jet(m, τ)⟩` with respect to the flat parameters.
    pub fn jet_vjp(&self, m: T, tau: T, adj: Jet<T>) -> Result<(Jet<T>, Vec<T>)> {
        check_tau(tau)?;
        let prep = self.prepare();
        let mut ws = Workspace::default();
        let jet = self.jet_prepared(&prep, &mut ws, m, tau);
        let mut grad = vec![T::zero(); self.n_params()];
        self.backward_prepared(&prep, &mut ws, m, tau, adj, &mut grad);
        Ok((jet, grad))
    }
}

impl<T: Scalar> VolSurface<T> for SurfaceModel<T> {
    fn vol(&self, m: T, tau: T) -> Result<T> {
        check_tau(tau)?;
        Ok(match &self.params {
            ModelParams::Single(p) => p.value(m, tau, self.smile_eps),
            ModelParams::Multi(p) => p.evaluate(m, tau, self.smile_eps).v_hat,
            ModelParams::Vanilla(p) => p.value(m, tau),
        })
    }

    fn vol_jet(&self, m: T, tau: T) -> Result<Jet<T>> {
        check_tau(tau)?;
        let prep = self.prepare();
        let mut ws = Workspace::default();
        Ok(self.jet_prepared(&prep, &mut ws, m, tau))
    }
}

/// Exponentiated output weights, computed once per parameter set.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<T> {
    exp_w_hat: Vec<Vec<T>>,
    exp_b_hat: Vec<T>,
}

/// Reusable scratch for forward/backward sweeps.
#[derive(Debug, Clone)]
pub(crate) struct Workspace<T> {
    units: Vec<UnitCache<T>>,
    vanilla: Vec<VanillaUnitCache<T>>,
    multi: MultiCache<T>,
}

impl<T: Scalar> Default for Workspace<T> {
    fn default() -> Self {
        Workspace { units: Vec::new(), vanilla: Vec::new(), multi: MultiCache::default() }
    }
}

pub fn eval_single<T: Scalar>(p: &SingleModelParams<T>, m: T, tau: T, eps: T) -> Result<T> {
    check_tau(tau)?;
    Ok(p.value(m, tau, eps))
}

pub fn eval_multi<T: Scalar>(p: &MultiModelParams<T>, m: T, tau: T, eps: T) -> Result<MultiEval<T>> {
    check_tau(tau)?;
    Ok(p.evaluate(m, tau, eps))
}

pub fn eval_vanilla<T: Scalar>(p: &VanillaModelParams<T>, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    Ok(p.value(m, tau))
}

#[cfg(test)]
mod tests;
