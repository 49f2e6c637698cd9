//! The training objective `ℓ = ℓ0 + γℓ1 + δℓ2 + ηℓ3 + ρℓ4 + ωℓ5` and its exact gradient.
//!
//! Penalties are plain hinge sums over their grids (not means), so grid sizes
//! scale the effective weights.

use serde::{Deserialize, Serialize};

use crate::constraints::{
    asymptotic_adjoint, boundary_adjoint, butterfly_adjoint, monotonicity_adjoint, ConditionGrid, PenaltyGrids,
};
use crate::error::{check_tau, Error, Result};
use crate::jet::Jet;
use crate::models::{ModelParams, SurfaceModel, VolSurface, Workspace};
use crate::Scalar;

/// Loss weights and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub delta: T,
    pub eta: T,
    pub rho: T,
    pub omega: T,
    pub learning_rate: T,
    pub n_iterations: usize,
    pub eps_l4: T,
    pub eps_smile: T,
    /// Synthetic constraint points per real quote.
    pub synth_ratio: T,
}

impl<T: Scalar> Default for HyperParams<T> {
    fn default() -> Self {
        HyperParams {
            alpha: T::one(),
            beta: T::one(),
            gamma: T::lit(10.0),
            delta: T::one(),
            eta: T::lit(10.0),
            rho: T::one(),
            omega: T::lit(5e-5),
            learning_rate: T::lit(0.1),
            n_iterations: 20_000,
            eps_l4: T::lit(1e-5),
            eps_smile: T::lit(0.01),
            synth_ratio: T::lit(6.0),
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    /// Defaults with every arbitrage penalty switched off.
    pub fn incomplete() -> Self {
        Self::default().without_constraints()
    }

    pub fn without_constraints(mut self) -> Self {
        self.gamma = T::zero();
        self.delta = T::zero();
        self.eta = T::zero();
        self.rho = T::zero();
        self
    }

    pub fn constraints_active(&self) -> bool {
        [self.gamma, self.delta, self.eta, self.rho].iter().any(|&w| w != T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.gamma, self.delta, self.eta, self.rho, self.omega];
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::domain("loss weights must be finite and nonnegative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > T::zero()) {
            return Err(Error::domain(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.eps_smile > T::zero() && self.eps_l4 >= T::zero() && self.synth_ratio > T::zero()) {
            return Err(Error::domain("eps_smile and synth_ratio must be positive, eps_l4 nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint<T> {
    pub m: T,
    pub tau: T,
    pub v: T,
}

/// Observed implied vols.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataBatch<T> {
    pub points: Vec<DataPoint<T>>,
}

impl<T: Scalar> DataBatch<T> {
    pub fn new(points: Vec<DataPoint<T>>) -> Result<Self> {
        for p in &points {
            check_tau(p.tau)?;
            if !(p.v.is_finite() && p.v > T::zero() && p.m.is_finite()) {
                return Err(Error::domain(format!("invalid observation (m={}, v={})", p.m, p.v)));
            }
        }
        Ok(DataBatch { points })
    }

    pub fn from_triples(triples: &[(T, T, T)]) -> Result<Self> {
        Self::new(triples.iter().map(|&(m, tau, v)| DataPoint { m, tau, v }).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Total objective and its unweighted components `ℓ0..ℓ5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub components: [T; 6],
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.components.iter().all(|c| c.is_finite())
    }
}

#[inline]
fn hinge<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        -x
    } else {
        T::zero()
    }
}

fn nonempty<T>(grid: &ConditionGrid<T>, what: &str) -> Result<()> {
    if grid.points.is_empty() {
        return Err(Error::domain(format!("empty {what} grid")));
    }
    Ok(())
}

/// `α·MSLE + β·MSPE` of the surface against the batch.
pub fn data_loss_l0<T: Scalar, S: VolSurface<T> + ?Sized>(
    surface: &S,
    batch: &DataBatch<T>,
    hp: &HyperParams<T>,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::domain("empty data batch"));
    }
    let (mut msle, mut mspe) = (T::zero(), T::zero());
    for p in &batch.points {
        let v_hat = surface.vol(p.m, p.tau)?;
        let l = p.v.ln() - v_hat.ln();
        let r = (p.v - v_hat) / p.v;
        msle += l * l;
        mspe += r * r;
    }
    let n = T::lit(batch.len() as f64);
    Ok(hp.alpha * msle / n + hp.beta * mspe / n)
}

pub fn penalty_l1<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, grid: &ConditionGrid<T>) -> Result<T> {
    nonempty(grid, "monotonicity")?;
    grid.points.iter().try_fold(T::zero(), |acc, &(m, tau)| {
        check_tau(tau)?;
        Ok(acc + hinge(monotonicity_adjoint(surface.vol_jet(m, tau)?, tau).0))
    })
}

pub fn penalty_l2<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, grid: &ConditionGrid<T>) -> Result<T> {
    nonempty(grid, "butterfly")?;
    grid.points.iter().try_fold(T::zero(), |acc, &(m, tau)| {
        check_tau(tau)?;
        Ok(acc + hinge(butterfly_adjoint(surface.vol_jet(m, tau)?, m, tau).0))
    })
}

/// Right-boundary hinge on `m ≥ 0` points plus left-boundary hinge on `m < 0` points.
pub fn penalty_l3<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, grid: &ConditionGrid<T>) -> Result<T> {
    nonempty(grid, "boundary")?;
    grid.points.iter().try_fold(T::zero(), |acc, &(m, tau)| {
        check_tau(tau)?;
        Ok(acc + hinge(boundary_adjoint(surface.vol_jet(m, tau)?, m, tau)?.0))
    })
}

pub fn penalty_l4<T: Scalar, S: VolSurface<T> + ?Sized>(
    surface: &S,
    grid: &ConditionGrid<T>,
    eps_l4: T,
) -> Result<T> {
    nonempty(grid, "asymptotic")?;
    grid.points.iter().try_fold(T::zero(), |acc, &(m, tau)| {
        check_tau(tau)?;
        Ok(acc + hinge(asymptotic_adjoint(surface.vol(m, tau)?, m, tau).0 - eps_l4))
    })
}

/// `½ΣW²` over weight matrices; biases are excluded.
pub fn regularization_l5<T: Scalar>(params: &ModelParams<T>) -> T {
    params.frobenius_penalty()
}

/// Objective value with per-term breakdown. Penalty grids are skipped
/// (and their components reported as zero) when their weight is zero.
pub fn total_loss<T: Scalar>(
    model: &SurfaceModel<T>,
    batch: &DataBatch<T>,
    grids: &PenaltyGrids<T>,
    hp: &HyperParams<T>,
) -> Result<LossBreakdown<T>> {
    let l0 = data_loss_l0(model, batch, hp)?;
    let l1 = if hp.gamma != T::zero() { penalty_l1(model, &grids.monotonicity)? } else { T::zero() };
    let l2 = if hp.delta != T::zero() { penalty_l2(model, &grids.butterfly)? } else { T::zero() };
    let l3 = if hp.eta != T::zero() { penalty_l3(model, &grids.boundary)? } else { T::zero() };
    let l4 = if hp.rho != T::zero() { penalty_l4(model, &grids.asymptotic, hp.eps_l4)? } else { T::zero() };
    let l5 = regularization_l5(&model.params);
    Ok(combine([l0, l1, l2, l3, l4, l5], hp))
}

fn combine<T: Scalar>(c: [T; 6], hp: &HyperParams<T>) -> LossBreakdown<T> {
    let total = c[0] + hp.gamma * c[1] + hp.delta * c[2] + hp.eta * c[3] + hp.rho * c[4] + hp.omega * c[5];
    LossBreakdown { total, components: c }
}

/// Reusable buffers for repeated loss/gradient evaluations.
#[derive(Debug, Clone)]
pub struct GradientWorkspace<T> {
    ws: Workspace<T>,
}

impl<T: Scalar> Default for GradientWorkspace<T> {
    fn default() -> Self {
        GradientWorkspace { ws: Workspace::default() }
    }
}

/// Exact gradient of [`total_loss`] with respect to the flat parameters.
pub fn loss_gradient<T: Scalar>(
    model: &SurfaceModel<T>,
    batch: &DataBatch<T>,
    grids: &PenaltyGrids<T>,
    hp: &HyperParams<T>,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let mut grad = vec![T::zero(); model.n_params()];
    let loss = loss_gradient_into(model, batch, grids, hp, &mut GradientWorkspace::default(), &mut grad)?;
    Ok((loss, grad))
}

/// As [`loss_gradient`], overwriting `grad` and reusing `scratch`.
pub fn loss_gradient_into<T: Scalar>(
    model: &SurfaceModel<T>,
    batch: &DataBatch<T>,
    grids: &PenaltyGrids<T>,
    hp: &HyperParams<T>,
    scratch: &mut GradientWorkspace<T>,
    grad: &mut [T],
) -> Result<LossBreakdown<T>> {
    if batch.is_empty() {
        return Err(Error::domain("empty data batch"));
    }
    if grad.len() != model.n_params() {
        return Err(Error::domain(format!("gradient buffer has length {}, expected {}", grad.len(), model.n_params())));
    }
    grad.iter_mut().for_each(|g| *g = T::zero());
    let prep = model.prepare();
    let ws = &mut scratch.ws;
    let two = T::lit(2.0);

    let n = T::lit(batch.len() as f64);
    let (mut msle, mut mspe) = (T::zero(), T::zero());
    for p in &batch.points {
        check_tau(p.tau)?;
        let j = model.jet_prepared(&prep, ws, p.m, p.tau);
        let v_hat = j.v;
        let l = v_hat.ln() - p.v.ln();
        let r = (v_hat - p.v) / p.v;
        msle += l * l;
        mspe += r * r;
        let d_v = hp.alpha / n * two * l / v_hat + hp.beta / n * two * r / p.v;
        let adj = Jet::new(d_v, T::zero(), T::zero(), T::zero());
        model.backward_prepared(&prep, ws, p.m, p.tau, adj, grad);
    }
    let l0 = hp.alpha * msle / n + hp.beta * mspe / n;

    // Hinge max(0, -x) with weight w contributes -w·∂x where x < 0.
    let mut penalty = |grid: &ConditionGrid<T>,
                       what: &str,
                       weight: T,
                       cond: &dyn Fn(Jet<T>, T, T) -> Result<(T, Jet<T>)>|
     -> Result<T> {
        if weight == T::zero() {
            return Ok(T::zero());
        }
        nonempty(grid, what)?;
        let mut sum = T::zero();
        for &(m, tau) in &grid.points {
            check_tau(tau)?;
            let j = model.jet_prepared(&prep, ws, m, tau);
            let (x, dx) = cond(j, m, tau)?;
            if x < T::zero() {
                sum += -x;
                model.backward_prepared(&prep, ws, m, tau, dx.scale(-weight), grad);
            }
        }
        Ok(sum)
    };
    let l1 = penalty(&grids.monotonicity, "monotonicity", hp.gamma, &|j, _m, tau| Ok(monotonicity_adjoint(j, tau)))?;
    let l2 = penalty(&grids.butterfly, "butterfly", hp.delta, &|j, m, tau| Ok(butterfly_adjoint(j, m, tau)))?;
    let l3 = penalty(&grids.boundary, "boundary", hp.eta, &|j, m, tau| boundary_adjoint(j, m, tau))?;
    let eps_l4 = hp.eps_l4;
    let l4 = penalty(&grids.asymptotic, "asymptotic", hp.rho, &|j, m, tau| {
        let (g, dg) = asymptotic_adjoint(j.v, m, tau);
        Ok((g - eps_l4, dg))
    })?;

    let l5 = regularization_l5(&model.params);
    model.params.frobenius_gradient(hp.omega, grad);
    Ok(combine([l0, l1, l2, l3, l4, l5], hp))
}
