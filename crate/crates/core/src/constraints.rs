//! Evaluable no-static-arbitrage conditions and the violation auditor.
//!
//! Each condition is a scalar function of the surface jet at `(m, τ)`:
//!
//! | name             | value                                              | holds when |
//! |------------------|----------------------------------------------------|------------|
//! | monotonicity     | `a = v + 2τ ∂τv`                                   | `a ≥ 0`    |
//! | butterfly        | `b = (1 - m∂mv/v)² - ¼(vτ∂mv)² + τ v ∂mmv`         | `b ≥ 0`    |
//! | right boundary   | `c1 = N(d-) - √τ ∂mv n(d-)`, `m ≥ 0`               | `c1 ≥ 0`   |
//! | left boundary    | `c2 = N(-d-) + √τ ∂mv n(d-)`, `m < 0`              | `c2 ≥ 0`   |
//! | asymptotic slope | `g = 2|m| - v²τ`, wings only                       | `g > 0`    |
//!
//! The `*_adjoint` variants also return `∂(value)/∂(v, ∂mv, ∂mmv, ∂τv)`,
//! which the training loss chains into the network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bs::{d_pair, norm_cdf, norm_pdf};
use crate::error::{check_tau, Error, Result};
use crate::jet::Jet;
use crate::models::VolSurface;
use crate::Scalar;

pub const CORE_M: (f64, f64) = (-3.0, 3.0);
pub const WINGS_ABS_M: (f64, f64) = (3.0, 6.0);
pub const TAU_RANGE: (f64, f64) = (0.002, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridDomain {
    /// `m ∈ [-3, 3]`.
    Core,
    /// `|m| ∈ [3, 6]`.
    Wings,
}

impl GridDomain {
    pub fn contains<T: Scalar>(self, m: T, tau: T) -> bool {
        let (m, tau) = (m.as_f64(), tau.as_f64());
        let tau_ok = (TAU_RANGE.0..=TAU_RANGE.1).contains(&tau);
        let m_ok = match self {
            GridDomain::Core => (CORE_M.0..=CORE_M.1).contains(&m),
            GridDomain::Wings => (WINGS_ABS_M.0..=WINGS_ABS_M.1).contains(&m.abs()),
        };
        tau_ok && m_ok
    }
}

/// Sample points at which conditions are evaluated or penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGrid<T> {
    pub points: Vec<(T, T)>,
    pub domain: GridDomain,
}

impl<T: Scalar> ConditionGrid<T> {
    /// Builds a grid, rejecting points outside the domain box.
    pub fn new(points: Vec<(T, T)>, domain: GridDomain) -> Result<Self> {
        if let Some(&(m, tau)) = points.iter().find(|&&(m, tau)| !domain.contains(m, tau)) {
            return Err(Error::domain(format!("point ({m}, {tau}) outside the {domain:?} grid domain")));
        }
        Ok(ConditionGrid { points, domain })
    }

    /// `n` distinct uniform draws from the domain box.
    pub fn random<R: Rng>(domain: GridDomain, n: usize, rng: &mut R) -> Self {
        let mut seen = std::collections::HashSet::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        while points.len() < n {
            let m = match domain {
                GridDomain::Core => rng.random_range(CORE_M.0..=CORE_M.1),
                GridDomain::Wings => {
                    let mag = rng.random_range(WINGS_ABS_M.0..=WINGS_ABS_M.1);
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            };
            let tau = rng.random_range(TAU_RANGE.0..=TAU_RANGE.1);
            if seen.insert((m.to_bits(), tau.to_bits())) {
                points.push((T::lit(m), T::lit(tau)));
            }
        }
        ConditionGrid { points, domain }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One grid per penalty term.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGrids<T> {
    pub monotonicity: ConditionGrid<T>,
    pub butterfly: ConditionGrid<T>,
    /// Split by the sign of `m` into right (`m ≥ 0`) and left boundary checks.
    pub boundary: ConditionGrid<T>,
    pub asymptotic: ConditionGrid<T>,
}

impl<T: Scalar> PenaltyGrids<T> {
    pub fn total_points(&self) -> usize {
        self.monotonicity.len() + self.butterfly.len() + self.boundary.len() + self.asymptotic.len()
    }
}

#[inline]
pub(crate) fn monotonicity_adjoint<T: Scalar>(j: Jet<T>, tau: T) -> (T, Jet<T>) {
    let two_tau = T::lit(2.0) * tau;
    (j.v + two_tau * j.dt, Jet::new(T::one(), T::zero(), T::zero(), two_tau))
}

#[inline]
pub(crate) fn butterfly_adjoint<T: Scalar>(j: Jet<T>, m: T, tau: T) -> (T, Jet<T>) {
    let (v, vm, vmm) = (j.v, j.dm, j.dmm);
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let q = T::one() - m * vm / v;
    let s = v * tau * vm;
    let value = q * q - T::lit(0.25) * s * s + tau * v * vmm;
    let d_v = two * q * m * vm / (v * v) - half * s * tau * vm + tau * vmm;
    let d_vm = -two * q * m / v - half * s * v * tau;
    let d_vmm = tau * v;
    (value, Jet::new(d_v, d_vm, d_vmm, T::zero()))
}

/// Boundary condition at `(m, τ)`: `c1` when `m ≥ 0`, `c2` otherwise.
#[inline]
pub(crate) fn boundary_adjoint<T: Scalar>(j: Jet<T>, m: T, tau: T) -> Result<(T, Jet<T>)> {
    let d = d_pair(m, tau, j.v)?;
    let dm = d.d_minus;
    let sq = tau.sqrt();
    let pdf = norm_pdf(dm);
    let dd_dv = m / (sq * j.v * j.v) - T::lit(0.5) * sq;
    let slope = pdf * (T::one() + sq * j.dm * dm) * dd_dv;
    Ok(if m >= T::zero() {
        (norm_cdf(dm) - sq * j.dm * pdf, Jet::new(slope, -sq * pdf, T::zero(), T::zero()))
    } else {
        (norm_cdf(-dm) + sq * j.dm * pdf, Jet::new(-slope, sq * pdf, T::zero(), T::zero()))
    })
}

#[inline]
pub(crate) fn asymptotic_adjoint<T: Scalar>(v: T, m: T, tau: T) -> (T, Jet<T>) {
    (T::lit(2.0) * m.abs() - v * v * tau, Jet::new(-T::lit(2.0) * v * tau, T::zero(), T::zero(), T::zero()))
}

/// Calendar monotonicity `a = v + 2τ ∂τv`.
pub fn monotonicity_a<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    Ok(monotonicity_adjoint(surface.vol_jet(m, tau)?, tau).0)
}

/// Butterfly function `b`.
pub fn butterfly_b<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    Ok(butterfly_adjoint(surface.vol_jet(m, tau)?, m, tau).0)
}

/// `(c1, c2)`; exactly one is present depending on the sign of `m`.
pub fn boundaries_c<T: Scalar, S: VolSurface<T> + ?Sized>(
    surface: &S,
    m: T,
    tau: T,
) -> Result<(Option<T>, Option<T>)> {
    check_tau(tau)?;
    let (c, _) = boundary_adjoint(surface.vol_jet(m, tau)?, m, tau)?;
    Ok(if m >= T::zero() { (Some(c), None) } else { (None, Some(c)) })
}

/// Asymptotic slope `g = 2|m| - v²τ`.
pub fn asymptotic_g<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    Ok(asymptotic_adjoint(surface.vol(m, tau)?, m, tau).0)
}

/// `d+` along increasing moneyness, with the decreasing-tail verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCheck<T> {
    pub path: Vec<(T, T)>,
    pub passed: bool,
}

const LIMIT_STEPS: usize = 200;

/// Traces `d+(m, τ)` for `m ∈ (0, m_max]`. Passes when `d+` is strictly
/// decreasing over the upper half of the path and `d+(m_max) < -1`.
pub fn limit_dplus<T: Scalar, S: VolSurface<T> + ?Sized>(surface: &S, tau: T, m_max: T) -> Result<LimitCheck<T>> {
    check_tau(tau)?;
    if !(m_max >= T::lit(3.0)) {
        return Err(Error::domain(format!("m_max must be at least 3, got {m_max}")));
    }
    let mut path = Vec::with_capacity(LIMIT_STEPS);
    for i in 1..=LIMIT_STEPS {
        let m = m_max * T::lit(i as f64 / LIMIT_STEPS as f64);
        let v = surface.vol(m, tau)?;
        path.push((m, d_pair(m, tau, v)?.d_plus));
    }
    let tail = &path[LIMIT_STEPS / 2..];
    let decreasing = tail.windows(2).all(|w| w[1].1 < w[0].1);
    let passed = decreasing && path[LIMIT_STEPS - 1].1 < -T::one();
    Ok(LimitCheck { path, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStat {
    pub name: String,
    pub n_checked: usize,
    pub n_violated: usize,
    pub rate: f64,
    /// Smallest condition value seen; negative means violated.
    pub worst_margin: f64,
}

impl ConditionStat {
    fn new(name: &str) -> Self {
        ConditionStat {
            name: name.to_string(),
            n_checked: 0,
            n_violated: 0,
            rate: 0.0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, value: f64, violated: bool) {
        self.n_checked += 1;
        if violated {
            self.n_violated += 1;
        }
        self.worst_margin = self.worst_margin.min(value);
    }

    fn finish(mut self) -> Self {
        self.rate = if self.n_checked == 0 { 0.0 } else { self.n_violated as f64 / self.n_checked as f64 };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub conditions: Vec<ConditionStat>,
}

impl ViolationReport {
    pub fn get(&self, name: &str) -> Option<&ConditionStat> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Pools the counts of several reports over the same conditions.
    pub fn merge(reports: &[ViolationReport]) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::domain("nothing to merge"))?;
        let mut merged: Vec<ConditionStat> = first.conditions.iter().map(|c| ConditionStat::new(&c.name)).collect();
        for r in reports {
            if r.conditions.len() != merged.len() || r.conditions.iter().zip(&merged).any(|(a, b)| a.name != b.name) {
                return Err(Error::domain("reports cover different conditions"));
            }
            for (acc, c) in merged.iter_mut().zip(&r.conditions) {
                acc.n_checked += c.n_checked;
                acc.n_violated += c.n_violated;
                acc.worst_margin = acc.worst_margin.min(c.worst_margin);
            }
        }
        Ok(ViolationReport { conditions: merged.into_iter().map(ConditionStat::finish).collect() })
    }

    pub fn total_violations(&self) -> usize {
        self.conditions.iter().map(|c| c.n_violated).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const MONOTONICITY: &str = "monotonicity";
pub const BUTTERFLY: &str = "butterfly";
pub const RIGHT_BOUNDARY: &str = "right_boundary";
pub const LEFT_BOUNDARY: &str = "left_boundary";
pub const ASYMPTOTIC_SLOPE: &str = "asymptotic_slope";

/// Counts sign violations of the calendar, butterfly and boundary
/// conditions on `core` and of the asymptotic slope on `wings`.
/// Seeded core and wings grids of `n` points each for [`audit`].
pub fn audit_grids<T: Scalar>(n: usize, seed: u64) -> (ConditionGrid<T>, ConditionGrid<T>) {
    let mut rng = crate::training::rng_for(seed, crate::training::streams::AUDIT);
    let core = ConditionGrid::random(GridDomain::Core, n, &mut rng);
    let wings = ConditionGrid::random(GridDomain::Wings, n, &mut rng);
    (core, wings)
}

pub fn audit<T: Scalar, S: VolSurface<T> + ?Sized>(
    surface: &S,
    core: &ConditionGrid<T>,
    wings: &ConditionGrid<T>,
) -> Result<ViolationReport> {
    if core.is_empty() || wings.is_empty() {
        return Err(Error::domain("audit needs non-empty core and wings grids"));
    }
    let mut mono = ConditionStat::new(MONOTONICITY);
    let mut fly = ConditionStat::new(BUTTERFLY);
    let mut right = ConditionStat::new(RIGHT_BOUNDARY);
    let mut left = ConditionStat::new(LEFT_BOUNDARY);
    let mut slope = ConditionStat::new(ASYMPTOTIC_SLOPE);

    for &(m, tau) in &core.points {
        check_tau(tau)?;
        let j = surface.vol_jet(m, tau)?;
        let a = monotonicity_adjoint(j, tau).0.as_f64();
        mono.record(a, a < 0.0);
        let b = butterfly_adjoint(j, m, tau).0.as_f64();
        fly.record(b, b < 0.0);
        let c = boundary_adjoint(j, m, tau)?.0.as_f64();
        if m >= T::zero() {
            right.record(c, c < 0.0);
        } else {
            left.record(c, c < 0.0);
        }
    }
    for &(m, tau) in &wings.points {
        check_tau(tau)?;
        let g = asymptotic_adjoint(surface.vol(m, tau)?, m, tau).0.as_f64();
        slope.record(g, g <= 0.0);
    }
    Ok(ViolationReport {
        conditions: [mono, fly, right, left, slope].into_iter().map(ConditionStat::finish).collect(),
    })
}
