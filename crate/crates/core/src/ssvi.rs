//! SSVI benchmark surface, its calibrator, and the synthetic market generator.
//!
//! Total variance `w(k, τ) = θ/2 · (1 + ρφk + √((φk + ρ)² + 1 - ρ²))` with
//! `φ = η θ^{-λ}` and `θ(τ)` linear between knots, flat outside.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bs::bs_otm_forward;
use crate::data::{OptionType, PreparedPoint, Quote, DAYS_PER_YEAR};
use crate::error::{check_tau, Error, Result};
use crate::jet::Jet;
use crate::losses::DataBatch;
use crate::models::{ModelFile, VolSurface, SCHEMA_VERSION};
use crate::Scalar;

pub const SSVI_TAG: &str = "ssvi";
/// Slack allowed on `η(1 + |ρ|) ≤ 2`.
const BUTTERFLY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SsviParams<T> {
    theta_curve: Vec<(T, T)>,
    rho: T,
    eta: T,
    lambda: T,
}

impl<T: Scalar> SsviParams<T> {
    pub fn new(theta_curve: Vec<(T, T)>, rho: T, eta: T, lambda: T) -> Result<Self> {
        if theta_curve.is_empty() {
            return Err(Error::domain("theta curve needs at least one knot"));
        }
        for (i, &(tau, theta)) in theta_curve.iter().enumerate() {
            if !(tau.is_finite() && tau > T::zero() && theta.is_finite() && theta > T::zero()) {
                return Err(Error::domain(format!("knot ({tau}, {theta}) must be positive")));
            }
            if i > 0 {
                let (tp, thp) = theta_curve[i - 1];
                if !(tau > tp && theta > thp) {
                    return Err(Error::domain("theta knots must be strictly increasing in tau and theta"));
                }
            }
        }
        if !(rho.abs() < T::one()) {
            return Err(Error::domain(format!("|rho| must be below 1, got {rho}")));
        }
        if !(eta.is_finite() && eta > T::zero()) {
            return Err(Error::domain(format!("eta must be positive, got {eta}")));
        }
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::domain(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if eta * (T::one() + rho.abs()) > T::lit(2.0 + BUTTERFLY_SLACK) {
            return Err(Error::domain(format!("eta (1 + |rho|) = {} exceeds 2", eta * (T::one() + rho.abs()))));
        }
        Ok(SsviParams { theta_curve, rho, eta, lambda })
    }

    pub fn theta_curve(&self) -> &[(T, T)] {
        &self.theta_curve
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// `θ(τ)` and its right derivative. Linear through the origin before the
    /// first knot and along the last segment after the final one, so `θ` stays
    /// strictly increasing (no flat calendar spread) off the fitted range.
    pub fn theta(&self, tau: T) -> (T, T) {
        let c = &self.theta_curve;
        let (first, last) = (c[0], c[c.len() - 1]);
        if tau <= first.0 {
            let slope = first.1 / first.0;
            return (slope * tau, slope);
        }
        if tau >= last.0 {
            let slope = match c.len() {
                1 => last.1 / last.0,
                n => (last.1 - c[n - 2].1) / (last.0 - c[n - 2].0),
            };
            return (last.1 + slope * (tau - last.0), slope);
        }
        let i = c.partition_point(|&(t, _)| t <= tau) - 1;
        let ((t0, th0), (t1, th1)) = (c[i], c[i + 1]);
        let slope = (th1 - th0) / (t1 - t0);
        (th0 + slope * (tau - t0), slope)
    }

    pub fn total_variance(&self, m: T, tau: T) -> T {
        total_variance_at(self.theta(tau).0, m, self.rho, self.eta, self.lambda)
    }
}

#[inline]
fn total_variance_at<T: Scalar>(theta: T, k: T, rho: T, eta: T, lambda: T) -> T {
    let phi = eta * theta.powf(-lambda);
    let x = phi * k + rho;
    T::lit(0.5) * theta * (T::one() + rho * phi * k + (x * x + T::one() - rho * rho).sqrt())
}

/// SSVI implied volatility `√(w/τ)`.
pub fn ssvi_iv<T: Scalar>(p: &SsviParams<T>, m: T, tau: T) -> Result<T> {
    check_tau(tau)?;
    Ok((p.total_variance(m, tau) / tau).sqrt())
}

impl<T: Scalar> VolSurface<T> for SsviParams<T> {
    fn vol(&self, m: T, tau: T) -> Result<T> {
        ssvi_iv(self, m, tau)
    }

    fn vol_jet(&self, m: T, tau: T) -> Result<Jet<T>> {
        check_tau(tau)?;
        let (th, dth) = self.theta(tau);
        let theta = Jet::new(th, T::zero(), T::zero(), dth);
        let l = self.lambda;
        let pow = th.powf(-l);
        let phi = theta.compose(pow, -l * pow / th, l * (l + T::one()) * pow / (th * th)) * self.eta;
        let pk = phi * Jet::var_m(m);
        let x = pk + self.rho;
        let root = (x * x + (T::one() - self.rho * self.rho)).sqrt();
        let w = theta * (pk * self.rho + root + T::one()) * T::lit(0.5);
        Ok((w / Jet::var_tau(tau)).sqrt())
    }
}

impl SsviParams<f64> {
    pub fn to_file(&self, meta: serde_json::Value) -> ModelFile {
        let mut params = BTreeMap::new();
        params.insert("theta_tau".to_string(), self.theta_curve.iter().map(|k| k.0).collect());
        params.insert("theta".to_string(), self.theta_curve.iter().map(|k| k.1).collect());
        params.insert("rho".to_string(), vec![self.rho]);
        params.insert("eta".to_string(), vec![self.eta]);
        params.insert("lambda".to_string(), vec![self.lambda]);
        ModelFile {
            schema_version: SCHEMA_VERSION,
            arch: SSVI_TAG.to_string(),
            dims: None,
            params,
            eps_smile: None,
            training_meta: meta,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.arch != SSVI_TAG {
            return Err(Error::Parse(format!("expected arch `{SSVI_TAG}`, found `{}`", file.arch)));
        }
        let n = file.params.get("theta_tau").map_or(0, Vec::len);
        let taus = file.array("theta_tau", n)?;
        let thetas = file.array("theta", n)?;
        let curve = taus.iter().copied().zip(thetas.iter().copied()).collect();
        Self::new(curve, file.scalar("rho")?, file.scalar("eta")?, file.scalar("lambda")?)
            .map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Generator surface for synthetic days: ATM vol near 22% short-dated,
/// flattening to about 20%, with equity-style negative skew.
pub fn default_synth_params() -> SsviParams<f64> {
    let knots = [0.001, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 3.5];
    let curve = knots.iter().map(|&t: &f64| (t, 0.04 * t + 0.005 * (1.0 - (-2.0 * t).exp()))).collect();
    SsviParams::new(curve, -0.6, 1.0, 0.5).expect("default SSVI parameters are valid")
}

/// Settings for one synthetic trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub trade_date: NaiveDate,
    pub spot: f64,
    pub rate: f64,
    pub maturity_days: Vec<u32>,
    pub n_quotes: usize,
    /// Standard deviation of the multiplicative log-normal vol noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            trade_date: NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(),
            spot: 2000.0,
            rate: 0.02,
            maturity_days: vec![14, 30, 61, 91, 182, 365, 547, 730],
            n_quotes: 600,
            noise_sd: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDay {
    pub quotes: Vec<Quote>,
    /// Observations matching `quotes` one-to-one, with the noisy vols.
    pub points: Vec<PreparedPoint>,
    /// Noise-free generator vols at the same coordinates.
    pub clean_vols: Vec<f64>,
}

impl SynthDay {
    pub fn batch(&self) -> DataBatch<f64> {
        DataBatch::from_triples(&self.points.iter().map(|p| (p.m, p.tau, p.v)).collect::<Vec<_>>())
            .expect("synthetic points are valid")
    }
}

pub const SYNTH_M_RANGE: (f64, f64) = (-3.0, 1.0);

/// Draws out-of-the-money quotes on a fixed set of maturities (round-robin)
/// with log-moneyness from a normal truncated to `[-3, 1]` whose width scales
/// with `√τ`, vols from `p` times log-normal noise, and a 1% bid-ask spread.
pub fn synth_market(p: &SsviParams<f64>, spec: &SynthSpec) -> Result<SynthDay> {
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::domain(format!("noise_sd must be nonnegative, got {}", spec.noise_sd)));
    }
    if spec.maturity_days.is_empty() || spec.maturity_days.contains(&0) {
        return Err(Error::domain("maturities must be a nonempty list of positive day counts"));
    }
    if !(spec.spot > 0.0 && spec.rate.is_finite()) {
        return Err(Error::domain("spot must be positive and rate finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut day = SynthDay { quotes: Vec::new(), points: Vec::new(), clean_vols: Vec::new() };
    for i in 0..spec.n_quotes {
        let days = spec.maturity_days[i % spec.maturity_days.len()];
        let tau = days as f64 / DAYS_PER_YEAR;
        let sd = 0.3 * tau.sqrt().max(0.15);
        let m = loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            let m = -0.5 * sd + sd * z;
            if (SYNTH_M_RANGE.0..=SYNTH_M_RANGE.1).contains(&m) {
                break m;
            }
        };
        let clean = ssvi_iv(p, m, tau)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = clean * (spec.noise_sd * z).exp();
        let forward = spec.spot * (spec.rate * tau).exp();
        let discount = (-spec.rate * tau).exp();
        let mid = discount * forward * bs_otm_forward(m, tau, v)?;
        let opt_type = if m < 0.0 { OptionType::Put } else { OptionType::Call };
        day.quotes.push(Quote {
            id: i,
            trade_date: spec.trade_date,
            expiry_date: spec.trade_date + chrono::Duration::days(days as i64),
            strike: forward * m.exp(),
            bid: mid * 0.995,
            ask: mid * 1.005,
            opt_type,
            rate: spec.rate,
            spot: spec.spot,
        });
        day.points.push(PreparedPoint {
            date: spec.trade_date,
            m,
            tau,
            v,
            mid,
            forward,
            discount,
            opt_type,
            quote_id: i,
        });
        day.clean_vols.push(clean);
    }
    Ok(day)
}

pub const MIN_SSVI_POINTS: usize = 20;
const RESTARTS: usize = 5;
const RHO_BOUND: f64 = 0.999;
const ETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SsviFit {
    pub params: SsviParams<f64>,
    /// Mean squared relative total-variance error at the returned parameters.
    pub mspe: f64,
}

struct Slice {
    tau: f64,
    k: Vec<f64>,
    w: Vec<f64>,
    theta0: f64,
}

fn project(x: [f64; 2]) -> (f64, f64) {
    let rho = x[0].clamp(-RHO_BOUND, RHO_BOUND);
    let eta = x[1].clamp(ETA_FLOOR, 2.0 / (1.0 + rho.abs()));
    (rho, eta)
}

fn slice_sse(s: &Slice, theta: f64, rho: f64, eta: f64) -> f64 {
    s.k.iter()
        .zip(&s.w)
        .map(|(&k, &w)| {
            let r = (total_variance_at(theta, k, rho, eta, 0.5) - w) / w;
            r * r
        })
        .sum()
}

/// Per-slice `θ` minimizing the slice error for fixed `(ρ, η)`.
fn best_theta(s: &Slice, rho: f64, eta: f64) -> (f64, f64) {
    let (lo, hi) = ((s.theta0 / 5.0).ln(), (s.theta0 * 5.0).ln());
    let x = golden_section(|lt| slice_sse(s, lt.exp(), rho, eta), lo, hi, 1e-12);
    let theta = x.exp();
    (theta, slice_sse(s, theta, rho, eta))
}

/// Calibrates `(ρ, η)` by Nelder–Mead with the `θ` curve profiled out
/// per maturity; `λ` is fixed at ½. The final `θ` curve is made monotone
/// by isotonic regression.
pub fn fit_ssvi(batch: &DataBatch<f64>, seed: u64) -> Result<SsviFit> {
    if batch.len() < MIN_SSVI_POINTS {
        return Err(Error::InsufficientData { needed: MIN_SSVI_POINTS, got: batch.len() });
    }
    let mut by_tau: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for p in &batch.points {
        by_tau.entry(p.tau.to_bits()).or_default().push((p.m, p.v * p.v * p.tau));
    }
    let slices: Vec<Slice> = by_tau
        .into_iter()
        .map(|(bits, pts)| {
            let atm = pts.iter().min_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).unwrap();
            Slice { tau: f64::from_bits(bits), k: pts.iter().map(|p| p.0).collect(), w: pts.iter().map(|p| p.1).collect(), theta0: atm.1 }
        })
        .collect();
    let n = batch.len() as f64;
    let objective = |x: [f64; 2]| {
        let (rho, eta) = project(x);
        slices.iter().map(|s| best_theta(s, rho, eta).1).sum::<f64>() / n
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<([f64; 2], f64)> = None;
    for r in 0..RESTARTS {
        let x0 = if r == 0 {
            [-0.5, 0.8]
        } else {
            let rho = rng.random_range(-0.9..0.9);
            [rho, rng.random_range(0.05..2.0 / (1.0 + f64::abs(rho)))]
        };
        let (x, f) = nelder_mead(objective, x0, [0.1, 0.1], 400, 1e-16);
        if best.is_none_or(|b| f < b.1) {
            best = Some((x, f));
        }
    }
    let (x, _) = best.unwrap();
    let (rho, eta) = project(x);
    let raw: Vec<f64> = slices.iter().map(|s| best_theta(s, rho, eta).0).collect();
    let weights: Vec<f64> = slices.iter().map(|s| s.k.len() as f64).collect();
    let mut thetas = isotonic(&raw, &weights);
    for i in 1..thetas.len() {
        thetas[i] = thetas[i].max(thetas[i - 1] * (1.0 + 1e-10));
    }
    let curve: Vec<(f64, f64)> = slices.iter().map(|s| s.tau).zip(thetas).collect();
    let params = SsviParams::new(curve, rho, eta, 0.5)?;
    let mspe = batch
        .points
        .iter()
        .map(|p| {
            let w = p.v * p.v * p.tau;
            let r = (params.total_variance(p.m, p.tau) - w) / w;
            r * r
        })
        .sum::<f64>()
        / n;
    Ok(SsviFit { params, mspe })
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Two-dimensional Nelder–Mead with standard coefficients.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], step: [f64; 2], max_iter: usize, ftol: f64) -> ([f64; 2], f64) {
    let mut simplex = [x0, [x0[0] + step[0], x0[1]], [x0[0], x0[1] + step[1]]];
    let mut values = simplex.map(&f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        if (values[2] - values[0]).abs() <= ftol * (values[0].abs() + values[2].abs()) + 1e-300 {
            break;
        }
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(simplex[2], centroid, 2.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(simplex[2], centroid, 3.0);
            let fe = f(expanded);
            (simplex[2], values[2]) = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < values[1] {
            (simplex[2], values[2]) = (reflected, fr);
        } else {
            let contracted = if fr < values[2] { lerp(simplex[2], centroid, 1.5) } else { lerp(simplex[2], centroid, 0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                (simplex[2], values[2]) = (contracted, fc);
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    (simplex[best], values[best])
}

/// Weighted pool-adjacent-violators: nondecreasing least-squares fit.
fn isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (v2, w2, n2) = blocks.pop().unwrap();
            let (v1, w1, n1) = blocks.pop().unwrap();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, n)| std::iter::repeat_n(v, n)).collect()
}
