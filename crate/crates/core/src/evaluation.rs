//! Accuracy metrics, surface export and risk-neutral densities.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::bs::bs_call_forward;
use crate::constraints::ViolationReport;
use crate::data::{model_price_norm, PreparedPoint};
use crate::error::{check_tau, Error, Result};
use crate::jet::Jet;
use crate::models::{ModelFile, SurfaceModel, VolSurface};
use crate::ssvi::{SsviParams, SSVI_TAG};

/// Mean absolute percentage error `100/N Σ|t - p|/t`.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::domain("mape of empty series"));
    }
    let mut sum = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        if !(t > 0.0) {
            return Err(Error::domain(format!("true values must be positive, got {t}")));
        }
        sum += (t - p).abs() / t;
    }
    Ok(100.0 * sum / truth.len() as f64)
}

/// Implied-volatility MAPE of a surface over observations.
pub fn iv_mape<S: VolSurface<f64> + ?Sized>(surface: &S, points: &[PreparedPoint]) -> Result<f64> {
    let truth: Vec<f64> = points.iter().map(|p| p.v).collect();
    let pred = points.iter().map(|p| surface.vol(p.m, p.tau)).collect::<Result<Vec<_>>>()?;
    mape(&truth, &pred)
}

/// Option-price MAPE: model vols are priced with Black–Scholes on each
/// contract's forward and discount and compared with observed mids.
pub fn price_mape<S: VolSurface<f64> + ?Sized>(surface: &S, points: &[PreparedPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::domain("price mape of empty point set"));
    }
    let truth: Vec<f64> = points.iter().map(|p| p.mid).collect();
    let pred = points
        .iter()
        .map(|p| Ok(p.discount * p.forward * model_price_norm(p, surface.vol(p.m, p.tau)?)?))
        .collect::<Result<Vec<_>>>()?;
    mape(&truth, &pred)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u8,
}

impl Quarter {
    pub fn of(date: NaiveDate) -> Self {
        Quarter { year: date.year(), quarter: (date.month0() / 3 + 1) as u8 }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

/// Mean value per calendar quarter, in chronological order.
pub fn quarterly(series: &[(NaiveDate, f64)]) -> Result<Vec<(Quarter, f64)>> {
    if series.is_empty() {
        return Err(Error::domain("quarterly aggregation of empty series"));
    }
    let mut groups: std::collections::BTreeMap<Quarter, (f64, usize)> = Default::default();
    for &(d, v) in series {
        let g = groups.entry(Quarter::of(d)).or_default();
        g.0 += v;
        g.1 += 1;
    }
    Ok(groups.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect())
}

/// Uniform `(m, τ, v)` grid, maturity-major: all `m` for the first `τ`, then the next.
pub fn surface_grid<S: VolSurface<f64> + ?Sized>(
    surface: &S,
    m_range: (f64, f64),
    tau_range: (f64, f64),
    n_m: usize,
    n_tau: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    if n_m < 2 || n_tau < 2 {
        return Err(Error::domain("surface grid needs at least 2 points per axis"));
    }
    if !(m_range.0 < m_range.1 && tau_range.0 < tau_range.1) {
        return Err(Error::domain("grid ranges must be increasing"));
    }
    check_tau(tau_range.0)?;
    let lin = |(a, b): (f64, f64), n: usize, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    let mut rows = Vec::with_capacity(n_m * n_tau);
    for j in 0..n_tau {
        let tau = lin(tau_range, n_tau, j);
        for i in 0..n_m {
            let m = lin(m_range, n_m, i);
            rows.push((m, tau, surface.vol(m, tau)?));
        }
    }
    Ok(rows)
}

pub const MIN_DENSITY_POINTS: usize = 201;
pub const DENSITY_SPAN: (f64, f64) = (-1.5, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    /// `(log-return, density)` at interior grid nodes.
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal integral over the reported nodes.
    pub integral: f64,
}

/// Risk-neutral density of `log(S_T/F)` from the second strike derivative
/// of the normalized call, `f(k) = e^{-k}(c'' - c')`, using central
/// differences with the grid step.
pub fn rn_density<S: VolSurface<f64> + ?Sized>(surface: &S, tau: f64, m_grid: &[f64]) -> Result<Density> {
    check_tau(tau)?;
    let n = m_grid.len();
    if n < MIN_DENSITY_POINTS {
        return Err(Error::domain(format!("density grid needs at least {MIN_DENSITY_POINTS} points, got {n}")));
    }
    let h = (m_grid[n - 1] - m_grid[0]) / (n - 1) as f64;
    let uniform = m_grid.iter().enumerate().all(|(i, &m)| (m - (m_grid[0] + h * i as f64)).abs() <= 1e-9 * (1.0 + m.abs()));
    if !(h > 0.0 && uniform) {
        return Err(Error::domain("density grid must be uniform and increasing"));
    }
    if m_grid[0] > DENSITY_SPAN.0 || m_grid[n - 1] < DENSITY_SPAN.1 {
        return Err(Error::domain(format!("density grid must span [{}, {}]", DENSITY_SPAN.0, DENSITY_SPAN.1)));
    }
    let calls =
        m_grid.iter().map(|&m| bs_call_forward(m, tau, surface.vol(m, tau)?)).collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = (1..n - 1)
        .map(|i| {
            let d1 = (calls[i + 1] - calls[i - 1]) / (2.0 * h);
            let d2 = (calls[i + 1] - 2.0 * calls[i] + calls[i - 1]) / (h * h);
            (m_grid[i], (-m_grid[i]).exp() * (d2 - d1))
        })
        .collect();
    let integral = points.windows(2).map(|w| 0.5 * h * (w[0].1 + w[1].1)).sum();
    Ok(Density { points, integral })
}

/// `n` evenly spaced values on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1).max(1) as f64).collect()
}

/// Accuracy for one day's in-sample and held-out observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEval {
    pub date: NaiveDate,
    pub iv_mape_train: f64,
    pub iv_mape_test: Option<f64>,
    pub price_mape_train: f64,
    pub price_mape_test: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn evaluate_day<S: VolSurface<f64> + ?Sized>(
    surface: &S,
    date: NaiveDate,
    train: &[PreparedPoint],
    test: &[PreparedPoint],
) -> Result<DayEval> {
    let held_out = |f: fn(&S, &[PreparedPoint]) -> Result<f64>| -> Result<Option<f64>> {
        if test.is_empty() {
            Ok(None)
        } else {
            f(surface, test).map(Some)
        }
    };
    Ok(DayEval {
        date,
        iv_mape_train: iv_mape(surface, train)?,
        iv_mape_test: held_out(|s, p| iv_mape(s, p))?,
        price_mape_train: price_mape(surface, train)?,
        price_mape_test: held_out(|s, p| price_mape(s, p))?,
        n_train: train.len(),
        n_test: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterRow {
    pub quarter: String,
    pub iv_mape_train: f64,
    pub iv_mape_test: Option<f64>,
    pub price_mape_train: f64,
    pub price_mape_test: Option<f64>,
}

/// Unweighted means of the per-day MAPEs, overall and per quarter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iv_mape_train: f64,
    pub iv_mape_test: Option<f64>,
    pub price_mape_train: f64,
    pub price_mape_test: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub quarters: Vec<QuarterRow>,
    pub days: Vec<DayEval>,
    pub violation: Option<ViolationReport>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn optional_mean(xs: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = xs.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| mean(&present))
}

impl EvalReport {
    pub fn from_days(days: Vec<DayEval>, violation: Option<ViolationReport>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::domain("report needs at least one day"));
        }
        let col = |f: fn(&DayEval) -> f64| days.iter().map(f).collect::<Vec<_>>();
        let opt = |f: fn(&DayEval) -> Option<f64>| days.iter().map(f).collect::<Vec<_>>();
        let mut quarters: std::collections::BTreeMap<Quarter, Vec<&DayEval>> = Default::default();
        for d in &days {
            quarters.entry(Quarter::of(d.date)).or_default().push(d);
        }
        let quarters = quarters
            .into_iter()
            .map(|(q, ds)| QuarterRow {
                quarter: q.to_string(),
                iv_mape_train: mean(&ds.iter().map(|d| d.iv_mape_train).collect::<Vec<_>>()),
                iv_mape_test: optional_mean(&ds.iter().map(|d| d.iv_mape_test).collect::<Vec<_>>()),
                price_mape_train: mean(&ds.iter().map(|d| d.price_mape_train).collect::<Vec<_>>()),
                price_mape_test: optional_mean(&ds.iter().map(|d| d.price_mape_test).collect::<Vec<_>>()),
            })
            .collect();
        Ok(EvalReport {
            iv_mape_train: mean(&col(|d| d.iv_mape_train)),
            iv_mape_test: optional_mean(&opt(|d| d.iv_mape_test)),
            price_mape_train: mean(&col(|d| d.price_mape_train)),
            price_mape_test: optional_mean(&opt(|d| d.price_mape_test)),
            n_train: days.iter().map(|d| d.n_train).sum(),
            n_test: days.iter().map(|d| d.n_test).sum(),
            quarters,
            days,
            violation,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Either a trained network or an SSVI benchmark, as read from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedSurface {
    Network(SurfaceModel<f64>),
    Ssvi(SsviParams<f64>),
}

impl FittedSurface {
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.arch == SSVI_TAG {
            SsviParams::from_file(file).map(FittedSurface::Ssvi)
        } else {
            SurfaceModel::from_file(file).map(FittedSurface::Network)
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FittedSurface::Network(m) => m.arch().tag(),
            FittedSurface::Ssvi(_) => SSVI_TAG,
        }
    }
}

impl VolSurface<f64> for FittedSurface {
    fn vol(&self, m: f64, tau: f64) -> Result<f64> {
        match self {
            FittedSurface::Network(s) => s.vol(m, tau),
            FittedSurface::Ssvi(s) => s.vol(m, tau),
        }
    }

    fn vol_jet(&self, m: f64, tau: f64) -> Result<Jet<f64>> {
        match self {
            FittedSurface::Network(s) => s.vol_jet(m, tau),
            FittedSurface::Ssvi(s) => s.vol_jet(m, tau),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::butterfly_b;
    use crate::data::OptionType;
    use crate::models::FlatSurface;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn mape_examples() {
        assert_abs_diff_eq!(mape(&[0.2, 0.4], &[0.22, 0.38]).unwrap(), 7.5, epsilon = 1e-12);
        assert_eq!(mape(&[0.3, 0.5], &[0.3, 0.5]).unwrap(), 0.0);
        assert_eq!(mape(&[1.0], &[2.0]).unwrap(), 100.0);
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mape(&[0.0], &[1.0]).is_err());
        assert!(mape(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn mape_scale_invariant(t in proptest::collection::vec(0.01f64..5.0, 1..20), c in 0.1f64..10.0) {
            let p: Vec<f64> = t.iter().map(|x| x * 1.1 + 0.01).collect();
            let a = mape(&t, &p).unwrap();
            let ct: Vec<f64> = t.iter().map(|x| c * x).collect();
            let cp: Vec<f64> = p.iter().map(|x| c * x).collect();
            prop_assert!((a - mape(&ct, &cp).unwrap()).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn quarterly_groups_and_sorts() {
        let s = [(date("2016-05-02"), 4.0), (date("2016-01-04"), 1.0), (date("2016-03-31"), 3.0)];
        let q = quarterly(&s).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!((q[0].0.to_string(), q[0].1), ("2016Q1".to_string(), 2.0));
        assert_eq!((q[1].0.to_string(), q[1].1), ("2016Q2".to_string(), 4.0));
        assert!(quarterly(&[]).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = surface_grid(&FlatSurface(0.2), (-1.0, 1.0), (0.1, 1.0), 2, 2).unwrap();
        assert_eq!(g, vec![(-1.0, 0.1, 0.2), (1.0, 0.1, 0.2), (-1.0, 1.0, 0.2), (1.0, 1.0, 0.2)]);
        assert!(surface_grid(&FlatSurface(0.2), (-1.0, 1.0), (0.1, 1.0), 1, 2).is_err());
    }

    fn lognormal(k: f64, sigma: f64, tau: f64) -> f64 {
        let s2 = sigma * sigma * tau;
        (-(k + 0.5 * s2).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
    }

    #[test]
    fn flat_density_matches_lognormal() {
        let grid = uniform_grid(-1.5, 1.0, 801);
        let d = rn_density(&FlatSurface(0.2), 1.0, &grid).unwrap();
        let h = grid[1] - grid[0];
        let l1: f64 = d.points.iter().map(|&(k, f)| (f - lognormal(k, 0.2, 1.0)).abs() * h).sum();
        assert!(l1 < 1e-3, "L1 {l1}");
        assert!((d.integral - 1.0).abs() < 0.02);
        assert_eq!(d.points.len(), 799);
    }

    #[test]
    fn density_grid_validation() {
        assert!(rn_density(&FlatSurface(0.2), 1.0, &uniform_grid(-1.5, 1.0, 101)).is_err());
        assert!(rn_density(&FlatSurface(0.2), 1.0, &uniform_grid(-1.0, 1.0, 401)).is_err());
        let mut g = uniform_grid(-1.5, 1.0, 401);
        g[7] += 1e-3;
        assert!(rn_density(&FlatSurface(0.2), 1.0, &g).is_err());
    }

    /// A smile with a concave hump, so that butterfly arbitrage appears.
    struct Humped;
    impl VolSurface<f64> for Humped {
        fn vol(&self, m: f64, _tau: f64) -> Result<f64> {
            Ok(0.25 + 0.2 * (-(m - 0.2).powi(2) / 0.01).exp())
        }
        fn vol_jet(&self, m: f64, tau: f64) -> Result<Jet<f64>> {
            let g = (-(m - 0.2).powi(2) / 0.01).exp();
            let d = -2.0 * (m - 0.2) / 0.01;
            Ok(Jet::new(self.vol(m, tau)?, 0.2 * g * d, 0.2 * g * (d * d - 2.0 / 0.01), 0.0))
        }
    }

    #[test]
    fn negative_density_coincides_with_butterfly_violation() {
        let grid = uniform_grid(-1.5, 1.0, 2001);
        let d = rn_density(&Humped, 0.5, &grid).unwrap();
        let mut negatives = 0;
        for &(k, f) in &d.points {
            let b = butterfly_b(&Humped, k, 0.5).unwrap();
            if b.abs() > 1e-2 {
                assert_eq!(f < 0.0, b < 0.0, "k={k} f={f} b={b}");
            }
            negatives += usize::from(f < 0.0);
        }
        assert!(negatives > 0);
    }

    fn point(m: f64, tau: f64, v: f64) -> PreparedPoint {
        let opt_type = if m < 0.0 { OptionType::Put } else { OptionType::Call };
        let (forward, discount) = (100.0, 0.99);
        let mut p = PreparedPoint { date: date("2016-02-01"), m, tau, v, mid: 0.0, forward, discount, opt_type, quote_id: 0 };
        p.mid = discount * forward * model_price_norm(&p, v).unwrap();
        p
    }

    #[test]
    fn price_mape_of_exact_vols_is_zero() {
        let pts = vec![point(-0.3, 0.5, 0.2), point(0.1, 1.0, 0.2)];
        assert!(price_mape(&FlatSurface(0.2), &pts).unwrap() < 1e-10);
        assert!(price_mape(&FlatSurface(0.21), &pts).unwrap() > 0.0);
        assert!(price_mape(&FlatSurface(0.2), &[]).is_err());
    }

    #[test]
    fn report_aggregates_days() {
        let pts = vec![point(-0.3, 0.5, 0.2), point(0.1, 1.0, 0.25)];
        let d1 = evaluate_day(&FlatSurface(0.2), date("2016-02-01"), &pts, &pts[..1]).unwrap();
        assert_abs_diff_eq!(d1.iv_mape_train, 10.0, epsilon = 1e-12);
        assert_eq!(d1.iv_mape_test, Some(0.0));
        let mut d2 = d1.clone();
        d2.date = date("2016-07-01");
        d2.iv_mape_train = 20.0;
        let r = EvalReport::from_days(vec![d1, d2], None).unwrap();
        assert_abs_diff_eq!(r.iv_mape_train, 15.0);
        assert_eq!(r.quarters.len(), 2);
        assert_eq!(r.quarters[1].quarter, "2016Q3");
        assert_eq!(r.n_train, 4);
        assert!(r.to_json().contains("\"iv_mape_train\""));
    }
}
