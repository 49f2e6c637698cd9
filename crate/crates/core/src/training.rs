//! Constraint-point sampling and the full-batch Adam loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_day, PreparedPoint};
use crate::constraints::{ConditionGrid, GridDomain, PenaltyGrids};
use crate::error::{Error, Result};
use crate::losses::{loss_gradient_into, DataBatch, GradientWorkspace, HyperParams, LossBreakdown};
use crate::models::{init_params, Architecture, ModelDims, SurfaceModel};
use crate::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_DECAY_STEPS: f64 = 5000.0;

/// Independent RNG streams derived from one seed.
pub(crate) mod streams {
    pub const GRIDS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const REFRESH: u64 = 4;
    pub const AUDIT: u64 = 5;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridRefresh {
    #[default]
    Once,
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    /// `lr0 / (1 + t / decay_steps)`.
    InverseTime { decay_steps: f64 },
    Constant,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::InverseTime { decay_steps: DEFAULT_DECAY_STEPS }
    }
}

impl LrSchedule {
    pub fn rate<T: Scalar>(self, lr0: T, t: usize) -> T {
        match self {
            LrSchedule::InverseTime { decay_steps } => lr0 / (T::one() + T::lit(t as f64 / decay_steps)),
            LrSchedule::Constant => lr0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub hp: HyperParams<T>,
    pub arch: Architecture,
    pub dims: ModelDims,
    pub seed: u64,
    pub log_every: usize,
    pub grid_refresh: GridRefresh,
    pub lr_schedule: LrSchedule,
    /// Record wall-clock milliseconds in the trace; off gives byte-reproducible traces.
    pub wall_clock: bool,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(arch: Architecture, dims: ModelDims, hp: HyperParams<T>, seed: u64) -> Self {
        TrainConfig {
            hp,
            arch,
            dims,
            seed,
            log_every: 100,
            grid_refresh: GridRefresh::Once,
            lr_schedule: LrSchedule::default(),
            wall_clock: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.dims.validate_for(self.arch)?;
        if self.log_every == 0 {
            return Err(Error::domain("log_every must be positive"));
        }
        if let LrSchedule::InverseTime { decay_steps } = self.lr_schedule {
            if !(decay_steps > 0.0) {
                return Err(Error::domain("decay_steps must be positive"));
            }
        }
        Ok(())
    }
}

/// Draws `round(ratio·n_real)` constraint points split evenly over the four
/// penalties (any remainder goes to the earlier ones).
pub fn sample_grids<T: Scalar>(n_real: usize, ratio: f64, seed: u64) -> Result<PenaltyGrids<T>> {
    sample_grids_with(n_real, ratio, &mut rng_for(seed, streams::GRIDS))
}

fn sample_grids_with<T: Scalar>(n_real: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<PenaltyGrids<T>> {
    if n_real == 0 || !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::domain(format!("need n_real > 0 and ratio > 0, got {n_real} and {ratio}")));
    }
    let total = (ratio * n_real as f64).round() as usize;
    let size = |k: usize| total / 4 + usize::from(k < total % 4);
    Ok(PenaltyGrids {
        monotonicity: ConditionGrid::random(GridDomain::Core, size(0), rng),
        butterfly: ConditionGrid::random(GridDomain::Core, size(1), rng),
        boundary: ConditionGrid::random(GridDomain::Core, size(2), rng),
        asymptotic: ConditionGrid::random(GridDomain::Wings, size(3), rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord<T> {
    pub iteration: usize,
    pub total: T,
    pub components: [T; 6],
    pub lr: T,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace<T> {
    pub records: Vec<TraceRecord<T>>,
}

pub const TRACE_HEADER: &str = "iteration,total,l0,l1,l2,l3,l4,l5,lr,elapsed_ms";

impl<T: Scalar> TrainTrace<T> {
    /// Comma-separated text, reals at 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.11e}", r.iteration, r.total.as_f64());
            for c in r.components {
                let _ = write!(out, ",{:.11e}", c.as_f64());
            }
            let _ = writeln!(out, ",{:.11e},{}", r.lr.as_f64(), r.elapsed_ms);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRecord<T>> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    /// Parameters with the lowest total loss seen.
    pub model: SurfaceModel<T>,
    pub best_loss: LossBreakdown<T>,
    pub best_iteration: usize,
    pub final_loss: LossBreakdown<T>,
    pub trace: TrainTrace<T>,
    pub grids: PenaltyGrids<T>,
}

/// Trains a freshly initialized network on `batch`, sampling penalty grids
/// from the configured seed.
pub fn adam_fit<T: Scalar>(config: &TrainConfig<T>, batch: &DataBatch<T>) -> Result<FitResult<T>> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let grids = sample_grids(batch.len(), config.hp.synth_ratio.as_f64(), config.seed)?;
    let params = init_params(config.dims, config.arch, config.seed)?;
    let model = SurfaceModel::with_smile_eps(params, config.hp.eps_smile)?;
    adam_fit_from(config, model, batch, grids)
}

/// Adam from a given starting model and initial grids.
pub fn adam_fit_from<T: Scalar>(
    config: &TrainConfig<T>,
    mut model: SurfaceModel<T>,
    batch: &DataBatch<T>,
    mut grids: PenaltyGrids<T>,
) -> Result<FitResult<T>> {
    config.validate()?;
    let start = Instant::now();
    let hp = &config.hp;
    let n = model.n_params();
    let mut theta = model.params.to_flat();
    let mut grad = vec![T::zero(); n];
    let mut m1 = vec![T::zero(); n];
    let mut m2 = vec![T::zero(); n];
    let mut scratch = GradientWorkspace::default();
    let mut refresh_rng = rng_for(config.seed, streams::REFRESH);
    let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
    let (mut b1t, mut b2t) = (T::one(), T::one());

    let mut trace = TrainTrace::default();
    let mut best: Option<(usize, LossBreakdown<T>, Vec<T>)> = None;
    let elapsed = |start: &Instant| if config.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };

    let total_steps = hp.n_iterations;
    for t in 0..=total_steps {
        if t > 0 && config.grid_refresh == GridRefresh::PerIteration && hp.constraints_active() {
            grids = sample_grids_with(batch.len(), hp.synth_ratio.as_f64(), &mut refresh_rng)?;
        }
        let loss = match loss_gradient_into(&model, batch, &grids, hp, &mut scratch, &mut grad) {
            Ok(loss) => loss,
            // Inputs were valid at step 0, so later domain failures come from blown-up parameters.
            Err(Error::Domain(msg)) if t > 0 => return Err(Error::Divergence { step: t, components: msg }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: t,
                components: format!("total={} components={:?}", loss.total, loss.components),
            });
        }
        let lr = config.lr_schedule.rate(hp.learning_rate, t);
        if t % config.log_every == 0 || t == total_steps {
            trace.records.push(TraceRecord {
                iteration: t,
                total: loss.total,
                components: loss.components,
                lr,
                elapsed_ms: elapsed(&start),
            });
        }
        if best.as_ref().is_none_or(|b| loss.total < b.1.total) {
            best = Some((t, loss, theta.clone()));
        }
        if t == total_steps {
            break;
        }
        b1t *= b1;
        b2t *= b2;
        for i in 0..n {
            let g = grad[i];
            m1[i] = b1 * m1[i] + (T::one() - b1) * g;
            m2[i] = b2 * m2[i] + (T::one() - b2) * g * g;
            let m_hat = m1[i] / (T::one() - b1t);
            let v_hat = m2[i] / (T::one() - b2t);
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        model.params.assign_from_flat(&theta)?;
    }

    let final_loss = trace.last().map(|r| LossBreakdown { total: r.total, components: r.components }).unwrap();
    let (best_iteration, best_loss, best_theta) = best.expect("at least one step");
    model.params.assign_from_flat(&best_theta)?;
    Ok(FitResult { model, best_loss, best_iteration, final_loss, trace, grids })
}

pub const MIN_DAY_QUOTES: usize = 50;
pub const TRAIN_FRACTION: f64 = 0.8;

/// A per-day calibration with the in-day train/test split it used.
#[derive(Debug, Clone)]
pub struct DayFit {
    pub fit: FitResult<f64>,
    pub train: Vec<PreparedPoint>,
    pub test: Vec<PreparedPoint>,
}

/// Splits one day's observations 80/20 (seeded) and trains on the 80%.
pub fn fit_day(points: &[PreparedPoint], config: &TrainConfig<f64>) -> Result<DayFit> {
    if points.len() < MIN_DAY_QUOTES {
        return Err(Error::InsufficientData { needed: MIN_DAY_QUOTES, got: points.len() });
    }
    let (train, test) = split_day(points, TRAIN_FRACTION, config.seed)?;
    let batch = DataBatch::from_triples(&train.iter().map(|p| (p.m, p.tau, p.v)).collect::<Vec<_>>())?;
    let fit = adam_fit(config, &batch)?;
    Ok(DayFit { fit, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::total_loss;
    use crate::models::VolSurface;
    use rand::Rng;

    #[test]
    fn grid_sizes_follow_ratio() {
        let g = sample_grids::<f64>(600, 6.0, 1).unwrap();
        assert_eq!(
            [g.monotonicity.len(), g.butterfly.len(), g.boundary.len(), g.asymptotic.len()],
            [900, 900, 900, 900]
        );
        let g = sample_grids::<f64>(7, 1.0, 1).unwrap();
        assert_eq!(g.total_points(), 7);
        assert_eq!([g.monotonicity.len(), g.asymptotic.len()], [2, 1]);
        assert!(sample_grids::<f64>(0, 6.0, 1).is_err());
        assert!(sample_grids::<f64>(10, 0.0, 1).is_err());
    }

    #[test]
    fn grids_are_seeded_and_in_domain() {
        let a = sample_grids::<f64>(300, 6.0, 42).unwrap();
        assert_eq!(a, sample_grids::<f64>(300, 6.0, 42).unwrap());
        assert_ne!(a, sample_grids::<f64>(300, 6.0, 43).unwrap());
        for grid in [&a.monotonicity, &a.butterfly, &a.boundary] {
            assert!(grid.points.iter().all(|&(m, t)| (-3.0..=3.0).contains(&m) && (0.002..=3.0).contains(&t)));
        }
        assert!(a.asymptotic.points.iter().all(|&(m, _)| (3.0..=6.0).contains(&m.abs())));
        let mut ms: Vec<u64> = a.butterfly.points.iter().map(|p| p.0.to_bits()).collect();
        ms.sort_unstable();
        ms.dedup();
        assert_eq!(ms.len(), a.butterfly.len());
    }

    #[test]
    fn schedule_decays_inverse_time() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0.1, 0), 0.1);
        assert!((s.rate(0.1f64, 5000) - 0.05).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.rate(0.1, 9999), 0.1);
    }

    fn constant_batch(n: usize, v: f64, seed: u64) -> DataBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = (0..n).map(|_| (rng.random_range(-2.0..1.0), rng.random_range(0.02..2.0), v)).collect();
        DataBatch::from_triples(&pts).unwrap()
    }

    fn short_config(arch: Architecture, dims: ModelDims, iters: usize) -> TrainConfig<f64> {
        let hp = HyperParams { n_iterations: iters, ..HyperParams::default() };
        let mut cfg = TrainConfig::new(arch, dims, hp, 3);
        cfg.log_every = 10;
        cfg.wall_clock = false;
        cfg
    }

    #[test]
    fn best_loss_is_returned_and_deterministic() {
        let batch = constant_batch(60, 0.25, 1);
        let cfg = short_config(Architecture::Single, ModelDims::single(4), 60);
        let a = adam_fit(&cfg, &batch).unwrap();
        let b = adam_fit(&cfg, &batch).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert!(a.best_loss.total <= a.final_loss.total);
        let recomputed = total_loss(&a.model, &batch, &a.grids, &cfg.hp).unwrap();
        assert_eq!(recomputed.total, a.best_loss.total);
        let iters: Vec<usize> = a.trace.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, (0..=60).step_by(10).collect::<Vec<_>>());
        assert!(a.trace.records.iter().all(|r| r.elapsed_ms == 0));
        assert!(a.best_loss.total < a.trace.records[0].total);
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainTrace {
            records: vec![TraceRecord { iteration: 5, total: 1.5, components: [0.25; 6], lr: 0.1, elapsed_ms: 7 }],
        };
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("5,1.50000000000e0,2.50000000000e-1,"));
        assert!(row.ends_with(",1.00000000000e-1,7"));
    }

    #[test]
    fn incomplete_mode_ignores_grids() {
        let batch = constant_batch(40, 0.3, 2);
        let mut cfg = short_config(Architecture::Vanilla, ModelDims::single(4), 20);
        cfg.hp = cfg.hp.without_constraints();
        let model = SurfaceModel::new(init_params(cfg.dims, cfg.arch, 1).unwrap());
        // Grids that would fail validation if they were visited.
        let empty = PenaltyGrids {
            monotonicity: ConditionGrid { points: vec![], domain: GridDomain::Core },
            butterfly: ConditionGrid { points: vec![], domain: GridDomain::Core },
            boundary: ConditionGrid { points: vec![], domain: GridDomain::Core },
            asymptotic: ConditionGrid { points: vec![], domain: GridDomain::Wings },
        };
        let fit = adam_fit_from(&cfg, model, &batch, empty).unwrap();
        assert!(fit.trace.records.iter().all(|r| r.components[1..5] == [0.0; 4]));
    }

    #[test]
    fn divergence_is_reported() {
        let batch = constant_batch(20, 0.3, 2);
        let mut cfg = short_config(Architecture::Single, ModelDims::single(2), 50);
        cfg.hp.learning_rate = 1e300;
        match adam_fit(&cfg, &batch) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn per_iteration_refresh_is_deterministic() {
        let batch = constant_batch(30, 0.3, 5);
        let mut cfg = short_config(Architecture::Single, ModelDims::single(3), 15);
        cfg.grid_refresh = GridRefresh::PerIteration;
        let a = adam_fit(&cfg, &batch).unwrap();
        let b = adam_fit(&cfg, &batch).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_ne!(a.grids, sample_grids(30, 6.0, cfg.seed).unwrap());
    }

    #[test]
    fn day_needs_enough_quotes() {
        use crate::ssvi::{default_synth_params, synth_market, SynthSpec};
        let day = synth_market(&default_synth_params(), &SynthSpec { n_quotes: 10, ..SynthSpec::default() }).unwrap();
        let cfg = short_config(Architecture::Single, ModelDims::single(2), 5);
        assert!(matches!(fit_day(&day.points, &cfg), Err(Error::InsufficientData { needed: 50, got: 10 })));

        let day = synth_market(&default_synth_params(), &SynthSpec { n_quotes: 100, ..SynthSpec::default() }).unwrap();
        let a = fit_day(&day.points, &cfg).unwrap();
        let b = fit_day(&day.points, &cfg).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (80, 20));
        assert_eq!(a.train, b.train);
        assert_eq!(a.fit.model, b.fit.model);
    }

    #[test]
    fn constant_surface_is_learned() {
        let batch = constant_batch(500, 0.2, 9);
        let mut cfg = short_config(Architecture::Single, ModelDims::single(8), 2000);
        cfg.log_every = 500;
        let fit = adam_fit(&cfg, &batch).unwrap();
        let mape: f64 = batch
            .points
            .iter()
            .map(|p| (fit.model.vol(p.m, p.tau).unwrap() - p.v).abs() / p.v)
            .sum::<f64>()
            * 100.0
            / batch.len() as f64;
        assert!(mape < 0.5, "in-sample IV MAPE {mape}");
    }
}
