#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volnet::constraints::{ConditionGrid, GridDomain, PenaltyGrids};
use volnet::losses::{loss_gradient, total_loss, DataBatch, HyperParams};
use volnet::models::{init_params, Architecture, ModelDims, SurfaceModel};

pub fn small_dims(arch: Architecture) -> ModelDims {
    match arch {
        Architecture::Multi => ModelDims::new(2, 2, 2).unwrap(),
        _ => ModelDims::single(4),
    }
}

/// Initialized model with uniform jitter so that penalties are active.
pub fn jittered_model(arch: Architecture, dims: ModelDims, seed: u64, jitter: f64) -> SurfaceModel<f64> {
    let mut params = init_params::<f64>(dims, arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let flat: Vec<f64> = params.to_flat().iter().map(|w| w + rng.random_range(-jitter..jitter)).collect();
    params.assign_from_flat(&flat).unwrap();
    SurfaceModel::new(params)
}

pub fn random_batch(seed: u64, n: usize) -> DataBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (rng.random_range(-2.5..1.0), rng.random_range(0.02..2.5), rng.random_range(0.1..0.6)))
        .collect();
    DataBatch::from_triples(&pts).unwrap()
}

pub fn random_grids(seed: u64, n: usize) -> PenaltyGrids<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PenaltyGrids {
        monotonicity: ConditionGrid::random(GridDomain::Core, n, &mut rng),
        butterfly: ConditionGrid::random(GridDomain::Core, n, &mut rng),
        boundary: ConditionGrid::random(GridDomain::Core, n, &mut rng),
        asymptotic: ConditionGrid::random(GridDomain::Wings, n, &mut rng),
    }
}

/// Worst componentwise mismatch between the analytic gradient and central
/// differences of the total loss, as `(index, analytic, numeric)`.
pub struct GradientCheck {
    pub n_params: usize,
    pub failures: Vec<(usize, f64, f64)>,
    pub components: [f64; 6],
}

pub fn check_gradient(
    model: &SurfaceModel<f64>,
    batch: &DataBatch<f64>,
    grids: &PenaltyGrids<f64>,
    hp: &HyperParams<f64>,
    rel_tol: f64,
    abs_tol: f64,
) -> GradientCheck {
    let (loss, grad) = loss_gradient(model, batch, grids, hp).unwrap();
    let theta = model.params.to_flat();
    let mut probe = model.clone();
    let mut failures = Vec::new();
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        let mut eval = |d: f64| {
            let mut t = theta.clone();
            t[i] += d;
            probe.params.assign_from_flat(&t).unwrap();
            total_loss(&probe, batch, grids, hp).unwrap().total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let err = (grad[i] - fd).abs();
        if err > abs_tol && err > rel_tol * fd.abs() {
            failures.push((i, grad[i], fd));
        }
    }
    GradientCheck { n_params: theta.len(), failures, components: loss.components }
}

/// First `count` jittered models (scanning seeds upward) whose four
/// penalty components are all strictly positive on `grids`.
pub fn penalty_active_models(
    arch: Architecture,
    batch: &DataBatch<f64>,
    grids: &PenaltyGrids<f64>,
    count: usize,
) -> Vec<(u64, SurfaceModel<f64>)> {
    let hp = HyperParams::default();
    (0..500u64)
        .map(|seed| (seed, jittered_model(arch, small_dims(arch), seed, 3.0)))
        .filter(|(_, m)| total_loss(m, batch, grids, &hp).unwrap().components[1..5].iter().all(|&c| c > 0.0))
        .take(count)
        .collect()
}
