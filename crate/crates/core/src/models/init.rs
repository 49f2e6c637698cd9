use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, ModelDims, ModelParams, MultiModelParams, SingleModelParams, VanillaModelParams};
use crate::error::Result;
use crate::Scalar;

/// Output log-weights start in this range so the initial surface sits near
/// realistic volatility levels.
const W_HAT_RANGE: (f64, f64) = (-3.0, -1.0);
const B_HAT_INIT: f64 = -2.0;

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [T]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in out {
        *x = T::lit(rng.random_range(-limit..limit));
    }
}

fn log_weights<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut [T]) {
    for x in out {
        *x = T::lit(rng.random_range(W_HAT_RANGE.0..W_HAT_RANGE.1));
    }
}

fn init_single<T: Scalar>(rng: &mut ChaCha8Rng, hidden: usize) -> SingleModelParams<T> {
    let mut p = SingleModelParams::zeros(hidden);
    glorot(rng, 1, hidden, &mut p.w_bar);
    glorot(rng, 1, hidden, &mut p.w_tilde);
    log_weights(rng, &mut p.w_hat);
    p.b_hat = T::lit(B_HAT_INIT);
    p
}

/// Seeded Glorot-uniform initialization; biases start at zero.
pub fn init_params<T: Scalar>(dims: ModelDims, arch: Architecture, seed: u64) -> Result<ModelParams<T>> {
    dims.validate_for(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match arch {
        Architecture::Single => ModelParams::Single(init_single(&mut rng, dims.hidden)),
        Architecture::Vanilla => {
            let mut p = VanillaModelParams::zeros(dims.hidden);
            // w1 and w2 together form the 2 × J input matrix.
            glorot(&mut rng, 2, dims.hidden, &mut p.w1);
            glorot(&mut rng, 2, dims.hidden, &mut p.w2);
            log_weights(&mut rng, &mut p.w_hat);
            p.b_hat = T::lit(B_HAT_INIT);
            ModelParams::Vanilla(p)
        }
        Architecture::Multi => {
            let experts = (0..dims.experts).map(|_| init_single(&mut rng, dims.hidden)).collect();
            let mut p = MultiModelParams::zeros(dims.experts, dims.hidden, dims.gate_hidden);
            p.experts = experts;
            glorot(&mut rng, 2, dims.gate_hidden, &mut p.w_dot);
            glorot(&mut rng, dims.gate_hidden, dims.experts, &mut p.w_ddot);
            ModelParams::Multi(p)
        }
    })
}
