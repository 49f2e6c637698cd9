use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = DEFAULT_SMILE_EPS;

fn close(analytic: f64, oracle: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - oracle).abs();
    diff <= abs || diff <= rel * analytic.abs().max(oracle.abs())
}

/// Initialized model with every scalar jittered so biases are non-zero.
fn random_model(arch: Architecture, dims: ModelDims, seed: u64) -> SurfaceModel<f64> {
    let mut params = init_params::<f64>(dims, arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let flat: Vec<f64> = params.to_flat().iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
    params.assign_from_flat(&flat).unwrap();
    SurfaceModel::new(params)
}

fn all_archs() -> Vec<(Architecture, ModelDims)> {
    vec![
        (Architecture::Single, ModelDims::single(4)),
        (Architecture::Multi, ModelDims::new(3, 3, 2).unwrap()),
        (Architecture::Vanilla, ModelDims::single(5)),
    ]
}

#[test]
fn zero_single_model_value() {
    let p = SingleModelParams::<f64>::zeros(1);
    let expected = smile_phi(0.0, EPS) * 0.5 + 1.0;
    assert_abs_diff_eq!(expected, 1.049_999_166_693_054_6, epsilon = 1e-14);
    for &(m, tau) in &[(0.0, 1.0), (-2.0, 0.01), (5.0, 3.0)] {
        assert_abs_diff_eq!(eval_single(&p, m, tau, EPS).unwrap(), expected, epsilon = 1e-15);
    }
}

#[test]
fn zero_vanilla_model_value() {
    let p = VanillaModelParams::<f64>::zeros(1);
    assert_abs_diff_eq!(eval_vanilla(&p, 0.7, 2.0).unwrap(), 1.5, epsilon = 1e-15);
}

#[test]
fn rejects_non_positive_tau() {
    let model = random_model(Architecture::Multi, ModelDims::new(2, 2, 2).unwrap(), 1);
    assert!(model.vol(0.0, 0.0).is_err());
    assert!(model.vol_jet(0.0, -1.0).is_err());
    assert!(eval_single(&SingleModelParams::<f64>::zeros(2), 0.0, 0.0, EPS).is_err());
    assert!(eval_vanilla(&VanillaModelParams::<f64>::zeros(2), 0.0, -0.1).is_err());
}

#[test]
fn parameter_counts() {
    assert_eq!(ModelDims::single(32).param_count(Architecture::Single), 161);
    assert_eq!(ModelDims::single(32).param_count(Architecture::Vanilla), 129);
    let multi = ModelDims::new(4, 8, 5).unwrap();
    assert_eq!(multi.param_count(Architecture::Multi), 203);
    for (arch, dims) in [
        (Architecture::Single, ModelDims::single(32)),
        (Architecture::Vanilla, ModelDims::single(32)),
        (Architecture::Multi, multi),
    ] {
        let p = init_params::<f64>(dims, arch, 0).unwrap();
        assert_eq!(p.n_params(), dims.param_count(arch));
        assert_eq!(p.to_flat().len(), dims.param_count(arch));
    }
}

#[test]
fn zero_gate_gives_uniform_weights() {
    let mut p = MultiModelParams::<f64>::zeros(4, 3, 2);
    p.w_dot = vec![0.3, -1.2, 0.8, 0.1];
    p.b_dot = vec![0.5, -0.5];
    let w = p.gate_weights(0.4, 1.3);
    for x in w {
        assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
    }
}

#[test]
fn one_expert_multi_reduces_to_single() {
    let single = match random_model(Architecture::Single, ModelDims::single(6), 3).params {
        ModelParams::Single(p) => p,
        _ => unreachable!(),
    };
    let mut multi = MultiModelParams::zeros(1, 6, 3);
    multi.experts[0] = single.clone();
    multi.w_dot = vec![0.2, -0.4, 1.1, 0.7, 0.3, -0.9];
    multi.w_ddot = vec![1.5, -2.0, 0.4];
    multi.b_ddot = vec![0.8];
    for &(m, tau) in &[(-1.0, 0.1), (0.0, 1.0), (0.6, 2.4), (-4.5, 0.002)] {
        let r = eval_multi(&multi, m, tau, EPS).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert!((r.v_hat - single.value(m, tau, EPS)).abs() <= 1e-15);
    }
}

#[test]
fn jet_value_matches_plain_evaluation() {
    for (arch, dims) in all_archs() {
        let model = random_model(arch, dims, 11);
        for &(m, tau) in &[(-2.0, 0.05), (0.0, 1.0), (0.9, 2.7)] {
            let j = model.vol_jet(m, tau).unwrap();
            assert_abs_diff_eq!(j.v, model.vol(m, tau).unwrap(), epsilon = 1e-13);
        }
    }
}

fn check_input_derivatives(model: &SurfaceModel<f64>, m: f64, tau: f64) {
    let h = 1e-5;
    let f = |m: f64, t: f64| model.vol(m, t).unwrap();
    let (dm, dmm, dt) = model.input_derivatives(m, tau).unwrap();
    let fd_m = (f(m + h, tau) - f(m - h, tau)) / (2.0 * h);
    let fd_t = (f(m, tau + h) - f(m, tau - h)) / (2.0 * h);
    let dm_of = |m: f64| model.input_derivatives(m, tau).unwrap().0;
    let fd_mm = (dm_of(m + h) - dm_of(m - h)) / (2.0 * h);
    assert!(close(dm, fd_m, 1e-4, 1e-7), "{:?} dm {dm} vs {fd_m}", model.arch());
    assert!(close(dt, fd_t, 1e-4, 1e-7), "{:?} dt {dt} vs {fd_t}", model.arch());
    assert!(close(dmm, fd_mm, 1e-4, 1e-7), "{:?} dmm {dmm} vs {fd_mm}", model.arch());
}

#[test]
fn input_derivatives_match_finite_differences() {
    let single = random_model(Architecture::Single, ModelDims::single(8), 21);
    check_input_derivatives(&single, 0.3, 0.5);
    let multi = random_model(Architecture::Multi, ModelDims::new(4, 8, 5).unwrap(), 22);
    check_input_derivatives(&multi, -1.0, 1.0);
    for (arch, dims) in all_archs() {
        let model = random_model(arch, dims, 23);
        for &(m, tau) in &[(-2.5, 0.01), (0.05, 0.3), (1.4, 2.9), (4.0, 1.5)] {
            check_input_derivatives(&model, m, tau);
        }
    }
}

#[test]
fn constant_model_has_zero_input_derivatives() {
    let mut p = SingleModelParams::<f64>::zeros(3);
    p.b_bar = vec![0.3, -0.2, 1.0];
    p.b_tilde = vec![-1.0, 0.0, 2.0];
    let model = SurfaceModel::new(ModelParams::Single(p));
    assert_eq!(model.input_derivatives(0.7, 0.4).unwrap(), (0.0, 0.0, 0.0));
}

#[test]
fn vjp_matches_finite_differences_in_parameters() {
    let adj = crate::jet::Jet::new(0.7, -1.3, 0.4, 2.1);
    for (arch, dims) in all_archs() {
        let model = random_model(arch, dims, 31);
        let (m, tau) = (-0.4, 0.8);
        let (_, grad) = model.jet_vjp(m, tau, adj).unwrap();
        let base = model.params.to_flat();
        let h = 1e-6;
        for idx in 0..base.len() {
            let eval = |delta: f64| {
                let mut flat = base.clone();
                flat[idx] += delta;
                let mut params = model.params.clone();
                params.assign_from_flat(&flat).unwrap();
                let shifted = SurfaceModel::new(params);
                adj.dot(shifted.vol_jet(m, tau).unwrap())
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(close(grad[idx], fd, 1e-5, 1e-8), "{arch} param {idx}: {} vs {fd}", grad[idx]);
        }
    }
}

#[test]
fn init_is_reproducible_and_seed_dependent() {
    let dims = ModelDims::new(4, 8, 5).unwrap();
    let a = init_params::<f64>(dims, Architecture::Multi, 42).unwrap();
    let b = init_params::<f64>(dims, Architecture::Multi, 42).unwrap();
    let c = init_params::<f64>(dims, Architecture::Multi, 43).unwrap();
    assert_eq!(a.to_flat(), b.to_flat());
    assert_ne!(a.to_flat(), c.to_flat());
}

#[test]
fn init_surfaces_sit_at_realistic_levels() {
    for seed in 0..20 {
        for (arch, dims) in [
            (Architecture::Single, ModelDims::single(8)),
            (Architecture::Single, ModelDims::single(32)),
            (Architecture::Multi, ModelDims::new(4, 8, 5).unwrap()),
            (Architecture::Vanilla, ModelDims::single(32)),
        ] {
            let model = SurfaceModel::new(init_params::<f64>(dims, arch, seed).unwrap());
            for i in 0..=24 {
                for k in 0..=12 {
                    let m = -6.0 + 0.5 * i as f64;
                    let tau = 0.002 + (3.0 - 0.002) * k as f64 / 12.0;
                    let v = model.vol(m, tau).unwrap();
                    assert!(v > 0.0 && v < 5.0, "{arch} seed {seed}: v({m},{tau}) = {v}");
                }
            }
        }
    }
}

#[test]
fn init_rejects_bad_dims() {
    assert!(init_params::<f64>(ModelDims { experts: 2, hidden: 4, gate_hidden: 0 }, Architecture::Multi, 0).is_err());
    assert!(init_params::<f64>(ModelDims { experts: 2, hidden: 4, gate_hidden: 1 }, Architecture::Single, 0).is_err());
    assert!(ModelDims::new(1, 0, 1).is_err());
}

#[test]
fn model_file_roundtrip_is_exact() {
    for (arch, dims) in all_archs() {
        let model = random_model(arch, dims, 5);
        let meta = serde_json::json!({"seed": 5});
        let text = model.to_json(meta.clone());
        let back = SurfaceModel::<f64>::from_json(&text).unwrap();
        assert_eq!(back, model);
        let file = ModelFile::from_json(&text).unwrap();
        assert_eq!(file.training_meta, meta);
        assert_eq!(file.arch, arch.tag());
    }
}

#[test]
fn model_file_reports_missing_and_misshapen_fields() {
    let model = random_model(Architecture::Multi, ModelDims::new(2, 3, 2).unwrap(), 9);
    let mut value: serde_json::Value = serde_json::from_str(&model.to_json(serde_json::Value::Null)).unwrap();

    let mut missing_dims = value.clone();
    missing_dims.as_object_mut().unwrap().remove("dims");
    let err = SurfaceModel::<f64>::from_json(&missing_dims.to_string()).unwrap_err();
    assert!(err.to_string().contains("dims"), "{err}");

    let mut missing_array = value.clone();
    missing_array["params"].as_object_mut().unwrap().remove("w_ddot");
    let err = SurfaceModel::<f64>::from_json(&missing_array.to_string()).unwrap_err();
    assert!(err.to_string().contains("w_ddot"), "{err}");

    value["params"]["b_dot"] = serde_json::json!([1.0, 2.0, 3.0]);
    let err = SurfaceModel::<f64>::from_json(&value.to_string()).unwrap_err();
    assert!(err.to_string().contains("b_dot") && err.to_string().contains("expected 2"), "{err}");

    assert!(SurfaceModel::<f64>::from_json("{ not json").is_err());
}

#[test]
fn single_precision_evaluation_tracks_double() {
    let model = random_model(Architecture::Multi, ModelDims::new(2, 4, 3).unwrap(), 17);
    let flat32: Vec<f32> = model.params.to_flat().iter().map(|&x| x as f32).collect();
    let mut p32 = init_params::<f32>(model.dims(), Architecture::Multi, 0).unwrap();
    p32.assign_from_flat(&flat32).unwrap();
    let model32 = SurfaceModel::new(p32);
    let v64 = model.vol(0.2, 0.7).unwrap();
    let v32 = model32.vol(0.2f32, 0.7).unwrap();
    assert!(((v32 as f64) - v64).abs() < 1e-5 * v64);
}

proptest! {
    #[test]
    fn outputs_positive_for_any_parameters(
        seed in 0u64..1000,
        m in -20.0f64..20.0,
        tau in 1e-4f64..10.0,
        scale in 0.1f64..5.0,
    ) {
        for (arch, dims) in all_archs() {
            let mut params = init_params::<f64>(dims, arch, seed).unwrap();
            let flat: Vec<f64> = params.to_flat().iter().map(|x| x * scale).collect();
            params.assign_from_flat(&flat).unwrap();
            let v = SurfaceModel::new(params).vol(m, tau).unwrap();
            prop_assert!(v > 0.0 && v.is_finite());
        }
    }

    #[test]
    fn gate_weights_form_a_distribution(seed in 0u64..1000, m in -6.0f64..6.0, tau in 0.002f64..3.0) {
        let model = random_model(Architecture::Multi, ModelDims::new(4, 2, 5).unwrap(), seed);
        if let ModelParams::Multi(p) = &model.params {
            let w = p.gate_weights(m, tau);
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}
