mod common;

use common::*;
use gkan_core::data::ProjectionStack;
use gkan_core::net::{infer_native, GKanUNetModel, UNetConfig};
use gkan_core::tensor::Tensor;
use rand::Rng;

#[test]
fn default_parameter_count_matches_shape_arithmetic() {
    let cfg = UNetConfig::default();
    let model = GKanUNetModel::<f32>::build(&cfg, 0).unwrap();
    let (c, k, nc) = ([16usize, 32, 64, 128], 9usize, 8usize);
    let mut want = 0;
    let mut prev = 1;
    for &cl in &c {
        want += cl * prev * k + cl * prev * nc;
        prev = cl;
    }
    for l in 0..3 {
        want += c[l] * (c[l] + c[l + 1]) + c[l] * c[l] * k + c[l] * c[l] * nc;
    }
    want += c[0] + 1;
    assert_eq!(model.param_count(), want);
}

#[test]
fn build_is_deterministic_per_seed() {
    let a = GKanUNetModel::<f32>::build(&tiny(8), 9).unwrap();
    let b = GKanUNetModel::<f32>::build(&tiny(8), 9).unwrap();
    let c = GKanUNetModel::<f32>::build(&tiny(8), 10).unwrap();
    let bits = |m: &GKanUNetModel<f32>| -> Vec<u32> {
        m.params().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn output_is_a_fraction_map_of_input_shape() {
    let mut r = rng(4);
    let model = GKanUNetModel::<f32>::build(&tiny(16), 1).unwrap();
    for _ in 0..5 {
        let x = Tensor::new(&[1, 16, 16], (0..256).map(|_| r.random_range(0.0f32..1.0)).collect()).unwrap();
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 16, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(model.forward(&x).unwrap(), y);
    }
}

#[test]
fn silent_blocks_give_constant_logistic_of_bias() {
    let mut model = GKanUNetModel::<f64>::build(&tiny(8), 2).unwrap();
    for (name, p) in model.names().to_vec().iter().zip(model.params_mut()) {
        if name.ends_with(".conv") || name.ends_with(".rbf") {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    model.param_mut("head.bias").unwrap().data_mut()[0] = 0.7;
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[1, 8, 8], 0.0, 1.0);
    let want = 1.0 / (1.0 + (-0.7f64).exp());
    assert!(model.forward(&x).unwrap().data().iter().all(|&v| (v - want).abs() < 1e-15));
}

#[test]
fn unet_gradients_pass_grad_check() {
    for seed in 0..3 {
        let e = unet_grad_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn infer_native_equals_explicit_pipeline() {
    let model = GKanUNetModel::<f32>::build(&tiny(8), 6).unwrap();
    let (n, i0) = (256usize, 1000.0f64);
    let mut r = rng(8);
    let view: Vec<f32> = (0..n * n).map(|_| r.random_range(50.0f32..1200.0)).collect();
    let stack = ProjectionStack::new(1, n, n, view.clone()).unwrap();
    let got = infer_native(&model, &stack, i0).unwrap();

    let ratio: Vec<f64> = view.iter().map(|&m| (m as f64 / i0).clamp(0.0, 1.0)).collect();
    let f = n / 8;
    let mut small = vec![0.0f64; 64];
    for y in 0..n {
        for x in 0..n {
            small[(y / f) * 8 + x / f] += ratio[y * n + x] / (f * f) as f64;
        }
    }
    let input = Tensor::new(&[1, 8, 8], small.iter().map(|&v| v as f32).collect()).unwrap();
    let frac: Vec<f64> = model.forward(&input).unwrap().data().iter().map(|&v| v as f64).collect();
    let up = bilinear_sample(&frac, (8, 8), (n, n));
    let want: Vec<f64> = up.iter().zip(&view).map(|(a, &m)| a * m as f64).collect();
    let got: Vec<f64> = got.data.iter().map(|&v| v as f64).collect();
    assert!(max_rel(&got, &want, 1.0) < 1e-5);
    assert!(got.iter().zip(&view).all(|(s, &m)| *s <= m as f64));
}

#[test]
fn infer_native_at_network_size_skips_resampling() {
    let model = GKanUNetModel::<f32>::build(&tiny(8), 6).unwrap();
    let mut r = rng(9);
    let view: Vec<f32> = (0..64).map(|_| r.random_range(10.0f32..90.0)).collect();
    let stack = ProjectionStack::new(1, 8, 8, view.clone()).unwrap();
    let got = infer_native(&model, &stack, 100.0).unwrap();
    let x = Tensor::new(&[1, 8, 8], view.iter().map(|&m| (m as f64 / 100.0) as f32).collect()).unwrap();
    let frac = model.forward(&x).unwrap();
    let want: Vec<f32> = frac.data().iter().zip(&view).map(|(f, m)| f * m).collect();
    assert_eq!(got.data, want);
}
