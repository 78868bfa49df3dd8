mod common;

use common::*;
use gkan_core::autodiff::{grad_check, Tape};
use gkan_core::gkan::{
    gauss_rbf_map, kan_block, kan_layer, kan_layer_vjp, kan_phi, rbf_basis, KanEdgeParams, KanLayerParams, RbfGrid,
};
use gkan_core::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn basis_matches_extended_precision_values() {
    let grid = RbfGrid::new(5, 2.0, 1.0).unwrap();
    let want = [
        0.005_041_760_259_690_979_102_410_256_55,
        0.184_519_523_992_989_267_629_813_765_90,
        0.913_931_185_271_228_186_747_353_546_50,
        0.612_626_394_184_416_068_988_579_968_02,
        0.055_576_212_611_483_068_653_567_657_58,
    ];
    let got = rbf_basis(0.3, &grid);
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

fn random_edge(r: &mut rand_chacha::ChaCha8Rng, nc: usize) -> KanEdgeParams {
    KanEdgeParams {
        w1: r.random_range(-2.0..2.0),
        w2: r.random_range(-2.0..2.0),
        weights: random_vec(r, nc, -1.0, 1.0),
    }
}

#[test]
fn phi_matches_formula() {
    let mut r = rng(11);
    for case in 0..60 {
        let nc = r.random_range(2..10);
        let half = r.random_range(0.5..3.0);
        let sigma = r.random_range(0.2..2.0);
        let grid = RbfGrid::new(nc, half, sigma).unwrap();
        let edge = random_edge(&mut r, nc);
        let x = r.random_range(-4.0..4.0);
        let want = phi(x, edge.w1, edge.w2, &edge.weights, &centers(nc, half), sigma);
        let got = kan_phi(x, &edge, &grid);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "case {case}");
    }
}

#[test]
fn phi_symmetric_example() {
    let grid = RbfGrid::with_spacing_sigma(8).unwrap();
    let edge = KanEdgeParams { w1: 0.0, w2: 0.7, weights: vec![1.5; 8] };
    let want: f64 = 0.7 * 1.5 * centers(8, 1.0).iter().map(|m| (-m * m / grid.sigma().powi(2)).exp()).sum::<f64>();
    assert!((kan_phi(0.0, &edge, &grid) - want).abs() < 1e-14);
}

#[test]
fn layer_matches_double_loop() {
    let mut r = rng(12);
    for case in 0..60 {
        let (d_in, d_out) = (r.random_range(1..5), r.random_range(1..5));
        let nc = r.random_range(2..9);
        let grid = RbfGrid::with_spacing_sigma(nc).unwrap();
        let edges: Vec<KanEdgeParams> = (0..d_in * d_out).map(|_| random_edge(&mut r, nc)).collect();
        let params = KanLayerParams::new(d_in, d_out, edges.clone()).unwrap();
        let x = random_vec(&mut r, d_in, -1.5, 1.5);
        let got = kan_layer(&x, &params, &grid).unwrap();
        let c = centers(nc, 1.0);
        for k in 0..d_out {
            let mut want = 0.0;
            for i in 0..d_in {
                let e = &edges[k * d_in + i];
                want += phi(x[i], e.w1, e.w2, &e.weights, &c, grid.sigma());
            }
            assert!((got[k] - want).abs() <= 1e-12 * want.abs().max(1.0), "case {case}");
        }
    }
}

#[test]
fn layer_edge_cases() {
    let grid = RbfGrid::with_spacing_sigma(8).unwrap();
    let zero = KanLayerParams::new(3, 2, vec![KanEdgeParams::zeroed(8); 6]).unwrap();
    assert_eq!(kan_layer(&[0.1, -0.4, 0.9], &zero, &grid).unwrap(), vec![0.0, 0.0]);
    assert!(kan_layer(&[0.1, 0.2], &zero, &grid).is_err());

    // RBF path off and w1 = 1: the sum of SiLU responses from the tape op
    let silu_only = KanEdgeParams { w1: 1.0, w2: 0.0, weights: vec![0.3; 8] };
    let p = KanLayerParams::new(4, 1, vec![silu_only; 4]).unwrap();
    let x = vec![-2.0, -0.5, 0.25, 3.0];
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(&[4], x.clone()).unwrap());
    let s = tape.silu(xv).unwrap();
    let s = tape.sum(s).unwrap();
    assert!((kan_layer(&x, &p, &grid).unwrap()[0] - tape.value(s).data()[0]).abs() < 1e-15);
}

#[test]
fn layer_vjp_matches_finite_differences() {
    let mut r = rng(13);
    let grid = RbfGrid::with_spacing_sigma(6).unwrap();
    let edges: Vec<KanEdgeParams> = (0..6).map(|_| random_edge(&mut r, 6)).collect();
    let params = KanLayerParams::new(3, 2, edges).unwrap();
    let x = random_vec(&mut r, 3, -1.0, 1.0);
    let dy = [0.7, -1.3];
    let (dx, _) = kan_layer_vjp(&x, &params, &grid, &dy).unwrap();
    let f = |x: &[f64]| {
        let y = kan_layer(x, &params, &grid).unwrap();
        y[0] * dy[0] + y[1] * dy[1]
    };
    let e = gkan_core::autodiff::grad_check_fn(f, |_| dx.clone(), &x, 1e-5).unwrap();
    assert!(e < 1e-8);
}

#[test]
fn gauss_rbf_map_matches_per_pixel_oracle() {
    for seed in 0..60 {
        let e = rbf_case(seed);
        assert!(e < 1e-10, "seed {seed}: {e}");
    }
}

#[test]
fn gauss_rbf_map_examples() {
    let mut r = rng(5);
    let grid = RbfGrid::with_spacing_sigma(4).unwrap();
    let wt = random_tensor(&mut r, &[3, 8], -1.0, 1.0);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 4, 4], [vec![0.3; 16], vec![-0.6; 16]].concat()).unwrap());
    let wv = tape.leaf(wt);
    let y = gauss_rbf_map(&mut tape, x, wv, &grid).unwrap();
    for plane in tape.value(y).data().chunks(16) {
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
    let z = tape.leaf(Tensor::zeros(&[3, 8]));
    let y = gauss_rbf_map(&mut tape, x, z, &grid).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let bad = tape.leaf(Tensor::zeros(&[3, 7]));
    assert!(gauss_rbf_map(&mut tape, x, bad, &grid).is_err());
}

#[test]
fn kan_block_is_sum_of_paths() {
    let mut r = rng(21);
    let grid = RbfGrid::with_spacing_sigma(8).unwrap();
    for _ in 0..10 {
        let x = random_tensor(&mut r, &[2, 5, 5], -1.0, 1.0);
        let k = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[3, 16], -1.0, 1.0);
        let mut tape = Tape::new();
        let (xv, kv, wv) = (tape.leaf(x.clone()), tape.leaf(k.clone()), tape.leaf(wt.clone()));
        let y = kan_block(&mut tape, xv, kv, wv, &grid).unwrap();
        let act: Vec<f64> = x.data().iter().map(|&v| silu(v)).collect();
        let (p1, _, _) = conv2d_loops(&act, (2, 5, 5), k.data(), (3, 3, 3), 1, 1);
        let p2 = gauss_rbf_loops(x.data(), (2, 5, 5), wt.data(), 3, &centers(8, 1.0), grid.sigma());
        let want: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        assert!(max_rel(tape.value(y).data(), &want, 1.0) < 1e-12);

        let zk = tape.leaf(Tensor::zeros(&[3, 2, 3, 3]));
        let y = kan_block(&mut tape, xv, zk, wv, &grid).unwrap();
        assert!(max_rel(tape.value(y).data(), &p2, 1.0) < 1e-12);
        let zw = tape.leaf(Tensor::zeros(&[3, 16]));
        let y = kan_block(&mut tape, xv, kv, zw, &grid).unwrap();
        assert!(max_rel(tape.value(y).data(), &p1, 1.0) < 1e-12);
    }
}

#[test]
fn kan_block_gradients_pass_grad_check() {
    let grid = RbfGrid::with_spacing_sigma(8).unwrap();
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let x = random_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
        let k = random_tensor(&mut r, &[2, 2, 3, 3], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[2, 16], -1.0, 1.0);
        let (g, kk, ww) = (grid.clone(), k.clone(), wt.clone());
        let ex = grad_check(
            move |t, xv| {
                let (kv, wv) = (t.leaf(kk.clone()), t.leaf(ww.clone()));
                kan_block(t, xv, kv, wv, &g)
            },
            &x,
            1e-5,
        )
        .unwrap();
        let (g, xx, ww) = (grid.clone(), x.clone(), wt.clone());
        let ek = grad_check(
            move |t, kv| {
                let (xv, wv) = (t.leaf(xx.clone()), t.leaf(ww.clone()));
                kan_block(t, xv, kv, wv, &g)
            },
            &k,
            1e-5,
        )
        .unwrap();
        let (g, xx, kk) = (grid.clone(), x.clone(), k.clone());
        let ew = grad_check(
            move |t, wv| {
                let (xv, kv) = (t.leaf(xx.clone()), t.leaf(kk.clone()));
                kan_block(t, xv, kv, wv, &g)
            },
            &wt,
            1e-5,
        )
        .unwrap();
        assert!(ex < 1e-4 && ek < 1e-4 && ew < 1e-4, "seed {seed}: {ex} {ek} {ew}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_in_unit_interval_and_one_only_at_centres(x in -3.0f64..3.0, nc in 2usize..12) {
        let grid = RbfGrid::with_spacing_sigma(nc).unwrap();
        for (b, mu) in rbf_basis(x, &grid).iter().zip(grid.centers()) {
            prop_assert!(*b > 0.0 && *b <= 1.0);
            prop_assert_eq!(*b == 1.0, x == *mu);
        }
    }

    #[test]
    fn gauss_rbf_map_commutes_with_pixel_permutation(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let grid = RbfGrid::with_spacing_sigma(5).unwrap();
        let x = random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[3, 10], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permute = |d: &[f64], c: usize| -> Vec<f64> {
            (0..c).flat_map(|ch| perm.iter().map(move |&p| d[ch * 12 + p])).collect()
        };
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let xp = tape.leaf(Tensor::new(&[2, 3, 4], permute(x.data(), 2)).unwrap());
        let wv = tape.leaf(wt);
        let y = gauss_rbf_map(&mut tape, xv, wv, &grid).unwrap();
        let yp = gauss_rbf_map(&mut tape, xp, wv, &grid).unwrap();
        prop_assert_eq!(permute(tape.value(y).data(), 3), tape.value(yp).data().to_vec());
    }

    #[test]
    fn gauss_rbf_weight_gradient_passes_grad_check(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let grid = RbfGrid::with_spacing_sigma(8).unwrap();
        let x = random_tensor(&mut r, &[2, 3, 3], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[2, 16], -1.0, 1.0);
        let e = grad_check(move |t, wv| { let xv = t.leaf(x.clone()); gauss_rbf_map(t, xv, wv, &grid) }, &wt, 1e-5).unwrap();
        prop_assert!(e < 1e-5);
    }
}
