//! Oracle-backed checks of the tensor operations: the naive-loop convolution
//! oracle, two-pass reduction oracles, and finite-difference gradient checks
//! against f64 replicas of each differentiable op.

mod common;

use proptest::prelude::*;
use uce_core::rng::{RngStream, StreamKind};
use uce_core::tensor::{backward, ops, CompRecord, Tensor};

fn random_vec(rng: &mut RngStream, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| lo + (hi - lo) * rng.next_f32()).collect()
}

#[test]
fn conv2d_matches_naive_loop_oracle() {
    // a multi-channel case: 1x2x5x5 input against a 3x2x3x3 kernel
    let mut rng = RngStream::new(17, StreamKind::Datagen);
    let input = random_vec(&mut rng, 2 * 25, -1.0, 1.0);
    let kernel = random_vec(&mut rng, 3 * 2 * 9, -1.0, 1.0);
    let bias = random_vec(&mut rng, 3, -0.5, 0.5);

    let mut rec = CompRecord::disabled();
    let out = ops::conv2d(
        &mut rec,
        &Tensor::from_vec(&[1, 2, 5, 5], input.clone()).unwrap(),
        &Tensor::from_vec(&[3, 2, 3, 3], kernel.clone()).unwrap(),
        &Tensor::from_vec(&[3], bias.clone()).unwrap(),
    )
    .unwrap();

    let expect = common::conv2d_naive_f64(
        &input.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        (1, 2, 5, 5),
        &kernel.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        (3, 2, 3, 3),
        &bias.iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );
    for (got, want) in out.to_vec().iter().zip(&expect) {
        assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // conv2d equals the naive oracle for every shape up to 2x4x8x8
    #[test]
    fn conv2d_oracle_over_shapes(
        n in 1usize..=2,
        cin in 1usize..=4,
        cout in 1usize..=4,
        h in 3usize..=8,
        w in 3usize..=8,
        k in prop::sample::select(vec![1usize, 3]),
        seed in 0u64..1000,
    ) {
        let mut rng = RngStream::new(seed, StreamKind::Datagen);
        let input = random_vec(&mut rng, n * cin * h * w, -1.0, 1.0);
        let kernel = random_vec(&mut rng, cout * cin * k * k, -1.0, 1.0);
        let bias = random_vec(&mut rng, cout, -0.5, 0.5);
        let mut rec = CompRecord::disabled();
        let out = ops::conv2d(
            &mut rec,
            &Tensor::from_vec(&[n, cin, h, w], input.clone()).unwrap(),
            &Tensor::from_vec(&[cout, cin, k, k], kernel.clone()).unwrap(),
            &Tensor::from_vec(&[cout], bias.clone()).unwrap(),
        ).unwrap();
        let expect = common::conv2d_naive_f64(
            &input.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            (n, cin, h, w),
            &kernel.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            (cout, cin, k, k),
            &bias.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        );
        for (got, want) in out.to_vec().iter().zip(&expect) {
            prop_assert!((*got as f64 - want).abs() < 1e-5);
        }
    }

    // softmax probabilities sum to 1 for any finite input
    #[test]
    fn softmax_slices_sum_to_one(
        data in prop::collection::vec(-30.0f32..30.0, 2..=24),
    ) {
        let len = data.len();
        let t = Tensor::from_vec(&[1, len], data).unwrap();
        let mut rec = CompRecord::disabled();
        let (p, _) = ops::softmax_logs(&mut rec, &t, 1).unwrap();
        let total: f64 = p.to_vec().iter().map(|&v| v as f64).sum();
        prop_assert!((total - 1.0).abs() < 1e-6, "sum {total}");
    }
}

#[test]
fn mean_std_match_two_pass_oracle_on_1000_values() {
    let mut rng = RngStream::new(23, StreamKind::Datagen);
    let values = random_vec(&mut rng, 1000, -3.0, 7.0);
    let t = Tensor::from_vec(&[1000], values.clone()).unwrap();
    let mut rec = CompRecord::disabled();
    let mean = ops::mean_all(&mut rec, &t).unwrap().item().unwrap() as f64;
    let std = ops::std_unbiased(&t, None).unwrap().item().unwrap() as f64;

    let f64s: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let (mean_oracle, std_oracle) = common::two_pass_mean_std(&f64s);
    assert!(
        (mean - mean_oracle).abs() / mean_oracle.abs() < 1e-7,
        "{mean} vs {mean_oracle}"
    );
    assert!(
        (std - std_oracle).abs() / std_oracle < 1e-7,
        "{std} vs {std_oracle}"
    );
}

#[test]
fn softmax_extreme_logits_match_high_precision_evaluation() {
    // [1000, 0]: exp(-1000) underflows even in f64, so probs are exactly [1, 0]
    let t = Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
    let mut rec = CompRecord::disabled();
    let (p, lp) = ops::softmax_logs(&mut rec, &t, 1).unwrap();
    assert_eq!(p.to_vec(), vec![1.0, 0.0]);
    assert!(lp
        .to_vec()
        .iter()
        .all(|v| v.is_finite() || *v == f32::NEG_INFINITY));

    // a moderate case against direct f64 evaluation
    let logits = vec![3.5f32, -2.0, 0.25];
    let t = Tensor::from_vec(&[1, 3], logits.clone()).unwrap();
    let (p, _) = ops::softmax_logs(&mut rec, &t, 1).unwrap();
    let expect = common::softmax_nchw_f64(
        &logits.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        1,
        3,
        1,
    );
    for (got, want) in p.to_vec().iter().zip(&expect) {
        assert!((*got as f64 - want).abs() < 1e-7);
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checks: compare autograd gradients against
// central differences of an f64 replica of each op
// ---------------------------------------------------------------------------

/// Central-difference gradient of `f` at `x` with step `h`.
fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

fn assert_grads_close(got: &[f32], want: &[f64], what: &str) {
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let diff = (*g as f64 - w).abs();
        assert!(
            diff <= 1e-6 + 1e-4 * w.abs().max(*g as f64),
            "{what}[{i}]: autograd {g} vs fd {w}"
        );
    }
}

/// Weights folding an op output into a scalar so the gradient is dense.
fn probe_weights(rng: &mut RngStream, n: usize) -> Vec<f32> {
    (0..n).map(|_| 0.25 + rng.next_f32()).collect()
}

#[test]
fn elementwise_ops_pass_finite_difference_checks() {
    let mut rng = RngStream::new(31, StreamKind::Datagen);
    let x = random_vec(&mut rng, 12, 0.3, 2.0); // positive: valid for log/pow
    let y = random_vec(&mut rng, 12, -1.5, 1.5);
    let wv = probe_weights(&mut rng, 12);
    let w64: Vec<f64> = wv.iter().map(|&v| v as f64).collect();
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y64: Vec<f64> = y.iter().map(|&v| v as f64).collect();

    type OpFn = Box<dyn Fn(&mut CompRecord, &Tensor, &Tensor) -> Tensor>;
    type RefFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>;
    let cases: Vec<(&str, OpFn, RefFn)> = vec![
        (
            "add",
            Box::new(|r, a, b| ops::add(r, a, b).unwrap()),
            Box::new(|a, b| a.iter().zip(b).map(|(x, y)| x + y).collect()),
        ),
        (
            "sub",
            Box::new(|r, a, b| ops::sub(r, a, b).unwrap()),
            Box::new(|a, b| a.iter().zip(b).map(|(x, y)| x - y).collect()),
        ),
        (
            "mul",
            Box::new(|r, a, b| ops::mul(r, a, b).unwrap()),
            Box::new(|a, b| a.iter().zip(b).map(|(x, y)| x * y).collect()),
        ),
        (
            "relu_on_b",
            Box::new(|r, _, b| ops::relu(r, b).unwrap()),
            Box::new(|_, b| b.iter().map(|v| v.max(0.0)).collect()),
        ),
        (
            "log_on_a",
            Box::new(|r, a, _| ops::log(r, a).unwrap()),
            Box::new(|a, _| a.iter().map(|v| v.ln()).collect()),
        ),
        (
            "pow_2.5_on_a",
            Box::new(|r, a, _| ops::pow_scalar(r, a, 2.5).unwrap()),
            Box::new(|a, _| a.iter().map(|v| v.powf(2.5)).collect()),
        ),
    ];

    for (name, op, reference) in &cases {
        let mut rec = CompRecord::new();
        let a = Tensor::from_vec(&[12], x.clone()).unwrap().requiring_grad();
        let b = Tensor::from_vec(&[12], y.clone()).unwrap().requiring_grad();
        let out = op(&mut rec, &a, &b);
        let weighted = ops::mul(
            &mut rec,
            &out,
            &Tensor::from_vec(&[12], wv.clone()).unwrap(),
        )
        .unwrap();
        let loss = ops::sum_all(&mut rec, &weighted).unwrap();
        backward(&rec, &loss).unwrap();

        let loss_a = |probe: &[f64]| -> f64 {
            reference(probe, &y64)
                .iter()
                .zip(&w64)
                .map(|(o, w)| o * w)
                .sum()
        };
        let loss_b = |probe: &[f64]| -> f64 {
            reference(&x64, probe)
                .iter()
                .zip(&w64)
                .map(|(o, w)| o * w)
                .sum()
        };
        if let Some(ga) = a.grad() {
            assert_grads_close(&ga, &fd_grad(&loss_a, &x64, 1e-5), &format!("{name}/a"));
        }
        if let Some(gb) = b.grad() {
            assert_grads_close(&gb, &fd_grad(&loss_b, &y64, 1e-5), &format!("{name}/b"));
        }
    }
}

#[test]
fn softmax_gradients_pass_finite_difference_checks() {
    let mut rng = RngStream::new(37, StreamKind::Datagen);
    let logits = random_vec(&mut rng, 2 * 3 * 4, -2.0, 2.0);
    let wp = probe_weights(&mut rng, 2 * 3 * 4);
    let wl = probe_weights(&mut rng, 2 * 3 * 4);
    let x64: Vec<f64> = logits.iter().map(|&v| v as f64).collect();

    let mut rec = CompRecord::new();
    let t = Tensor::from_vec(&[2, 3, 4], logits.clone())
        .unwrap()
        .requiring_grad();
    let (p, lp) = ops::softmax_logs(&mut rec, &t, 1).unwrap();
    let wp_t = Tensor::from_vec(&[2, 3, 4], wp.clone()).unwrap();
    let wl_t = Tensor::from_vec(&[2, 3, 4], wl.clone()).unwrap();
    let a = ops::mul(&mut rec, &p, &wp_t).unwrap();
    let b = ops::mul(&mut rec, &lp, &wl_t).unwrap();
    let s = ops::add(&mut rec, &a, &b).unwrap();
    let loss = ops::sum_all(&mut rec, &s).unwrap();
    backward(&rec, &loss).unwrap();

    let loss_f64 = |probe: &[f64]| -> f64 {
        // [2,3,4] with axis 1: outer=2, len=3, inner=4
        let mut total = 0.0;
        for o in 0..2 {
            for i in 0..4 {
                let idx = |c: usize| (o * 3 + c) * 4 + i;
                let m = (0..3)
                    .map(|c| probe[idx(c)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..3).map(|c| (probe[idx(c)] - m).exp()).sum();
                for c in 0..3 {
                    let lp = probe[idx(c)] - m - denom.ln();
                    total += lp.exp() * wp[idx(c)] as f64 + lp * wl[idx(c)] as f64;
                }
            }
        }
        total
    };
    assert_grads_close(
        &t.grad().unwrap(),
        &fd_grad(&loss_f64, &x64, 1e-5),
        "softmax_logs",
    );
}

#[test]
fn conv2d_gradients_pass_finite_difference_checks() {
    let mut rng = RngStream::new(41, StreamKind::Datagen);
    let (n, cin, cout, h, w, k) = (1usize, 2usize, 2usize, 4usize, 4usize, 3usize);
    let input = random_vec(&mut rng, n * cin * h * w, -1.0, 1.0);
    let kernel = random_vec(&mut rng, cout * cin * k * k, -0.7, 0.7);
    let bias = random_vec(&mut rng, cout, -0.3, 0.3);
    let wv = probe_weights(&mut rng, n * cout * h * w);

    let mut rec = CompRecord::new();
    let it = Tensor::from_vec(&[n, cin, h, w], input.clone())
        .unwrap()
        .requiring_grad();
    let kt = Tensor::from_vec(&[cout, cin, k, k], kernel.clone())
        .unwrap()
        .requiring_grad();
    let bt = Tensor::from_vec(&[cout], bias.clone())
        .unwrap()
        .requiring_grad();
    let out = ops::conv2d(&mut rec, &it, &kt, &bt).unwrap();
    let weighted = ops::mul(
        &mut rec,
        &out,
        &Tensor::from_vec(&[n, cout, h, w], wv.clone()).unwrap(),
    )
    .unwrap();
    let loss = ops::sum_all(&mut rec, &weighted).unwrap();
    backward(&rec, &loss).unwrap();

    let i64v: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let k64v: Vec<f64> = kernel.iter().map(|&v| v as f64).collect();
    let b64v: Vec<f64> = bias.iter().map(|&v| v as f64).collect();
    let fold = |out: Vec<f64>| -> f64 { out.iter().zip(&wv).map(|(o, w)| o * *w as f64).sum() };

    let f_input = |probe: &[f64]| {
        fold(common::conv2d_naive_f64(
            probe,
            (n, cin, h, w),
            &k64v,
            (cout, cin, k, k),
            &b64v,
        ))
    };
    let f_kernel = |probe: &[f64]| {
        fold(common::conv2d_naive_f64(
            &i64v,
            (n, cin, h, w),
            probe,
            (cout, cin, k, k),
            &b64v,
        ))
    };
    let f_bias = |probe: &[f64]| {
        fold(common::conv2d_naive_f64(
            &i64v,
            (n, cin, h, w),
            &k64v,
            (cout, cin, k, k),
            probe,
        ))
    };
    assert_grads_close(
        &it.grad().unwrap(),
        &fd_grad(&f_input, &i64v, 1e-4),
        "conv/input",
    );
    assert_grads_close(
        &kt.grad().unwrap(),
        &fd_grad(&f_kernel, &k64v, 1e-4),
        "conv/kernel",
    );
    assert_grads_close(
        &bt.grad().unwrap(),
        &fd_grad(&f_bias, &b64v, 1e-4),
        "conv/bias",
    );
}

#[test]
fn pow_scalar_repeated_multiplication_oracle() {
    let mut oracle = 1.0f64;
    for _ in 0..10 {
        oracle *= 1.5;
    }
    let mut rec = CompRecord::disabled();
    let out = ops::pow_scalar(&mut rec, &Tensor::from_vec(&[1], vec![1.5]).unwrap(), 10.0).unwrap();
    assert!((out.item().unwrap() as f64 - oracle).abs() < 1e-3);
    assert_eq!(oracle, 57.6650390625);
}
