// throughput probe for the convolution kernels
use uce_core::rng::{RngStream, StreamKind};
use uce_core::tensor::{backward, ops, CompRecord, Tensor};

fn main() {
    let mut rng = RngStream::new(1, StreamKind::Datagen);
    let input = Tensor::from_vec(
        &[8, 16, 48, 48],
        (0..8 * 16 * 48 * 48).map(|_| rng.next_f32()).collect(),
    )
    .unwrap();
    let kernel = Tensor::from_vec(
        &[32, 16, 3, 3],
        (0..32 * 16 * 9).map(|_| rng.next_f32() - 0.5).collect(),
    )
    .unwrap()
    .requiring_grad();
    let bias = Tensor::zeros(&[32]).requiring_grad();

    let iters = 50;
    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let mut rec = CompRecord::disabled();
        let out = ops::conv2d(&mut rec, &input, &kernel, &bias).unwrap();
        std::hint::black_box(out.to_vec()[0]);
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = 8.0 * 32.0 * 48.0 * 48.0 * 16.0 * 9.0 * iters as f64;
    println!(
        "fwd: {dt:.3}s for {iters} convs -> {:.2} GMAC/s",
        macs / dt / 1e9
    );

    let t0 = std::time::Instant::now();
    for _ in 0..iters {
        let mut rec = CompRecord::new();
        let out = ops::conv2d(&mut rec, &input, &kernel, &bias).unwrap();
        let s = ops::sum_all(&mut rec, &out).unwrap();
        kernel.zero_grad();
        bias.zero_grad();
        backward(&rec, &s).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "fwd+bwd: {dt:.3}s for {iters} -> {:.2} GMAC/s equiv",
        3.0 * macs / dt / 1e9
    );
}
