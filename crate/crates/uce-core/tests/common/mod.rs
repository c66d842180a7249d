//! Independent f64 reference implementations used as test oracles.
//!
//! Everything here is straight-loop code that never touches the library's
//! tensor operations, so it can stand as an independent check of them.

#![allow(dead_code)]

use uce_core::network::SegNet;

/// Six-nested-loop cross-correlation with same zero padding, all in f64.
pub fn conv2d_naive_f64(
    input: &[f64],
    ishape: (usize, usize, usize, usize),
    kernel: &[f64],
    kshape: (usize, usize, usize, usize),
    bias: &[f64],
) -> Vec<f64> {
    let (n, cin, h, w) = ishape;
    let (cout, kcin, k, _) = kshape;
    assert_eq!(cin, kcin);
    let pad = (k - 1) / 2;
    let mut out = vec![0.0f64; n * cout * h * w];
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad as isize;
                                let sx = x as isize + kx as isize - pad as isize;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    let iv = input
                                        [((ni * cin + ci) * h + sy as usize) * w + sx as usize];
                                    let kv = kernel[((co * cin + ci) * k + ky) * k + kx];
                                    acc += iv * kv;
                                }
                            }
                        }
                    }
                    out[((ni * cout + co) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Per-slice softmax probabilities over the class axis of `[N, C, H, W]`.
pub fn softmax_nchw_f64(logits: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut probs = vec![0.0f64; logits.len()];
    for ni in 0..n {
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(logits[(ni * c + ci) * plane + p]);
            }
            let mut denom = 0.0f64;
            for ci in 0..c {
                denom += (logits[(ni * c + ci) * plane + p] - m).exp();
            }
            for ci in 0..c {
                let idx = (ni * c + ci) * plane + p;
                probs[idx] = (logits[idx] - m).exp() / denom;
            }
        }
    }
    probs
}

/// Two-pass mean and unbiased standard deviation.
pub fn two_pass_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Kernel values, kernel shape, and bias values of one conv layer.
pub type ConvF64 = (Vec<f64>, (usize, usize, usize, usize), Vec<f64>);

/// An f64 replica of a network's deterministic forward pass, rebuilt from
/// its parameter list.
pub struct NetF64 {
    pub blocks: Vec<ConvF64>,
    pub head: ConvF64,
}

impl NetF64 {
    pub fn from_net(net: &SegNet) -> NetF64 {
        let params = net.parameters();
        let as_f64 =
            |t: &uce_core::Tensor| -> Vec<f64> { t.data().iter().map(|&v| v as f64).collect() };
        let shape4 = |t: &uce_core::Tensor| -> (usize, usize, usize, usize) {
            let s = t.shape();
            (s[0], s[1], s[2], s[3])
        };
        let mut blocks = Vec::new();
        let n_blocks = params.len() / 2 - 1;
        for i in 0..n_blocks {
            blocks.push((
                as_f64(&params[2 * i].tensor),
                shape4(&params[2 * i].tensor),
                as_f64(&params[2 * i + 1].tensor),
            ));
        }
        let head = (
            as_f64(&params[2 * n_blocks].tensor),
            shape4(&params[2 * n_blocks].tensor),
            as_f64(&params[2 * n_blocks + 1].tensor),
        );
        NetF64 { blocks, head }
    }

    /// Flatten every parameter in the same order as `SegNet::parameters()`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (k, _, b) in &self.blocks {
            flat.extend_from_slice(k);
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(&self.head.0);
        flat.extend_from_slice(&self.head.2);
        flat
    }

    /// Overwrite parameters from a flat vector (inverse of `flat_params`).
    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (k, _, b) in &mut self.blocks {
            let kl = k.len();
            k.copy_from_slice(&flat[off..off + kl]);
            off += kl;
            let bl = b.len();
            b.copy_from_slice(&flat[off..off + bl]);
            off += bl;
        }
        let hk = self.head.0.len();
        self.head.0.copy_from_slice(&flat[off..off + hk]);
        off += hk;
        let hb = self.head.2.len();
        self.head.2.copy_from_slice(&flat[off..off + hb]);
        off += hb;
        assert_eq!(off, flat.len());
    }

    /// Deterministic forward: conv -> relu per block, then the 1x1 head.
    pub fn forward(&self, images: &[f64], n: usize, cin: usize, h: usize, w: usize) -> Vec<f64> {
        self.forward_with_masks(images, n, cin, h, w).0
    }

    /// Forward pass that also returns the relu activity pattern. A central
    /// finite difference is only a valid derivative estimate when the
    /// pattern is identical at both probe points.
    pub fn forward_with_masks(
        &self,
        images: &[f64],
        n: usize,
        cin: usize,
        h: usize,
        w: usize,
    ) -> (Vec<f64>, Vec<bool>) {
        let mut x = images.to_vec();
        let mut c = cin;
        let mut masks = Vec::new();
        for (kernel, kshape, bias) in &self.blocks {
            x = conv2d_naive_f64(&x, (n, c, h, w), kernel, *kshape, bias);
            for v in &mut x {
                masks.push(*v > 0.0);
                *v = v.max(0.0);
            }
            c = kshape.0;
        }
        let logits = conv2d_naive_f64(&x, (n, c, h, w), &self.head.0, self.head.1, &self.head.2);
        (logits, masks)
    }
}

/// `sum_n w_n * ce_n / numel` over `[N, C, H, W]` logits in f64; ignored
/// pixels contribute zero to the numerator but stay in the denominator.
pub fn weighted_ce_f64(
    logits: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    labels: &[u8],
    weights: &[f64],
    ignore_index: u8,
) -> f64 {
    let mut total = 0.0f64;
    for ni in 0..n {
        for p in 0..plane {
            let label = labels[ni * plane + p];
            if label == ignore_index {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(logits[(ni * c + ci) * plane + p]);
            }
            let mut denom = 0.0f64;
            for ci in 0..c {
                denom += (logits[(ni * c + ci) * plane + p] - m).exp();
            }
            let lp = logits[(ni * c + label as usize) * plane + p] - m - denom.ln();
            total += weights[ni * plane + p] * (-lp);
        }
    }
    total / (n * plane) as f64
}
