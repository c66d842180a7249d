//! Differentiable tensor operations.
//!
//! Every operation takes the [`CompRecord`] it should record onto. With a
//! disabled record the same functions run as pure forward computations.
//! Reductions accumulate in f64; storage stays f32.

use super::{CompRecord, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(chunk_index, chunk)` over disjoint output chunks. Each element is
/// written by exactly one task with a fixed sequential inner loop, so results
/// are bit-identical with and without threads.
fn for_each_chunk<F>(buf: &mut [f32], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if buf.len() > 1 << 14 {
            buf.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in buf.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

pub fn add(rec: &mut CompRecord, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let out_data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let (ac, bc) = (a.clone(), b.clone());
    rec.push(a.requires_grad() || b.requires_grad(), &out, move |g| {
        if ac.requires_grad() {
            ac.accumulate_grad(g);
        }
        if bc.requires_grad() {
            bc.accumulate_grad(g);
        }
    });
    Ok(out)
}

pub fn sub(rec: &mut CompRecord, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    let out_data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let (ac, bc) = (a.clone(), b.clone());
    rec.push(a.requires_grad() || b.requires_grad(), &out, move |g| {
        if ac.requires_grad() {
            ac.accumulate_grad(g);
        }
        if bc.requires_grad() {
            bc.accumulate_grad_with(|buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o -= gi;
                }
            });
        }
    });
    Ok(out)
}

pub fn mul(rec: &mut CompRecord, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    let out_data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let (ac, bc) = (a.clone(), b.clone());
    rec.push(a.requires_grad() || b.requires_grad(), &out, move |g| {
        if ac.requires_grad() {
            let bd = bc.data();
            ac.accumulate_grad_with(|buf| {
                for ((o, gi), bi) in buf.iter_mut().zip(g).zip(bd.iter()) {
                    *o += gi * bi;
                }
            });
        }
        if bc.requires_grad() {
            let ad = ac.data();
            bc.accumulate_grad_with(|buf| {
                for ((o, gi), ai) in buf.iter_mut().zip(g).zip(ad.iter()) {
                    *o += gi * ai;
                }
            });
        }
    });
    Ok(out)
}

pub fn add_scalar(rec: &mut CompRecord, a: &Tensor, s: f32) -> Result<Tensor> {
    let out_data: Vec<f32> = a.data().iter().map(|x| x + s).collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let ac = a.clone();
    rec.push(a.requires_grad(), &out, move |g| ac.accumulate_grad(g));
    Ok(out)
}

pub fn mul_scalar(rec: &mut CompRecord, a: &Tensor, s: f32) -> Result<Tensor> {
    let out_data: Vec<f32> = a.data().iter().map(|x| x * s).collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let ac = a.clone();
    rec.push(a.requires_grad(), &out, move |g| {
        ac.accumulate_grad_with(|buf| {
            for (o, gi) in buf.iter_mut().zip(g) {
                *o += gi * s;
            }
        });
    });
    Ok(out)
}

pub fn relu(rec: &mut CompRecord, a: &Tensor) -> Result<Tensor> {
    let out_data: Vec<f32> = a.data().iter().map(|x| x.max(0.0)).collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let ac = a.clone();
    rec.push(a.requires_grad(), &out, move |g| {
        let ad = ac.data();
        ac.accumulate_grad_with(|buf| {
            for ((o, gi), xi) in buf.iter_mut().zip(g).zip(ad.iter()) {
                if *xi > 0.0 {
                    *o += gi;
                }
            }
        });
    });
    Ok(out)
}

/// Natural log; requires strictly positive inputs.
pub fn log(rec: &mut CompRecord, a: &Tensor) -> Result<Tensor> {
    {
        let ad = a.data();
        if let Some(v) = ad.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {v}")));
        }
    }
    let out_data: Vec<f32> = a.data().iter().map(|x| x.ln()).collect();
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let ac = a.clone();
    rec.push(a.requires_grad(), &out, move |g| {
        let ad = ac.data();
        ac.accumulate_grad_with(|buf| {
            for ((o, gi), xi) in buf.iter_mut().zip(g).zip(ad.iter()) {
                *o += gi / xi;
            }
        });
    });
    Ok(out)
}

/// Elementwise power with a scalar exponent, computed in f64.
pub fn pow_scalar(rec: &mut CompRecord, a: &Tensor, exponent: f64) -> Result<Tensor> {
    let mut out_data = Vec::with_capacity(a.numel());
    for &x in a.data().iter() {
        let y = (x as f64).powf(exponent);
        if !y.is_finite() {
            return Err(Error::Domain(format!("pow({x}, {exponent}) is not finite")));
        }
        out_data.push(y as f32);
    }
    let out = Tensor::new_unchecked(a.shape().to_vec(), out_data);
    let ac = a.clone();
    rec.push(a.requires_grad(), &out, move |g| {
        let ad = ac.data();
        ac.accumulate_grad_with(|buf| {
            for ((o, gi), xi) in buf.iter_mut().zip(g).zip(ad.iter()) {
                *o += gi * (exponent * (*xi as f64).powf(exponent - 1.0)) as f32;
            }
        });
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Max-subtraction-stabilized softmax along `axis`, returning both the
/// probabilities and the log-probabilities (`logits - logsumexp`).
pub fn softmax_logs(
    rec: &mut CompRecord,
    logits: &Tensor,
    axis: usize,
) -> Result<(Tensor, Tensor)> {
    if axis >= logits.shape().len() {
        return Err(Error::Dim(format!(
            "softmax axis {axis} out of range for shape {:?}",
            logits.shape()
        )));
    }
    if logits.shape()[axis] < 2 {
        return Err(Error::Precondition(
            "softmax needs at least 2 classes".into(),
        ));
    }
    logits
        .validate_finite()
        .map_err(|_| Error::Numeric("softmax on non-finite logits".into()))?;

    let (outer, len, inner) = axis_strides(logits.shape(), axis);
    let mut probs = vec![0.0f32; logits.numel()];
    let mut logps = vec![0.0f32; logits.numel()];
    {
        let ld = logits.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = f32::NEG_INFINITY;
                for c in 0..len {
                    m = m.max(ld[base + c * inner]);
                }
                let mut denom = 0.0f64;
                for c in 0..len {
                    denom += ((ld[base + c * inner] - m) as f64).exp();
                }
                let lse = m as f64 + denom.ln();
                for c in 0..len {
                    let lp = ld[base + c * inner] as f64 - lse;
                    logps[base + c * inner] = lp as f32;
                    probs[base + c * inner] = lp.exp() as f32;
                }
            }
        }
    }
    let probs = Tensor::new_unchecked(logits.shape().to_vec(), probs);
    let logps = Tensor::new_unchecked(logits.shape().to_vec(), logps);

    // d logits = p ⊙ (g - Σ_c g·p)
    let (lc, pc) = (logits.clone(), probs.clone());
    rec.push(logits.requires_grad(), &probs, move |g| {
        let pd = pc.data();
        lc.accumulate_grad_with(|buf| {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0f64;
                    for c in 0..len {
                        let idx = base + c * inner;
                        dot += (g[idx] * pd[idx]) as f64;
                    }
                    for c in 0..len {
                        let idx = base + c * inner;
                        buf[idx] += pd[idx] * (g[idx] - dot as f32);
                    }
                }
            }
        });
    });
    // d logits = g - p ⊙ Σ_c g
    let (lc, pc) = (logits.clone(), probs.clone());
    rec.push(logits.requires_grad(), &logps, move |g| {
        let pd = pc.data();
        lc.accumulate_grad_with(|buf| {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut gsum = 0.0f64;
                    for c in 0..len {
                        gsum += g[base + c * inner] as f64;
                    }
                    for c in 0..len {
                        let idx = base + c * inner;
                        buf[idx] += g[idx] - pd[idx] * gsum as f32;
                    }
                }
            }
        });
    });
    Ok((probs, logps))
}

pub fn softmax(rec: &mut CompRecord, logits: &Tensor, axis: usize) -> Result<Tensor> {
    Ok(softmax_logs(rec, logits, axis)?.0)
}

pub fn log_softmax(rec: &mut CompRecord, logits: &Tensor, axis: usize) -> Result<Tensor> {
    Ok(softmax_logs(rec, logits, axis)?.1)
}

// ---------------------------------------------------------------------------
// reductions (64-bit accumulation)
// ---------------------------------------------------------------------------

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// Sum over `axis`, or over all elements when `axis` is `None`.
pub fn sum(rec: &mut CompRecord, t: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    match axis {
        None => {
            let total: f64 = t.data().iter().map(|&v| v as f64).sum();
            let out = Tensor::scalar(total as f32);
            let tc = t.clone();
            rec.push(t.requires_grad(), &out, move |g| {
                let gv = g[0];
                tc.accumulate_grad_with(|buf| buf.iter_mut().for_each(|o| *o += gv));
            });
            Ok(out)
        }
        Some(a) => {
            if a >= t.shape().len() {
                return Err(Error::Dim(format!(
                    "sum axis {a} out of range for {:?}",
                    t.shape()
                )));
            }
            let (outer, len, inner) = axis_strides(t.shape(), a);
            let mut out_data = vec![0.0f32; outer * inner];
            {
                let td = t.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = 0.0f64;
                        for c in 0..len {
                            acc += td[(o * len + c) * inner + i] as f64;
                        }
                        out_data[o * inner + i] = acc as f32;
                    }
                }
            }
            let out = Tensor::new_unchecked(reduced_shape(t.shape(), a), out_data);
            let tc = t.clone();
            rec.push(t.requires_grad(), &out, move |g| {
                tc.accumulate_grad_with(|buf| {
                    for o in 0..outer {
                        for c in 0..len {
                            for i in 0..inner {
                                buf[(o * len + c) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            });
            Ok(out)
        }
    }
}

pub fn sum_all(rec: &mut CompRecord, t: &Tensor) -> Result<Tensor> {
    sum(rec, t, None)
}

/// Mean over `axis`, or over all elements when `axis` is `None`.
pub fn mean(rec: &mut CompRecord, t: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let n = match axis {
        None => t.numel(),
        Some(a) => {
            if a >= t.shape().len() {
                return Err(Error::Dim(format!(
                    "mean axis {a} out of range for {:?}",
                    t.shape()
                )));
            }
            t.shape()[a]
        }
    };
    let s = sum(rec, t, axis)?;
    mul_scalar(rec, &s, 1.0 / n as f32)
}

pub fn mean_all(rec: &mut CompRecord, t: &Tensor) -> Result<Tensor> {
    mean(rec, t, None)
}

/// Unbiased (n-1) standard deviation over `axis` (two-pass, f64).
/// The result is detached: it never carries gradients.
pub fn std_unbiased(t: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let shape = t.shape().to_vec();
    let (outer, len, inner) = match axis {
        None => (1usize, t.numel(), 1usize),
        Some(a) => {
            if a >= shape.len() {
                return Err(Error::Dim(format!(
                    "std axis {a} out of range for {shape:?}"
                )));
            }
            axis_strides(&shape, a)
        }
    };
    if len < 2 {
        return Err(Error::Precondition(format!(
            "std_unbiased needs an axis extent of at least 2, got {len}"
        )));
    }
    let td = t.data();
    let mut out_data = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut m = 0.0f64;
            for c in 0..len {
                m += td[(o * len + c) * inner + i] as f64;
            }
            m /= len as f64;
            let mut ss = 0.0f64;
            for c in 0..len {
                let d = td[(o * len + c) * inner + i] as f64 - m;
                ss += d * d;
            }
            out_data[o * inner + i] = (ss / (len - 1) as f64).sqrt() as f32;
        }
    }
    let out_shape = match axis {
        None => vec![1],
        Some(a) => reduced_shape(&shape, a),
    };
    Ok(Tensor::new_unchecked(out_shape, out_data))
}

/// Index of the maximum along `axis`; ties resolve to the lowest index.
/// The result is detached.
pub fn argmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.shape().len() {
        return Err(Error::Dim(format!(
            "argmax axis {axis} out of range for {:?}",
            t.shape()
        )));
    }
    let (outer, len, inner) = axis_strides(t.shape(), axis);
    let td = t.data();
    let mut out_data = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0usize;
            let mut best_v = td[o * len * inner + i];
            for c in 1..len {
                let v = td[(o * len + c) * inner + i];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out_data[o * inner + i] = best as f32;
        }
    }
    Ok(Tensor::new_unchecked(
        reduced_shape(t.shape(), axis),
        out_data,
    ))
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: when active, each element is zeroed with probability
/// `ratio` and survivors are scaled by `1/(1-ratio)`, so activations keep
/// their expected scale. The mask is kept for an exact backward pass.
pub fn dropout(
    rec: &mut CompRecord,
    t: &Tensor,
    ratio: f32,
    rng: &mut RngStream,
    active: bool,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Precondition(format!(
            "dropout ratio {ratio} outside [0, 1)"
        )));
    }
    if !active || ratio == 0.0 {
        return Ok(t.clone());
    }
    let scale = 1.0 / (1.0 - ratio);
    let n = t.numel();
    let keep_mask = rec.is_enabled() && t.requires_grad();
    let mut mask: Vec<f32> = if keep_mask {
        Vec::with_capacity(n)
    } else {
        Vec::new()
    };
    let mut out_data = Vec::with_capacity(n);
    {
        let td = t.data();
        for &x in td.iter() {
            let m = if rng.next_f32() >= ratio { scale } else { 0.0 };
            out_data.push(x * m);
            if keep_mask {
                mask.push(m);
            }
        }
    }
    let out = Tensor::new_unchecked(t.shape().to_vec(), out_data);
    let tc = t.clone();
    rec.push(t.requires_grad(), &out, move |g| {
        tc.accumulate_grad_with(|buf| {
            for ((o, gi), mi) in buf.iter_mut().zip(g).zip(mask.iter()) {
                *o += gi * mi;
            }
        });
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// 2D cross-correlation with same-shape zero padding.
///
/// `input` is `[N, Cin, H, W]`, `kernel` `[Cout, Cin, k, k]` with odd `k`,
/// `bias` `[Cout]`. Output is `[N, Cout, H, W]`.
pub fn conv2d(
    rec: &mut CompRecord,
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 4 || kshape.len() != 4 || bias.shape().len() != 1 {
        return Err(Error::Dim(format!(
            "conv2d wants input[N,C,H,W], kernel[O,C,k,k], bias[O]; got {:?}, {:?}, {:?}",
            ishape,
            kshape,
            bias.shape()
        )));
    }
    let (n, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (cout, kcin, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Precondition(format!(
            "conv2d kernel must be odd square, got {kh}x{kw}"
        )));
    }
    if kcin != cin {
        return Err(Error::Dim(format!(
            "conv2d channel mismatch: input {cin}, kernel {kcin}"
        )));
    }
    if bias.shape()[0] != cout {
        return Err(Error::Dim(format!(
            "conv2d bias length {} != output channels {cout}",
            bias.shape()[0]
        )));
    }
    let k = kh;
    let pad = (k - 1) / 2;

    let mut out_data = vec![0.0f32; n * cout * h * w];
    {
        let id_guard = input.data();
        let kd_guard = kernel.data();
        let bd_guard = bias.data();
        let (id, kd, bd): (&[f32], &[f32], &[f32]) = (&id_guard, &kd_guard, &bd_guard);
        // one task per (n, co) output plane
        for_each_chunk(&mut out_data, h * w, |plane, out_plane| {
            let ni = plane / cout;
            let co = plane % cout;
            out_plane.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..cin {
                let in_base = (ni * cin + ci) * h * w;
                let k_base = ((co * cin) + ci) * k * k;
                forward_plane(
                    out_plane,
                    &id[in_base..in_base + h * w],
                    &kd[k_base..k_base + k * k],
                    h,
                    w,
                    k,
                    pad,
                );
            }
        });
    }
    for v in &out_data {
        if !v.is_finite() {
            return Err(Error::Numeric("conv2d produced a non-finite output".into()));
        }
    }
    let out = Tensor::new_unchecked(vec![n, cout, h, w], out_data);

    let needs = input.requires_grad() || kernel.requires_grad() || bias.requires_grad();
    let (ic, kc, bc) = (input.clone(), kernel.clone(), bias.clone());
    rec.push(needs, &out, move |g| {
        let id_guard = ic.data();
        let kd_guard = kc.data();
        let (id, kd): (&[f32], &[f32]) = (&id_guard, &kd_guard);
        if bc.requires_grad() {
            let mut db = vec![0.0f32; cout];
            for ni in 0..n {
                for (co, dbv) in db.iter_mut().enumerate() {
                    let base = (ni * cout + co) * h * w;
                    let mut acc = 0.0f64;
                    for v in &g[base..base + h * w] {
                        acc += *v as f64;
                    }
                    *dbv += acc as f32;
                }
            }
            bc.accumulate_grad(&db);
        }
        if kc.requires_grad() {
            let mut dk = vec![0.0f32; cout * cin * k * k];
            for_each_chunk(&mut dk, cin * k * k, |co, dk_plane| {
                for ni in 0..n {
                    let g_base = (ni * cout + co) * h * w;
                    for ci in 0..cin {
                        let in_base = (ni * cin + ci) * h * w;
                        kernel_grad_plane(
                            &mut dk_plane[ci * k * k..(ci + 1) * k * k],
                            &g[g_base..g_base + h * w],
                            &id[in_base..in_base + h * w],
                            h,
                            w,
                            k,
                            pad,
                        );
                    }
                }
            });
            kc.accumulate_grad(&dk);
        }
        if ic.requires_grad() {
            let mut dx = vec![0.0f32; n * cin * h * w];
            for_each_chunk(&mut dx, h * w, |plane, dx_plane| {
                let ni = plane / cin;
                let ci = plane % cin;
                for co in 0..cout {
                    let g_base = (ni * cout + co) * h * w;
                    let k_base = (co * cin + ci) * k * k;
                    input_grad_plane(
                        dx_plane,
                        &g[g_base..g_base + h * w],
                        &kd[k_base..k_base + k * k],
                        h,
                        w,
                        k,
                        pad,
                    );
                }
            });
            ic.accumulate_grad(&dx);
        }
    });
    Ok(out)
}

/// out[h,w] += sum_{kh,kw} in[h+kh-pad, w+kw-pad] * kern[kh,kw], zero-padded.
fn forward_plane(
    out: &mut [f32],
    input: &[f32],
    kern: &[f32],
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) {
    for kr in 0..k {
        // valid output rows: 0 <= hh + kr - pad < h
        let r_lo = pad.saturating_sub(kr);
        let r_hi = (h + pad - kr).min(h);
        for kc in 0..k {
            let kval = kern[kr * k + kc];
            if kval == 0.0 {
                continue;
            }
            let c_lo = pad.saturating_sub(kc);
            let c_hi = (w + pad - kc).min(w);
            for hh in r_lo..r_hi {
                let src_row = (hh + kr - pad) * w;
                let dst_row = hh * w;
                let src = &input[src_row + c_lo + kc - pad..src_row + c_hi + kc - pad];
                let dst = &mut out[dst_row + c_lo..dst_row + c_hi];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kval * s;
                }
            }
        }
    }
}

/// dk[kr,kc] += sum over valid (h,w) of g[h,w] * in[h+kr-pad, w+kc-pad].
fn kernel_grad_plane(
    dk: &mut [f32],
    g: &[f32],
    input: &[f32],
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) {
    for kr in 0..k {
        let r_lo = pad.saturating_sub(kr);
        let r_hi = (h + pad - kr).min(h);
        for kc in 0..k {
            let c_lo = pad.saturating_sub(kc);
            let c_hi = (w + pad - kc).min(w);
            let mut acc = 0.0f64;
            for hh in r_lo..r_hi {
                let g_row = hh * w;
                let in_row = (hh + kr - pad) * w;
                let gs = &g[g_row + c_lo..g_row + c_hi];
                let xs = &input[in_row + c_lo + kc - pad..in_row + c_hi + kc - pad];
                let mut row_acc = 0.0f32;
                for (gi, xi) in gs.iter().zip(xs) {
                    row_acc += gi * xi;
                }
                acc += row_acc as f64;
            }
            dk[kr * k + kc] += acc as f32;
        }
    }
}

/// dx[h+kr-pad, w+kc-pad] += g[h,w] * kern[kr,kc] over valid positions.
fn input_grad_plane(
    dx: &mut [f32],
    g: &[f32],
    kern: &[f32],
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) {
    for kr in 0..k {
        let r_lo = pad.saturating_sub(kr);
        let r_hi = (h + pad - kr).min(h);
        for kc in 0..k {
            let kval = kern[kr * k + kc];
            if kval == 0.0 {
                continue;
            }
            let c_lo = pad.saturating_sub(kc);
            let c_hi = (w + pad - kc).min(w);
            for hh in r_lo..r_hi {
                let g_row = hh * w;
                let dx_row = (hh + kr - pad) * w;
                let gs = &g[g_row + c_lo..g_row + c_hi];
                let dst = &mut dx[dx_row + c_lo + kc - pad..dx_row + c_hi + kc - pad];
                for (d, gi) in dst.iter_mut().zip(gs) {
                    *d += kval * gi;
                }
            }
        }
    }
}
