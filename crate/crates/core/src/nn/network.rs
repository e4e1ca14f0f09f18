//! Forward and backward passes with per-neuron masking.
//!
//! Activations are stored sample-major, `[batch][channel][row][col]`.
//! Convolutions run as im2col + GEMM over the *kept* input channels and
//! *kept* output neurons only, so a masked neuron is never computed: its
//! output is exactly zero and its gradient is never written.

use super::mask::NeuronMask;
use super::spec::{LayerKind, LayerSpec, ModelSpec};
use super::weights::WeightState;
use crate::{Error, Result};

/// A borrowed mini-batch: `labels.len()` samples of `spec.input_len()` values each.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize]) -> Self {
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    kept_in: Vec<usize>,
    kept_out: Vec<usize>,
    /// Conv: im2col matrix `[K][B*P]`. Dense: gathered input `[B][Dk]`.
    input: Vec<f64>,
    /// Kept weights `[Ko][K]`.
    w_sub: Vec<f64>,
    /// Post-activation values, conv `[Ko][B*P]`, dense `[B][Ko]`.
    act: Vec<f64>,
    /// For pooled convs: index into `act` of each pooled maximum, `[Ko][B*P2]`.
    pool_argmax: Option<Vec<u32>>,
}

/// Activation record produced by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
    probs: Vec<f64>,
    labels: Vec<usize>,
    weights_fingerprint: u64,
    mask: NeuronMask,
}

impl ForwardCache {
    /// Softmax probabilities, `[batch][classes]`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

fn check_inputs(spec: &ModelSpec, weights: &WeightState, mask: &NeuronMask, inputs: &[f64], n: usize) -> Result<()> {
    spec.validate()?;
    weights.check_shape(spec)?;
    mask.validate(spec)?;
    if inputs.len() != n * spec.input_len() {
        return Err(Error::Shape(format!(
            "batch of {n} samples needs {} input values, got {}",
            n * spec.input_len(),
            inputs.len()
        )));
    }
    if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input value at index {i}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices fully contained in `a`, `b` and
    // `c`, which the callers size as m*k, k*n and m*n respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(layer: &LayerSpec, input: &[f64], batch: usize, kept_in: &[usize]) -> Vec<f64> {
    let (h, w) = (layer.input_rows, layer.input_cols);
    let (r, s) = (layer.kernel_rows, layer.kernel_cols);
    let (pr, pc) = ((r - 1) / 2, (s - 1) / 2);
    let p = h * w;
    let bp = batch * p;
    let cin = layer.input_channels;
    let mut col = vec![0.0; kept_in.len() * r * s * bp];
    for (ki, &ci) in kept_in.iter().enumerate() {
        for kr in 0..r {
            for kc in 0..s {
                let row = (ki * r + kr) * s + kc;
                let base = row * bp;
                let x_lo = pc.saturating_sub(kc);
                let x_hi = (w + pc).saturating_sub(kc).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for b in 0..batch {
                    let src = &input[(b * cin + ci) * p..(b * cin + ci + 1) * p];
                    for y in 0..h {
                        let yy = y + kr;
                        if yy < pr || yy - pr >= h {
                            continue;
                        }
                        let yy = yy - pr;
                        let dst = base + b * p + y * w;
                        let sx = x_lo + kc - pc;
                        col[dst + x_lo..dst + x_hi].copy_from_slice(&src[yy * w + sx..yy * w + sx + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    col
}

fn col2im(layer: &LayerSpec, dcol: &[f64], batch: usize, kept_in: &[usize]) -> Vec<f64> {
    let (h, w) = (layer.input_rows, layer.input_cols);
    let (r, s) = (layer.kernel_rows, layer.kernel_cols);
    let (pr, pc) = ((r - 1) / 2, (s - 1) / 2);
    let p = h * w;
    let bp = batch * p;
    let cin = layer.input_channels;
    let mut dx = vec![0.0; batch * cin * p];
    for (ki, &ci) in kept_in.iter().enumerate() {
        for kr in 0..r {
            for kc in 0..s {
                let row = (ki * r + kr) * s + kc;
                let base = row * bp;
                let x_lo = pc.saturating_sub(kc);
                let x_hi = (w + pc).saturating_sub(kc).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for b in 0..batch {
                    let off = (b * cin + ci) * p;
                    for y in 0..h {
                        let yy = y + kr;
                        if yy < pr || yy - pr >= h {
                            continue;
                        }
                        let yy = yy - pr;
                        let src = base + b * p + y * w;
                        let sx = x_lo + kc - pc;
                        let dst = &mut dx[off + yy * w + sx..off + yy * w + sx + (x_hi - x_lo)];
                        for (d, v) in dst.iter_mut().zip(&dcol[src + x_lo..src + x_hi]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn gather_weights(layer: &LayerSpec, weights: &[f64], kept_in: &[usize], kept_out: &[usize]) -> Vec<f64> {
    let per = layer.per_channel_len();
    let fan_in = layer.fan_in();
    let k = kept_in.len() * per;
    let mut w_sub = vec![0.0; kept_out.len() * k];
    for (ko, &j) in kept_out.iter().enumerate() {
        for (ki, &ci) in kept_in.iter().enumerate() {
            let src = j * fan_in + ci * per;
            w_sub[ko * k + ki * per..ko * k + (ki + 1) * per].copy_from_slice(&weights[src..src + per]);
        }
    }
    w_sub
}

fn scatter_weight_grad(layer: &LayerSpec, grad: &mut [f64], d_sub: &[f64], kept_in: &[usize], kept_out: &[usize]) {
    let per = layer.per_channel_len();
    let fan_in = layer.fan_in();
    let k = kept_in.len() * per;
    for (ko, &j) in kept_out.iter().enumerate() {
        for (ki, &ci) in kept_in.iter().enumerate() {
            let dst = j * fan_in + ci * per;
            grad[dst..dst + per].copy_from_slice(&d_sub[ko * k + ki * per..ko * k + (ki + 1) * per]);
        }
    }
}

/// Runs the network and returns logits `[batch][classes]`, plus per-layer
/// caches when `keep` is set.
fn run(
    spec: &ModelSpec,
    weights: &WeightState,
    mask: &NeuronMask,
    inputs: &[f64],
    batch: usize,
    keep: bool,
) -> (Vec<f64>, Vec<LayerCache>) {
    let n_layers = spec.layers.len();
    let mut x = inputs.to_vec();
    let mut kept_in: Vec<usize> = (0..spec.layers[0].input_channels).collect();
    let mut caches = Vec::with_capacity(if keep { n_layers } else { 0 });

    for (li, layer) in spec.layers.iter().enumerate() {
        let last = li + 1 == n_layers;
        let kept_out = mask.kept(li, layer.neurons);
        let ko = kept_out.len();
        let params = &weights.layers[li];
        let w_sub = gather_weights(layer, &params.weights, &kept_in, &kept_out);
        let cout = layer.neurons;

        let (out, input, act, pool_argmax) = match layer.kind {
            LayerKind::Conv => {
                let p = layer.input_area();
                let bp = batch * p;
                let k = kept_in.len() * layer.per_channel_len();
                let col = im2col(layer, &x, batch, &kept_in);
                let mut z = vec![0.0; ko * bp];
                gemm(ko, k, bp, &w_sub, k, 1, &col, bp, 1, &mut z);
                for (o, &j) in kept_out.iter().enumerate() {
                    let bias = params.biases[j];
                    for v in &mut z[o * bp..(o + 1) * bp] {
                        *v = (*v + bias).max(0.0);
                    }
                }
                if spec.pool_after(li) {
                    let (h, w) = (layer.input_rows, layer.input_cols);
                    let (h2, w2) = (h / 2, w / 2);
                    let p2 = h2 * w2;
                    let mut out = vec![0.0; batch * cout * p2];
                    let mut arg = vec![0u32; ko * batch * p2];
                    for (o, &j) in kept_out.iter().enumerate() {
                        for b in 0..batch {
                            let zb = o * bp + b * p;
                            for py in 0..h2 {
                                for px in 0..w2 {
                                    let mut best = zb + 2 * py * w + 2 * px;
                                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                        let idx = zb + (2 * py + dy) * w + 2 * px + dx;
                                        if z[idx] > z[best] {
                                            best = idx;
                                        }
                                    }
                                    out[(b * cout + j) * p2 + py * w2 + px] = z[best];
                                    arg[o * batch * p2 + b * p2 + py * w2 + px] = best as u32;
                                }
                            }
                        }
                    }
                    (out, col, z, Some(arg))
                } else {
                    let mut out = vec![0.0; batch * cout * p];
                    for (o, &j) in kept_out.iter().enumerate() {
                        for b in 0..batch {
                            out[(b * cout + j) * p..(b * cout + j + 1) * p]
                                .copy_from_slice(&z[o * bp + b * p..o * bp + (b + 1) * p]);
                        }
                    }
                    (out, col, z, None)
                }
            }
            LayerKind::Dense => {
                let per = layer.per_channel_len();
                let d = layer.fan_in();
                let dk = kept_in.len() * per;
                let mut xs = vec![0.0; batch * dk];
                for b in 0..batch {
                    for (ki, &ci) in kept_in.iter().enumerate() {
                        xs[b * dk + ki * per..b * dk + (ki + 1) * per]
                            .copy_from_slice(&x[b * d + ci * per..b * d + (ci + 1) * per]);
                    }
                }
                let mut z = vec![0.0; batch * ko];
                gemm(batch, dk, ko, &xs, dk, 1, &w_sub, 1, dk, &mut z);
                let mut out = vec![0.0; batch * cout];
                for b in 0..batch {
                    for (o, &j) in kept_out.iter().enumerate() {
                        let v = &mut z[b * ko + o];
                        *v += params.biases[j];
                        if !last {
                            *v = v.max(0.0);
                        }
                        out[b * cout + j] = *v;
                    }
                }
                (out, xs, z, None)
            }
        };
        if keep {
            caches.push(LayerCache {
                kept_in: std::mem::take(&mut kept_in),
                kept_out: kept_out.clone(),
                input,
                w_sub,
                act,
                pool_argmax,
            });
        }
        x = out;
        kept_in = kept_out;
    }
    (x, caches)
}

fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let z = &logits[b * classes..(b + 1) * classes];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[y];
        for (p, v) in probs[b * classes..(b + 1) * classes].iter_mut().zip(z) {
            *p = (v - lse).exp();
        }
    }
    (total / labels.len() as f64, probs)
}

/// Mean softmax cross-entropy of `batch` under `mask`, plus the cache needed
/// by [`backward`].
pub fn forward(
    spec: &ModelSpec,
    weights: &WeightState,
    mask: &NeuronMask,
    batch: Batch<'_>,
) -> Result<(f64, ForwardCache)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    check_inputs(spec, weights, mask, batch.inputs, n)?;
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= spec.class_count) {
        return Err(Error::Shape(format!("label {y} out of range for {} classes", spec.class_count)));
    }
    let (logits, layers) = run(spec, weights, mask, batch.inputs, n, true);
    let (loss, probs) = softmax_xent(&logits, batch.labels, spec.class_count);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((
        loss,
        ForwardCache {
            batch: n,
            layers,
            probs,
            labels: batch.labels.to_vec(),
            weights_fingerprint: weights.fingerprint(),
            mask: mask.clone(),
        },
    ))
}

/// Gradient of the mean loss w.r.t. every parameter. Parameters of masked
/// neurons get exactly zero.
pub fn backward(
    spec: &ModelSpec,
    weights: &WeightState,
    mask: &NeuronMask,
    cache: &ForwardCache,
) -> Result<WeightState> {
    weights.check_shape(spec)?;
    if cache.layers.len() != spec.layers.len()
        || &cache.mask != mask
        || cache.weights_fingerprint != weights.fingerprint()
    {
        return Err(Error::StaleCache("cache was produced with different weights, mask or model".into()));
    }
    let batch = cache.batch;
    let classes = spec.class_count;
    let mut grads = WeightState::zeros(spec);

    let mut d_out: Vec<f64> = cache
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (b, c) = (i / classes, i % classes);
            (p - if cache.labels[b] == c { 1.0 } else { 0.0 }) / batch as f64
        })
        .collect();

    let n_layers = spec.layers.len();
    for li in (0..n_layers).rev() {
        let layer = &spec.layers[li];
        let lc = &cache.layers[li];
        let ko = lc.kept_out.len();
        let cout = layer.neurons;
        let last = li + 1 == n_layers;
        let g = &mut grads.layers[li];
        let need_dx = li > 0;

        let d_in = match layer.kind {
            LayerKind::Dense => {
                let per = layer.per_channel_len();
                let dk = lc.kept_in.len() * per;
                let mut dz = vec![0.0; batch * ko];
                for b in 0..batch {
                    for (o, &j) in lc.kept_out.iter().enumerate() {
                        let a = lc.act[b * ko + o];
                        if last || a > 0.0 {
                            dz[b * ko + o] = d_out[b * cout + j];
                        }
                    }
                }
                let mut dw = vec![0.0; ko * dk];
                gemm(ko, batch, dk, &dz, 1, ko, &lc.input, dk, 1, &mut dw);
                scatter_weight_grad(layer, &mut g.weights, &dw, &lc.kept_in, &lc.kept_out);
                for (o, &j) in lc.kept_out.iter().enumerate() {
                    g.biases[j] = (0..batch).map(|b| dz[b * ko + o]).sum();
                }
                if need_dx {
                    let mut dxs = vec![0.0; batch * dk];
                    gemm(batch, ko, dk, &dz, ko, 1, &lc.w_sub, dk, 1, &mut dxs);
                    let d = layer.fan_in();
                    let mut dx = vec![0.0; batch * d];
                    for b in 0..batch {
                        for (ki, &ci) in lc.kept_in.iter().enumerate() {
                            dx[b * d + ci * per..b * d + (ci + 1) * per]
                                .copy_from_slice(&dxs[b * dk + ki * per..b * dk + (ki + 1) * per]);
                        }
                    }
                    Some(dx)
                } else {
                    None
                }
            }
            LayerKind::Conv => {
                let p = layer.input_area();
                let bp = batch * p;
                let k = lc.kept_in.len() * layer.per_channel_len();
                let mut dz = vec![0.0; ko * bp];
                match &lc.pool_argmax {
                    Some(arg) => {
                        let p2 = (layer.input_rows / 2) * (layer.input_cols / 2);
                        for (o, &j) in lc.kept_out.iter().enumerate() {
                            for b in 0..batch {
                                for q in 0..p2 {
                                    let src = arg[o * batch * p2 + b * p2 + q] as usize;
                                    dz[src] += d_out[(b * cout + j) * p2 + q];
                                }
                            }
                        }
                    }
                    None => {
                        for (o, &j) in lc.kept_out.iter().enumerate() {
                            for b in 0..batch {
                                dz[o * bp + b * p..o * bp + (b + 1) * p]
                                    .copy_from_slice(&d_out[(b * cout + j) * p..(b * cout + j + 1) * p]);
                            }
                        }
                    }
                }
                for (v, a) in dz.iter_mut().zip(&lc.act) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
                let mut dw = vec![0.0; ko * k];
                gemm(ko, bp, k, &dz, bp, 1, &lc.input, 1, bp, &mut dw);
                scatter_weight_grad(layer, &mut g.weights, &dw, &lc.kept_in, &lc.kept_out);
                for (o, &j) in lc.kept_out.iter().enumerate() {
                    g.biases[j] = dz[o * bp..(o + 1) * bp].iter().sum();
                }
                if need_dx {
                    let mut dcol = vec![0.0; k * bp];
                    gemm(k, ko, bp, &lc.w_sub, 1, k, &dz, bp, 1, &mut dcol);
                    Some(col2im(layer, &dcol, batch, &lc.kept_in))
                } else {
                    None
                }
            }
        };
        match d_in {
            Some(d) => d_out = d,
            None => break,
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(grads)
}

/// Loss and gradient in one call.
pub fn loss_and_grad(
    spec: &ModelSpec,
    weights: &WeightState,
    mask: &NeuronMask,
    batch: Batch<'_>,
) -> Result<(f64, WeightState)> {
    let (loss, cache) = forward(spec, weights, mask, batch)?;
    let grads = backward(spec, weights, mask, &cache)?;
    Ok((loss, grads))
}

/// Logits `[n][classes]` for `n` samples, computed in chunks.
pub fn logits(spec: &ModelSpec, weights: &WeightState, mask: &NeuronMask, inputs: &[f64]) -> Result<Vec<f64>> {
    let len = spec.input_len();
    if len == 0 || inputs.len() % len != 0 {
        return Err(Error::Shape(format!("input length {} is not a multiple of {len}", inputs.len())));
    }
    let n = inputs.len() / len;
    check_inputs(spec, weights, mask, inputs, n)?;
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(n * spec.class_count);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let (z, _) = run(spec, weights, mask, &inputs[start * len..end * len], end - start, false);
        out.extend_from_slice(&z);
    }
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Top-1 predictions of the unmasked model.
pub fn predict(spec: &ModelSpec, weights: &WeightState, inputs: &[f64]) -> Result<Vec<usize>> {
    let z = logits(spec, weights, &NeuronMask::none(spec), inputs)?;
    Ok(z.chunks(spec.class_count).map(argmax).collect())
}

/// `w - lr * g`, rejecting non-finite gradients.
pub fn sgd_step(weights: &WeightState, grads: &WeightState, lr: f64) -> Result<WeightState> {
    let mut out = weights.clone();
    sgd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(weights: &mut WeightState, grads: &WeightState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if !weights.same_shape(grads) {
        return Err(Error::Shape("gradient shape differs from weights".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to sgd_step".into()));
    }
    for (w, g) in weights.layers.iter_mut().zip(&grads.layers) {
        for (a, b) in w.weights.iter_mut().zip(&g.weights) {
            *a -= lr * b;
        }
        for (a, b) in w.biases.iter_mut().zip(&g.biases) {
            *a -= lr * b;
        }
    }
    Ok(())
}
