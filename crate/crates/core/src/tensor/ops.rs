//! Elementwise, normalization, pooling, layout and reduction kernels.
//!
//! Reductions run serially in row-major order per output element.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn with_rank_of<T: Scalar>(like: &Tensor<T>, n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Tensor<T> {
    let shape: Vec<usize> = if like.rank() == 3 && n == 1 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    };
    Tensor::from_vec(&shape, data).expect("kernel output shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

impl Pointwise {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Pointwise::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Pointwise::Sigmoid => {
                // Split on sign so exp never overflows.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y`; relu'(0) = 0.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Pointwise::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Pointwise::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn pointwise<T: Scalar>(x: &Tensor<T>, kind: Pointwise) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

/// Running mean and variance tracked by a batch norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Training,
    Inference,
}

/// Learnable affine parameters plus running statistics of a 2-D batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    /// `None` until the first training step when created with [`BatchNormState::untracked`].
    pub running: Option<RunningStats<T>>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BatchNormMode,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma = 1, beta = 0, running stats (0, 1), momentum 0.1, eps 1e-5.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running: Some(RunningStats {
                mean: vec![T::zero(); channels],
                var: vec![T::one(); channels],
            }),
            momentum: 0.1,
            eps: 1e-5,
            mode: BatchNormMode::Training,
        }
    }

    /// Same as [`BatchNormState::new`] but with no running statistics yet.
    pub fn untracked(channels: usize) -> Self {
        BatchNormState {
            running: None,
            ..Self::new(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one set of batch statistics into the running estimates.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::of(self.momentum);
        let keep = T::one() - m;
        let running = self.running.get_or_insert_with(|| RunningStats {
            mean: vec![T::zero(); batch_mean.len()],
            var: vec![T::one(); batch_var.len()],
        });
        for (r, &b) in running.mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in running.var.iter_mut().zip(batch_var) {
            *r = keep * *r + m * b;
        }
    }
}

/// Forward result of a batch norm, keeping what the backward pass needs.
#[derive(Clone, Debug)]
pub struct BnForward<T: Scalar> {
    pub output: Tensor<T>,
    /// Statistics used for normalization (batch or running).
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Stateless batch norm. With `running = None` the batch statistics
/// (biased variance) normalize the input.
pub fn batchnorm2d_with<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
    running: Option<&RunningStats<T>>,
) -> Result<BnForward<T>> {
    let [n, c, h, w] = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            format!("input has {c} channels, affine has {}", gamma.len()),
        ));
    }
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let (mean, var) = match running {
        Some(r) => (r.mean.clone(), r.var.clone()),
        None => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    let p = &x.data()[(ni * c + ch) * plane..][..plane];
                    s = p.iter().fold(s, |a, &v| a + v);
                }
                let mu = s / count;
                let mut q = T::zero();
                for ni in 0..n {
                    let p = &x.data()[(ni * c + ch) * plane..][..plane];
                    q = p.iter().fold(q, |a, &v| a + (v - mu) * (v - mu));
                }
                mean[ch] = mu;
                var[ch] = q / count;
            }
            (mean, var)
        }
    };
    let eps_t = T::of(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut out = x.data().to_vec();
    for ni in 0..n {
        for ch in 0..c {
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for v in &mut out[(ni * c + ch) * plane..][..plane] {
                *v = (*v - mu) * is * g + b;
            }
        }
    }
    let output = Tensor::from_vec(x.shape(), out)?;
    output.ensure_finite("batchnorm2d")?;
    Ok(BnForward {
        output,
        mean,
        var,
        inv_std,
    })
}

/// Batch norm driven by a [`BatchNormState`]; training mode updates the
/// running statistics with the batch's biased variance.
pub fn batchnorm2d<T: Scalar>(x: &Tensor<T>, state: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    match state.mode {
        BatchNormMode::Training => {
            let fwd = batchnorm2d_with(x, &state.gamma, &state.beta, state.eps, None)?;
            state.update_running(&fwd.mean, &fwd.var);
            Ok(fwd.output)
        }
        BatchNormMode::Inference => {
            let running = state.running.as_ref().ok_or(Error::BatchNormUninitialized)?;
            Ok(batchnorm2d_with(x, &state.gamma, &state.beta, state.eps, Some(running))?.output)
        }
    }
}

/// Returns `(dx, dgamma, dbeta)`. `batch_stats` selects whether the
/// normalization statistics depended on `x`.
pub fn batchnorm2d_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mu, is) = (mean[ch], inv_std[ch]);
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in 0..plane {
                let g = dy.data()[base + i];
                dbeta[ch] = dbeta[ch] + g;
                dgamma[ch] = dgamma[ch] + g * (x.data()[base + i] - mu) * is;
            }
        }
    }
    let mut dx = vec![T::zero(); x.len()];
    for ch in 0..c {
        let (mu, is, gm) = (mean[ch], inv_std[ch], gamma.data()[ch]);
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in 0..plane {
                let g = dy.data()[base + i];
                dx[base + i] = if batch_stats {
                    let xhat = (x.data()[base + i] - mu) * is;
                    gm * is / count * (count * g - dbeta[ch] - xhat * dgamma[ch])
                } else {
                    g * gm * is
                };
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    /// Spatial mean per channel, `C x 1 x 1`.
    Gap,
    /// Spatial max per channel, `C x 1 x 1`.
    Gmp,
    /// Per-pixel (mean, max) across channels, `2 x H x W`.
    ChannelPool,
}

/// Argmax positions recorded by max reductions (first maximum wins).
#[derive(Clone, Debug, Default)]
pub struct PoolIndices(pub Vec<usize>);

/// Pooling that also returns the argmax bookkeeping for backward.
pub fn reduce_pool_indexed<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    match kind {
        PoolKind::Gap => {
            let inv = T::of(1.0 / plane as f64);
            let data = x
                .data()
                .chunks(plane)
                .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
                .collect();
            Ok((with_rank_of(x, n, c, 1, 1, data), PoolIndices::default()))
        }
        PoolKind::Gmp => {
            let mut idx = Vec::with_capacity(n * c);
            let data = x
                .data()
                .chunks(plane)
                .map(|p| {
                    let mut best = 0;
                    for (i, &v) in p.iter().enumerate() {
                        if v > p[best] {
                            best = i;
                        }
                    }
                    idx.push(best);
                    p[best]
                })
                .collect();
            Ok((with_rank_of(x, n, c, 1, 1, data), PoolIndices(idx)))
        }
        PoolKind::ChannelPool => {
            let inv = T::of(1.0 / c as f64);
            let mut data = vec![T::zero(); n * 2 * plane];
            let mut idx = vec![0usize; n * plane];
            for ni in 0..n {
                let item = &x.data()[ni * c * plane..(ni + 1) * c * plane];
                for p in 0..plane {
                    let mut sum = T::zero();
                    let mut best = 0;
                    for ch in 0..c {
                        let v = item[ch * plane + p];
                        sum = sum + v;
                        if v > item[best * plane + p] {
                            best = ch;
                        }
                    }
                    data[ni * 2 * plane + p] = sum * inv;
                    data[ni * 2 * plane + plane + p] = item[best * plane + p];
                    idx[ni * plane + p] = best;
                }
            }
            Ok((with_rank_of(x, n, 2, h, w, data), PoolIndices(idx)))
        }
    }
}

pub fn reduce_pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<Tensor<T>> {
    Ok(reduce_pool_indexed(x, kind)?.0)
}

/// Gradient of [`reduce_pool`] with respect to its input.
pub fn reduce_pool_backward<T: Scalar>(
    x: &Tensor<T>,
    kind: PoolKind,
    indices: &PoolIndices,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let mut dx = vec![T::zero(); x.len()];
    match kind {
        PoolKind::Gap => {
            let inv = T::of(1.0 / plane as f64);
            for (k, chunk) in dx.chunks_mut(plane).enumerate() {
                let g = dy.data()[k] * inv;
                chunk.fill(g);
            }
        }
        PoolKind::Gmp => {
            for (k, &best) in indices.0.iter().enumerate() {
                dx[k * plane + best] = dy.data()[k];
            }
        }
        PoolKind::ChannelPool => {
            return channel_pool_backward(x, indices, dy);
        }
    }
    let _ = (n, c);
    Tensor::from_vec(x.shape(), dx)
}

pub fn channel_pool_backward<T: Scalar>(
    x: &Tensor<T>,
    indices: &PoolIndices,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let inv = T::of(1.0 / c as f64);
    let mut dx = vec![T::zero(); x.len()];
    for ni in 0..n {
        for p in 0..plane {
            let g_mean = dy.data()[ni * 2 * plane + p] * inv;
            let g_max = dy.data()[ni * 2 * plane + plane + p];
            for ch in 0..c {
                dx[(ni * c + ch) * plane + p] = g_mean;
            }
            let best = indices.0[ni * plane + p];
            let k = (ni * c + best) * plane + p;
            dx[k] = dx[k] + g_max;
        }
    }
    Tensor::from_vec(x.shape(), dx)
}

fn validate_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::Permutation(perm.to_vec()));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::Permutation(perm.to_vec()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Inverse of a permutation.
pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    validate_perm(perm, rank)?;
    let in_shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..x.len() {
        out.push(x.data()[offset]);
        // Odometer increment over the output index.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Depth-to-space: `[N,] C s^2 x H x W -> [N,] C x sH x sW`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs, h, w] = x.dims4()?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::Divisibility {
            what: "pixel_shuffle channels".into(),
            value: cs,
            divisor: s * s,
        });
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for co in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src_c = co * s * s + i * s + j;
                    let src = &x.data()[(ni * cs + src_c) * h * w..][..h * w];
                    for y in 0..h {
                        let row = (ni * c + co) * oh * ow + (y * s + i) * ow;
                        for xx in 0..w {
                            out[row + xx * s + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(with_rank_of(x, n, c, oh, ow, out))
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = x.dims4()?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::Divisibility {
            what: "pixel_unshuffle extent".into(),
            value: oh.min(ow),
            divisor: s,
        });
    }
    let (h, w) = (oh / s, ow / s);
    let cs = c * s * s;
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for co in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let dst_c = co * s * s + i * s + j;
                    let dst = (ni * cs + dst_c) * h * w;
                    for y in 0..h {
                        let row = (ni * c + co) * oh * ow + (y * s + i) * ow;
                        for xx in 0..w {
                            out[dst + y * w + xx] = x.data()[row + xx * s + j];
                        }
                    }
                }
            }
        }
    }
    Ok(with_rank_of(x, n, cs, h, w, out))
}

/// Concatenation along the channel axis.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let [n, _, h, w] = first.dims4()?;
    let mut total = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.dims4()?;
        if (xn, xh, xw) != (n, h, w) || x.rank() != first.rank() {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            ));
        }
        total += xc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for ni in 0..n {
        for x in xs {
            let xc = x.dims4()?[1];
            out.extend_from_slice(&x.data()[ni * xc * plane..(ni + 1) * xc * plane]);
        }
    }
    Ok(with_rank_of(first, n, total, h, w, out))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

/// Arithmetic mean of equally shaped tensors (summed in input order).
pub fn mean_of<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::shape("mean", "no inputs"))?;
    let mut acc = (*first).clone();
    for x in &xs[1..] {
        if x.shape() != first.shape() {
            return Err(Error::shape(
                "mean",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            ));
        }
        acc.accumulate(x);
    }
    let k = T::of(xs.len() as f64);
    Ok(acc.map(|v| v / k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Channel,
    Spatial,
}

fn broadcast_kind<T: Scalar>(x: &Tensor<T>, wt: &Tensor<T>) -> Result<Broadcast> {
    let [n, c, h, w] = x.dims4()?;
    let d = wt.dims4()?;
    if d == [n, c, 1, 1] {
        Ok(Broadcast::Channel)
    } else if d == [n, 1, h, w] {
        Ok(Broadcast::Spatial)
    } else {
        Err(Error::shape(
            "mul_broadcast",
            format!("cannot scale {:?} by {:?}", x.shape(), wt.shape()),
        ))
    }
}

/// Scales `x` by per-channel (`C x 1 x 1`) or per-pixel (`1 x H x W`) weights.
pub fn mul_broadcast<T: Scalar>(x: &Tensor<T>, wt: &Tensor<T>) -> Result<Tensor<T>> {
    let kind = broadcast_kind(x, wt)?;
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let mut out = x.data().to_vec();
    for ni in 0..n {
        for ch in 0..c {
            let p = &mut out[(ni * c + ch) * plane..][..plane];
            match kind {
                Broadcast::Channel => {
                    let s = wt.data()[ni * c + ch];
                    p.iter_mut().for_each(|v| *v = *v * s);
                }
                Broadcast::Spatial => {
                    let m = &wt.data()[ni * plane..(ni + 1) * plane];
                    p.iter_mut().zip(m).for_each(|(v, &s)| *v = *v * s);
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Returns `(dx, dweights)` for [`mul_broadcast`].
pub fn mul_broadcast_backward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let kind = broadcast_kind(x, wt)?;
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let dx = mul_broadcast(dy, wt)?;
    let mut dw = vec![T::zero(); wt.len()];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * plane;
            for i in 0..plane {
                let g = dy.data()[base + i] * x.data()[base + i];
                let k = match kind {
                    Broadcast::Channel => ni * c + ch,
                    Broadcast::Spatial => ni * plane + i,
                };
                dw[k] = dw[k] + g;
            }
        }
    }
    Ok((dx, Tensor::from_vec(wt.shape(), dw)?))
}

/// Mean absolute error over every element of the batch.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let s = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |a, (&p, &t)| a + (p - t).abs());
    Ok(s / T::of(pred.len() as f64))
}

/// Subgradient of [`l1_loss`] with respect to `pred`, zero at ties.
pub fn l1_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::of(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape as pred")
}
