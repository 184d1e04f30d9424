//! Independent reference implementations used as test oracles. Everything
//! here is written with plain loops over `f64` slices and deliberately avoids
//! the library's own kernels.

#![allow(dead_code)]

use pdan_core::arch::{GrowthSchedule, NetworkConfig, ParamStore};

/// Direct convolution: stride 1, zero padding `d (k - 1) / 2`, grouped.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
    groups: usize,
    dilation: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let pad = (dilation * (k - 1) / 2) as isize;
    let cig = c_in / groups;
    let cog = c_out / groups;
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        let g = o / cog;
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ci in 0..cig {
                    let c = g * cig + ci;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + (ky * dilation) as isize - pad;
                            let ix = xx as isize + (kx * dilation) as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = weight[((o * cig + ci) * k + ky) * k + kx];
                            acc += wv * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Expands grouped weights `(c_out, c_in / G, k, k)` to dense
/// `(c_out, c_in, k, k)` with zeros outside each output's own group.
pub fn masked_dense_weight(weight: &[f64], c_in: usize, c_out: usize, k: usize, groups: usize) -> Vec<f64> {
    let cig = c_in / groups;
    let cog = c_out / groups;
    let mut dense = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        let g = o / cog;
        for ci in 0..cig {
            for t in 0..k * k {
                dense[(o * c_in + g * cig + ci) * k * k + t] = weight[(o * cig + ci) * k * k + t];
            }
        }
    }
    dense
}

/// `(mean, max)` over channels at every pixel, stacked as two planes.
pub fn channel_pool_loop(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * h * w];
    for p in 0..h * w {
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            let v = x[ch * h * w + p];
            sum += v;
            if v > max {
                max = v;
            }
        }
        out[p] = sum / c as f64;
        out[h * w + p] = max;
    }
    out
}

fn keys_cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Normalized taps for output sample `o` (0-based) along an axis scaled by
/// `s`, as `(source index, weight)` with edge replication.
fn taps_1d(o: usize, n_in: usize, s: f64) -> Vec<(usize, f64)> {
    let centre = (o as f64 + 0.5) / s - 0.5; // 0-based source coordinate
    let stretch = if s < 1.0 { s } else { 1.0 };
    let reach = 2.0 / stretch;
    let lo = (centre - reach).floor() as i64 - 1;
    let hi = (centre + reach).ceil() as i64 + 1;
    let mut taps: Vec<(usize, f64)> = (lo..=hi)
        .map(|j| {
            let wt = stretch * keys_cubic(stretch * (centre - j as f64));
            (j.clamp(0, n_in as i64 - 1) as usize, wt)
        })
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= total);
    taps
}

/// Per-pixel bicubic reference for one plane with axis scales `sy`, `sx`.
pub fn bicubic_reference(src: &[f64], h: usize, w: usize, oh: usize, ow: usize, sy: f64, sx: f64) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let ty = taps_1d(y, h, sy);
        for x in 0..ow {
            let tx = taps_1d(x, w, sx);
            let mut acc = 0.0;
            for &(iy, wy) in &ty {
                for &(ix, wx) in &tx {
                    acc += wy * wx * src[iy * w + ix];
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s / a.len() as f64
}

/// SSIM with an explicitly built 11x11 Gaussian window evaluated at every
/// fully contained window position.
pub fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let n = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            win[i * n + j] = v;
            total += v;
        }
    }
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = (y + i) * w + x + j;
                    ma += win[i * n + j] * a[k];
                    mb += win[i * n + j] * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = (y + i) * w + x + j;
                    va += win[i * n + j] * (a[k] - ma).powi(2);
                    vb += win[i * n + j] * (b[k] - mb).powi(2);
                    cov += win[i * n + j] * (a[k] - ma) * (b[k] - mb);
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Scalar Adam on `f(w) = w^2`; returns `w` after each step.
pub fn scalar_adam_square(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut path = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        path.push(w);
    }
    path
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Spatial arm on a `a x b x c` array (channels first) using inference-mode
/// batch norm from the stored running statistics.
fn spatial_arm(x: &[f64], a: usize, b: usize, c: usize, params: &ParamStore<f64>, prefix: &str, eps: f64) -> Vec<f64> {
    let get = |n: &str| params.by_name(&format!("{prefix}.{n}")).unwrap().data().to_vec();
    let pooled = channel_pool_loop(x, a, b, c);
    let z = naive_conv(&pooled, 2, b, c, &get("conv.weight"), 1, 3, 1, 3, None);
    let (gamma, beta) = (get("bn.gamma")[0], get("bn.beta")[0]);
    let (rm, rv) = (get("bn.running_mean")[0], get("bn.running_var")[0]);
    let mut out = vec![0.0; a * b * c];
    for i in 0..a {
        for p in 0..b * c {
            let zn = gamma * (z[p] - rm) / (rv + eps).sqrt() + beta;
            out[i * b * c + p] = x[i * b * c + p] * sigmoid(zn);
        }
    }
    out
}

/// Four-branch joint attention over a `C x H x W` input, transcribed
/// branch by branch. Parameters use the `attention.*` layout.
pub fn joint_attention_oracle(x: &[f64], c: usize, h: usize, w: usize, params: &ParamStore<f64>, eps: f64) -> Vec<f64> {
    let get = |n: &str| params.by_name(n).unwrap().data().to_vec();
    let down = get("attention.channel.down.weight");
    let up = get("attention.channel.up.weight");
    let hidden = down.len() / c;

    // Channel branch.
    let gap: Vec<f64> = (0..c).map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64).collect();
    let z: Vec<f64> = (0..hidden)
        .map(|j| (0..c).map(|ch| down[j * c + ch] * gap[ch]).sum::<f64>().max(0.0))
        .collect();
    let cw: Vec<f64> = (0..c).map(|ch| sigmoid((0..hidden).map(|j| up[ch * hidden + j] * z[j]).sum())).collect();
    let branch1: Vec<f64> = (0..c * h * w).map(|i| x[i] * cw[i / (h * w)]).collect();

    // Spatial branch.
    let branch2 = spatial_arm(x, c, h, w, params, "attention.spatial_hw", eps);

    // Channel and height swapped: x'[h][c][w].
    let mut xp = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                xp[(y * c + ch) * w + xx] = x[(ch * h + y) * w + xx];
            }
        }
    }
    let yp = spatial_arm(&xp, h, c, w, params, "attention.cross_ch", eps);
    let mut branch3 = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                branch3[(ch * h + y) * w + xx] = yp[(y * c + ch) * w + xx];
            }
        }
    }

    // Channel and width swapped: x''[w][h][c].
    let mut xq = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                xq[(xx * h + y) * c + ch] = x[(ch * h + y) * w + xx];
            }
        }
    }
    let yq = spatial_arm(&xq, w, h, c, params, "attention.cross_cw", eps);
    let mut branch4 = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                branch4[(ch * h + y) * w + xx] = yq[(xx * h + y) * c + ch];
            }
        }
    }

    (0..c * h * w)
        .map(|i| (branch1[i] + branch2[i] + branch3[i] + branch4[i]) / 4.0)
        .collect()
}

/// Tiny full network used for end-to-end gradient checks.
pub fn grad_check_config() -> NetworkConfig {
    NetworkConfig {
        scale: 2,
        num_blocks: 1,
        trunk_channels: 8,
        growth: GrowthSchedule::new(4, 8, 4, 4),
        reduction: 4,
        ..NetworkConfig::default()
    }
}

/// Small network used for the overfitting and resume tests.
pub fn overfit_config() -> NetworkConfig {
    NetworkConfig {
        scale: 2,
        num_blocks: 2,
        trunk_channels: 32,
        growth: GrowthSchedule::new(8, 16, 8, 4),
        reduction: 8,
        ..NetworkConfig::default()
    }
}

/// Smooth synthetic 3 x 48 x 48 test image in [0.2, 0.8].
pub fn smooth_image(h: usize, w: usize) -> pdan_core::Tensor<f32> {
    pdan_core::Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        let y = (i % (h * w)) / w;
        let x = i % w;
        0.5 + 0.3 * ((x as f32 * 0.21 + c as f32).sin() * (y as f32 * 0.17).cos())
    })
}

/// Overfitting schedule: one 24x24 LR patch per step, augmentation on.
pub fn overfit_train_config() -> pdan_core::train::TrainConfig {
    pdan_core::train::TrainConfig {
        batch_size: 1,
        patch_size: 24,
        steps_per_epoch: 100,
        epochs: 5,
        ..Default::default()
    }
}

/// Loss of the overfitting run at selected steps, recorded from this
/// implementation. Kernels may round differently on other CPUs, hence the
/// relative tolerance used where these are compared.
pub const OVERFIT_CURVE: [(usize, f64); 5] = [
    (0, 5.014379024505615e-1),
    (1, 4.926755130290985e-1),
    (100, 1.0296982526779175e-1),
    (250, 3.991096839308739e-2),
    (499, 1.829456351697445e-2),
];

/// Trainable parameters of `model` for a gradient check: seeded weights plus
/// random biases and affine terms, so no unit sits exactly on a ReLU kink.
pub fn drawn_params(model: &pdan_core::arch::ModelGraph, seed: u64) -> Vec<pdan_core::Tensor<f64>> {
    use pdan_core::arch::ParamKind;
    use rand::{Rng, SeedableRng};
    let mut m = model.clone();
    m.init_weights(seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    m.params
        .cast::<f64>()
        .entries()
        .iter()
        .filter(|e| e.kind.trainable())
        .map(|e| match e.kind {
            ParamKind::Weight => e.tensor.clone(),
            ParamKind::BnGamma => pdan_core::Tensor::from_fn(e.tensor.shape(), |_| rng.random_range(0.5..1.5)),
            _ => pdan_core::Tensor::from_fn(e.tensor.shape(), |_| rng.random_range(-0.1..0.1)),
        })
        .collect()
}

/// Tape handles for every store entry: trainable entries take `vars` in
/// order, buffers become constants.
pub fn param_handles(
    store: &ParamStore<f64>,
    tape: &mut pdan_core::Tape<f64>,
    vars: &[pdan_core::Var],
) -> Vec<pdan_core::Var> {
    let mut next = vars.iter();
    store
        .entries()
        .iter()
        .map(|e| {
            if e.kind.trainable() {
                *next.next().expect("one variable per trainable entry")
            } else {
                tape.constant(e.tensor.clone())
            }
        })
        .collect()
}
