mod common;

use common::{channel_pool_loop, masked_dense_weight, naive_conv};
use pdan_core::gradcheck::{grad_check, grad_check_resampled, GradCheckConfig};
use pdan_core::tensor::{
    batchnorm2d, conv2d, permute, pixel_shuffle, pixel_unshuffle, reduce_pool, BatchNormMode, BatchNormState,
    PoolKind, RunningStats,
};
use pdan_core::{ConvSpec, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> pdan_core::Result<Var>) -> f64 {
    let report = grad_check(inputs, f, GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{report:?}");
    report.worst_rel_error()
}

/// Gradient check with redraws for ops that have kinks or ties.
fn check_resampled(shapes: &[&[usize]], f: impl Fn(&mut Tape<f64>, &[Var]) -> pdan_core::Result<Var>) {
    let report = grad_check_resampled(
        |attempt| {
            shapes
                .iter()
                .enumerate()
                .map(|(i, s)| rand_t(s, 1000 * attempt + i as u64))
                .collect()
        },
        f,
        GradCheckConfig::default(),
        10,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn dilated_conv_matches_direct_sum() {
    let x = rand_t(&[1, 2, 7, 7], 1);
    let w = rand_t(&[3, 2, 3, 3], 2);
    let spec = ConvSpec::new(2, 3, 3).with_dilation(3);
    let y = conv2d(&x, &spec, &w, None).unwrap();
    let oracle = naive_conv(x.data(), 2, 7, 7, w.data(), 3, 3, 1, 3, None);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dilated_taps_sit_three_apart() {
    // A single tap in the kernel shifts the input by (ky - 1) * 3, (kx - 1) * 3.
    let x = Tensor::<f64>::from_fn(&[1, 1, 7, 7], |i| i as f64);
    for ky in 0..3 {
        for kx in 0..3 {
            let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
            w.data_mut()[ky * 3 + kx] = 1.0;
            let y = conv2d(&x, &ConvSpec::new(1, 1, 3).with_dilation(3), &w, None).unwrap();
            let (dy, dx) = (3 * ky as isize - 3, 3 * kx as isize - 3);
            for r in 0..7isize {
                for c in 0..7isize {
                    let (sr, sc) = (r + dy, c + dx);
                    let expected = if (0..7).contains(&sr) && (0..7).contains(&sc) {
                        (sr * 7 + sc) as f64
                    } else {
                        0.0
                    };
                    assert_eq!(y.data()[(r * 7 + c) as usize], expected);
                }
            }
        }
    }
}

#[test]
fn grouped_conv_equals_masked_dense_on_200_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let groups = rng.random_range(1..=4usize);
        let c_in = groups * rng.random_range(1..=16 / groups);
        let c_out = groups * rng.random_range(1..=16 / groups);
        let k = [1, 3][rng.random_range(0..2)];
        let dilation = rng.random_range(1..=3usize);
        let (h, w) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
        let x = rand_t(&[1, c_in, h, w], 10_000 + case);
        let wt = rand_t(&[c_out, c_in / groups, k, k], 20_000 + case);
        let bias = rand_t(&[c_out], 30_000 + case);
        let spec = ConvSpec::new(c_in, c_out, k).with_groups(groups).with_dilation(dilation);
        let grouped = conv2d(&x, &spec, &wt, Some(&bias)).unwrap();

        let dense_w = masked_dense_weight(wt.data(), c_in, c_out, k, groups);
        let dense_t = Tensor::from_vec(&[c_out, c_in, k, k], dense_w.clone()).unwrap();
        let dense_spec = ConvSpec::new(c_in, c_out, k).with_dilation(dilation);
        let dense = conv2d(&x, &dense_spec, &dense_t, Some(&bias)).unwrap();
        let direct = naive_conv(x.data(), c_in, h, w, &dense_w, c_out, k, 1, dilation, Some(bias.data()));

        for i in 0..grouped.len() {
            let g = grouped.data()[i];
            for r in [dense.data()[i], direct[i]] {
                assert!((g - r).abs() <= 1e-6 * r.abs().max(1e-12), "case {case}: {g} vs {r}");
            }
        }
    }
}

#[test]
fn grouped_conv_in_f32_tracks_f64_oracle() {
    let x = rand_t(&[1, 8, 6, 6], 3);
    let w = rand_t(&[8, 2, 3, 3], 4);
    let spec = ConvSpec::new(8, 8, 3).with_groups(4);
    let y = conv2d(&x.cast::<f32>(), &spec, &w.cast::<f32>(), None).unwrap();
    let oracle = naive_conv(x.data(), 8, 6, 6, w.data(), 8, 3, 4, 1, None);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

#[test]
fn conv_is_linear() {
    let spec = ConvSpec::new(4, 6, 3).with_groups(2).with_dilation(2);
    let w = rand_t(&[6, 2, 3, 3], 5);
    let (x, y) = (rand_t(&[2, 4, 5, 5], 6), rand_t(&[2, 4, 5, 5], 7));
    let (a, b) = (0.7, -1.3);
    let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
    let lhs = conv2d(&mix, &spec, &w, None).unwrap();
    let cx = conv2d(&x, &spec, &w, None).unwrap();
    let cy = conv2d(&y, &spec, &w, None).unwrap();
    let rhs = cx.zip_map(&cy, |p, q| a * p + b * q).unwrap();
    for (l, r) in lhs.data().iter().zip(rhs.data()) {
        assert!((l - r).abs() < 1e-12);
    }
}

#[test]
fn channel_pool_matches_loop() {
    let x = rand_t(&[1, 3, 2, 2], 8);
    let y = reduce_pool(&x, PoolKind::ChannelPool).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 2]);
    for (a, b) in y.data().iter().zip(channel_pool_loop(x.data(), 3, 2, 2)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn running_stats_follow_momentum_recurrence() {
    let mut state = BatchNormState::<f64>::new(1);
    state.update_running(&[5.0], &[4.0]);
    let r = state.running.as_ref().unwrap();
    assert!((r.mean[0] - 0.5).abs() < 1e-15);
    assert!((r.var[0] - 1.3).abs() < 1e-15);
}

#[test]
fn batchnorm_inference_uses_running_stats() {
    let x = rand_t(&[2, 2, 3, 3], 9);
    let mut state = BatchNormState::<f64>::new(2);
    state.running = Some(RunningStats {
        mean: vec![0.5, -1.0],
        var: vec![4.0, 0.25],
    });
    state.mode = BatchNormMode::Inference;
    let y = batchnorm2d(&x, &mut state).unwrap();
    for (i, v) in y.data().iter().enumerate() {
        let c = (i / 9) % 2;
        let (m, var) = [(0.5, 4.0), (-1.0, 0.25)][c];
        assert!((v - (x.data()[i] - m) / (var + 1e-5f64).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn shuffle_and_permute_round_trips_are_bit_exact() {
    let x = Tensor::<f32>::from_fn(&[2, 12, 3, 5], |i| (i as f32 * 0.37).sin());
    for s in [1, 2] {
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&x, s).unwrap(), s).unwrap(), x);
    }
    for perm in [[0, 2, 1, 3], [0, 3, 2, 1], [0, 2, 3, 1]] {
        let inv = pdan_core::tensor::invert_perm(&perm);
        assert_eq!(permute(&permute(&x, &perm).unwrap(), &inv).unwrap(), x);
    }
}

#[test]
fn identical_calls_are_bit_identical() {
    let x = rand_t(&[1, 16, 8, 8], 10).cast::<f32>();
    let w = rand_t(&[32, 8, 3, 3], 11).cast::<f32>();
    let spec = ConvSpec::new(16, 32, 3).with_groups(2);
    let a = conv2d(&x, &spec, &w, None).unwrap();
    let b = conv2d(&x, &spec, &w, None).unwrap();
    assert_eq!(a.data(), b.data());
}

// Gradient checks, one per operation.

#[test]
fn grad_conv2d_is_near_exact() {
    let spec = ConvSpec::new(4, 6, 3).with_groups(2).with_dilation(2);
    let err = check(&[rand_t(&[2, 4, 5, 5], 1), rand_t(&[6, 2, 3, 3], 2), rand_t(&[6], 3)], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), spec)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn grad_sigmoid_chain() {
    let cfg = GradCheckConfig {
        step: 1e-5,
        ..Default::default()
    };
    let report = grad_check(
        &[rand_t(&[1, 2, 3, 3], 4)],
        |t, v| {
            let a = t.sigmoid(v[0])?;
            let b = t.sigmoid(a)?;
            t.sigmoid(b)
        },
        cfg,
    )
    .unwrap();
    assert!(report.passed() && report.worst_rel_error() < 1e-6, "{report:?}");
}

#[test]
fn grad_relu() {
    check_resampled(&[&[1, 3, 4, 4]], |t, v| t.relu(v[0]));
}

#[test]
fn grad_batchnorm_training() {
    check(&[rand_t(&[2, 3, 3, 3], 5), rand_t(&[3], 6), rand_t(&[3], 7)], |t, v| {
        Ok(t.batchnorm(v[0], v[1], v[2], 1e-5, None)?.0)
    });
}

#[test]
fn grad_batchnorm_inference() {
    let running = RunningStats {
        mean: vec![0.1, -0.2],
        var: vec![0.5, 2.0],
    };
    check(&[rand_t(&[2, 2, 3, 3], 8), rand_t(&[2], 9), rand_t(&[2], 10)], |t, v| {
        Ok(t.batchnorm(v[0], v[1], v[2], 1e-5, Some(&running))?.0)
    });
}

#[test]
fn grad_pools() {
    for kind in [PoolKind::Gap, PoolKind::Gmp, PoolKind::ChannelPool] {
        check_resampled(&[&[2, 3, 4, 4]], move |t, v| t.pool(v[0], kind));
    }
}

#[test]
fn grad_permute_and_shuffle() {
    check(&[rand_t(&[1, 2, 3, 4], 11)], |t, v| t.permute(v[0], &[0, 3, 2, 1]));
    check(&[rand_t(&[1, 2, 3, 4], 12)], |t, v| t.permute(v[0], &[0, 2, 1, 3]));
    check(&[rand_t(&[1, 8, 2, 3], 13)], |t, v| t.pixel_shuffle(v[0], 2));
}

#[test]
fn grad_combinations() {
    let shapes = [rand_t(&[1, 2, 3, 3], 14), rand_t(&[1, 3, 3, 3], 15)];
    check(&shapes, |t, v| t.concat(&[v[0], v[1]]));
    let same = [rand_t(&[1, 2, 3, 3], 16), rand_t(&[1, 2, 3, 3], 17), rand_t(&[1, 2, 3, 3], 18)];
    check(&same, |t, v| t.add(v[0], v[1]));
    check(&same, |t, v| t.mean(&[v[0], v[1], v[2], v[0]]));
    check(&[rand_t(&[2, 3, 4, 4], 19), rand_t(&[2, 3, 1, 1], 20)], |t, v| t.mul_broadcast(v[0], v[1]));
    check(&[rand_t(&[2, 3, 4, 4], 21), rand_t(&[2, 1, 4, 4], 22)], |t, v| t.mul_broadcast(v[0], v[1]));
}

#[test]
fn grad_l1_loss() {
    check_resampled(&[&[1, 2, 3, 3], &[1, 2, 3, 3]], |t, v| t.l1_loss(v[0], v[1]));
}

#[test]
fn grad_projection() {
    let w = rand_t(&[18], 23);
    check(&[rand_t(&[1, 2, 3, 3], 24)], move |t, v| t.project(v[0], w.clone()));
}
