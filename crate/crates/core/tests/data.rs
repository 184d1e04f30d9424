mod common;

use common::{bicubic_reference, mse, smooth_image, ssim_reference};
use pdan_core::data::{
    bicubic_dataset, bicubic_resize, bicubic_resize_to, contributions, crop, degrade, load_png, modcrop, psnr_plane,
    psnr_y, quantize, rgb_to_ycbcr, sample_batch, sample_batch_with, save_png, ssim_plane, ssim_y, DegradationKind,
    DegradationSpec, Dihedral, YCbCrRange,
};
use pdan_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_plane(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::<f64>::uniform(&[n], 0.0, 1.0, &mut rng).into_data()
}

fn plane_image(values: Vec<f64>, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_vec(&[1, h, w], values.into_iter().map(|v| v as f32).collect()).unwrap()
}

#[test]
fn ramp_downscale_matches_per_pixel_reference() {
    let ramp: Vec<f64> = (0..64).map(|i| ((i / 8) * 8 + i % 8) as f64 / 63.0).collect();
    let img = plane_image(ramp.clone(), 8, 8);
    let down = bicubic_resize(&img, 0.5).unwrap();
    assert_eq!(down.shape(), &[1, 4, 4]);
    let oracle = bicubic_reference(&ramp, 8, 8, 4, 4, 0.5, 0.5);
    for (a, b) in down.data().iter().zip(&oracle) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn random_resizes_match_reference() {
    for (h, w, oh, ow, seed) in [(9, 7, 3, 3, 1), (5, 6, 10, 12, 2), (12, 12, 4, 4, 3), (6, 6, 18, 18, 4)] {
        let src = random_plane(h * w, seed);
        let out = bicubic_resize_to(&plane_image(src.clone(), h, w), oh, ow).unwrap();
        let oracle = bicubic_reference(&src, h, w, oh, ow, oh as f64 / h as f64, ow as f64 / w as f64);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6, "{h}x{w}->{oh}x{ow}: {a} vs {b}");
        }
    }
}

#[test]
fn resize_preserves_constants() {
    for (len, out) in [(10, 5), (10, 3), (7, 21), (13, 4)] {
        let c = contributions(len, out, out as f64 / len as f64);
        for row in &c.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let img = Tensor::full(&[3, 12, 9], 0.42f32);
    let down = bicubic_resize(&img, 1.0 / 3.0).unwrap();
    assert!(down.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
}

#[test]
fn dn_noise_has_the_configured_statistics() {
    let hr = Tensor::full(&[3, 768, 768], 0.5f32);
    let clean = degrade(&hr, &DegradationSpec::new(DegradationKind::Bi, 3)).unwrap();
    let noisy = degrade(&hr, &DegradationSpec::new(DegradationKind::Dn, 3).with_seed(17)).unwrap();
    assert_eq!(noisy.shape(), &[3, 256, 256]);
    let diff: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(a, b)| (a - b) as f64).collect();
    let n = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / n;
    let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma = 30.0 / 255.0;
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    assert!((std / sigma - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn degradations_have_lr_extent_and_bd_differs_from_bi() {
    let hr = smooth_image(48, 48);
    let bi = degrade(&hr, &DegradationSpec::new(DegradationKind::Bi, 3)).unwrap();
    let bd = degrade(&hr, &DegradationSpec::new(DegradationKind::Bd, 3)).unwrap();
    assert_eq!(bi.shape(), &[3, 16, 16]);
    assert_eq!(bd.shape(), &[3, 16, 16]);
    assert_ne!(bi, bd);
    let again = degrade(&hr, &DegradationSpec::new(DegradationKind::Dn, 3).with_seed(5)).unwrap();
    assert_eq!(again, degrade(&hr, &DegradationSpec::new(DegradationKind::Dn, 3).with_seed(5)).unwrap());
}

#[test]
fn sampled_patches_are_aligned() {
    let data = bicubic_dataset(vec![("a".into(), smooth_image(96, 96))], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = sample_batch_with(&data, 4, 16, false, &mut rng).unwrap();
    for (k, origin) in batch.origins.iter().enumerate() {
        assert_eq!(origin.augment, Dihedral::IDENTITY);
        let hr = Tensor::from_vec(&[3, 32, 32], batch.hr.data()[k * 3 * 1024..(k + 1) * 3 * 1024].to_vec()).unwrap();
        let lr = &batch.lr.data()[k * 3 * 256..(k + 1) * 3 * 256];
        let redone = bicubic_resize(&hr, 0.5).unwrap();
        for c in 0..3 {
            for y in 3..13 {
                for x in 3..13 {
                    let i = (c * 16 + y) * 16 + x;
                    assert!((redone.data()[i] - lr[i]).abs() < 1e-3);
                }
            }
        }
        let direct = crop(&data.pairs[0].lr, origin.lr_y, origin.lr_x, 16, 16).unwrap();
        assert_eq!(direct.data(), lr);
    }
}

#[test]
fn sampling_is_reproducible_and_augments_consistently() {
    let data = bicubic_dataset(vec![("a".into(), smooth_image(40, 40))], 2).unwrap();
    let a = sample_batch(&data, 8, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_batch(&data, 8, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    for (k, o) in a.origins.iter().enumerate() {
        let lr = Tensor::from_vec(&[3, 8, 8], a.lr.data()[k * 192..(k + 1) * 192].to_vec()).unwrap();
        let plain = crop(&data.pairs[0].lr, o.lr_y, o.lr_x, 8, 8).unwrap();
        assert_eq!(o.augment.inverse().apply(&lr).unwrap(), plain);
    }
}

#[test]
fn too_small_images_are_skipped_not_fatal() {
    let data = bicubic_dataset(
        vec![("big".into(), smooth_image(40, 40)), ("tiny".into(), smooth_image(8, 8))],
        2,
    )
    .unwrap();
    let batch = sample_batch(&data, 4, 12, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(batch.skipped, vec!["tiny".to_string()]);
    assert!(batch.origins.iter().all(|o| o.image == 0));
    let err = sample_batch(&data, 4, 30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn dihedral_transforms_invert() {
    let img = Tensor::<f32>::from_fn(&[3, 4, 6], |i| i as f32);
    for t in Dihedral::all() {
        let out = t.apply(&img).unwrap();
        let expect = if t.quarter_turns() % 2 == 1 { [3, 6, 4] } else { [3, 4, 6] };
        assert_eq!(out.shape(), &expect);
        assert_eq!(t.inverse().apply(&out).unwrap(), img);
    }
    assert_eq!(Dihedral::all().count(), 8);
}

#[test]
fn ycbcr_reference_points() {
    let img = Tensor::<f32>::from_vec(&[3, 1, 3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let y = rgb_to_ycbcr(&img, YCbCrRange::Studio).unwrap();
    let d = y.data();
    assert!((d[0] as f64 - 235.0 / 255.0).abs() < 1e-6);
    assert!((d[1] as f64 - 16.0 / 255.0).abs() < 1e-6);
    assert!((d[2] as f64 - (16.0 + 65.481) / 255.0).abs() < 1e-6);
    // Neutral grey has centred chroma.
    assert!((d[3] as f64 - 128.0 / 255.0).abs() < 1e-6 && (d[6] as f64 - 128.0 / 255.0).abs() < 1e-6);
    let full = rgb_to_ycbcr(&img, YCbCrRange::Full).unwrap();
    assert!((full.data()[0] - 1.0).abs() < 1e-6 && full.data()[1].abs() < 1e-6);
}

#[test]
fn psnr_of_uniform_tenth_is_twenty_db() {
    let a = plane_image(vec![0.25; 400], 20, 20);
    let b = plane_image(vec![0.35; 400], 20, 20);
    let p = psnr_y(&a, &b, 0).unwrap();
    // f32 storage of 0.25 / 0.35 moves the difference by ~1e-8.
    assert!((p - 20.0).abs() < 1e-6, "{p}");
    let exact: Vec<f64> = vec![0.25; 400];
    let shifted: Vec<f64> = exact.iter().map(|v| v + 0.1).collect();
    assert!((psnr_plane(&exact, &shifted).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn psnr_matches_direct_formula() {
    let a = random_plane(1024, 5);
    let b = random_plane(1024, 6);
    let direct = 10.0 * (1.0 / mse(&a, &b)).log10();
    assert!((psnr_plane(&a, &b).unwrap() - direct).abs() < 1e-9);
}

#[test]
fn ssim_matches_sliding_window_reference() {
    let a = random_plane(32 * 32, 7);
    let noise = random_plane(32 * 32, 8);
    let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| 0.8 * x + 0.2 * n).collect();
    let fast = ssim_plane(&a, &b, 32, 32).unwrap();
    let slow = ssim_reference(&a, &b, 32, 32);
    assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    let c = random_plane(32 * 32, 9);
    assert!((ssim_plane(&a, &c, 32, 32).unwrap() - ssim_reference(&a, &c, 32, 32)).abs() < 1e-6);
    assert_eq!(ssim_plane(&a, &a, 32, 32).unwrap(), 1.0);
}

#[test]
fn metrics_shave_borders_and_reject_tiny_planes() {
    let img = smooth_image(30, 30);
    let mut other = img.clone();
    // Damage only the outermost ring; shaving 2 pixels hides it.
    for c in 0..3 {
        for i in 0..30 {
            other.data_mut()[c * 900 + i] = 0.0;
            other.data_mut()[c * 900 + i * 30] = 0.0;
        }
    }
    assert!(psnr_y(&img, &other, 0).unwrap() < 40.0);
    assert_eq!(psnr_y(&img, &other, 2).unwrap(), 100.0);
    assert_eq!(ssim_y(&img, &other, 2).unwrap(), 1.0);
    assert!(ssim_y(&img, &img, 10).is_err());
}

#[test]
fn png_round_trip_and_modcrop() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let img = quantize(&smooth_image(10, 13));
    save_png(&img, &path).unwrap();
    assert_eq!(load_png(&path).unwrap(), img);
    assert_eq!(modcrop(&img, 4).unwrap().shape(), &[3, 8, 12]);
}
