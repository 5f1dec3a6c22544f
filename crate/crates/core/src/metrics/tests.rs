use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::imaging::ImageTensor;

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor<f64> {
    ImageTensor::new(c, h, w, (0..c * h * w).map(|_| rng.gen()).collect()).unwrap()
}

fn noisy(img: &ImageTensor<f64>, sigma: f64, seed: u64) -> ImageTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ImageTensor::from_clamped(img.channels(), img.height(), img.width(), data).unwrap()
}

#[test]
fn psnr_of_identical_images_is_infinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_image(&mut rng, 3, 8, 8);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_uniform_offset_is_20_db() {
    let a = ImageTensor::<f64>::filled(1, 4, 4, 0.3).unwrap();
    let b = ImageTensor::<f64>::filled(1, 4, 4, 0.4).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn psnr_shape_mismatch() {
    let a = ImageTensor::<f64>::filled(1, 4, 4, 0.3).unwrap();
    let b = ImageTensor::<f64>::filled(1, 4, 5, 0.3).unwrap();
    assert!(matches!(psnr(&a, &b), Err(crate::Error::ShapeMismatch(_))));
}

#[test]
fn ssim_self_similarity_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 3, 20, 24);
    assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_constant_images_reduce_to_luminance() {
    let a = ImageTensor::<f64>::filled(1, 16, 16, 0.2).unwrap();
    let b = ImageTensor::<f64>::filled(1, 16, 16, 0.7).unwrap();
    let expected = (2.0 * 0.2 * 0.7 + 1e-4) / (0.2f64.powi(2) + 0.7f64.powi(2) + 1e-4);
    let got = ssim(&a, &b, &SsimParams::default()).unwrap();
    assert!((got - expected).abs() < 1e-12);
    assert!((got - 0.5284).abs() < 1e-4);
}

#[test]
fn ssim_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = SsimParams::default();
    for _ in 0..50 {
        let a = random_image(&mut rng, 1, 16, 18);
        let b = random_image(&mut rng, 1, 16, 18);
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab <= 1.0);
    }
}

#[test]
fn ssim_rejects_small_images() {
    let a = ImageTensor::<f64>::filled(1, 10, 30, 0.2).unwrap();
    assert!(matches!(
        ssim(&a, &a, &SsimParams::default()),
        Err(crate::Error::ImageTooSmall { .. })
    ));
}

#[test]
fn ms_ssim_self_similarity_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_image(&mut rng, 3, 64, 64);
    let p = MsSsimParams::for_side(SsimParams::default(), 64).unwrap();
    assert_eq!(p.scales(), 3);
    assert!((ms_ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn single_scale_ms_ssim_equals_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_image(&mut rng, 3, 24, 24);
    let b = noisy(&a, 0.05, 9);
    let base = SsimParams::default();
    let single = MsSsimParams::single_scale(base.clone()).unwrap();
    let x = ms_ssim(&a, &b, &single).unwrap();
    let y = ssim(&a, &b, &base).unwrap();
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn ms_ssim_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Smooth base image so the noise dominates structure changes.
    let mut data = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            data.push(0.5 + 0.3 * ((x as f64) / 9.0).sin() * ((y as f64) / 7.0).cos() + 0.01 * rng.gen::<f64>());
        }
    }
    let a = ImageTensor::new(1, 64, 64, data).unwrap();
    let p = MsSsimParams::for_side(SsimParams::default(), 64).unwrap();
    let values: Vec<f64> = [0.02, 0.05, 0.1]
        .iter()
        .map(|&s| ms_ssim(&a, &noisy(&a, s, 17), &p).unwrap())
        .collect();
    assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
}

#[test]
fn ms_ssim_params_validation() {
    let base = SsimParams::default();
    assert!(MsSsimParams::new(base.clone(), vec![]).is_err());
    assert!(MsSsimParams::new(base.clone(), vec![0.2; 6]).is_err());
    assert!(MsSsimParams::new(base.clone(), vec![0.5, -0.1]).is_err());
    let p = MsSsimParams::new(base.clone(), vec![2.0, 2.0]).unwrap();
    assert_eq!(p.scale_weights, vec![0.5, 0.5]);
    assert!(MsSsimParams::for_side(base.clone(), 10).is_err());
    let five = MsSsimParams::default();
    let a = ImageTensor::<f64>::filled(1, 64, 64, 0.5).unwrap();
    assert!(ms_ssim(&a, &a, &five).is_err());
    let bad = SsimParams { window_side: 4, ..base };
    assert!(bad.validate().is_err());
}

#[test]
fn kappa_examples() {
    let diag = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 2]]).unwrap();
    assert!((cohens_kappa(&diag).unwrap() - 1.0).abs() < 1e-12);
    let chance = ConfusionMatrix::from_rows(&[vec![25, 25], vec![25, 25]]).unwrap();
    assert!(cohens_kappa(&chance).unwrap().abs() < 1e-12);
    let m = ConfusionMatrix::from_rows(&[vec![20, 5], vec![10, 15]]).unwrap();
    assert!((cohens_kappa(&m).unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn kappa_degenerate_matrix() {
    let m = ConfusionMatrix::from_rows(&[vec![9, 0], vec![0, 0]]).unwrap();
    assert!(matches!(cohens_kappa(&m), Err(crate::Error::Degenerate(_))));
    assert!(ConfusionMatrix::from_rows(&[vec![0, 0], vec![0, 0]]).is_err());
}

#[test]
fn kappa_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let counts: Vec<u64> = (0..9).map(|_| rng.gen_range(0..30)).collect();
        let Ok(m) = ConfusionMatrix::new(3, counts.clone()) else { continue };
        let scaled = ConfusionMatrix::new(3, counts.iter().map(|c| c * 7).collect()).unwrap();
        if let (Ok(a), Ok(b)) = (cohens_kappa(&m), cohens_kappa(&scaled)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn auroc_examples() {
    let perfect = ScoredLabels::new(vec![(0.9, true), (0.8, true), (0.2, false), (0.1, false)]);
    assert_eq!(auroc(&perfect).unwrap(), 1.0);
    let ties = ScoredLabels::new(vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)]);
    assert_eq!(auroc(&ties).unwrap(), 0.5);
    let mixed = ScoredLabels::new(vec![(0.9, true), (0.8, false), (0.7, true), (0.6, false)]);
    assert!((auroc(&mixed).unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn auroc_single_class_is_an_error() {
    let s = ScoredLabels::new(vec![(0.9, true), (0.1, true)]);
    assert!(matches!(auroc(&s), Err(crate::Error::Degenerate(_))));
}

#[test]
fn auroc_negated_scores_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let items: Vec<(f64, bool)> = (0..40)
            .map(|_| ((rng.gen_range(0..10) as f64) / 10.0, rng.gen_bool(0.4)))
            .collect();
        let s = ScoredLabels::new(items.clone());
        let neg = ScoredLabels::new(items.iter().map(|&(x, p)| (-x, p)).collect());
        if let (Ok(a), Ok(b)) = (auroc(&s), auroc(&neg)) {
            assert!((a - (1.0 - b)).abs() < 1e-12);
        }
    }
}

#[test]
fn converted_ratio_examples() {
    use QualityLabel::*;
    assert_eq!(converted_ratio(&[Good, Good]).unwrap(), 1.0);
    assert_eq!(converted_ratio(&[Reject, Usable]).unwrap(), 0.0);
    let mixed = [Good, Reject, Good, Usable, Reject, Good, Reject, Reject];
    assert_eq!(converted_ratio(&mixed).unwrap(), 0.375);
    assert!(converted_ratio(&[]).is_err());
}

#[test]
fn quality_label_parsing() {
    assert_eq!("GOOD".parse::<QualityLabel>().unwrap(), QualityLabel::Good);
    assert_eq!(" Reject ".parse::<QualityLabel>().unwrap(), QualityLabel::Reject);
    assert!("meh".parse::<QualityLabel>().is_err());
}

#[test]
fn csv_round_trips() {
    let m = ConfusionMatrix::from_rows(&[vec![20, 5], vec![10, 15]]).unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "20,5\n10,15\n");
    assert_eq!(ConfusionMatrix::read_csv(&buf[..]).unwrap(), m);

    let s = ScoredLabels::new(vec![(0.25, true), (-1.5, false)]);
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    assert_eq!(ScoredLabels::read_csv(&buf[..]).unwrap(), s);
    assert!(ScoredLabels::read_csv("score,positive\n0.1,maybe\n".as_bytes()).is_err());
}

#[test]
fn macro_auroc_skips_absent_classes() {
    let scores = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0], vec![0.6, 0.4, 0.0]];
    let truth = vec![0, 1, 0];
    assert_eq!(macro_auroc(&scores, &truth).unwrap(), 1.0);
}
