//! Loss oracle tests: every analytic gradient against central finite
//! differences, and SSIM against an independent straightforward
//! implementation.

mod support;

use splatguide::image::Image;
use splatguide::losses::{
    generated_view_loss, guidance_loss, input_view_loss, l1, perceptual_pyramid, ssim,
    ssim_masked, LossWeights,
};
use splatguide::math::seeded_rng;
use support::*;

fn check_grad(f: &dyn Fn(&Image) -> f64, a: &Image, analytic: &Image, what: &str) {
    let fd = fd_image_grad(f, a, 1e-5);
    let err = max_rel_error(analytic.data(), fd.data());
    assert!(err < 1e-3, "{what}: max relative error {err}");
}

#[test]
fn l1_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(1, 0);
    let a = random_image(16, 16, 3, &mut rng);
    let b = random_image(16, 16, 3, &mut rng);
    let (_, g) = l1(&a, &b, None).unwrap();
    check_grad(&|x| l1(x, &b, None).unwrap().0, &a, &g, "l1");

    let mask = Image::from_fn(16, 16, 1, |x, y, _| if (x + y) % 3 == 0 { 1.0 } else { 0.0 });
    let (_, gm) = l1(&a, &b, Some(&mask)).unwrap();
    check_grad(&|x| l1(x, &b, Some(&mask)).unwrap().0, &a, &gm, "masked l1");
}

#[test]
fn ssim_matches_reference_implementation() {
    let mut rng = seeded_rng(2, 0);
    for _ in 0..3 {
        let a = random_image(20, 14, 3, &mut rng);
        let b = random_image(20, 14, 3, &mut rng);
        let (v, _) = ssim(&a, &b).unwrap();
        let reference = reference_ssim(&a, &b);
        assert!((v - reference).abs() < 1e-6, "{v} vs {reference}");
    }
}

#[test]
fn ssim_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(3, 0);
    let a = random_image(16, 16, 3, &mut rng);
    let b = random_image(16, 16, 3, &mut rng);
    let (_, g) = ssim(&a, &b).unwrap();
    check_grad(&|x| ssim(x, &b).unwrap().0, &a, &g, "ssim");
}

#[test]
fn perceptual_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(4, 0);
    let a = random_image(16, 16, 3, &mut rng);
    let b = random_image(16, 16, 3, &mut rng);
    let (_, g) = perceptual_pyramid(&a, &b, None).unwrap();
    check_grad(&|x| perceptual_pyramid(x, &b, None).unwrap().0, &a, &g, "perceptual");

    let mask = Image::from_fn(16, 16, 1, |x, _, _| if x < 10 { 1.0 } else { 0.0 });
    let (_, gm) = perceptual_pyramid(&a, &b, Some(&mask)).unwrap();
    check_grad(
        &|x| perceptual_pyramid(x, &b, Some(&mask)).unwrap().0,
        &a,
        &gm,
        "masked perceptual",
    );
}

#[test]
fn composite_loss_gradients_match_finite_differences() {
    let mut rng = seeded_rng(5, 0);
    let a = random_image(16, 16, 3, &mut rng);
    let b = random_image(16, 16, 3, &mut rng);
    let w = LossWeights::default();
    let (_, gi) = input_view_loss(&a, &b, &w).unwrap();
    check_grad(&|x| input_view_loss(x, &b, &w).unwrap().0, &a, &gi, "input_view_loss");
    let (_, gg) = generated_view_loss(&a, &b, &w).unwrap();
    check_grad(&|x| generated_view_loss(x, &b, &w).unwrap().0, &a, &gg, "generated_view_loss");
}

#[test]
fn guidance_loss_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(6, 0);
    let frames = 2usize;
    let s: Vec<Image> = (0..frames).map(|_| random_image(16, 16, 3, &mut rng)).collect();
    let m: Vec<Image> = (0..frames)
        .map(|i| {
            Image::from_fn(16, 16, 1, |x, y, _| if (x + y + i) % 2 == 0 { 1.0 } else { 0.0 })
        })
        .collect();
    let x: Vec<Image> = (0..frames).map(|_| random_image(16, 16, 3, &mut rng)).collect();
    let w = LossWeights::default();
    let (_, grads) = guidance_loss(&s, &m, &x, &w).unwrap();
    for j in 0..frames {
        let s_ref = &s;
        let m_ref = &m;
        let x_ref = &x;
        let f = move |img: &Image| {
            let mut xs = x_ref.clone();
            xs[j] = img.clone();
            guidance_loss(s_ref, m_ref, &xs, &w).unwrap().0
        };
        check_grad(&f, &x[j], &grads[j], &format!("guidance_loss frame {j}"));
    }
}

#[test]
fn masked_ssim_agrees_with_full_when_mask_is_ones() {
    let mut rng = seeded_rng(7, 0);
    let a = random_image(20, 20, 3, &mut rng);
    let b = random_image(20, 20, 3, &mut rng);
    let ones = Image::constant(20, 20, 1, 1.0);
    let (full, _) = ssim(&a, &b).unwrap();
    let masked = ssim_masked(&a, &b, Some(&ones)).unwrap();
    assert!((full - masked).abs() < 1e-12);
    // Empty mask yields NaN (no windows selected).
    let zeros = Image::zeros(20, 20, 1);
    assert!(ssim_masked(&a, &b, Some(&zeros)).unwrap().is_nan());
}

#[test]
fn masking_removes_exactly_those_pixels() {
    // Zeroing a mask region removes exactly those pixels' contribution:
    // sum-form identity between masked and full L1.
    let mut rng = seeded_rng(8, 0);
    let a = random_image(12, 12, 3, &mut rng);
    let b = random_image(12, 12, 3, &mut rng);
    let mask = Image::from_fn(12, 12, 1, |x, _, _| if x < 6 { 1.0 } else { 0.0 });
    let inv = mask.map(|v| 1.0 - v);
    let (full, _) = l1(&a, &b, None).unwrap();
    let (left, _) = l1(&a, &b, Some(&mask)).unwrap();
    let (right, _) = l1(&a, &b, Some(&inv)).unwrap();
    // Means recombine with the pixel counts.
    let recombined = 0.5 * left + 0.5 * right;
    assert!((full - recombined).abs() < 1e-12);
}
