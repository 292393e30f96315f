use std::f64::consts::PI;

use umt_core::data::{render_toy_image, ToySpec};
use umt_core::image_ops::{center_crop, rotate_about_center, GrayImage};
use umt_core::prep::{
    align_and_crop, estimate_orientation, extract_patches, sample_patch_origins, segment,
    trimmed_mean_orientation, PatchSpec, ORIENTATION_STRIDE, ORIENTATION_WINDOW, PATCH_SIDE,
};

/// Sinusoidal ridges running along direction `theta` (from the x axis, y down).
fn ridges(n: usize, theta: f64, period: f64) -> GrayImage {
    let (nx, ny) = (-theta.sin(), theta.cos());
    let c = (n as f64 - 1.0) / 2.0;
    GrayImage::from_fn(n, n, |x, y| {
        let t = (x as f64 - c) * nx + (y as f64 - c) * ny;
        (0.5 + 0.5 * (2.0 * PI * t / period).sin()) as f32
    })
}

/// Distance between two orientations modulo π.
fn axial_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[test]
fn orientation_median_error_over_36_angles() {
    let mut errors: Vec<f64> = (0..36)
        .map(|i| {
            let theta = i as f64 * PI / 36.0;
            let field = estimate_orientation(&ridges(128, theta, 10.0), ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
            assert!(field.coherences.iter().all(|&c| c > 0.9), "angle {theta}");
            let est = trimmed_mean_orientation(&field, 0.1).unwrap();
            axial_error(est, theta)
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = (errors[17] + errors[18]) / 2.0;
    assert!(median.to_degrees() <= 2.0, "median error {}°", median.to_degrees());
}

#[test]
fn rotating_vertical_ridges_by_30_degrees() {
    let rotated = rotate_about_center(&ridges(150, PI / 2.0, 10.0), PI / 6.0).image;
    let crop = center_crop(&rotated, PATCH_SIDE).unwrap();
    let field = estimate_orientation(&crop, ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
    for &a in &field.angles {
        assert!(axial_error(a, PI / 2.0 - PI / 6.0) < 0.06, "block angle {a}");
    }
}

#[test]
fn pre_rotated_patch_is_aligned_vertical() {
    let spec = PatchSpec::default();
    let patch = rotate_about_center(&ridges(150, PI / 2.0, 9.0), 20f64.to_radians()).image;
    let aligned = align_and_crop(&patch, &spec).unwrap();
    let img = GrayImage::new(PATCH_SIDE, PATCH_SIDE, aligned.pixels).unwrap();
    let field = estimate_orientation(&img, ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
    let est = trimmed_mean_orientation(&field, 0.1).unwrap();
    assert!(axial_error(est, PI / 2.0) < 0.05, "residual {est}");
}

fn toy_image(seed: u64) -> GrayImage {
    render_toy_image(&ToySpec::default(), None, seed).0
}

#[test]
fn sampler_is_deterministic_and_respects_foreground() {
    let spec = PatchSpec::default();
    let mask = segment(&toy_image(4), &spec).unwrap();
    let a = sample_patch_origins(&mask, &spec, 77).unwrap();
    let b = sample_patch_origins(&mask, &spec, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), spec.patches_per_image);
    assert_ne!(a, sample_patch_origins(&mask, &spec, 78).unwrap());
    for &(x, y) in &a {
        assert!(x + spec.raw_size <= mask.width() && y + spec.raw_size <= mask.height());
        assert!(mask.window_fraction(x, y, spec.raw_size, spec.raw_size) >= spec.min_foreground_fraction);
    }
}

#[test]
fn realigning_an_aligned_patch_is_nearly_a_no_op() {
    let spec = PatchSpec::default();
    let img = toy_image(8);
    let mask = segment(&img, &spec).unwrap();
    for (x, y) in sample_patch_origins(&mask, &spec, 3).unwrap().into_iter().take(10) {
        let raw = img.crop(x, y, spec.raw_size, spec.raw_size).unwrap();
        let first = align_and_crop(&raw, &spec).unwrap();
        let rotated = rotate_about_center(&raw, f64::from(first.rotation_applied)).image;
        let second = align_and_crop(&rotated, &spec).unwrap();
        assert!(second.rotation_applied.abs() < 0.06, "second rotation {}", second.rotation_applied);
    }
}

#[test]
fn extract_patches_emits_valid_patches() {
    let spec = PatchSpec::default();
    let patches = extract_patches(&toy_image(2), &spec, 5).unwrap();
    assert_eq!(patches.len(), spec.patches_per_image);
    for p in &patches {
        p.validate().unwrap();
        assert!(p.rotation_applied.abs() <= std::f32::consts::FRAC_PI_2 + 1e-6);
    }
    assert_eq!(patches, extract_patches(&toy_image(2), &spec, 5).unwrap());
}
