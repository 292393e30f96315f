//! From raw fingerprint scans to aligned fixed-size patches.

mod orientation;
mod patch;

pub use orientation::{estimate_orientation, trimmed_mean_orientation, OrientationField};
pub use patch::{AlignedPatch, Label, PATCH_SIDE};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmtError};
use crate::image_ops::{
    center_crop, largest_component, morph, otsu_threshold, rotate_about_center, BinaryMask,
    GrayImage, MaskIntegral, MorphOp,
};

/// Orientation block size used for alignment.
pub const ORIENTATION_WINDOW: usize = 64;
/// Orientation block stride used for alignment.
pub const ORIENTATION_STRIDE: usize = 32;
/// Radius of the close/open pair applied to the Otsu mask.
pub const MORPH_RADIUS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSpec {
    pub patches_per_image: usize,
    pub raw_size: usize,
    pub final_size: usize,
    pub min_foreground_fraction: f64,
    pub trim_fraction_per_tail: f64,
    pub max_sampling_attempts: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            patches_per_image: 30,
            raw_size: 150,
            final_size: PATCH_SIDE,
            min_foreground_fraction: 0.95,
            trim_fraction_per_tail: 0.10,
            max_sampling_attempts: 1000,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(UmtError::Precondition(msg));
        if self.final_size != PATCH_SIDE {
            return fail(format!(
                "final_size must be {PATCH_SIDE}, got {}",
                self.final_size
            ));
        }
        if self.final_size as f64 * std::f64::consts::SQRT_2 > self.raw_size as f64 {
            return fail(format!(
                "raw_size {} cannot hold a rotated {} crop",
                self.raw_size, self.final_size
            ));
        }
        if !(0.0..0.5).contains(&self.trim_fraction_per_tail) {
            return fail(format!(
                "trim_fraction_per_tail {} outside [0, 0.5)",
                self.trim_fraction_per_tail
            ));
        }
        if !(0.0..=1.0).contains(&self.min_foreground_fraction) {
            return fail(format!(
                "min_foreground_fraction {} outside [0, 1]",
                self.min_foreground_fraction
            ));
        }
        if self.patches_per_image == 0 || self.max_sampling_attempts == 0 {
            return fail("patch and attempt counts must be positive".into());
        }
        Ok(())
    }
}

/// Otsu, close, open, then the largest 8-connected component.
pub fn segment(img: &GrayImage, spec: &PatchSpec) -> Result<BinaryMask> {
    let otsu = otsu_threshold(img)?;
    let closed = morph(&otsu.mask, MorphOp::Close, MORPH_RADIUS)?;
    let opened = morph(&closed, MorphOp::Open, MORPH_RADIUS)?;
    let mask = largest_component(&opened);
    let need = spec.raw_size * spec.raw_size;
    let have = mask.count();
    if have < need {
        return Err(UmtError::EmptyForeground(format!(
            "{have} foreground pixels, need at least {need}"
        )));
    }
    Ok(mask)
}

/// Draws `patches_per_image` window origins whose foreground fraction meets
/// `spec.min_foreground_fraction`, by seeded rejection sampling. Windows may overlap.
pub fn sample_patch_origins(
    mask: &BinaryMask,
    spec: &PatchSpec,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let side = spec.raw_size;
    if mask.is_empty() || mask.width() < side || mask.height() < side {
        return Err(UmtError::InsufficientForeground(format!(
            "{}x{} mask with {} foreground pixels cannot hold a {side}x{side} window",
            mask.width(),
            mask.height(),
            mask.count()
        )));
    }
    let integral = MaskIntegral::new(mask);
    let need = (spec.min_foreground_fraction * (side * side) as f64).ceil() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut origins = Vec::with_capacity(spec.patches_per_image);
    let mut misses = 0;
    while origins.len() < spec.patches_per_image {
        let x = rng.random_range(0..=mask.width() - side);
        let y = rng.random_range(0..=mask.height() - side);
        if integral.count(x, y, side, side) >= need {
            origins.push((x, y));
            misses = 0;
        } else {
            misses += 1;
            if misses >= spec.max_sampling_attempts {
                return Err(UmtError::InsufficientForeground(format!(
                    "{misses} consecutive windows below {:.2} foreground after {} accepted",
                    spec.min_foreground_fraction,
                    origins.len()
                )));
            }
        }
    }
    Ok(origins)
}

/// Rotates the dominant ridge direction onto the vertical axis and crops the
/// center. The returned patch is labeled bonafide with no provenance; callers
/// fill in label, material and source.
pub fn align_and_crop(patch: &GrayImage, spec: &PatchSpec) -> Result<AlignedPatch> {
    if patch.width() != spec.raw_size || patch.height() != spec.raw_size {
        return Err(UmtError::Precondition(format!(
            "expected a {0}x{0} patch, got {1}x{2}",
            spec.raw_size,
            patch.width(),
            patch.height()
        )));
    }
    let field = estimate_orientation(patch, ORIENTATION_WINDOW, ORIENTATION_STRIDE)?;
    let rotation = match trimmed_mean_orientation(&field, spec.trim_fraction_per_tail) {
        // orientation θ becomes θ − α under a rotation by α
        Some(theta) => wrap_half_turn(theta - std::f64::consts::FRAC_PI_2),
        None => 0.0,
    };
    let rotated = rotate_about_center(patch, rotation);
    let pixels = center_crop(&rotated.image, spec.final_size)?;
    AlignedPatch::new(pixels.into_data(), Label::Bonafide, None, 0, rotation as f32)
}

/// Maps an angle to `(−π/2, π/2]`.
pub(crate) fn wrap_half_turn(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = a.rem_euclid(PI);
    if r > PI / 2.0 {
        r - PI
    } else {
        r
    }
}

/// Segments an image and emits its aligned patches in sampling order.
pub fn extract_patches(img: &GrayImage, spec: &PatchSpec, seed: u64) -> Result<Vec<AlignedPatch>> {
    let mask = segment(img, spec)?;
    let origins = sample_patch_origins(&mask, spec, seed)?;
    origins
        .into_iter()
        .map(|(x, y)| align_and_crop(&img.crop(x, y, spec.raw_size, spec.raw_size)?, spec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ridges(n: usize, theta: f64, period: f64) -> GrayImage {
        // intensity varies along the normal of the ridge direction θ
        let (nx, ny) = (-(theta.sin()), theta.cos());
        let c = (n as f64 - 1.0) / 2.0;
        GrayImage::from_fn(n, n, |x, y| {
            let t = (x as f64 - c) * nx + (y as f64 - c) * ny;
            (0.5 + 0.5 * (2.0 * PI * t / period).sin()) as f32
        })
    }

    #[test]
    fn default_spec_is_valid() {
        PatchSpec::default().validate().unwrap();
        let bad = PatchSpec {
            raw_size: 120,
            ..PatchSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn origins_on_full_mask_are_in_bounds_and_reproducible() {
        let spec = PatchSpec::default();
        let mask = BinaryMask::full(450, 450);
        let a = sample_patch_origins(&mask, &spec, 11).unwrap();
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|&(x, y)| x + 150 <= 450 && y + 150 <= 450));
        assert_eq!(a, sample_patch_origins(&mask, &spec, 11).unwrap());
        assert_ne!(a, sample_patch_origins(&mask, &spec, 12).unwrap());
    }

    #[test]
    fn empty_or_sparse_mask_is_insufficient() {
        let spec = PatchSpec::default();
        let err = sample_patch_origins(&BinaryMask::empty(450, 450), &spec, 0).unwrap_err();
        assert!(matches!(err, UmtError::InsufficientForeground(_)));
        let sparse = BinaryMask::from_fn(450, 450, |x, y| x < 160 && y < 100);
        let err = sample_patch_origins(&sparse, &spec, 0).unwrap_err();
        assert!(matches!(err, UmtError::InsufficientForeground(_)));
    }

    #[test]
    fn segment_rejects_blank_and_small_foreground() {
        let spec = PatchSpec::default();
        assert!(segment(&GrayImage::filled(300, 300, 1.0), &spec).is_err());
        let tiny = GrayImage::from_fn(300, 300, |x, y| {
            if (100..140).contains(&x) && (100..140).contains(&y) { 0.1 } else { 1.0 }
        });
        assert!(matches!(
            segment(&tiny, &spec),
            Err(UmtError::EmptyForeground(_))
        ));
    }

    #[test]
    fn vertical_ridges_need_no_rotation() {
        let spec = PatchSpec::default();
        let p = align_and_crop(&ridges(150, PI / 2.0, 10.0), &spec).unwrap();
        assert!(p.rotation_applied.abs() < 0.05);
        assert_eq!(p.pixels.len(), PATCH_SIDE * PATCH_SIDE);
    }

    #[test]
    fn flat_patch_is_cropped_without_rotation() {
        let spec = PatchSpec::default();
        let img = GrayImage::filled(150, 150, 0.4);
        let p = align_and_crop(&img, &spec).unwrap();
        assert_eq!(p.rotation_applied, 0.0);
        assert!(p.pixels.iter().all(|&v| v == 0.4));
    }

    #[test]
    fn tilted_ridges_end_up_vertical() {
        let spec = PatchSpec::default();
        for deg in [-70.0f64, -20.0, 20.0, 45.0, 80.0] {
            let img = ridges(150, PI / 2.0 + deg.to_radians(), 10.0);
            let p = align_and_crop(&img, &spec).unwrap();
            let crop = GrayImage::new(PATCH_SIDE, PATCH_SIDE, p.pixels.clone()).unwrap();
            let field = estimate_orientation(&crop, ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
            let theta = trimmed_mean_orientation(&field, 0.1).unwrap();
            assert!(
                wrap_half_turn(theta - PI / 2.0).abs() < 0.05,
                "{deg} degrees left residual {theta}"
            );
        }
    }

    #[test]
    fn half_turn_wrap() {
        assert!((wrap_half_turn(PI) - 0.0).abs() < 1e-12);
        assert!((wrap_half_turn(PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert!((wrap_half_turn(-PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert!((wrap_half_turn(3.0) - (3.0 - PI)).abs() < 1e-12);
    }
}
