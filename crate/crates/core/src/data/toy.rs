use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry, Role, MANIFEST_VERSION};
use crate::error::{Result, UmtError};
use crate::image_ops::{write_pgm, BinaryMask, GrayImage};

/// Texture change that turns a bonafide rendering into a spoof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialTransform {
    /// Additive low-frequency value noise in `±amplitude`, interpolated
    /// smoothly between lattice points `scale` pixels apart.
    Blob { amplitude: f64, scale: f64 },
    /// `v ↦ v^gamma`, thickening dark ridges for `gamma > 1`.
    Gamma { gamma: f64 },
    /// Uniform noise in `±amplitude`, constant over `cell × cell` blocks.
    Speckle { amplitude: f64, cell: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyMaterial {
    pub name: String,
    pub transform: MaterialTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub image_size: usize,
    /// Ridge frequency in cycles per pixel.
    pub ridge_frequency: f64,
    /// Peak deviation of the smoothly drifting ridge orientation, radians.
    pub drift_amplitude: f64,
    /// Wavelength of the orientation drift, pixels.
    pub drift_wavelength: f64,
    pub noise_sigma: f64,
    pub materials: Vec<ToyMaterial>,
    pub bonafide_train: usize,
    pub bonafide_test: usize,
    /// Per material.
    pub spoof_train: usize,
    /// Per material.
    pub spoof_test: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            image_size: 450,
            ridge_frequency: 0.1,
            drift_amplitude: 0.3,
            drift_wavelength: 600.0,
            noise_sigma: 0.02,
            materials: vec![
                ToyMaterial {
                    name: "blob".into(),
                    transform: MaterialTransform::Blob {
                        amplitude: 0.25,
                        scale: 24.0,
                    },
                },
                ToyMaterial {
                    name: "gamma".into(),
                    transform: MaterialTransform::Gamma { gamma: 1.8 },
                },
                ToyMaterial {
                    name: "speckle".into(),
                    transform: MaterialTransform::Speckle {
                        amplitude: 0.2,
                        cell: 2,
                    },
                },
            ],
            bonafide_train: 20,
            bonafide_test: 10,
            spoof_train: 12,
            spoof_test: 8,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(UmtError::Precondition(m));
        if self.materials.len() < 3 {
            return fail(format!(
                "need at least 3 materials (2 known + 1 held out), got {}",
                self.materials.len()
            ));
        }
        let mut names: Vec<&str> = self.materials.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.materials.len() {
            return fail("material names must be unique".into());
        }
        if [self.bonafide_train, self.bonafide_test, self.spoof_train, self.spoof_test]
            .contains(&0)
        {
            return fail("every role needs at least one image".into());
        }
        if self.image_size < 200 || self.ridge_frequency <= 0.0 || self.ridge_frequency >= 0.5 {
            return fail(format!(
                "image size {} or ridge frequency {} out of range",
                self.image_size, self.ridge_frequency
            ));
        }
        Ok(())
    }

    /// Every image to render, in output order.
    fn plan(&self) -> Vec<(PathBuf, Role, Option<usize>)> {
        let mut out = Vec::new();
        for (role, split, count) in [
            (Role::BonafideTrain, "train", self.bonafide_train),
            (Role::BonafideTest, "test", self.bonafide_test),
        ] {
            for i in 0..count {
                out.push((PathBuf::from(format!("{split}/live/{i:04}.pgm")), role, None));
            }
        }
        for (m, mat) in self.materials.iter().enumerate() {
            for (role, split, count) in [
                (Role::SpoofTrain, "train", self.spoof_train),
                (Role::SpoofTest, "test", self.spoof_test),
            ] {
                for i in 0..count {
                    let path = format!("{split}/spoof/{}/{i:04}.pgm", mat.name);
                    out.push((PathBuf::from(path), role, Some(m)));
                }
            }
        }
        out
    }
}

/// Renders one image and the ellipse it was drawn on.
pub fn render_toy_image(
    spec: &ToySpec,
    material: Option<&MaterialTransform>,
    seed: u64,
) -> (GrayImage, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.image_size;
    let nf = n as f64;
    let cx = nf / 2.0 + rng.random_range(-0.03..0.03) * nf;
    let cy = nf / 2.0 + rng.random_range(-0.03..0.03) * nf;
    let ax = nf * rng.random_range(0.36..0.42);
    let ay = nf * rng.random_range(0.42..0.47);
    let tilt: f64 = rng.random_range(-0.2..0.2);
    let theta0 = rng.random_range(0.0..PI);
    let drift_dir = rng.random_range(0.0..PI);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let ridge_phase = rng.random_range(0.0..2.0 * PI);
    let freq = spec.ridge_frequency * rng.random_range(0.95..1.05);

    let (ts, tc) = tilt.sin_cos();
    let inside = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        let (u, v) = (dx * tc + dy * ts, -dx * ts + dy * tc);
        (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
    };
    let mask = BinaryMask::from_fn(n, n, |x, y| inside(x as f64, y as f64));

    let (ds, dc) = drift_dir.sin_cos();
    let mut values: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let (dx, dy) = (x - cx, y - cy);
            let along = (dx * dc + dy * ds) / spec.drift_wavelength;
            let theta = theta0 + spec.drift_amplitude * (2.0 * PI * along + drift_phase).sin();
            // distance across the ridges: projection on the ridge normal
            let t = -dx * theta.sin() + dy * theta.cos();
            0.5 - 0.4 * (2.0 * PI * freq * t + ridge_phase).cos()
        })
        .collect();

    match material {
        None => {}
        Some(MaterialTransform::Gamma { gamma }) => {
            values.iter_mut().for_each(|v| *v = v.max(0.0).powf(*gamma));
        }
        Some(MaterialTransform::Blob { amplitude, scale }) => {
            let scale = scale.max(1.0);
            let cells = (nf / scale).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..cells * cells)
                .map(|_| rng.random_range(-amplitude..=*amplitude))
                .collect();
            let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
            for (i, v) in values.iter_mut().enumerate() {
                let (x, y) = ((i % n) as f64 / scale, (i / n) as f64 / scale);
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (fx, fy) = (smooth(x.fract()), smooth(y.fract()));
                let at = |cx: usize, cy: usize| lattice[cy * cells + cx];
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                *v += top * (1.0 - fy) + bottom * fy;
            }
        }
        Some(MaterialTransform::Speckle { amplitude, cell }) => {
            let cell = (*cell).max(1);
            let cells = n.div_ceil(cell);
            let noise: Vec<f64> = (0..cells * cells)
                .map(|_| rng.random_range(-amplitude..=*amplitude))
                .collect();
            for (i, v) in values.iter_mut().enumerate() {
                let (x, y) = (i % n, i / n);
                *v += noise[(y / cell) * cells + x / cell];
            }
        }
    }

    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let img = GrayImage::from_fn(n, n, |x, y| {
        let noise = normal.sample(&mut rng);
        if mask.get(x, y) {
            // keep the foreground strictly darker than the white background
            (values[y * n + x] + noise).clamp(0.0, 0.97) as f32
        } else {
            1.0
        }
    });
    (img, mask)
}

/// Writes the corpus as PGM files in the `train|test / live|spoof/<material>`
/// layout plus `manifest.json`, and returns the manifest (entries ordered by
/// path, as `ingest` reads them back).
pub fn generate_toy_corpus(spec: &ToySpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let plan = spec.plan();
    for (path, _, _) in &plan {
        if let Some(parent) = out_dir.join(path).parent() {
            fs::create_dir_all(parent)?;
        }
    }
    plan.par_iter()
        .enumerate()
        .map(|(i, (path, _, mat))| {
            let transform = mat.map(|m| &spec.materials[m].transform);
            let (img, _) = render_toy_image(spec, transform, spec.seed ^ i as u64);
            write_pgm(&out_dir.join(path), &img)
        })
        .collect::<Result<()>>()?;
    let mut manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        root: out_dir.to_path_buf(),
        materials: spec.materials.iter().map(|m| m.name.clone()).collect(),
        entries: plan
            .into_iter()
            .enumerate()
            .map(|(i, (path, role, mat))| ManifestEntry {
                path,
                role,
                material: mat.map(|m| spec.materials[m].name.clone()),
                image_id: i as u32,
            })
            .collect(),
    };
    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
