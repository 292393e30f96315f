//! Corpus manifests, the patch cache, and the procedural toy corpus.

mod cache;
mod manifest;
mod toy;

pub use cache::{decode_patches, encode_patches, load_patches, save_patches, PATCH_MAGIC, PATCH_VERSION};
pub use manifest::{ingest, load_image, CorpusManifest, Layout, ManifestEntry, Role, MANIFEST_VERSION};
pub use toy::{generate_toy_corpus, render_toy_image, MaterialTransform, ToyMaterial, ToySpec};

use rayon::prelude::*;

use crate::error::Result;
use crate::eval::PatchCorpus;
use crate::prep::{extract_patches, Label, PatchSpec};

/// Segments, samples and aligns every manifest image. Image `i` samples its
/// patch origins with seed `seed ^ image_id`.
pub fn build_patch_corpus(manifest: &CorpusManifest, spec: &PatchSpec, seed: u64) -> Result<PatchCorpus> {
    spec.validate()?;
    manifest.validate_structure()?;
    let per_image: Vec<(Role, Vec<crate::prep::AlignedPatch>)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let img = load_image(&manifest.path_of(e))?;
            let label = if e.role.is_spoof() { Label::Spoof } else { Label::Bonafide };
            let material = manifest.entry_material_id(e);
            let patches = extract_patches(&img, spec, seed ^ u64::from(e.image_id))
                .map_err(|err| crate::UmtError::Format(format!("{}: {err}", e.path.display())))?
                .into_iter()
                .map(|mut p| {
                    p.label = label;
                    p.material = material;
                    p.source_id = e.image_id;
                    p
                })
                .collect();
            Ok((e.role, patches))
        })
        .collect::<Result<_>>()?;
    let mut corpus = PatchCorpus {
        materials: manifest.materials.clone(),
        ..PatchCorpus::default()
    };
    for (role, patches) in per_image {
        corpus.role_mut(role).extend(patches);
    }
    Ok(corpus)
}
