use serde::{Deserialize, Serialize};

use crate::error::{Result, UmtError};

/// Side length of every aligned patch.
pub const PATCH_SIDE: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Bonafide,
    Spoof,
    SynthesizedSpoof,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
            Label::SynthesizedSpoof => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            2 => Some(Label::SynthesizedSpoof),
            _ => None,
        }
    }

    /// Class index for the classifier; synthesized spoofs are spoofs.
    pub fn class(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof | Label::SynthesizedSpoof => 1,
        }
    }

    pub fn is_spoof(self) -> bool {
        self.class() == 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
            Label::SynthesizedSpoof => "synthesized-spoof",
        }
    }
}

/// A `96 × 96` patch with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPatch {
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub label: Label,
    pub material: Option<u16>,
    pub source_id: u32,
    pub rotation_applied: f32,
}

impl AlignedPatch {
    pub fn new(
        pixels: Vec<f32>,
        label: Label,
        material: Option<u16>,
        source_id: u32,
        rotation_applied: f32,
    ) -> Result<Self> {
        let p = Self {
            pixels,
            label,
            material,
            source_id,
            rotation_applied,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != PATCH_SIDE * PATCH_SIDE {
            return Err(UmtError::Precondition(format!(
                "patch has {} pixels, expected {}",
                self.pixels.len(),
                PATCH_SIDE * PATCH_SIDE
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(UmtError::Precondition(format!("pixel {v} outside [0, 1]")));
        }
        if self.label == Label::SynthesizedSpoof && self.material.is_none() {
            return Err(UmtError::Precondition(
                "synthesized patch without a material".into(),
            ));
        }
        Ok(())
    }
}
