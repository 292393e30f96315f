use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Arm;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// Bonafide test patches against the held-out material.
    CrossMaterial,
    /// Bonafide test patches against the known materials' test partitions.
    KnownMaterial,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::CrossMaterial => "cross-material",
            SplitKind::KnownMaterial => "known-material",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// TDR after each epoch (index 0 is epoch 1), as fractions.
    pub epoch_tdr: Vec<f64>,
    pub epoch_threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    pub train_patches: usize,
    pub runs: Vec<RunRecord>,
    /// Mean over runs × window epochs, percent.
    pub mean_tdr_pct: f64,
    /// Population standard deviation over the same values, percent.
    pub std_tdr_pct: f64,
    pub values: usize,
}

impl ArmReport {
    /// Mean TDR of one run over the epoch window, percent.
    pub fn run_mean_pct(&self, run: usize, window: (usize, usize)) -> f64 {
        let v = &self.runs[run].epoch_tdr[window.0 - 1..window.1];
        100.0 * v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub iters: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Moving-average window used for the two values above.
    pub smoothing_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub tool_version: String,
    pub split: SplitKind,
    pub held_out: String,
    pub fdr: f64,
    /// Inclusive, 1-based.
    pub epoch_window: (usize, usize),
    /// Scores are evaluated per patch; there is no image-level fusion.
    pub evaluation_level: String,
    pub test_bonafide: usize,
    pub test_spoof: usize,
    pub arms: Vec<ArmReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSummary>,
    pub config: serde_json::Value,
}

/// Mean and population standard deviation, in percent, of the window epochs
/// of every run.
pub fn aggregate(runs: &[RunRecord], window: (usize, usize)) -> (f64, f64, usize) {
    let values: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.epoch_tdr[window.0 - 1..window.1].iter().map(|v| 100.0 * v))
        .collect();
    if values.is_empty() {
        return (0.0, 0.0, 0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), values.len())
}

impl ExperimentReport {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_rows(&self) -> String {
        let mut out = String::new();
        for a in &self.arms {
            writeln!(
                out,
                "{},{},{},{:.4},{:.4},{}",
                self.held_out,
                self.split.name(),
                a.arm.name(),
                a.mean_tdr_pct,
                a.std_tdr_pct,
                a.values
            )
            .expect("string write");
        }
        out
    }

    pub fn epoch_rows(&self) -> String {
        let mut out = String::new();
        for a in &self.arms {
            for r in &a.runs {
                for (e, (t, th)) in r.epoch_tdr.iter().zip(&r.epoch_threshold).enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{:.6},{:.6}",
                        self.held_out,
                        self.split.name(),
                        a.arm.name(),
                        r.run,
                        e + 1,
                        t,
                        th
                    )
                    .expect("string write");
                }
            }
        }
        out
    }
}

pub const SUMMARY_HEADER: &str = "held_out,split,arm,mean_tdr_pct,std_tdr_pct,values\n";
pub const EPOCH_HEADER: &str = "held_out,split,arm,run,epoch,tdr,threshold\n";
