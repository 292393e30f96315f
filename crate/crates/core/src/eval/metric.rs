use crate::error::{Result, UmtError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdrAtFdr {
    /// Fraction of spoof scores strictly above the threshold.
    pub tdr: f64,
    pub threshold: f64,
    /// Fraction of bonafide scores strictly above the threshold.
    pub achieved_fdr: f64,
}

/// Largest `k` with `k / n ≤ fdr`, robust to rounding in `fdr · n`.
fn max_false_detections(fdr: f64, n: usize) -> usize {
    let mut k = (fdr * n as f64).floor().max(0.0) as usize;
    while k < n && (k + 1) as f64 / n as f64 <= fdr {
        k += 1;
    }
    while k > 0 && k as f64 / n as f64 > fdr {
        k -= 1;
    }
    k.min(n - 1)
}

/// True detection rate at the lowest threshold whose false detection rate on
/// bonafide scores stays within `fdr`.
///
/// With `kmax` false detections allowed, the threshold is the
/// `(kmax + 1)`-th largest bonafide score and a spoof counts as detected only
/// when it scores strictly higher, which keeps ties deterministic.
pub fn tdr_at_fdr(bonafide: &[f64], spoof: &[f64], fdr: f64) -> Result<TdrAtFdr> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(UmtError::EmptyScores(format!(
            "{} bonafide and {} spoof scores",
            bonafide.len(),
            spoof.len()
        )));
    }
    if !(fdr > 0.0 && fdr < 1.0) {
        return Err(UmtError::Precondition(format!("fdr {fdr} outside (0, 1)")));
    }
    if bonafide.iter().chain(spoof).any(|s| s.is_nan()) {
        return Err(UmtError::Precondition("NaN score".into()));
    }
    let kmax = max_false_detections(fdr, bonafide.len());
    let mut sorted = bonafide.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[kmax];
    let above = |xs: &[f64]| xs.iter().filter(|&&s| s > threshold).count();
    let achieved_fdr = above(bonafide) as f64 / bonafide.len() as f64;
    assert!(
        achieved_fdr <= fdr,
        "false detection rate {achieved_fdr} exceeds the target {fdr}"
    );
    Ok(TdrAtFdr {
        tdr: above(spoof) as f64 / spoof.len() as f64,
        threshold,
        achieved_fdr,
    })
}
