use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{aggregate, ArmReport, ExperimentReport, GeneratorSummary, RunRecord, SplitKind, REPORT_SCHEMA};
use super::tdr_at_fdr;
use crate::classifier::{train_classifier, Classifier, ClassifierConfig};
use crate::data::{load_patches, save_patches, Role};
use crate::error::{Result, UmtError};
use crate::prep::{AlignedPatch, Label};
use crate::umt::{
    pretrain_encoder, synthesize_corpus, train_generator, GeneratorLogEntry, PretrainConfig,
    PretrainOutcome, UmtConfig, UmtGenerator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Baseline,
    #[serde(rename = "fewshot", alias = "few-shot")]
    FewShot,
    Augmented,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::FewShot => "fewshot",
            Arm::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Arm::Baseline),
            "fewshot" | "few-shot" => Some(Arm::FewShot),
            "augmented" => Some(Arm::Augmented),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Materials taking part; empty means every material in the corpus.
    pub materials: Vec<String>,
    /// Material to hold out; `None` means each material in turn.
    pub held_out: Option<String>,
    pub arms: Vec<Arm>,
    pub runs: usize,
    /// Inclusive, 1-based epoch range aggregated in reports.
    pub epoch_window: (usize, usize),
    pub fdr_target: f64,
    /// Held-out images contributing few-shot style patches.
    pub k_images: usize,
    pub synth_count: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            materials: Vec::new(),
            held_out: None,
            arms: vec![Arm::Baseline, Arm::FewShot, Arm::Augmented],
            runs: 5,
            epoch_window: (50, 65),
            fdr_target: 0.001,
            k_images: 5,
            synth_count: 15_000,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        let fail = |m: String| Err(UmtError::Precondition(m));
        let (a, b) = self.epoch_window;
        if a == 0 || a > b || b > epochs {
            return fail(format!(
                "epoch window {a}..={b} outside the {epochs} classifier epochs"
            ));
        }
        if !(self.fdr_target > 0.0 && self.fdr_target < 1.0) {
            return fail(format!("fdr_target {} outside (0, 1)", self.fdr_target));
        }
        if self.runs == 0 || self.k_images == 0 || self.arms.is_empty() {
            return fail("runs, k_images and arms must be non-empty".into());
        }
        if let Some(h) = &self.held_out {
            if !self.materials.is_empty() && !self.materials.contains(h) {
                return fail(format!("held-out material {h} is not among the plan materials"));
            }
        }
        Ok(())
    }
}

/// Everything needed to reproduce a protocol run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub plan: ExperimentPlan,
    pub classifier: ClassifierConfig,
    pub umt: UmtConfig,
    pub pretrain: PretrainConfig,
    pub seed: u64,
}

/// Aligned patches by role, with the material names their ids refer to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchCorpus {
    pub materials: Vec<String>,
    pub bonafide_train: Vec<AlignedPatch>,
    pub bonafide_test: Vec<AlignedPatch>,
    pub spoof_train: Vec<AlignedPatch>,
    pub spoof_test: Vec<AlignedPatch>,
}

const ROLE_FILES: [(Role, &str); 4] = [
    (Role::BonafideTrain, "bonafide-train.umtp"),
    (Role::BonafideTest, "bonafide-test.umtp"),
    (Role::SpoofTrain, "spoof-train.umtp"),
    (Role::SpoofTest, "spoof-test.umtp"),
];

impl PatchCorpus {
    pub fn role(&self, role: Role) -> &[AlignedPatch] {
        match role {
            Role::BonafideTrain => &self.bonafide_train,
            Role::BonafideTest => &self.bonafide_test,
            Role::SpoofTrain => &self.spoof_train,
            Role::SpoofTest => &self.spoof_test,
        }
    }

    pub fn role_mut(&mut self, role: Role) -> &mut Vec<AlignedPatch> {
        match role {
            Role::BonafideTrain => &mut self.bonafide_train,
            Role::BonafideTest => &mut self.bonafide_test,
            Role::SpoofTrain => &mut self.spoof_train,
            Role::SpoofTest => &mut self.spoof_test,
        }
    }

    pub fn len(&self) -> usize {
        ROLE_FILES.iter().map(|(r, _)| self.role(*r).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn material_id(&self, name: &str) -> Result<u16> {
        self.materials
            .iter()
            .position(|m| m == name)
            .map(|i| i as u16)
            .ok_or_else(|| UmtError::MissingMaterial(name.to_string()))
    }

    /// One patch cache per role plus `materials.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (role, file) in ROLE_FILES {
            save_patches(&dir.join(file), self.role(role))?;
        }
        std::fs::write(
            dir.join("materials.json"),
            serde_json::to_string_pretty(&self.materials)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let materials_path = dir.join("materials.json");
        if !materials_path.is_file() {
            return Err(UmtError::MissingFile(materials_path));
        }
        let mut corpus = PatchCorpus {
            materials: serde_json::from_str(&std::fs::read_to_string(&materials_path)?)?,
            ..PatchCorpus::default()
        };
        for (role, file) in ROLE_FILES {
            *corpus.role_mut(role) = load_patches(&dir.join(file))?;
        }
        Ok(corpus)
    }
}

/// Training and test patches for one arm of one run.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<AlignedPatch>,
    pub cross_test: Vec<AlignedPatch>,
    pub known_test: Vec<AlignedPatch>,
    /// Held-out images whose patches form the few-shot style set.
    pub few_shot_images: Vec<u32>,
}

/// Decorrelated child seed for a numbered stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the autoencoder pretraining.
pub fn pretrain_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xe0)
}

/// Seed of the generator trained with `held_out` excluded.
pub fn generator_seed(seed: u64, held_out: u16) -> u64 {
    derive_seed(seed, 0x6e0 + held_out as u64)
}

/// Seed shared by every arm of one run.
pub fn run_seed(seed: u64, held_out: u16, run: usize) -> u64 {
    derive_seed(seed, ((held_out as u64) << 32) | run as u64)
}

/// Picks `k` held-out images (from both partitions) and returns their ids and
/// patches.
pub fn select_few_shot(
    corpus: &PatchCorpus,
    held_out: u16,
    k: usize,
    seed: u64,
) -> Result<(Vec<u32>, Vec<AlignedPatch>)> {
    let held: Vec<&AlignedPatch> = corpus
        .spoof_train
        .iter()
        .chain(&corpus.spoof_test)
        .filter(|p| p.material == Some(held_out))
        .collect();
    let images: BTreeSet<u32> = held.iter().map(|p| p.source_id).collect();
    if images.len() < k {
        return Err(UmtError::InsufficientImages(format!(
            "{} images of material {held_out}, need {k}",
            images.len()
        )));
    }
    let mut ids: Vec<u32> = images.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xf5)));
    ids.truncate(k);
    ids.sort_unstable();
    let patches = held
        .into_iter()
        .filter(|p| ids.binary_search(&p.source_id).is_ok())
        .cloned()
        .collect();
    Ok((ids, patches))
}

fn known_materials(corpus: &PatchCorpus, plan: &ExperimentPlan, held_out: u16) -> Result<Vec<u16>> {
    let names: Vec<&String> = if plan.materials.is_empty() {
        corpus.materials.iter().collect()
    } else {
        plan.materials.iter().collect()
    };
    let mut ids = Vec::new();
    for n in names {
        let id = corpus.material_id(n)?;
        if id != held_out {
            ids.push(id);
        }
    }
    Ok(ids)
}

/// Known-material training spoofs, the generator's style corpus.
pub fn generator_style_set(corpus: &PatchCorpus, plan: &ExperimentPlan, held_out: u16) -> Result<Vec<AlignedPatch>> {
    let known = known_materials(corpus, plan, held_out)?;
    Ok(corpus
        .spoof_train
        .iter()
        .filter(|p| p.material.is_some_and(|m| known.contains(&m)))
        .cloned()
        .collect())
}

/// Train/test partition of one arm. `synthesized` is used by the augmented
/// arm only and must hold `synth_count` patches of the held-out material.
pub fn build_splits(
    corpus: &PatchCorpus,
    plan: &ExperimentPlan,
    held_out: &str,
    arm: Arm,
    run_seed: u64,
    synthesized: &[AlignedPatch],
) -> Result<Splits> {
    let held = corpus.material_id(held_out)?;
    let known = known_materials(corpus, plan, held)?;
    let (few_shot_images, few_shot) = select_few_shot(corpus, held, plan.k_images, run_seed)?;
    let is_known = |p: &&AlignedPatch| p.material.is_some_and(|m| known.contains(&m));

    let mut train: Vec<AlignedPatch> = corpus.bonafide_train.clone();
    train.extend(corpus.spoof_train.iter().filter(is_known).cloned());
    if arm != Arm::Baseline {
        train.extend(few_shot);
    }
    if arm == Arm::Augmented {
        if synthesized.len() != plan.synth_count
            || synthesized
                .iter()
                .any(|p| p.label != Label::SynthesizedSpoof || p.material != Some(held))
        {
            return Err(UmtError::Precondition(format!(
                "augmented arm needs {} synthesized patches of {held_out}, got {} with {} of another kind",
                plan.synth_count,
                synthesized.len(),
                synthesized
                    .iter()
                    .filter(|p| p.label != Label::SynthesizedSpoof || p.material != Some(held))
                    .count()
            )));
        }
        train.extend_from_slice(synthesized);
    }

    let mut cross_test = corpus.bonafide_test.clone();
    cross_test.extend(
        corpus
            .spoof_train
            .iter()
            .chain(&corpus.spoof_test)
            .filter(|p| p.material == Some(held) && few_shot_images.binary_search(&p.source_id).is_err())
            .cloned(),
    );
    let mut known_test = corpus.bonafide_test.clone();
    known_test.extend(corpus.spoof_test.iter().filter(is_known).cloned());
    Ok(Splits {
        train,
        cross_test,
        known_test,
        few_shot_images,
    })
}

fn split_scores(clf: &Classifier, test: &[AlignedPatch], fdr: f64) -> Result<(f64, f64)> {
    let scores = clf.score(test)?;
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for (s, p) in scores.into_iter().zip(test) {
        if p.label.is_spoof() {
            spoof.push(f64::from(s));
        } else {
            bona.push(f64::from(s));
        }
    }
    let r = tdr_at_fdr(&bona, &spoof, fdr)?;
    Ok((r.tdr, r.threshold))
}

struct ArmRun {
    arm: Arm,
    train_patches: usize,
    cross: RunRecord,
    known: RunRecord,
}

/// Cross-material and known-material reports from one set of trained
/// classifiers, plus the generator training log when the augmented arm ran.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub cross: ExperimentReport,
    pub known: ExperimentReport,
    pub generator_log: Option<Vec<GeneratorLogEntry>>,
}

fn smoothed(log: &[GeneratorLogEntry], window: usize) -> (f64, f64) {
    let w = window.min(log.len()).max(1);
    let mean = |s: &[GeneratorLogEntry]| s.iter().map(|e| f64::from(e.total)).sum::<f64>() / s.len() as f64;
    if log.is_empty() {
        return (0.0, 0.0);
    }
    (mean(&log[..w]), mean(&log[log.len() - w..]))
}

/// Leave-one-material-out protocol for one held-out material.
///
/// The generator (augmented arm only) is trained once on the known
/// materials and reused by every run; `pretrained` supplies the frozen
/// encoder and is computed from the bonafide training patches when absent.
pub fn run_protocol(
    corpus: &PatchCorpus,
    exp: &Experiment,
    held_out: &str,
    pretrained: Option<&PretrainOutcome>,
) -> Result<ProtocolOutcome> {
    let plan = &exp.plan;
    plan.validate(exp.classifier.epochs)?;
    exp.classifier.validate()?;
    exp.umt.validate()?;
    let held = corpus.material_id(held_out)?;
    if corpus.bonafide_train.is_empty() || corpus.bonafide_test.is_empty() {
        return Err(UmtError::EmptyCorpus("bonafide train and test patches are required".into()));
    }

    let mut generator_log = None;
    let generator = if plan.arms.contains(&Arm::Augmented) {
        let owned;
        let pre = match pretrained {
            Some(p) => p,
            None => {
                owned = pretrain_encoder(&corpus.bonafide_train, &exp.pretrain, pretrain_seed(exp.seed))?;
                &owned
            }
        };
        let style = generator_style_set(corpus, plan, held)?;
        let gen_seed = generator_seed(exp.seed, held);
        let mut gen = UmtGenerator::from_pretrained(pre, &exp.umt, gen_seed);
        info!("training generator with {held_out} held out");
        let log = train_generator(
            &mut gen,
            &corpus.bonafide_train,
            &style,
            exp.umt.iters,
            exp.umt.lr,
            gen_seed,
        )?;
        generator_log = Some(log);
        Some(gen)
    } else {
        None
    };

    let runs: Vec<Vec<ArmRun>> = (0..plan.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<ArmRun>> {
            let seed = run_seed(exp.seed, held, run);
            let synthesized = match &generator {
                Some(gen) => {
                    let (_, few_shot) = select_few_shot(corpus, held, plan.k_images, seed)?;
                    synthesize_corpus(gen, &corpus.bonafide_train, &few_shot, plan.synth_count, held, seed)?.0
                }
                None => Vec::new(),
            };
            plan.arms
                .iter()
                .map(|&arm| {
                    let splits = build_splits(corpus, plan, held_out, arm, seed, &synthesized)?;
                    let cfg = ClassifierConfig {
                        seed,
                        ..exp.classifier.clone()
                    };
                    let trained = train_classifier(&splits.train, &cfg)?;
                    let mut cross = RunRecord {
                        run,
                        seed,
                        epoch_tdr: Vec::new(),
                        epoch_threshold: Vec::new(),
                    };
                    let mut known_rec = cross.clone();
                    for ck in &trained.checkpoints {
                        let clf = Classifier::from_params(ck)?;
                        let (t, th) = split_scores(&clf, &splits.cross_test, plan.fdr_target)?;
                        cross.epoch_tdr.push(t);
                        cross.epoch_threshold.push(th);
                        let (t, th) = split_scores(&clf, &splits.known_test, plan.fdr_target)?;
                        known_rec.epoch_tdr.push(t);
                        known_rec.epoch_threshold.push(th);
                    }
                    info!(
                        "{held_out} run {run} {}: final cross TDR {:.3}, known TDR {:.3}",
                        arm.name(),
                        cross.epoch_tdr.last().copied().unwrap_or(0.0),
                        known_rec.epoch_tdr.last().copied().unwrap_or(0.0)
                    );
                    Ok(ArmRun {
                        arm,
                        train_patches: splits.train.len(),
                        cross,
                        known: known_rec,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let probe = build_splits(corpus, plan, held_out, Arm::Baseline, run_seed(exp.seed, held, 0), &[])?;
    let config = serde_json::to_value(exp)?;
    let generator_summary = generator_log.as_ref().map(|log| {
        let (initial_loss, final_loss) = smoothed(log, 100);
        GeneratorSummary {
            iters: log.len(),
            initial_loss,
            final_loss,
            smoothing_window: 100,
        }
    });
    let report = |split: SplitKind| -> ExperimentReport {
        let arms = plan
            .arms
            .iter()
            .enumerate()
            .map(|(i, &arm)| {
                let records: Vec<RunRecord> = runs
                    .iter()
                    .map(|r| match split {
                        SplitKind::CrossMaterial => r[i].cross.clone(),
                        SplitKind::KnownMaterial => r[i].known.clone(),
                    })
                    .collect();
                let (mean, std, values) = aggregate(&records, plan.epoch_window);
                ArmReport {
                    arm,
                    train_patches: runs[0][i].train_patches,
                    runs: records,
                    mean_tdr_pct: mean,
                    std_tdr_pct: std,
                    values,
                }
            })
            .collect();
        let test = match split {
            SplitKind::CrossMaterial => &probe.cross_test,
            SplitKind::KnownMaterial => &probe.known_test,
        };
        let spoofs = test.iter().filter(|p| p.label.is_spoof()).count();
        ExperimentReport {
            schema: REPORT_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            split,
            held_out: held_out.to_string(),
            fdr: plan.fdr_target,
            epoch_window: plan.epoch_window,
            evaluation_level: "patch".into(),
            test_bonafide: test.len() - spoofs,
            test_spoof: spoofs,
            arms,
            generator: generator_summary.clone(),
            config: config.clone(),
        }
    };
    debug_assert!(runs.iter().all(|r| r.iter().map(|a| a.arm).eq(plan.arms.iter().copied())));
    Ok(ProtocolOutcome {
        cross: report(SplitKind::CrossMaterial),
        known: report(SplitKind::KnownMaterial),
        generator_log,
    })
}

/// Cross-material report for one held-out material.
pub fn run_experiment(corpus: &PatchCorpus, exp: &Experiment, held_out: &str) -> Result<ExperimentReport> {
    Ok(run_protocol(corpus, exp, held_out, None)?.cross)
}

/// Known-material report for one held-out material.
pub fn known_material_eval(
    corpus: &PatchCorpus,
    exp: &Experiment,
    held_out: &str,
) -> Result<ExperimentReport> {
    Ok(run_protocol(corpus, exp, held_out, None)?.known)
}
