use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use umt_core::classifier::{score, scores_csv, train_classifier as fit_classifier, Classifier};
use umt_core::data::{build_patch_corpus, generate_toy_corpus, ingest, load_image, load_patches, save_patches, CorpusManifest, Layout};
use umt_core::eval::{
    build_splits, generator_seed, generator_style_set, pretrain_seed, run_protocol, run_seed,
    select_few_shot, tdr_at_fdr, Arm, ExperimentReport, PatchCorpus, EPOCH_HEADER, SUMMARY_HEADER,
};
use umt_core::image_ops::write_mask_pgm;
use umt_core::prep::{estimate_orientation, segment, AlignedPatch, ORIENTATION_STRIDE, ORIENTATION_WINDOW};
use umt_core::umt::{
    pretrain_encoder, synthesize_corpus, train_generator, Decoder, Encoder, GeneratorLogEntry,
    PretrainOutcome, UmtGenerator,
};
use umt_core::UmtError;
use umt_tensor::{load_checkpoint, save_checkpoint, ParamStore};

use crate::config::RunConfig;
use crate::CliError;

const ENCODER_FILE: &str = "encoder.umtw";
const DECODER_FILE: &str = "decoder.umtw";

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Corpus root (defaults to `corpus.root` in the config).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON manifest instead of the directory convention.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also write foreground masks (PGM) and orientation fields (CSV).
    #[arg(long)]
    debug: bool,
}

#[derive(Debug, Args)]
pub struct PatchesArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    patches: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainUmtArgs {
    #[arg(long)]
    patches: PathBuf,
    /// Directory written by `pretrain-encoder`.
    #[arg(long)]
    pretrained: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    patches: PathBuf,
    /// Directory written by `train-umt`.
    #[arg(long)]
    generator: PathBuf,
    /// Patches to render (defaults to `plan.synth_count`).
    #[arg(long)]
    count: Option<usize>,
    /// Run index selecting the few-shot images.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    patches: PathBuf,
    /// Directory written by `synthesize` (augmented arm only).
    #[arg(long)]
    synthesized: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    patches: PathBuf,
    /// Checkpoint written by `train-classifier`.
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Reuse a patch directory instead of preprocessing.
    #[arg(long)]
    patches: Option<PathBuf>,
    /// Corpus root; without it (and without `corpus.root`) the toy corpus is
    /// generated into the output directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

/// Creates `out` and records the resolved config and tool version in it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out)?;
    fs::write(out.join("resolved_config.toml"), cfg.to_toml()?)?;
    fs::write(out.join("VERSION"), format!("{}\n", env!("CARGO_PKG_VERSION")))?;
    Ok(out)
}

fn held_out(cfg: &RunConfig) -> Result<&str, CliError> {
    cfg.plan
        .held_out
        .as_deref()
        .ok_or_else(|| CliError::Config("a held-out material is required (--held-out)".into()))
}

fn single_arm(cfg: &RunConfig) -> Result<Arm, CliError> {
    match cfg.plan.arms.as_slice() {
        [arm] => Ok(*arm),
        _ => Err(CliError::Config("exactly one arm is required (--arm)".into())),
    }
}

fn load_artifact(path: &Path, what: &str) -> Result<ParamStore<f32>, CliError> {
    if !path.is_file() {
        return Err(UmtError::MissingArtifact(format!("{what} checkpoint {}", path.display())).into());
    }
    Ok(load_checkpoint(path)?)
}

fn load_corpus(dir: &Path) -> Result<PatchCorpus, CliError> {
    let corpus = PatchCorpus::load(dir)?;
    if corpus.is_empty() {
        return Err(UmtError::EmptyCorpus(format!("no patches in {}", dir.display())).into());
    }
    Ok(corpus)
}

fn load_generator(dir: &Path, cfg: &RunConfig) -> Result<UmtGenerator, CliError> {
    let encoder = Encoder::from_params(&load_artifact(&dir.join(ENCODER_FILE), "encoder")?)?;
    let decoder = Decoder::from_params(&load_artifact(&dir.join(DECODER_FILE), "decoder")?)?;
    Ok(UmtGenerator::new(encoder, decoder, &cfg.umt))
}

fn generator_csv(log: &[GeneratorLogEntry]) -> String {
    let mut out = String::from("iter,content,style,total\n");
    for e in log {
        writeln!(out, "{},{},{},{}", e.iter, e.content, e.style, e.total).expect("string write");
    }
    out
}

fn manifest_for(root: &Path, manifest: Option<&Path>) -> Result<CorpusManifest, CliError> {
    let layout = match manifest {
        Some(m) => Layout::Manifest(m.to_path_buf()),
        None => Layout::Convention,
    };
    Ok(ingest(root, &layout)?)
}

pub fn gen_toy(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let manifest = generate_toy_corpus(&cfg.toy, &out)?;
    info!("wrote {} toy images to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn write_debug(manifest: &CorpusManifest, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for entry in &manifest.entries {
        let img = load_image(&manifest.path_of(entry))?;
        let mask = segment(&img, &cfg.patch)?;
        write_mask_pgm(&dir.join(format!("{:06}-mask.pgm", entry.image_id)), &mask)?;
        let field = estimate_orientation(&img, ORIENTATION_WINDOW, ORIENTATION_STRIDE)?;
        let mut csv = String::from("row,col,angle,coherence\n");
        for r in 0..field.rows {
            for c in 0..field.cols {
                let i = r * field.cols + c;
                writeln!(csv, "{r},{c},{},{}", field.angles[i], field.coherences[i]).expect("string write");
            }
        }
        fs::write(dir.join(format!("{:06}-orientation.csv", entry.image_id)), csv)?;
    }
    Ok(())
}

fn preprocess_into(
    cfg: &RunConfig,
    root: &Path,
    manifest: Option<&Path>,
    out: &Path,
) -> Result<(CorpusManifest, PatchCorpus), CliError> {
    let manifest = manifest_for(root, manifest)?;
    manifest.validate()?;
    let corpus = build_patch_corpus(&manifest, &cfg.patch, cfg.seed)?;
    corpus.save(out)?;
    info!(
        "cached {} patches from {} images in {}",
        corpus.len(),
        manifest.entries.len(),
        out.display()
    );
    Ok((manifest, corpus))
}

pub fn preprocess(cfg: &RunConfig, args: &PreprocessArgs) -> Result<(), CliError> {
    let root = args
        .corpus
        .clone()
        .or_else(|| cfg.corpus.root.clone())
        .ok_or_else(|| CliError::Config("a corpus root is required (--corpus)".into()))?;
    let manifest = args.manifest.clone().or_else(|| cfg.corpus.manifest.clone());
    let out = prepare_out(cfg)?;
    let (manifest, _) = preprocess_into(cfg, &root, manifest.as_deref(), &out)?;
    if args.debug {
        write_debug(&manifest, cfg, &out.join("debug"))?;
    }
    Ok(())
}

pub fn pretrain(cfg: &RunConfig, args: &PatchesArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.patches)?;
    let out = prepare_out(cfg)?;
    let pre = pretrain_encoder(&corpus.bonafide_train, &cfg.pretrain, pretrain_seed(cfg.seed))?;
    save_checkpoint(&out.join(ENCODER_FILE), &pre.encoder.params)?;
    save_checkpoint(&out.join(DECODER_FILE), &pre.decoder.params)?;
    let mut csv = String::from("iter,mse\n");
    for (i, v) in pre.log.iter().enumerate() {
        writeln!(csv, "{i},{v}").expect("string write");
    }
    fs::write(out.join("pretrain.csv"), csv)?;
    Ok(())
}

pub fn train_umt(cfg: &RunConfig, args: &TrainUmtArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.patches)?;
    let held_name = held_out(cfg)?;
    let held = corpus.material_id(held_name)?;
    let encoder = Encoder::from_params(&load_artifact(&args.pretrained.join(ENCODER_FILE), "encoder")?)?;
    let decoder = Decoder::from_params(&load_artifact(&args.pretrained.join(DECODER_FILE), "decoder")?)?;
    let style = generator_style_set(&corpus, &cfg.plan, held)?;
    let out = prepare_out(cfg)?;
    let seed = generator_seed(cfg.seed, held);
    let pre = PretrainOutcome {
        encoder,
        decoder,
        log: Vec::new(),
    };
    let mut gen = UmtGenerator::from_pretrained(&pre, &cfg.umt, seed);
    let log = train_generator(&mut gen, &corpus.bonafide_train, &style, cfg.umt.iters, cfg.umt.lr, seed)?;
    save_checkpoint(&out.join(ENCODER_FILE), &gen.encoder.params)?;
    save_checkpoint(&out.join(DECODER_FILE), &gen.decoder.params)?;
    fs::write(out.join("generator.csv"), generator_csv(&log))?;
    Ok(())
}

pub fn synthesize(cfg: &RunConfig, args: &SynthesizeArgs) -> Result<(), CliError> {
    let gen = load_generator(&args.generator, cfg)?;
    let corpus = load_corpus(&args.patches)?;
    let held = corpus.material_id(held_out(cfg)?)?;
    let seed = run_seed(cfg.seed, held, args.run);
    let (images, style) = select_few_shot(&corpus, held, cfg.plan.k_images, seed)?;
    let count = args.count.unwrap_or(cfg.plan.synth_count);
    let out = prepare_out(cfg)?;
    let (patches, plan) = synthesize_corpus(&gen, &corpus.bonafide_train, &style, count, held, seed)?;
    save_patches(&out.join("synthesized.umtp"), &patches)?;
    let mut csv = String::from("output,content,style\n");
    for (i, p) in plan.iter().enumerate() {
        writeln!(csv, "{i},{},{}", p.content, p.style).expect("string write");
    }
    fs::write(out.join("provenance.csv"), csv)?;
    fs::write(out.join("few_shot_images.json"), serde_json::to_string(&images).map_err(UmtError::from)?)?;
    info!("synthesized {count} patches from {} style patches", style.len());
    Ok(())
}

pub fn train_classifier(cfg: &RunConfig, args: &TrainClassifierArgs) -> Result<(), CliError> {
    let arm = single_arm(cfg)?;
    let corpus = load_corpus(&args.patches)?;
    let held_name = held_out(cfg)?;
    let held = corpus.material_id(held_name)?;
    let synthesized: Vec<AlignedPatch> = match (arm, &args.synthesized) {
        (Arm::Augmented, Some(dir)) => {
            let path = dir.join("synthesized.umtp");
            if !path.is_file() {
                return Err(UmtError::MissingArtifact(format!("synthesized patches {}", path.display())).into());
            }
            load_patches(&path)?
        }
        (Arm::Augmented, None) => {
            return Err(UmtError::MissingArtifact("the augmented arm needs --synthesized".into()).into())
        }
        _ => Vec::new(),
    };
    if let Some(p) = synthesized.iter().find(|p| p.material != Some(held)) {
        return Err(UmtError::Format(format!(
            "synthesized patches are of material {}, not {held_name}",
            p.material
                .and_then(|m| corpus.materials.get(m as usize))
                .map_or("none", String::as_str)
        ))
        .into());
    }
    let mut plan = cfg.plan.clone();
    if arm == Arm::Augmented {
        plan.synth_count = synthesized.len();
    }
    let seed = run_seed(cfg.seed, held, args.run);
    let splits = build_splits(&corpus, &plan, held_name, arm, seed, &synthesized)?;
    let out = prepare_out(cfg)?;
    let clf_cfg = umt_core::classifier::ClassifierConfig {
        seed,
        ..cfg.classifier.clone()
    };
    let trained = fit_classifier(&splits.train, &clf_cfg)?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for (e, ck) in trained.checkpoints.iter().enumerate() {
        save_checkpoint(&out.join(format!("epoch-{:03}.umtw", e + 1)), ck)?;
        writeln!(csv, "{},{},{}", e + 1, trained.epoch_loss[e], trained.epoch_accuracy[e]).expect("string write");
    }
    save_checkpoint(&out.join("classifier.umtw"), &trained.classifier.params)?;
    fs::write(out.join("train.csv"), csv)?;
    Ok(())
}

fn split_metrics(
    clf: &Classifier,
    test: &[AlignedPatch],
    materials: &[String],
    fdr: f64,
) -> Result<(String, serde_json::Value), CliError> {
    let scored = score(clf, test)?;
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for s in &scored {
        let v = f64::from(s.score);
        if s.truth.is_spoof() {
            spoof.push(v);
        } else {
            bona.push(v);
        }
    }
    let m = tdr_at_fdr(&bona, &spoof, fdr)?;
    let json = serde_json::json!({
        "tdr": m.tdr,
        "threshold": m.threshold,
        "achieved_fdr": m.achieved_fdr,
        "bonafide": bona.len(),
        "spoof": spoof.len(),
    });
    Ok((scores_csv(&scored, materials), json))
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let clf = Classifier::from_params(&load_artifact(&args.classifier, "classifier")?)?;
    let corpus = load_corpus(&args.patches)?;
    let held_name = held_out(cfg)?;
    let held = corpus.material_id(held_name)?;
    let seed = run_seed(cfg.seed, held, args.run);
    let splits = build_splits(&corpus, &cfg.plan, held_name, Arm::Baseline, seed, &[])?;
    let out = prepare_out(cfg)?;
    let fdr = cfg.plan.fdr_target;
    let (cross_csv, cross) = split_metrics(&clf, &splits.cross_test, &corpus.materials, fdr)?;
    let (known_csv, known) = split_metrics(&clf, &splits.known_test, &corpus.materials, fdr)?;
    fs::write(out.join("scores-cross-material.csv"), cross_csv)?;
    fs::write(out.join("scores-known-material.csv"), known_csv)?;
    let metrics = serde_json::json!({
        "schema": 1,
        "held_out": held_name,
        "fdr": fdr,
        "evaluation_level": "patch",
        "cross_material": cross,
        "known_material": known,
    });
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).map_err(UmtError::from)?,
    )?;
    info!("{held_name}: cross TDR {}, known TDR {}", cross["tdr"], known["tdr"]);
    Ok(())
}

fn write_report(out: &Path, report: &ExperimentReport) -> Result<(), CliError> {
    let name = format!("report-{}-{}.json", report.held_out, report.split.name());
    fs::write(out.join(name), report.to_json()?)?;
    Ok(())
}

pub fn experiment(cfg: &RunConfig, args: &ExperimentArgs) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let corpus = match (&args.patches, args.corpus.clone().or_else(|| cfg.corpus.root.clone())) {
        (Some(dir), _) => load_corpus(dir)?,
        (None, Some(root)) => preprocess_into(cfg, &root, cfg.corpus.manifest.as_deref(), &out.join("patches"))?.1,
        (None, None) => {
            let root = out.join("corpus");
            generate_toy_corpus(&cfg.toy, &root)?;
            preprocess_into(cfg, &root, None, &out.join("patches"))?.1
        }
    };
    let exp = cfg.experiment();
    let held: Vec<String> = match &cfg.plan.held_out {
        Some(h) => vec![h.clone()],
        None if cfg.plan.materials.is_empty() => corpus.materials.clone(),
        None => cfg.plan.materials.clone(),
    };
    let pretrained = if cfg.plan.arms.contains(&Arm::Augmented) {
        let pre = pretrain_encoder(&corpus.bonafide_train, &cfg.pretrain, pretrain_seed(cfg.seed))?;
        save_checkpoint(&out.join(ENCODER_FILE), &pre.encoder.params)?;
        Some(pre)
    } else {
        None
    };
    let mut summary = String::from(SUMMARY_HEADER);
    let mut epochs = String::from(EPOCH_HEADER);
    for h in &held {
        info!("holding out {h}");
        let outcome = run_protocol(&corpus, &exp, h, pretrained.as_ref())?;
        for report in [&outcome.cross, &outcome.known] {
            write_report(&out, report)?;
            summary.push_str(&report.summary_rows());
            epochs.push_str(&report.epoch_rows());
        }
        if let Some(log) = &outcome.generator_log {
            fs::write(out.join(format!("generator-{h}.csv")), generator_csv(log))?;
        }
    }
    fs::write(out.join("summary.csv"), &summary)?;
    fs::write(out.join("epochs.csv"), epochs)?;
    print!("{summary}");
    Ok(())
}
