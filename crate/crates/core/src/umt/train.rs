use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umt_tensor::{AdamConfig, AdamState, Bound, Graph, Tensor, Var};

use crate::error::{Result, UmtError};
use crate::prep::{AlignedPatch, Label, PATCH_SIDE};

use super::norm::{adain, content_loss_var, style_loss_to_stats};
use super::{channel_stats, patch_tensor, Decoder, Encoder};

/// Starting weights of the generator's decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderInit {
    /// Fresh He-uniform weights; only the encoder carries over from
    /// pretraining.
    Random,
    /// The decoder learned alongside the encoder during pretraining.
    Pretrained,
}

/// Generator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmtConfig {
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub eps: f64,
    pub lr: f64,
    pub iters: usize,
    pub decoder_init: DecoderInit,
}

impl Default for UmtConfig {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_s: 10.0,
            eps: 1e-5,
            lr: 1e-5,
            iters: 20_000,
            decoder_init: DecoderInit::Random,
        }
    }
}

impl UmtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_s >= 0.0) {
            return Err(UmtError::Precondition(
                "loss weights must be non-negative".into(),
            ));
        }
        if !(self.eps >= 0.0 && self.lr > 0.0) {
            return Err(UmtError::Precondition(
                "eps must be non-negative and lr positive".into(),
            ));
        }
        Ok(())
    }
}

/// Autoencoder pretraining of the encoder (and an initial decoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub iters: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// Per-iteration reconstruction mean squared error.
    pub log: Vec<f32>,
}

/// Trains encoder and decoder jointly to reconstruct bonafide patches, then
/// freezes the encoder.
pub fn pretrain_encoder(
    corpus: &[AlignedPatch],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(UmtError::EmptyCorpus("no patches to pretrain on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = Encoder::<f32>::new(&mut rng);
    let mut decoder = Decoder::<f32>::new(&mut rng);
    let mut enc_opt = AdamState::new(&encoder.params, AdamConfig::with_lr(cfg.lr));
    let mut dec_opt = AdamState::new(&decoder.params, AdamConfig::with_lr(cfg.lr));
    let mut log = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let x = patch_tensor::<f32>(&corpus[rng.random_range(0..corpus.len())]);
        let mut g = Graph::new();
        let eb = encoder.params.bind(&mut g);
        let db = decoder.params.bind(&mut g);
        let xv = g.constant(x);
        let taps = encoder.forward(&mut g, &eb, xv)?;
        let out = decoder.forward(&mut g, &db, taps[3])?;
        let loss = g.mse(out, xv)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0];
        let eg = encoder.params.grads_from(&g, &eb);
        let dg = decoder.params.grads_from(&g, &db);
        encoder.params.accumulate(&eg, 1.0);
        decoder.params.accumulate(&dg, 1.0);
        enc_opt.step(&mut encoder.params)?;
        dec_opt.step(&mut decoder.params)?;
        log.push(value);
        if iter % 500 == 0 {
            debug!("pretrain iter {iter}: mse {value:.5}");
        }
    }
    encoder.params.set_trainable(false);
    Ok(PretrainOutcome {
        encoder,
        decoder,
        log,
    })
}

/// Encoder, AdaIN at the deepest tap, decoder.
#[derive(Debug, Clone)]
pub struct UmtGenerator {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub lambda_c: f32,
    pub lambda_s: f32,
    pub eps: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLogEntry {
    pub iter: usize,
    pub content: f32,
    pub style: f32,
    pub total: f32,
}

/// Where a synthesized patch came from: indices into the content corpus and
/// the style set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub content: usize,
    pub style: usize,
}

impl UmtGenerator {
    /// Generator over a pretrained encoder, with the decoder chosen by
    /// `cfg.decoder_init` (`seed` drives a fresh decoder).
    pub fn from_pretrained(pre: &PretrainOutcome, cfg: &UmtConfig, seed: u64) -> Self {
        let decoder = match cfg.decoder_init {
            DecoderInit::Random => Decoder::new(&mut ChaCha8Rng::seed_from_u64(seed)),
            DecoderInit::Pretrained => pre.decoder.clone(),
        };
        Self::new(pre.encoder.clone(), decoder, cfg)
    }

    /// The encoder is frozen; the decoder stays trainable.
    pub fn new(mut encoder: Encoder, mut decoder: Decoder, cfg: &UmtConfig) -> Self {
        encoder.params.set_trainable(false);
        decoder.params.set_trainable(true);
        Self {
            encoder,
            decoder,
            lambda_c: cfg.lambda_c as f32,
            lambda_s: cfg.lambda_s as f32,
            eps: cfg.eps as f32,
        }
    }

    /// AdaIN target features for a content and a style patch.
    pub fn target(&self, content: &Tensor<f32>, style: &Tensor<f32>) -> Result<Tensor<f32>> {
        let c = self.encoder.encode(content)?;
        let s = self.encoder.encode(style)?;
        adain(c.deepest(), s.deepest(), self.eps)
    }

    /// Returns the synthesized patch clamped to `[0, 1]` and the target `t`.
    pub fn translate(
        &self,
        content: &Tensor<f32>,
        style: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let t = self.target(content, style)?;
        let synth = clamp_unit(self.decoder.decode(&t)?);
        Ok((synth, t))
    }

    /// `(Lc, Ls, L)` for one pair, without updating anything.
    pub fn losses(&self, content: &Tensor<f32>, style: &Tensor<f32>) -> Result<(f32, f32, f32)> {
        let t = self.target(content, style)?;
        let stats = self.style_targets(style)?;
        let mut g = Graph::new();
        let (lc, ls, l, _) = self.record_loss(&mut g, &t, &stats)?;
        Ok((g.value(lc).data()[0], g.value(ls).data()[0], g.value(l).data()[0]))
    }

    fn style_targets(&self, style: &Tensor<f32>) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
        let taps = self.encoder.encode(style)?;
        taps.taps
            .iter()
            .map(|tap| {
                let s = channel_stats(tap, self.eps)?;
                let shape = vec![s.samples, s.channels];
                Ok((
                    Tensor::from_vec(shape.clone(), s.mean)?,
                    Tensor::from_vec(shape, s.std)?,
                ))
            })
            .collect()
    }

    fn record_loss(
        &self,
        g: &mut Graph<f32>,
        t: &Tensor<f32>,
        style_stats: &[(Tensor<f32>, Tensor<f32>)],
    ) -> Result<(Var, Var, Var, Bound)> {
        let db = self.decoder.params.bind(g);
        let eb = self.encoder.bind_frozen(g);
        let tv = g.constant(t.clone());
        let out = self.decoder.forward(g, &db, tv)?;
        let taps = self.encoder.forward(g, &eb, out)?;
        let targets: Vec<(Var, Var)> = style_stats
            .iter()
            .map(|(m, s)| (g.constant(m.clone()), g.constant(s.clone())))
            .collect();
        let lc = content_loss_var(g, taps[3], tv)?;
        let ls = style_loss_to_stats(g, &taps, &targets, self.eps)?;
        let wc = g.scale(lc, self.lambda_c);
        let ws = g.scale(ls, self.lambda_s);
        let l = g.add(wc, ws)?;
        Ok((lc, ls, l, db))
    }
}

fn clamp_unit(mut t: Tensor<f32>) -> Tensor<f32> {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
    t
}

/// Decoder-only Adam training on random (content, style) pairs, one pair per
/// step. Encoder weights are never touched.
pub fn train_generator(
    generator: &mut UmtGenerator,
    content: &[AlignedPatch],
    style: &[AlignedPatch],
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<GeneratorLogEntry>> {
    if content.is_empty() || style.is_empty() {
        return Err(UmtError::EmptyCorpus(format!(
            "generator training needs content and style patches, got {} and {}",
            content.len(),
            style.len()
        )));
    }
    generator.encoder.params.set_trainable(false);
    generator.decoder.params.set_trainable(true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamState::new(&generator.decoder.params, AdamConfig::with_lr(lr));
    let mut content_cache: Vec<Option<Tensor<f32>>> = vec![None; content.len()];
    let mut style_cache: Vec<Option<(Tensor<f32>, Vec<(Tensor<f32>, Tensor<f32>)>)>> =
        vec![None; style.len()];
    let mut log = Vec::with_capacity(iters);
    for iter in 0..iters {
        let ci = rng.random_range(0..content.len());
        let si = rng.random_range(0..style.len());
        if content_cache[ci].is_none() {
            let taps = generator.encoder.encode(&patch_tensor(&content[ci]))?;
            content_cache[ci] = Some(taps.taps[3].clone());
        }
        if style_cache[si].is_none() {
            let x = patch_tensor(&style[si]);
            let deep = generator.encoder.encode(&x)?.taps[3].clone();
            style_cache[si] = Some((deep, generator.style_targets(&x)?));
        }
        let fc = content_cache[ci].as_ref().expect("filled above");
        let (fs, stats) = style_cache[si].as_ref().expect("filled above");
        let t = adain(fc, fs, generator.eps)?;
        let mut g = Graph::new();
        let (lc, ls, l, db) = generator.record_loss(&mut g, &t, stats)?;
        g.backward(l)?;
        let entry = GeneratorLogEntry {
            iter,
            content: g.value(lc).data()[0],
            style: g.value(ls).data()[0],
            total: g.value(l).data()[0],
        };
        if !entry.total.is_finite() {
            return Err(UmtError::Precondition(format!(
                "generator loss diverged at iteration {iter}"
            )));
        }
        let grads = generator.decoder.params.grads_from(&g, &db);
        generator.decoder.params.accumulate(&grads, 1.0);
        opt.step(&mut generator.decoder.params)?;
        if iter % 500 == 0 {
            debug!(
                "generator iter {iter}: Lc {:.4} Ls {:.4} L {:.4}",
                entry.content, entry.style, entry.total
            );
        }
        log.push(entry);
    }
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        info!(
            "generator trained {iters} iterations: L {:.4} -> {:.4}",
            first.total, last.total
        );
    }
    Ok(log)
}

/// Content and style index for each of `n` outputs. Contents follow a seeded
/// permutation (cycled when `n` exceeds the corpus); styles are drawn
/// uniformly from a stream seeded with `seed ^ output index`.
pub fn synthesis_plan(n_content: usize, n_style: usize, n: usize, seed: u64) -> Vec<Provenance> {
    if n == 0 || n_content == 0 || n_style == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n_content).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..n)
        .map(|i| Provenance {
            content: order[i % n_content],
            style: ChaCha8Rng::seed_from_u64(seed ^ i as u64).random_range(0..n_style),
        })
        .collect()
}

/// Renders `n` synthesized spoofs of `material` from bonafide content and the
/// few-shot style set.
pub fn synthesize_corpus(
    generator: &UmtGenerator,
    content: &[AlignedPatch],
    style_set: &[AlignedPatch],
    n: usize,
    material: u16,
    seed: u64,
) -> Result<(Vec<AlignedPatch>, Vec<Provenance>)> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if content.is_empty() || style_set.is_empty() {
        return Err(UmtError::EmptyCorpus(format!(
            "synthesis needs content and style patches, got {} and {}",
            content.len(),
            style_set.len()
        )));
    }
    let plan = synthesis_plan(content.len(), style_set.len(), n, seed);
    let deep = |p: &AlignedPatch| -> Result<Tensor<f32>> {
        Ok(generator.encoder.encode(&patch_tensor(p))?.taps[3].clone())
    };
    let mut used_content = vec![false; content.len()];
    plan.iter().for_each(|p| used_content[p.content] = true);
    let content_feats: Vec<Option<Tensor<f32>>> = content
        .par_iter()
        .zip(&used_content)
        .map(|(p, &used)| used.then(|| deep(p)).transpose())
        .collect::<Result<_>>()?;
    let style_feats: Vec<Tensor<f32>> = style_set.par_iter().map(deep).collect::<Result<_>>()?;
    let patches = plan
        .par_iter()
        .map(|prov| {
            let fc = content_feats[prov.content].as_ref().expect("planned contents are encoded");
            let t = adain(fc, &style_feats[prov.style], generator.eps)?;
            let synth = clamp_unit(generator.decoder.decode(&t)?);
            let src = &content[prov.content];
            AlignedPatch::new(
                synth.into_data(),
                Label::SynthesizedSpoof,
                Some(material),
                src.source_id,
                src.rotation_applied,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(patches.iter().all(|p| p.pixels.len() == PATCH_SIDE * PATCH_SIDE));
    Ok((patches, plan))
}
