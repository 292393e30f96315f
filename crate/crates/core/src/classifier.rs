//! Small CNN that scores patches for spoofness.

use std::fmt::Write as _;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umt_tensor::{AdamConfig, AdamState, Bound, Graph, NnError, ParamId, ParamStore, Tensor, Var};

use crate::error::{Result, UmtError};
use crate::prep::{AlignedPatch, Label, PATCH_SIDE};
use crate::umt::nets::{conv, push_conv, ConvLayer};
use crate::umt::patches_tensor;

const CHANNELS: [usize; 3] = [8, 16, 32];
/// Samples per gradient chunk; fixed so that results do not depend on the
/// number of worker threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            epochs: 65,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) {
            return Err(UmtError::Precondition(format!(
                "classifier needs batch_size >= 1, epochs >= 1 and lr > 0, got {}, {}, {}",
                self.batch_size, self.epochs, self.lr
            )));
        }
        Ok(())
    }
}

/// Three conv3×3 + relu + 2× pooling stages, global average pooling and a
/// two-way linear head. Inputs are mapped from `[0, 1]` to `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub params: ParamStore<f32>,
    layers: [ConvLayer; 3],
    fc_weight: ParamId,
    fc_bias: ParamId,
}

impl Classifier {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut cin = 1;
        let layers = std::array::from_fn(|i| {
            let l = push_conv(&mut params, &format!("cls.conv{i}"), cin, CHANNELS[i], &mut rng);
            cin = CHANNELS[i];
            l
        });
        let fc_weight = params.push(
            "cls.fc.weight",
            Tensor::he_uniform(vec![2, cin], cin, &mut rng),
            true,
        );
        let fc_bias = params.push("cls.fc.bias", Tensor::zeros(vec![2]), true);
        Self {
            params,
            layers,
            fc_weight,
            fc_bias,
        }
    }

    pub fn from_params(params: &ParamStore<f32>) -> Result<Self> {
        let mut c = Self::new(0);
        c.params.load_values(params)?;
        Ok(c)
    }

    fn forward(&self, g: &mut Graph<f32>, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for &layer in &self.layers {
            let c = conv(g, bound, layer, h, umt_tensor::Padding::Zero)?;
            let r = g.relu(c);
            h = g.avg_pool2(r)?;
        }
        let pooled = g.global_avg_pool(h)?;
        Ok(g.linear(pooled, bound.var(self.fc_weight), bound.var(self.fc_bias))?)
    }

    fn input(patches: &[&AlignedPatch]) -> Tensor<f32> {
        patches_tensor(patches, |v| 2.0 * v - 1.0)
    }

    /// Spoof-class probability for each patch, in input order.
    pub fn score(&self, patches: &[AlignedPatch]) -> Result<Vec<f32>> {
        let mut frozen = self.params.clone();
        frozen.set_trainable(false);
        let chunks: Vec<Vec<f32>> = patches
            .par_chunks(CHUNK)
            .map(|chunk| {
                let refs: Vec<&AlignedPatch> = chunk.iter().collect();
                let mut g = Graph::new();
                let bound = frozen.bind(&mut g);
                let x = g.constant(Self::input(&refs));
                let logits = self.forward(&mut g, &bound, x)?;
                let probs = g.softmax_of(logits)?;
                Ok(probs.chunks(2).map(|p| p[1]).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }
}

/// Outcome of [`train_classifier`]; `checkpoints[e]` holds the weights after
/// epoch `e + 1`.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub checkpoints: Vec<ParamStore<f32>>,
    pub epoch_loss: Vec<f32>,
    /// Training accuracy measured on the forward passes of each epoch.
    pub epoch_accuracy: Vec<f32>,
}

fn chunk_gradients(
    clf: &Classifier,
    patches: &[&AlignedPatch],
) -> Result<(Vec<Option<Vec<f32>>>, f32, usize)> {
    let labels: Vec<usize> = patches.iter().map(|p| p.label.class()).collect();
    let mut g = Graph::new();
    let bound = clf.params.bind(&mut g);
    let x = g.constant(Classifier::input(patches));
    let logits = clf.forward(&mut g, &bound, x)?;
    let loss = g.softmax_cross_entropy(logits, &labels)?;
    let probs = g.softmax_of(logits)?;
    let correct = probs
        .chunks(2)
        .zip(&labels)
        .filter(|(p, &l)| usize::from(p[1] > p[0]) == l)
        .count();
    g.backward(loss)?;
    Ok((clf.params.grads_from(&g, &bound), g.value(loss).data()[0], correct))
}

/// Adam on softmax cross-entropy with seeded shuffling; synthesized spoofs
/// count as spoofs.
pub fn train_classifier(train_set: &[AlignedPatch], cfg: &ClassifierConfig) -> Result<TrainedClassifier> {
    train_classifier_with(train_set, cfg, Classifier::new(cfg.seed))
}

/// As [`train_classifier`], starting from the given weights. Zero epochs
/// return them unchanged.
pub fn train_classifier_with(
    train_set: &[AlignedPatch],
    cfg: &ClassifierConfig,
    mut clf: Classifier,
) -> Result<TrainedClassifier> {
    if cfg.batch_size == 0 {
        return Err(UmtError::Precondition("batch_size must be at least 1".into()));
    }
    let spoofs = train_set.iter().filter(|p| p.label.is_spoof()).count();
    if spoofs == 0 || spoofs == train_set.len() {
        return Err(UmtError::SingleClassCorpus(format!(
            "{} patches, {spoofs} of them spoofs",
            train_set.len()
        )));
    }
    let mut opt = AdamState::new(&clf.params, AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c1a5);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut out = TrainedClassifier {
        classifier: clf.clone(),
        checkpoints: Vec::with_capacity(cfg.epochs),
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let patches: Vec<&AlignedPatch> = batch.iter().map(|&i| &train_set[i]).collect();
            let parts: Vec<_> = patches
                .par_chunks(CHUNK)
                .map(|c| chunk_gradients(&clf, c).map(|r| (r, c.len())))
                .collect::<Result<_>>()?;
            for ((grads, loss, ok), n) in parts {
                let w = n as f32 / patches.len() as f32;
                clf.params.accumulate(&grads, w);
                loss_sum += f64::from(loss) * n as f64;
                correct += ok;
            }
            opt.step(&mut clf.params)?;
        }
        let n = train_set.len() as f64;
        out.epoch_loss.push((loss_sum / n) as f32);
        out.epoch_accuracy.push((correct as f64 / n) as f32);
        out.checkpoints.push(clf.params.clone());
        debug!(
            "classifier epoch {}: loss {:.4} accuracy {:.3}",
            epoch + 1,
            loss_sum / n,
            correct as f64 / n
        );
    }
    out.classifier = clf;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatch {
    pub score: f32,
    pub truth: Label,
    pub material: Option<u16>,
}

pub fn score(clf: &Classifier, patches: &[AlignedPatch]) -> Result<Vec<ScoredPatch>> {
    if let Some(p) = patches.iter().find(|p| p.pixels.len() != PATCH_SIDE * PATCH_SIDE) {
        return Err(UmtError::Nn(NnError::Shape(format!(
            "patch with {} pixels",
            p.pixels.len()
        ))));
    }
    Ok(clf
        .score(patches)?
        .into_iter()
        .zip(patches)
        .map(|(score, p)| ScoredPatch {
            score,
            truth: p.label,
            material: p.material,
        })
        .collect())
}

/// `patch_id,truth,material,score` rows; the id is the position in `scores`.
pub fn scores_csv(scores: &[ScoredPatch], materials: &[String]) -> String {
    let mut out = String::from("patch_id,truth,material,score\n");
    for (i, s) in scores.iter().enumerate() {
        let material = s
            .material
            .map(|m| materials.get(m as usize).cloned().unwrap_or_else(|| m.to_string()))
            .unwrap_or_default();
        writeln!(out, "{i},{},{material},{}", s.truth.name(), s.score).expect("string write");
    }
    out
}
