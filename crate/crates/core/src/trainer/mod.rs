//! Two-stage training: warm-up on coarse image/caption pairs with the
//! in-batch triplet loss, then fine-tuning on fine-grained vocabularies.
//!
//! Embedding tables are only ever borrowed; training touches head
//! parameters and optimizer state alone. Every source of randomness is a
//! ChaCha stream derived from `(seed, stage, epoch)`, so an epoch can be
//! replayed from a checkpoint taken at its start.

mod adam;
mod checkpoint;

use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedstore::{CoarsePairs, CoarseSet, VocabSet};
use crate::error::{Error, Result};
use crate::heads::{Gradients, HeadParams};
use crate::losses::{coarse_triplet_loss_grad, finegrained_triplet_loss_grad};
use crate::numcore::Vector;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    file_digest, load_checkpoint, save_checkpoint, Checkpoint, TrainingRecord, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub epochs: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub normalize_inputs: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Write a checkpoint every this many epochs (final epoch always written).
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    /// Warm-up defaults: lr 5e-4, margin 0.2, 10 epochs.
    pub fn warmup() -> Self {
        Self {
            stage: Stage::Warmup,
            lr: 5e-4,
            epochs: 10,
            margin: 0.2,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            normalize_inputs: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: None,
        }
    }

    /// Fine-tune defaults: lr 1e-5, margin 0.05, 10 epochs.
    pub fn finetune() -> Self {
        Self {
            stage: Stage::Finetune,
            lr: 1e-5,
            margin: 0.05,
            ..Self::warmup()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Warmup => Self::warmup(),
            Stage::Finetune => Self::finetune(),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::usage("epochs must be at least 1"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::usage(format!("margin must be >= 0, got {}", self.margin)));
        }
        let min_batch = if self.stage == Stage::Warmup { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::usage(format!(
                "{} batch size must be at least {min_batch}",
                self.stage.name()
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::usage("invalid Adam hyperparameters"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::usage("checkpoint cadence must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Loss summed over the epoch divided by the number of training examples.
    pub mean_loss: f64,
    pub total_loss: f64,
    pub examples: usize,
    pub seconds: f64,
}

/// Evaluation taken during training, e.g. after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
}

/// Epoch-level training state: head, optimizer and progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    head: HeadParams,
    adam: AdamState,
    epochs_done: usize,
    history: TrainHistory,
}

impl Trainer {
    pub fn new(config: TrainConfig, head: HeadParams) -> Result<Self> {
        let adam = AdamState::new(&head, config.adam());
        Self::resume(config, head, adam, 0)
    }

    /// Continues from saved optimizer state after `epochs_done` epochs.
    pub fn resume(config: TrainConfig, head: HeadParams, adam: AdamState, epochs_done: usize) -> Result<Self> {
        config.validate()?;
        if !head.kind().is_trainable() {
            return Err(Error::usage(format!("{} head has no trainable parameters", head.kind())));
        }
        if !adam.matches(&head) {
            return Err(Error::usage("optimizer state does not match the head"));
        }
        Ok(Self {
            config,
            head,
            adam,
            epochs_done,
            history: TrainHistory::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn history_mut(&mut self) -> &mut TrainHistory {
        &mut self.history
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn into_parts(self) -> (HeadParams, AdamState, TrainHistory) {
        (self.head, self.adam, self.history)
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let stage = match self.config.stage {
            Stage::Warmup => 0,
            Stage::Finetune => 1u64 << 63,
        };
        rng.set_stream(stage | self.epochs_done as u64);
        rng
    }

    fn step(&mut self, grads: &Gradients) -> Result<()> {
        adam_step(&mut self.head, grads, &mut self.adam)
    }

    fn finish_epoch(&mut self, total: f64, examples: usize, started: Instant) -> EpochRecord {
        self.epochs_done += 1;
        let record = EpochRecord {
            epoch: self.epochs_done,
            stage: self.config.stage,
            mean_loss: if examples > 0 { total / examples as f64 } else { 0.0 },
            total_loss: total,
            examples,
            seconds: started.elapsed().as_secs_f64(),
        };
        self.history.epochs.push(record.clone());
        record
    }

    /// One pass over the coarse pairs with the in-batch triplet loss.
    /// Inputs are used as given; normalize them beforehand if desired.
    pub fn warmup_epoch(&mut self, data: &CoarseSet) -> Result<EpochRecord> {
        if self.config.stage != Stage::Warmup {
            return Err(Error::usage("warm-up epoch on a fine-tune configuration"));
        }
        Error::check_dim(self.head.dim(), data.dim())?;
        let started = Instant::now();
        let mut rng = self.epoch_rng();
        let batches = warmup_batches(&data.pairs, self.config.batch_size, &mut rng);
        let (mut total, mut examples) = (0.0, 0);
        for batch in batches.iter().filter(|b| b.len() >= 2) {
            let (visuals, texts) = coarse_batch(data, batch);
            let enc = self.head.encode(&visuals, &texts)?;
            let b = batch.len();
            let scores: Vec<f64> = enc.score_matrix().concat();
            let (loss, grad) = coarse_triplet_loss_grad(&scores, b, self.config.margin)?;
            let pair_grads: Vec<_> = grad
                .iter()
                .enumerate()
                .filter(|(_, &g)| g != 0.0)
                .map(|(k, &g)| (k / b, k % b, g))
                .collect();
            let grads = enc.backward(&pair_grads)?;
            self.step(&grads)?;
            total += loss;
            examples += b;
        }
        Ok(self.finish_epoch(total, examples, started))
    }

    /// One pass over the vocabulary items with the fine-grained triplet loss.
    pub fn finetune_epoch(&mut self, data: &VocabSet) -> Result<EpochRecord> {
        if self.config.stage != Stage::Finetune {
            return Err(Error::usage("fine-tune epoch on a warm-up configuration"));
        }
        Error::check_dim(self.head.dim(), data.dim())?;
        let started = Instant::now();
        let mut rng = self.epoch_rng();
        let mut order: Vec<usize> = (0..data.dataset.items.len()).collect();
        order.shuffle(&mut rng);
        let n = data.dataset.n_negatives;
        let (mut total, mut examples) = (0.0, 0);
        for batch in order.chunks(self.config.batch_size) {
            let mut visuals: Vec<&Vector> = Vec::with_capacity(batch.len());
            let mut texts: Vec<&Vector> = Vec::with_capacity(batch.len() * (n + 1));
            for &k in batch {
                let item = &data.dataset.items[k];
                visuals.push(lookup(&data.images, &item.crop_id)?);
                texts.push(lookup(&data.texts, &item.positive_id)?);
                for id in &item.negative_ids {
                    texts.push(lookup(&data.texts, id)?);
                }
            }
            let enc = self.head.encode(&visuals, &texts)?;
            let mut pos = Vec::with_capacity(batch.len());
            let mut negs = Vec::with_capacity(batch.len());
            for i in 0..batch.len() {
                let base = i * (n + 1);
                pos.push(enc.score(i, base)?);
                negs.push((1..=n).map(|k| enc.score(i, base + k)).collect::<Result<Vec<_>>>()?);
            }
            let (loss, gpos, gneg) = finegrained_triplet_loss_grad(&pos, &negs, self.config.margin)?;
            let mut pair_grads = Vec::new();
            for i in 0..batch.len() {
                let base = i * (n + 1);
                if gpos[i] != 0.0 {
                    pair_grads.push((i, base, gpos[i]));
                }
                for (k, &g) in gneg[i].iter().enumerate() {
                    if g != 0.0 {
                        pair_grads.push((i, base + 1 + k, g));
                    }
                }
            }
            let grads = enc.backward(&pair_grads)?;
            self.step(&grads)?;
            total += loss;
            examples += batch.len();
        }
        Ok(self.finish_epoch(total, examples, started))
    }
}

fn lookup<'a>(table: &'a crate::embedstore::EmbeddingTable, id: &str) -> Result<&'a Vector> {
    table
        .get(id)
        .ok_or_else(|| Error::dataset(format!("id {id:?} not found in table")))
}

fn coarse_batch<'a>(data: &'a CoarseSet, batch: &[(usize, usize)]) -> (Vec<&'a Vector>, Vec<&'a Vector>) {
    batch
        .iter()
        .map(|&(item, cap)| {
            let item = &data.pairs.items[item];
            (
                data.images.get(&item.image_id).expect("validated at load"),
                data.texts.get(&item.caption_ids[cap]).expect("validated at load"),
            )
        })
        .unzip()
}

/// Shuffles every `(image, caption)` pair and packs them into batches with
/// no image repeated inside a batch. Pairs bumped from a full-of-that-image
/// batch are placed first in the next one. Returns `(item index, caption index)`.
pub fn warmup_batches(pairs: &CoarsePairs, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
    let mut all: Vec<(usize, usize)> = pairs
        .items
        .iter()
        .enumerate()
        .flat_map(|(i, item)| (0..item.caption_ids.len()).map(move |c| (i, c)))
        .collect();
    all.shuffle(rng);
    let mut pending: VecDeque<(usize, usize)> = all.into();
    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut used = HashSet::with_capacity(batch_size);
        let mut deferred = VecDeque::new();
        while batch.len() < batch_size {
            let Some(pair) = pending.pop_front() else { break };
            if used.insert(pair.0) {
                batch.push(pair);
            } else {
                deferred.push_back(pair);
            }
        }
        deferred.extend(pending);
        pending = deferred;
        batches.push(batch);
    }
    batches
}

fn prepare<T, F>(data: &T, normalize: bool, f: F) -> Result<std::borrow::Cow<'_, T>>
where
    T: Clone,
    F: FnOnce(&T) -> Result<T>,
{
    Ok(if normalize {
        std::borrow::Cow::Owned(f(data)?)
    } else {
        std::borrow::Cow::Borrowed(data)
    })
}

/// Runs every warm-up epoch from a fresh optimizer.
pub fn warmup(config: &TrainConfig, coarse: &CoarseSet, head: HeadParams) -> Result<(HeadParams, TrainHistory)> {
    if config.stage != Stage::Warmup {
        return Err(Error::usage("warmup needs a warm-up configuration"));
    }
    let data = prepare(coarse, config.normalize_inputs, CoarseSet::normalized)?;
    let mut trainer = Trainer::new(config.clone(), head)?;
    while !trainer.is_finished() {
        trainer.warmup_epoch(&data)?;
    }
    let (head, _, history) = trainer.into_parts();
    Ok((head, history))
}

/// Runs every fine-tune epoch from a fresh optimizer.
pub fn finetune(config: &TrainConfig, vocab: &VocabSet, head: HeadParams) -> Result<(HeadParams, TrainHistory)> {
    if config.stage != Stage::Finetune {
        return Err(Error::usage("finetune needs a fine-tune configuration"));
    }
    let data = prepare(vocab, config.normalize_inputs, VocabSet::normalized)?;
    let mut trainer = Trainer::new(config.clone(), head)?;
    while !trainer.is_finished() {
        trainer.finetune_epoch(&data)?;
    }
    let (head, _, history) = trainer.into_parts();
    Ok((head, history))
}
