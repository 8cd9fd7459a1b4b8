//! Training loops for both tasks, plus the shared evaluation driver.
//!
//! Both loops follow the same shape: split the dataset, build the model,
//! iterate epochs of shuffled mini-batches, take one AdamW step per batch
//! at the scheduled learning rate, evaluate on the validation split each
//! epoch, and keep the best checkpoint (finetuning selects by validation
//! mAP, pretraining by validation accuracy). Batch loss averages over the
//! supervised units — candidate pairs for relations, regions for
//! pretraining — not over drawings.
//!
//! Everything is deterministic in `(seed, preset, dataset)`: every source
//! of randomness is an `Rng::stream` with a structured tag. Training runs
//! single-threaded; evaluation fans drawings out over `VIRED_THREADS`
//! workers and joins results in input order, so its output is identical
//! at any thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{split, Dataset, Drawing};
use crate::decoder::{enumerate_pairs, predictions_from_logits};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, mean_ap, precision_recall, ScoredPrediction};
use crate::model::{Model, ModelConfig, TaskMode, PRETRAIN_CLASSES};
use crate::object::{BoundingBox, InstanceType};
use crate::optim::{AdamW, LrSchedule};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const RELATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Model preset name; decides every architectural dimension.
    pub preset: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub base_lr: f32,
    pub final_lr: f32,
    /// Drawing-level fraction assigned to the train split.
    pub train_fraction: f64,
    /// Apply the geometric augmentation pipeline to training drawings.
    pub augment: bool,
    /// Where to append per-epoch JSON-lines records; `None` keeps them
    /// only in the returned history.
    pub log_path: Option<PathBuf>,
    /// Where to write `best.vred`; `None` skips writing.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "desk".to_string(),
            batch_size: 8,
            epochs: 30,
            seed: 0,
            base_lr: 1e-4,
            final_lr: 1e-5,
            train_fraction: 0.9,
            augment: true,
            log_path: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ModelConfig::by_name(&self.preset)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch size {} and epochs {} must be positive",
                self.batch_size, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::Config(format!(
                "train fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// One JSON-lines record; `map`/`precision`/`recall` are null for the
/// pretraining task, where only loss and accuracy apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub map: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Validation mAP (finetune) or validation accuracy (pretrain) of the
    /// best epoch.
    pub best_metric: f64,
    pub history: Vec<EpochLog>,
}

// ── Drawing preparation ─────────────────────────────────────────────

pub(crate) struct Prepared {
    pub(crate) image: Tensor,
    pub(crate) image_px: usize,
    pub(crate) boxes: Vec<BoundingBox>,
    pub(crate) types: Vec<InstanceType>,
    /// Per-region class labels (pretraining) or empty (relations).
    pub(crate) region_targets: Vec<usize>,
    /// Has-relation lookup: `(circuit annotation id, table annotation id)`.
    pub(crate) relation_set: std::collections::HashSet<(u64, u64)>,
    pub(crate) annotation_ids: Vec<u64>,
}

pub(crate) fn prepare(d: &Drawing, model_image: usize, pretrain: bool) -> Result<Prepared> {
    if d.image.width != d.image.height {
        return Err(Error::Contract(format!(
            "drawing {} canvas is {}x{}, expected square",
            d.id, d.image.width, d.image.height
        )));
    }
    let mut boxes = Vec::with_capacity(d.annotations.len());
    let mut types = Vec::with_capacity(d.annotations.len());
    let mut region_targets = Vec::with_capacity(d.annotations.len());
    let mut annotation_ids = Vec::with_capacity(d.annotations.len());
    for a in &d.annotations {
        boxes.push(a.bbox);
        annotation_ids.push(a.id);
        if pretrain {
            if a.category_id as usize >= PRETRAIN_CLASSES {
                return Err(Error::Dataset(format!(
                    "drawing {}: region class {} out of range 0..{PRETRAIN_CLASSES}",
                    d.id, a.category_id
                )));
            }
            region_targets.push(a.category_id as usize);
        } else {
            types.push(InstanceType::from_category(a.category_id)?);
        }
    }
    Ok(Prepared {
        image: d.image.to_tensor(model_image),
        image_px: d.image.width,
        boxes,
        types,
        region_targets,
        relation_set: d
            .relations
            .iter()
            .map(|r| (r.circuit_id, r.table_id))
            .collect(),
        annotation_ids,
    })
}

// ── Relation evaluation ─────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RelationEvaluation {
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Unweighted mean cross-entropy per candidate pair.
    pub loss: f64,
    pub evaluated: usize,
    /// Drawings skipped because they contain no circuit–table pair.
    pub skipped: usize,
    pub predictions: Vec<ScoredPrediction>,
}

/// Worker-thread budget: `VIRED_THREADS` when set to a positive integer,
/// otherwise the number of available cores.
pub fn worker_threads() -> usize {
    match std::env::var("VIRED_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n >= 1 => n,
        _ => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// One drawing scored in evaluation mode, or `None` when it holds no
/// circuit–table pair.
struct DrawingEval {
    predictions: Vec<ScoredPrediction>,
    loss_sum: f64,
    pairs: usize,
}

fn evaluate_one_drawing(
    model: &Model,
    store: &ParamStore,
    d: &Drawing,
    seed: u64,
) -> Result<Option<DrawingEval>> {
    let prep = prepare(d, model.cfg.image_size, false)?;
    let has_circuit = prep.types.iter().any(|t| *t == InstanceType::Circuit);
    let has_table = prep.types.iter().any(|t| *t == InstanceType::Table);
    if !has_circuit || !has_table {
        return Ok(None);
    }
    // Evaluation-mode forwards skip dropout, so this stream is never
    // actually drawn from; it exists to satisfy the forward signature.
    let mut rng = Rng::stream(seed, "eval.relations");
    let mut tape = Tape::new(false);
    let (logits, pairs) = model.forward_relations(
        &mut tape,
        store,
        &prep.image,
        &prep.boxes,
        &prep.types,
        prep.image_px,
        &mut rng,
    )?;
    let targets: Vec<usize> = pairs
        .iter()
        .map(|p| {
            let key = (
                prep.annotation_ids[p.circuit_idx],
                prep.annotation_ids[p.table_idx],
            );
            usize::from(prep.relation_set.contains(&key))
        })
        .collect();
    let loss = tape.cross_entropy(logits, &targets, None)?;
    let predictions = predictions_from_logits(tape.value(logits), &pairs)?
        .iter()
        .zip(&targets)
        .map(|(pred, &t)| ScoredPrediction {
            score: pred.probability as f64,
            label: t == 1,
        })
        .collect();
    Ok(Some(DrawingEval {
        predictions,
        loss_sum: tape.value(loss).item()? as f64 * pairs.len() as f64,
        pairs: pairs.len(),
    }))
}

/// Score every candidate pair of every drawing with the model in
/// evaluation mode and pool the predictions. Drawings without a single
/// circuit–table pair contribute nothing and are counted in `skipped`.
/// Drawings are scored on up to [`worker_threads`] workers; results are
/// folded in input order, so the outcome is thread-count independent.
pub fn evaluate_relations(
    model: &Model,
    store: &ParamStore,
    drawings: &[Drawing],
    seed: u64,
) -> Result<RelationEvaluation> {
    let workers = worker_threads().min(drawings.len()).max(1);
    let per_drawing: Vec<Result<Option<DrawingEval>>> = if workers == 1 {
        drawings
            .iter()
            .map(|d| evaluate_one_drawing(model, store, d, seed))
            .collect()
    } else {
        let chunk = drawings.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = drawings
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|d| evaluate_one_drawing(model, store, d, seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };

    let mut predictions = Vec::new();
    let mut loss_sum = 0.0f64;
    let mut pair_count = 0usize;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for item in per_drawing {
        match item? {
            None => skipped += 1,
            Some(e) => {
                predictions.extend(e.predictions);
                loss_sum += e.loss_sum;
                pair_count += e.pairs;
                evaluated += 1;
            }
        }
    }
    let (precision, recall) = precision_recall(&predictions, RELATION_THRESHOLD);
    Ok(RelationEvaluation {
        map: mean_ap(&predictions),
        precision,
        recall,
        accuracy: accuracy(&predictions, RELATION_THRESHOLD),
        loss: if pair_count == 0 { 0.0 } else { loss_sum / pair_count as f64 },
        evaluated,
        skipped,
        predictions,
    })
}

/// Pretraining counterpart: pooled region-classification accuracy and
/// mean per-region cross-entropy.
pub fn evaluate_pretrain(
    model: &Model,
    store: &ParamStore,
    drawings: &[Drawing],
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = Rng::stream(seed, "eval.pretrain");
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut loss_sum = 0.0f64;
    for d in drawings {
        let prep = prepare(d, model.cfg.image_size, true)?;
        if prep.boxes.is_empty() {
            continue;
        }
        let mut tape = Tape::new(false);
        let logits = model.forward_pretrain(
            &mut tape,
            store,
            &prep.image,
            &prep.boxes,
            prep.image_px,
            &mut rng,
        )?;
        let loss = tape.cross_entropy(logits, &prep.region_targets, None)?;
        loss_sum += tape.value(loss).item()? as f64 * prep.boxes.len() as f64;
        let rows = tape.value(logits);
        for (i, &target) in prep.region_targets.iter().enumerate() {
            let row = &rows.data()[i * PRETRAIN_CLASSES..(i + 1) * PRETRAIN_CLASSES];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            correct += usize::from(argmax == target);
            total += 1;
        }
    }
    if total == 0 {
        return Ok((1.0, 0.0));
    }
    Ok((correct as f64 / total as f64, loss_sum / total as f64))
}

// ── Training loops ──────────────────────────────────────────────────

struct LogSink {
    writer: Option<BufWriter<File>>,
}

impl LogSink {
    fn open(path: &Option<PathBuf>) -> Result<Self> {
        let writer = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    if !dir.as_os_str().is_empty() {
                        std::fs::create_dir_all(dir)?;
                    }
                }
                Some(BufWriter::new(File::create(p)?))
            }
            None => None,
        };
        Ok(LogSink { writer })
    }

    fn record(&mut self, rec: &EpochLog) -> Result<()> {
        if let Some(w) = &mut self.writer {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::Parse(format!("log record: {e}")))?;
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }
}

fn save_best(dir: &Option<PathBuf>, best: &Checkpoint) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        best.save(&d.join("best.vred"))?;
    }
    Ok(())
}

/// Class weight for the has-relation class: negatives-to-positives ratio
/// over the train split, clamped to `[1, 10]`.
fn relation_class_weight(train: &Dataset) -> f64 {
    let mut pos = 0u64;
    let mut neg = 0u64;
    for d in &train.drawings {
        let nc = d.annotations.iter().filter(|a| a.category_id == 0).count() as u64;
        let nt = d.annotations.iter().filter(|a| a.category_id == 1).count() as u64;
        pos += d.relations.len() as u64;
        neg += nc * nt - d.relations.len() as u64;
    }
    if pos == 0 {
        1.0
    } else {
        (neg as f64 / pos as f64).clamp(1.0, 10.0)
    }
}

/// Finetune a relation model. `init` is a relation-mode checkpoint (for
/// pretrained starts, the output of the pretrain-to-finetune transfer);
/// `None` trains from scratch.
pub fn train_finetune(
    cfg: &TrainConfig,
    dataset: &Dataset,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = ModelConfig::by_name(&cfg.preset)?;
    let (train_set, val_set) = split(dataset, cfg.train_fraction, cfg.seed)?;
    let mut store = ParamStore::new();
    let mut init_rng = Rng::stream(cfg.seed, "model.init");
    let model = Model::new(model_cfg, TaskMode::Relation, &mut store, &mut init_rng)?;
    if let Some(ck) = init {
        ck.apply_to_store(&mut store)?;
    }

    let batches = train_set.drawings.len().div_ceil(cfg.batch_size).max(1);
    let schedule = LrSchedule::new(cfg.base_lr, cfg.final_lr, (cfg.epochs * batches) as u64)?;
    let mut opt = AdamW::new(&store);
    let w_pos = relation_class_weight(&train_set) as f32;
    let class_weights = [1.0f32, w_pos];

    let mut sink = LogSink::open(&cfg.log_path)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.drawings.len()).collect();
        Rng::stream(cfg.seed, &format!("epoch.{epoch}.order")).shuffle(&mut order);
        let mut aug_rng = Rng::stream(cfg.seed, &format!("epoch.{epoch}.augment"));
        let mut drop_rng = Rng::stream(cfg.seed, &format!("epoch.{epoch}.dropout"));

        let mut epoch_loss = 0.0f64;
        let mut stepped_batches = 0usize;
        let mut last_lr = 0.0f64;
        let mut train_preds: Vec<ScoredPrediction> = Vec::new();

        for chunk in order.chunks(cfg.batch_size) {
            // Prepare the whole batch first: the per-pair normalizer needs
            // the batch's total pair weight before any backward pass. Pair
            // enumeration here matches the forward pass exactly — both are
            // the same deterministic function of the type sequence.
            struct BatchItem {
                prep: Prepared,
                targets: Vec<usize>,
                weight: f64,
            }
            let mut items = Vec::new();
            let mut batch_weight = 0.0f64;
            for &i in chunk {
                let d = &train_set.drawings[i];
                let d = if cfg.augment {
                    crate::data::augment::augment(d, model.cfg.image_size, true, &mut aug_rng)?
                } else {
                    d.clone()
                };
                let prep = prepare(&d, model.cfg.image_size, false)?;
                let pairs = enumerate_pairs(&prep.types);
                if pairs.is_empty() {
                    continue;
                }
                let targets: Vec<usize> = pairs
                    .iter()
                    .map(|p| {
                        let key = (
                            prep.annotation_ids[p.circuit_idx],
                            prep.annotation_ids[p.table_idx],
                        );
                        usize::from(prep.relation_set.contains(&key))
                    })
                    .collect();
                let weight: f64 = targets.iter().map(|&t| class_weights[t] as f64).sum();
                batch_weight += weight;
                items.push(BatchItem { prep, targets, weight });
            }
            if items.is_empty() {
                continue;
            }

            store.zero_grads();
            let mut batch_loss = 0.0f64;
            for item in &items {
                let prep = &item.prep;
                let mut tape = Tape::new(true);
                let (logits, pairs) = model.forward_relations(
                    &mut tape,
                    &store,
                    &prep.image,
                    &prep.boxes,
                    &prep.types,
                    prep.image_px,
                    &mut drop_rng,
                )?;
                debug_assert_eq!(pairs.len(), item.targets.len());
                let loss = tape.cross_entropy(logits, &item.targets, Some(&class_weights))?;
                let scaled = tape.scale(loss, (item.weight / batch_weight) as f32)?;
                batch_loss += tape.value(scaled).item()? as f64;
                for (pred, &t) in predictions_from_logits(tape.value(logits), &pairs)?
                    .iter()
                    .zip(&item.targets)
                {
                    train_preds.push(ScoredPrediction {
                        score: pred.probability as f64,
                        label: t == 1,
                    });
                }
                tape.backward(scaled)?;
                tape.accumulate_param_grads(&mut store)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step: global_step });
            }
            let lr = schedule.lr_at(global_step)?;
            opt.step(&mut store, lr)?;
            global_step += 1;
            last_lr = lr as f64;
            epoch_loss += batch_loss;
            stepped_batches += 1;
        }

        let train_loss = if stepped_batches == 0 {
            0.0
        } else {
            epoch_loss / stepped_batches as f64
        };
        let (tp, tr) = precision_recall(&train_preds, RELATION_THRESHOLD);
        let train_rec = EpochLog {
            epoch,
            split: "train".to_string(),
            loss: train_loss,
            map: Some(mean_ap(&train_preds)),
            precision: Some(tp),
            recall: Some(tr),
            accuracy: accuracy(&train_preds, RELATION_THRESHOLD),
            lr: last_lr,
        };
        sink.record(&train_rec)?;
        history.push(train_rec);

        let ev = evaluate_relations(&model, &store, &val_set.drawings, cfg.seed)?;
        let val_rec = EpochLog {
            epoch,
            split: "val".to_string(),
            loss: ev.loss,
            map: Some(ev.map),
            precision: Some(ev.precision),
            recall: Some(ev.recall),
            accuracy: ev.accuracy,
            lr: last_lr,
        };
        sink.record(&val_rec)?;
        history.push(val_rec);

        if best.as_ref().is_none_or(|(m, _, _)| ev.map > *m) {
            best = Some((
                ev.map,
                epoch,
                Checkpoint::from_store(&store, global_step, cfg.seed, &cfg.preset),
            ));
        }
    }

    let (best_metric, best_epoch, best_ckpt) =
        best.expect("epochs >= 1, so at least one epoch was evaluated");
    save_best(&cfg.checkpoint_dir, &best_ckpt)?;
    Ok(TrainOutcome { best: best_ckpt, best_epoch, best_metric, history })
}

/// Pretrain a region-classification model on a document dataset.
pub fn train_pretrain(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = ModelConfig::by_name(&cfg.preset)?;
    let (train_set, val_set) = split(dataset, cfg.train_fraction, cfg.seed)?;
    let mut store = ParamStore::new();
    let mut init_rng = Rng::stream(cfg.seed, "model.init");
    let model = Model::new(model_cfg, TaskMode::Pretrain, &mut store, &mut init_rng)?;

    let batches = train_set.drawings.len().div_ceil(cfg.batch_size).max(1);
    let schedule = LrSchedule::new(cfg.base_lr, cfg.final_lr, (cfg.epochs * batches) as u64)?;
    let mut opt = AdamW::new(&store);

    let mut sink = LogSink::open(&cfg.log_path)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.drawings.len()).collect();
        Rng::stream(cfg.seed, &format!("epoch.{epoch}.order")).shuffle(&mut order);
        let mut aug_rng = Rng::stream(cfg.seed, &format!("epoch.{epoch}.augment"));
        let mut drop_rng = Rng::stream(cfg.seed, &format!("epoch.{epoch}.dropout"));

        let mut epoch_loss = 0.0f64;
        let mut stepped_batches = 0usize;
        let mut last_lr = 0.0f64;
        let mut correct = 0usize;
        let mut total = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let mut prepped = Vec::new();
            let mut batch_regions = 0usize;
            for &i in chunk {
                let d = &train_set.drawings[i];
                let d = if cfg.augment {
                    crate::data::augment::augment(d, model.cfg.image_size, true, &mut aug_rng)?
                } else {
                    d.clone()
                };
                let prep = prepare(&d, model.cfg.image_size, true)?;
                if prep.boxes.is_empty() {
                    continue;
                }
                batch_regions += prep.boxes.len();
                prepped.push(prep);
            }
            if prepped.is_empty() {
                continue;
            }

            store.zero_grads();
            let mut batch_loss = 0.0f64;
            for prep in &prepped {
                let mut tape = Tape::new(true);
                let logits = model.forward_pretrain(
                    &mut tape,
                    &store,
                    &prep.image,
                    &prep.boxes,
                    prep.image_px,
                    &mut drop_rng,
                )?;
                let loss = tape.cross_entropy(logits, &prep.region_targets, None)?;
                let scaled = tape.scale(
                    loss,
                    prep.boxes.len() as f32 / batch_regions as f32,
                )?;
                batch_loss += tape.value(scaled).item()? as f64;
                let rows = tape.value(logits);
                for (i, &target) in prep.region_targets.iter().enumerate() {
                    let row = &rows.data()[i * PRETRAIN_CLASSES..(i + 1) * PRETRAIN_CLASSES];
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(j, _)| j)
                        .unwrap_or(0);
                    correct += usize::from(argmax == target);
                    total += 1;
                }
                tape.backward(scaled)?;
                tape.accumulate_param_grads(&mut store)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step: global_step });
            }
            let lr = schedule.lr_at(global_step)?;
            opt.step(&mut store, lr)?;
            global_step += 1;
            last_lr = lr as f64;
            epoch_loss += batch_loss;
            stepped_batches += 1;
        }

        let train_rec = EpochLog {
            epoch,
            split: "train".to_string(),
            loss: if stepped_batches == 0 { 0.0 } else { epoch_loss / stepped_batches as f64 },
            map: None,
            precision: None,
            recall: None,
            accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
            lr: last_lr,
        };
        sink.record(&train_rec)?;
        history.push(train_rec);

        let (val_acc, val_loss) = evaluate_pretrain(&model, &store, &val_set.drawings, cfg.seed)?;
        let val_rec = EpochLog {
            epoch,
            split: "val".to_string(),
            loss: val_loss,
            map: None,
            precision: None,
            recall: None,
            accuracy: val_acc,
            lr: last_lr,
        };
        sink.record(&val_rec)?;
        history.push(val_rec);

        if best.as_ref().is_none_or(|(m, _, _)| val_acc > *m) {
            best = Some((
                val_acc,
                epoch,
                Checkpoint::from_store(&store, global_step, cfg.seed, &cfg.preset),
            ));
        }
    }

    let (best_metric, best_epoch, best_ckpt) =
        best.expect("epochs >= 1, so at least one epoch was evaluated");
    save_best(&cfg.checkpoint_dir, &best_ckpt)?;
    Ok(TrainOutcome { best: best_ckpt, best_epoch, best_metric, history })
}
