//! Two-stage training: CTC on the source language, then CTC on the target
//! language through the frozen acoustic model.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::asr::CnnAsr;
use super::ptn::Ptn;
use crate::ctc::{ctc_loss, edit_distance, greedy_decode_logits, LabelSequence};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Mode, Module, Tensor};
use crate::synth::Corpus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a new best dev loss.
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 10,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(format!("{section}.epochs"), "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config(format!("{section}.patience"), "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("{section}.learning_rate"), "must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Greedy-decode symbol error rate on the dev set.
    pub dev_ser: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    /// Train utterances skipped per epoch because CTC could not align them.
    pub skipped_infeasible: usize,
    /// Optimizer steps taken up to the kept epoch.
    pub steps: u64,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DevMetrics {
    pub loss: f64,
    pub ser: f64,
    pub evaluated: usize,
}

/// Frames a train-mode forward can handle: CTC needs `min_frames`, per-utterance
/// batch norm needs two.
fn trainable(frames: usize, labels: &LabelSequence, needs_batch_stats: bool) -> bool {
    frames >= labels.min_frames() && (!needs_batch_stats || frames >= 2)
}

/// Mean CTC loss and symbol error rate of `logits_of` over a labelled set.
fn evaluate<F>(items: &[(&LabelSequence, usize)], mut logits_of: F) -> Result<DevMetrics>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    let mut loss = 0.0;
    let mut errors = 0usize;
    let mut reference = 0usize;
    let mut evaluated = 0usize;
    for (k, &(labels, frames)) in items.iter().enumerate() {
        let logits = logits_of(k)?;
        let hyp = greedy_decode_logits(&logits);
        errors += edit_distance(&hyp, labels.ids());
        reference += labels.len();
        if frames >= labels.min_frames() {
            loss += ctc_loss(&logits, labels)?.loss;
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::Training("no dev utterance is alignable".into()));
    }
    Ok(DevMetrics {
        loss: loss / evaluated as f64,
        ser: errors as f64 / reference.max(1) as f64,
        evaluated,
    })
}

/// Source-set SER and loss of an acoustic model.
pub fn evaluate_asr(asr: &CnnAsr, corpus: &Corpus) -> Result<DevMetrics> {
    let items: Vec<_> = corpus.utterances.iter().map(|u| (&u.labels, u.frames())).collect();
    evaluate(&items, |k| asr.infer(&corpus.utterances[k].features))
}

/// Target-set SER and loss of the composed ASR + PTN stack.
pub fn evaluate_stack(asr: &CnnAsr, ptn: &Ptn, corpus: &Corpus) -> Result<DevMetrics> {
    let items: Vec<_> = corpus.utterances.iter().map(|u| (&u.labels, u.frames())).collect();
    evaluate(&items, |k| {
        let p = asr.posteriorgram(&corpus.utterances[k].features)?;
        ptn.infer_logits(p.probs())
    })
}

fn check_corpora(train: &Corpus, dev: &Corpus, dim: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("dev corpus is empty"));
    }
    if train.dim != dim || dev.dim != dim {
        return Err(Error::invalid(format!(
            "corpus feature width {} / {} does not match model input {dim}",
            train.dim, dev.dim
        )));
    }
    Ok(())
}

/// Shared loop: per-utterance Adam steps, dev evaluation after every epoch,
/// best-dev-loss selection with patience.
fn fit<M, S, D>(
    model: &mut M,
    labels: &[&LabelSequence],
    feasible: &[bool],
    config: &TrainConfig,
    seed: u64,
    mut step_loss: S,
    mut dev_metrics: D,
) -> Result<TrainingLog>
where
    M: Module + Clone,
    S: FnMut(&mut M, usize, &mut ChaCha8Rng) -> Result<f64>,
    D: FnMut(&M) -> Result<DevMetrics>,
{
    let skipped = feasible.iter().filter(|&&f| !f).count();
    if skipped == labels.len() {
        return Err(Error::Training("every training utterance is too short for its labels".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).filter(|&k| feasible[k]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.adam(), &model.params())?;

    let mut log = TrainingLog {
        skipped_infeasible: skipped,
        best_dev_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            model.zero_grad();
            total += step_loss(model, k, &mut rng)?;
            adam.step(&mut model.params_mut())?;
        }
        let dev = dev_metrics(model)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            dev_loss: dev.loss,
            dev_ser: dev.ser,
        };
        debug!(
            "epoch {epoch}: train {:.4} dev {:.4} ser {:.3}",
            record.train_loss, record.dev_loss, record.dev_ser
        );
        log.epochs.push(record);
        if dev.loss < log.best_dev_loss {
            log.best_dev_loss = dev.loss;
            log.best_epoch = epoch;
            log.steps = adam.steps();
            best = model.clone();
        } else if epoch - log.best_epoch >= config.patience {
            info!("early stop after epoch {epoch}; best was {}", log.best_epoch);
            break;
        }
    }
    if log.best_epoch == 0 {
        return Err(Error::Training("dev loss never became finite".into()));
    }
    *model = best;
    Ok(log)
}

/// Stage 1: fits `asr` to the source corpus by CTC and keeps the best-dev epoch.
pub fn train_asr(
    mut asr: CnnAsr,
    train: &Corpus,
    dev: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<(CnnAsr, TrainingLog)> {
    config.validate("asr")?;
    check_corpora(train, dev, asr.config().input_dim)?;
    let labels: Vec<_> = train.utterances.iter().map(|u| &u.labels).collect();
    let feasible: Vec<bool> = train
        .utterances
        .iter()
        .map(|u| trainable(u.frames(), &u.labels, true))
        .collect();
    let log = fit(
        &mut asr,
        &labels,
        &feasible,
        config,
        seed,
        |model, k, _rng| {
            let u = &train.utterances[k];
            let logits = model.forward(&u.features, Mode::Train)?;
            let ctc = ctc_loss(&logits, &u.labels)?;
            model.backward(&ctc.grad)?;
            Ok(ctc.loss)
        },
        |model| evaluate_asr(model, dev),
    )?;
    Ok((asr, log))
}

/// Stage 2: fits `ptn` on top of the frozen `asr`. Source posteriorgrams are
/// computed once in inference mode, so the acoustic model cannot change.
pub fn train_ptn(
    asr: &CnnAsr,
    mut ptn: Ptn,
    train: &Corpus,
    dev: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Ptn, TrainingLog)> {
    config.validate("ptn")?;
    check_corpora(train, dev, asr.config().input_dim)?;
    if ptn.config().n_source != asr.config().n_symbols {
        return Err(Error::invalid("PTN input width does not match the ASR output"));
    }
    let p_train = train
        .utterances
        .iter()
        .map(|u| asr.posteriorgram(&u.features).map(|p| p.into_tensor()))
        .collect::<Result<Vec<_>>>()?;
    let p_dev = dev
        .utterances
        .iter()
        .map(|u| asr.posteriorgram(&u.features).map(|p| p.into_tensor()))
        .collect::<Result<Vec<_>>>()?;
    let dev_items: Vec<_> = dev.utterances.iter().map(|u| (&u.labels, u.frames())).collect();

    let labels: Vec<_> = train.utterances.iter().map(|u| &u.labels).collect();
    let feasible: Vec<bool> = train
        .utterances
        .iter()
        .map(|u| trainable(u.frames(), &u.labels, false))
        .collect();
    let log = fit(
        &mut ptn,
        &labels,
        &feasible,
        config,
        seed,
        |model, k, rng| {
            let logits = model.forward(&p_train[k], Mode::Train, rng)?;
            let ctc = ctc_loss(&logits, &train.utterances[k].labels)?;
            model.backward(&ctc.grad)?;
            Ok(ctc.loss)
        },
        |model| evaluate(&dev_items, |k| model.infer_logits(&p_dev[k])),
    )?;
    Ok((ptn, log))
}
