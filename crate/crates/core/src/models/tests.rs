use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::ctc::{ctc_loss, LabelSequence};
use crate::error::{CheckpointError, Error, Result};
use crate::inventory::SymbolInventory;
use crate::nn::{grad_check, softmax_rows, Mode, Module, Objective, Param, Tensor};
use crate::posteriorgram::Posteriorgram;
use crate::synth::{generate_corpus, generate_language_pair, Corpus, LanguagePair, PairConfig};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small_asr(seed: u64) -> CnnAsr {
    let config = AsrConfig {
        hidden: 8,
        blocks: 2,
        ..AsrConfig::new(3, 4)
    };
    CnnAsr::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn inventory(n: usize) -> SymbolInventory {
    SymbolInventory::new((0..n).map(|i| format!("p{i}"))).unwrap()
}

#[test]
fn asr_shapes_and_rows() {
    let asr = small_asr(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let one = asr.infer(&random(&[1, 3], &mut rng)).unwrap();
    assert_eq!(one.shape(), &[1, 5]);
    let x = random(&[9, 3], &mut rng);
    let p = softmax_rows(&asr.infer(&x).unwrap());
    assert_eq!(p.rows(), 9);
    for row in p.row_iter() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(matches!(asr.infer(&random(&[4, 2], &mut rng)), Err(Error::InvalidArgument(_))));
}

#[test]
fn asr_has_no_cross_utterance_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random(&[6, 3], &mut rng), random(&[4, 3], &mut rng));
    let asr = small_asr(4);
    let first = (asr.infer(&a).unwrap(), asr.infer(&b).unwrap());
    let second = (asr.infer(&b).unwrap(), asr.infer(&a).unwrap());
    assert_eq!(first.0, second.1);
    assert_eq!(first.1, second.0);
}

fn small_ptn(seed: u64) -> Ptn {
    let config = PtnConfig {
        hidden: 6,
        ..PtnConfig::new(4, 3)
    };
    Ptn::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_posteriorgram(frames: usize, width: usize, rng: &mut ChaCha8Rng) -> Posteriorgram {
    Posteriorgram::from_logits(&random(&[frames, width], rng)).unwrap()
}

#[test]
fn ptn_is_per_frame_and_deterministic_in_infer_mode() {
    let ptn = small_ptn(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_posteriorgram(5, 5, &mut rng);
    let out = ptn.transform(&p).unwrap();
    assert_eq!((out.frames(), out.width()), (5, 4));
    for t in 0..5 {
        assert!((out.frame(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(out, ptn.transform(&p).unwrap());

    let mut dup = p.probs().data().to_vec();
    dup.extend_from_slice(p.frame(2));
    let dup = Posteriorgram::new(Tensor::matrix(6, 5, dup).unwrap()).unwrap();
    let out_dup = ptn.transform(&dup).unwrap();
    assert_eq!(out_dup.frame(5), out.frame(2));

    let bad = random_posteriorgram(2, 4, &mut rng);
    assert!(matches!(ptn.transform(&bad), Err(Error::InvalidArgument(_))));
}

#[test]
fn checkpoints_round_trip_byte_identically() {
    let asr = small_asr(7);
    let src = inventory(4);
    let tgt = inventory(3);
    let meta = TrainingMetadata {
        seed: 7,
        ..Default::default()
    };
    let a = asr.to_checkpoint(&src, meta.clone()).unwrap();
    let bytes = a.to_bytes().unwrap();
    let (back, inv) = CnnAsr::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(inv, src);
    assert_eq!(back.to_checkpoint(&src, meta.clone()).unwrap().to_bytes().unwrap(), bytes);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[5, 3], &mut rng);
    assert_eq!(back.infer(&x).unwrap(), asr.infer(&x).unwrap());

    let ptn = small_ptn(8);
    let p = ptn.to_checkpoint(&src, &tgt, meta.clone()).unwrap();
    let pbytes = p.to_bytes().unwrap();
    let (pback, s2, t2) = Ptn::from_checkpoint(&Checkpoint::from_bytes(&pbytes).unwrap()).unwrap();
    assert_eq!((s2, t2), (src.clone(), tgt));
    assert_eq!(pback.to_checkpoint(&src, &inventory(3), meta).unwrap().to_bytes().unwrap(), pbytes);

    assert!(matches!(
        Ptn::from_checkpoint(&a),
        Err(Error::Checkpoint(CheckpointError::ModelKind { .. }))
    ));
    let mut corrupt = pbytes.clone();
    let k = corrupt.len() - 5;
    corrupt[k] ^= 0x10;
    assert!(Checkpoint::from_bytes(&corrupt).is_err());
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let asr = small_asr(9);
    let mut ckpt = asr.to_checkpoint(&inventory(4), TrainingMetadata::default()).unwrap();
    let (_, t) = ckpt.tensors.iter_mut().find(|(n, _)| n == "output.bias").unwrap();
    *t = Tensor::zeros(&[6]);
    assert!(matches!(
        CnnAsr::from_checkpoint(&ckpt),
        Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
    ));
}

/// CTC loss of the acoustic model in train mode, with the features as a parameter.
struct AsrCtc {
    asr: CnnAsr,
    features: Param,
    labels: LabelSequence,
}

impl Objective for AsrCtc {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.asr.params_mut();
        p.push(&mut self.features);
        p
    }

    fn loss(&mut self) -> Result<f64> {
        let logits = self.asr.forward(&self.features.value, Mode::Train)?;
        Ok(ctc_loss(&logits, &self.labels)?.loss)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let logits = self.asr.forward(&self.features.value, Mode::Train)?;
        let ctc = ctc_loss(&logits, &self.labels)?;
        let dx = self.asr.backward(&ctc.grad)?;
        self.features.grad.add_assign(&dx);
        Ok(ctc.loss)
    }
}

fn perturb_batchnorm(asr: &mut CnnAsr, rng: &mut ChaCha8Rng) {
    for p in asr.params_mut() {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}

#[test]
fn asr_ctc_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut asr = small_asr(11);
    perturb_batchnorm(&mut asr, &mut rng);
    let mut obj = AsrCtc {
        asr,
        features: Param::new("features", random(&[10, 3], &mut rng)),
        labels: LabelSequence::new(vec![0, 2, 2, 1], 4).unwrap(),
    };
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

/// Frozen acoustic model feeding a trainable PTN, scored by CTC. Dropout is
/// active with the mask pinned by reseeding before every evaluation.
struct StackCtc {
    asr: CnnAsr,
    ptn: Ptn,
    features: Tensor,
    labels: LabelSequence,
    mask_seed: u64,
}

impl StackCtc {
    fn logits(&mut self) -> Result<Tensor> {
        let p = self.asr.posteriorgram(&self.features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.mask_seed);
        self.ptn.forward(p.probs(), Mode::Train, &mut rng)
    }
}

impl Objective for StackCtc {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.ptn.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let logits = self.logits()?;
        Ok(ctc_loss(&logits, &self.labels)?.loss)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let logits = self.logits()?;
        let ctc = ctc_loss(&logits, &self.labels)?;
        self.ptn.backward(&ctc.grad)?;
        Ok(ctc.loss)
    }
}

#[test]
fn frozen_stack_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Nonzero biases keep pre-activations off the ReLU kink when a frame's
    // inputs are all dropped.
    let mut ptn = small_ptn(14);
    for p in ptn.params_mut() {
        if p.name.ends_with(".bias") {
            p.value = random(p.value.shape(), &mut rng);
        }
    }
    let mut obj = StackCtc {
        asr: small_asr(13),
        ptn,
        features: random(&[10, 3], &mut rng),
        labels: LabelSequence::new(vec![1, 0, 2], 3).unwrap(),
        mask_seed: 15,
    };
    let before = obj.asr.to_checkpoint(&inventory(4), TrainingMetadata::default()).unwrap().parameter_digest();
    let report = grad_check(&mut obj, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
    let after = obj.asr.to_checkpoint(&inventory(4), TrainingMetadata::default()).unwrap().parameter_digest();
    assert_eq!(before, after);
}

fn tiny_pair() -> (LanguagePair, PairConfig) {
    let config = PairConfig {
        dim: 4,
        n_source: 4,
        n_target: 4,
        overlap: 0.5,
        ..PairConfig::default()
    };
    (generate_language_pair(&config, 3).unwrap(), config)
}

fn tiny_corpora(pair: &LanguagePair) -> (Corpus, Corpus, Corpus, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (
        generate_corpus(&pair.source, 40, (2, 5), "s", &mut rng).unwrap(),
        generate_corpus(&pair.source, 10, (2, 5), "sd", &mut rng).unwrap(),
        generate_corpus(&pair.target, 30, (2, 5), "t", &mut rng).unwrap(),
        generate_corpus(&pair.target, 10, (2, 5), "td", &mut rng).unwrap(),
    )
}

fn tiny_asr_config() -> AsrConfig {
    AsrConfig {
        hidden: 12,
        blocks: 1,
        ..AsrConfig::new(4, 4)
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: 3,
        learning_rate: 3e-3,
    }
}

#[test]
fn asr_training_is_deterministic_and_keeps_best_epoch() {
    let (pair, _) = tiny_pair();
    let (train, dev, _, _) = tiny_corpora(&pair);
    let run = || {
        let asr = CnnAsr::new(tiny_asr_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (asr, log) = train_asr(asr, &train, &dev, &train_cfg(6), 9).unwrap();
        let bytes = asr
            .to_checkpoint(&pair.source.inventory, TrainingMetadata::default())
            .unwrap()
            .to_bytes()
            .unwrap();
        (asr, log, bytes)
    };
    let (asr, log, bytes) = run();
    let (_, log2, bytes2) = run();
    assert_eq!(bytes, bytes2);
    assert_eq!(log, log2);
    let last = log.epochs.last().unwrap();
    assert!(log.best_dev_loss <= last.dev_loss);
    assert!(log.best().unwrap().dev_loss < log.epochs[0].dev_loss || log.best_epoch == 1);
    let reloaded = evaluate_asr(&asr, &dev).unwrap();
    assert_eq!(reloaded.loss, log.best_dev_loss);
}

#[test]
fn ptn_training_leaves_the_asr_untouched() {
    let (pair, _) = tiny_pair();
    let (src_train, src_dev, tgt_train, tgt_dev) = tiny_corpora(&pair);
    let asr = CnnAsr::new(tiny_asr_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let (asr, _) = train_asr(asr, &src_train, &src_dev, &train_cfg(3), 1).unwrap();
    let digest = |a: &CnnAsr| {
        a.to_checkpoint(&pair.source.inventory, TrainingMetadata::default())
            .unwrap()
            .parameter_digest()
    };
    let before = digest(&asr);
    let ptn = Ptn::new(
        PtnConfig {
            hidden: 16,
            ..PtnConfig::new(4, 4)
        },
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    let (ptn, log) = train_ptn(&asr, ptn, &tgt_train, &tgt_dev, &train_cfg(4), 3).unwrap();
    assert_eq!(digest(&asr), before);
    assert!(log.best_dev_loss <= log.epochs[0].dev_loss);
    assert_eq!(evaluate_stack(&asr, &ptn, &tgt_dev).unwrap().loss, log.best_dev_loss);
}

#[test]
fn training_rejects_empty_or_unalignable_corpora() {
    let (pair, _) = tiny_pair();
    let (train, dev, _, _) = tiny_corpora(&pair);
    let asr = || CnnAsr::new(tiny_asr_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let empty = Corpus {
        utterances: vec![],
        dim: 4,
    };
    assert!(matches!(
        train_asr(asr(), &empty, &dev, &train_cfg(1), 0),
        Err(Error::InvalidArgument(_))
    ));
    let mut short = train.clone();
    for u in &mut short.utterances {
        u.features = Tensor::zeros(&[1, 4]);
    }
    assert!(matches!(train_asr(asr(), &short, &dev, &train_cfg(1), 0), Err(Error::Training(_))));
}
