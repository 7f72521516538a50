//! The standing gradient suite: every layer in isolation, CTC on raw logits,
//! the acoustic model under CTC, and the frozen-ASR + PTN + CTC stack, each
//! checked against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss, LabelSequence};
use crate::digest::derive_seed;
use crate::error::Result;
use crate::models::{AsrConfig, CnnAsr, Ptn, PtnConfig};
use crate::nn::{
    grad_check, log_softmax_rows, softmax_rows, BatchNorm, Conv1d, Dropout, GradCheckReport, Linear, Mode, Module,
    Objective, Param, Relu, Tensor,
};

pub const EPSILON: f64 = 1e-5;
pub const SMOOTH_TOLERANCE: f64 = 1e-6;
pub const BATCHNORM_TOLERANCE: f64 = 1e-5;
pub const STACK_TOLERANCE: f64 = 1e-4;
pub const STACK_FRAMES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub elements_checked: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

impl GradSuiteEntry {
    fn new(name: &str, tolerance: f64, report: GradCheckReport) -> Self {
        Self {
            name: name.into(),
            max_relative_error: report.max_relative_error,
            tolerance,
            elements_checked: report.elements_checked,
            worst: report.worst,
            passed: report.max_relative_error < tolerance,
        }
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Uniform on ±[0.1, 1): keeps ReLU inputs away from the kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random(shape, rng).map(|v| if v < 0.0 { v * 0.9 - 0.1 } else { v * 0.9 + 0.1 })
}

fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

enum Layer {
    Linear(Linear),
    Conv(Conv1d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    /// Train-mode dropout with the mask pinned by reseeding.
    Dropout(Dropout, u64),
}

/// `sum(w * layer(x))` with fixed random `w`; the input is a parameter too,
/// so the input gradient is checked alongside the weights.
struct LayerObjective {
    layer: Layer,
    input: Param,
    out_weights: Tensor,
}

impl LayerObjective {
    fn forward(&mut self) -> Result<Tensor> {
        let x = &self.input.value;
        match &mut self.layer {
            Layer::Linear(l) => l.forward(x),
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, Mode::Train),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Dropout(l, seed) => l.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(*seed)),
        }
    }
}

impl Objective for LayerObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = match &mut self.layer {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(l) => l.params_mut(),
            Layer::BatchNorm(l) => l.params_mut().into(),
            Layer::Relu(_) | Layer::Dropout(..) => vec![],
        };
        p.push(&mut self.input);
        p
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(weighted_sum(&self.forward()?, &self.out_weights))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.forward()?;
        let dy = &self.out_weights;
        let dx = match &mut self.layer {
            Layer::Linear(l) => l.backward(dy)?,
            Layer::Conv(l) => l.backward(dy)?,
            Layer::BatchNorm(l) => l.backward(dy)?,
            Layer::Relu(l) => l.backward(dy)?,
            Layer::Dropout(l, _) => l.backward(dy)?,
        };
        self.input.grad.add_assign(&dx);
        Ok(weighted_sum(&y, &self.out_weights))
    }
}

/// Mean cross-entropy of `log_softmax(logits)` against fixed classes.
struct SoftmaxCrossEntropy {
    logits: Param,
    targets: Vec<usize>,
}

impl Objective for SoftmaxCrossEntropy {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.logits]
    }

    fn loss(&mut self) -> Result<f64> {
        let lp = log_softmax_rows(&self.logits.value);
        Ok(-self.targets.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum::<f64>())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let loss = self.loss()?;
        let mut g = softmax_rows(&self.logits.value);
        for (t, &k) in self.targets.iter().enumerate() {
            g.row_mut(t)[k] -= 1.0;
        }
        self.logits.grad.add_assign(&g);
        Ok(loss)
    }
}

struct CtcLogits {
    logits: Param,
    labels: LabelSequence,
}

impl Objective for CtcLogits {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.logits]
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(ctc_loss(&self.logits.value, &self.labels)?.loss)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let ctc = ctc_loss(&self.logits.value, &self.labels)?;
        self.logits.grad.add_assign(&ctc.grad);
        Ok(ctc.loss)
    }
}

/// The acoustic model in train mode under CTC, features included.
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

/// Frozen acoustic model feeding a trainable PTN in train mode, scored by
/// CTC against target labels. Only PTN parameters are exposed.
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

/// Moves every batch-norm affine parameter off its identity initialization.
fn perturb_affine(params: Vec<&mut Param>, rng: &mut ChaCha8Rng) {
    for p in params {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}

/// Randomizes biases so no pre-activation sits exactly on a ReLU kink when
/// dropout zeroes a whole frame.
fn randomize_biases(params: Vec<&mut Param>, rng: &mut ChaCha8Rng) {
    for p in params {
        if p.name.ends_with(".bias") {
            p.value = random(p.value.shape(), rng);
        }
    }
}

fn random_labels(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<LabelSequence> {
    LabelSequence::new((0..len).map(|_| rng.random_range(0..n)).collect(), n)
}

fn check_layer(name: &str, tolerance: f64, layer: Layer, input: Tensor, out: Tensor) -> Result<GradSuiteEntry> {
    let mut obj = LayerObjective {
        layer,
        input: Param::new("x", input),
        out_weights: out,
    };
    Ok(GradSuiteEntry::new(name, tolerance, grad_check(&mut obj, EPSILON)?))
}

/// Runs every check. Each check draws from its own seed, so entries are
/// independent of one another.
pub fn run(seed: u64) -> Result<Vec<GradSuiteEntry>> {
    let rng = |purpose: &str| ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose));
    let mut out = Vec::new();

    let mut r = rng("linear");
    let mut layer = Linear::new("fc", 5, 4, 1.0, &mut r);
    layer.bias.value = random(&[4], &mut r);
    let (x, w) = (random(&[6, 5], &mut r), random(&[6, 4], &mut r));
    out.push(check_layer("linear", SMOOTH_TOLERANCE, Layer::Linear(layer), x, w)?);

    for width in [1, 3, 5] {
        let mut r = rng(&format!("conv{width}"));
        let layer = Conv1d::new("conv", width, 3, 4, true, &mut r)?;
        let (x, w) = (random(&[7, 3], &mut r), random(&[7, 4], &mut r));
        out.push(check_layer(&format!("conv1d k={width}"), SMOOTH_TOLERANCE, Layer::Conv(layer), x, w)?);
    }

    let mut r = rng("batchnorm");
    let mut layer = BatchNorm::new("bn", 3);
    layer.gamma.value = random(&[3], &mut r);
    layer.beta.value = random(&[3], &mut r);
    let (x, w) = (random(&[7, 3], &mut r), random(&[7, 3], &mut r));
    out.push(check_layer("batchnorm", BATCHNORM_TOLERANCE, Layer::BatchNorm(layer), x, w)?);

    let mut r = rng("relu");
    let (x, w) = (off_kink(&[4, 5], &mut r), random(&[4, 5], &mut r));
    out.push(check_layer("relu", SMOOTH_TOLERANCE, Layer::Relu(Relu::default()), x, w)?);

    let mut r = rng("dropout");
    let (x, w) = (random(&[4, 5], &mut r), random(&[4, 5], &mut r));
    let mask_seed = r.random();
    out.push(check_layer("dropout", SMOOTH_TOLERANCE, Layer::Dropout(Dropout::new(0.4)?, mask_seed), x, w)?);

    let mut r = rng("softmax");
    let mut obj = SoftmaxCrossEntropy {
        logits: Param::new("logits", random(&[4, 5], &mut r)),
        targets: (0..4).map(|_| r.random_range(0..5)).collect(),
    };
    out.push(GradSuiteEntry::new("softmax cross-entropy", SMOOTH_TOLERANCE, grad_check(&mut obj, EPSILON)?));

    let mut r = rng("ctc");
    let mut obj = CtcLogits {
        logits: Param::new("logits", random(&[8, 5], &mut r)),
        labels: random_labels(3, 4, &mut r)?,
    };
    out.push(GradSuiteEntry::new("ctc", SMOOTH_TOLERANCE, grad_check(&mut obj, EPSILON)?));

    let (dim, n_src, n_tgt) = (4, 6, 5);
    let asr_config = AsrConfig {
        hidden: 8,
        blocks: 2,
        ..AsrConfig::new(dim, n_src)
    };
    let mut r = rng("asr");
    let mut asr = CnnAsr::new(asr_config.clone(), &mut r)?;
    perturb_affine(asr.params_mut(), &mut r);
    let mut obj = AsrCtc {
        asr,
        features: Param::new("features", random(&[STACK_FRAMES, dim], &mut r)),
        labels: random_labels(4, n_src, &mut r)?,
    };
    out.push(GradSuiteEntry::new("asr + ctc", BATCHNORM_TOLERANCE, grad_check(&mut obj, EPSILON)?));

    let mut r = rng("stack");
    let mut asr = CnnAsr::new(asr_config, &mut r)?;
    perturb_affine(asr.params_mut(), &mut r);
    let mut ptn = Ptn::new(
        PtnConfig {
            hidden: 10,
            ..PtnConfig::new(n_src, n_tgt)
        },
        &mut r,
    )?;
    randomize_biases(ptn.params_mut(), &mut r);
    let mut obj = StackCtc {
        asr,
        ptn,
        features: random(&[STACK_FRAMES, dim], &mut r),
        labels: random_labels(4, n_tgt, &mut r)?,
        mask_seed: r.random(),
    };
    out.push(GradSuiteEntry::new(
        "frozen asr + ptn + ctc",
        STACK_TOLERANCE,
        grad_check(&mut obj, EPSILON)?,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_reproducible() {
        let a = run(3).unwrap();
        assert_eq!(a.len(), 11);
        for e in &a {
            assert!(e.passed, "{e:?}");
            assert!(e.elements_checked > 0);
        }
        assert_eq!(a, run(3).unwrap());
    }
}
