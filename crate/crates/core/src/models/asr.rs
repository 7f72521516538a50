//! Pure-CNN acoustic model: input projection, residual time-convolution
//! blocks, output projection. No temporal downsampling, so every input frame
//! gets its own distribution over the source inventory plus blank.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind, TrainingMetadata};
use crate::error::{Error, Result};
use crate::inventory::SymbolInventory;
use crate::nn::{BatchNorm, Conv1d, Linear, Mode, Module, Param, Relu, RunningStats, Tensor};
use crate::posteriorgram::Posteriorgram;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrConfig {
    /// Feature dimension of the input frames.
    pub input_dim: usize,
    /// Source symbols, blank excluded.
    pub n_symbols: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Width of the first convolution in each block (the second is pointwise).
    pub kernel: usize,
}

impl AsrConfig {
    pub fn new(input_dim: usize, n_symbols: usize) -> Self {
        Self {
            input_dim,
            n_symbols,
            hidden: 128,
            blocks: 4,
            kernel: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_symbols == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("degenerate ASR dimensions {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("ASR kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.n_symbols + 1
    }
}

/// conv(K) -> BN -> ReLU -> conv(1) -> BN -> ReLU, plus the identity.
#[derive(Clone, Debug)]
struct ResBlock {
    conv_wide: Conv1d,
    bn_wide: BatchNorm,
    relu_wide: Relu,
    conv_point: Conv1d,
    bn_point: BatchNorm,
    relu_point: Relu,
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(name: &str, hidden: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv_wide: Conv1d::new(&format!("{name}.conv_wide"), kernel, hidden, hidden, false, rng)?,
            bn_wide: BatchNorm::new(&format!("{name}.bn_wide"), hidden),
            relu_wide: Relu::default(),
            conv_point: Conv1d::new(&format!("{name}.conv_point"), 1, hidden, hidden, false, rng)?,
            bn_point: BatchNorm::new(&format!("{name}.bn_point"), hidden),
            relu_point: Relu::default(),
        })
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.bn_wide.infer(&self.conv_wide.infer(x)?)?;
        let h = self.bn_point.infer(&self.conv_point.infer(&crate::nn::relu(&h))?)?;
        let mut y = crate::nn::relu(&h);
        y.add_assign(x);
        Ok(y)
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.conv_wide.forward(x)?;
        let h = self.bn_wide.forward(&h, mode)?;
        let h = self.relu_wide.forward(&h);
        let h = self.conv_point.forward(&h)?;
        let h = self.bn_point.forward(&h, mode)?;
        let mut y = self.relu_point.forward(&h);
        y.add_assign(x);
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let g = self.relu_point.backward(dy)?;
        let g = self.bn_point.backward(&g)?;
        let g = self.conv_point.backward(&g)?;
        let g = self.relu_wide.backward(&g)?;
        let g = self.bn_wide.backward(&g)?;
        let mut dx = self.conv_wide.backward(&g)?;
        dx.add_assign(dy);
        Ok(dx)
    }

    fn norms(&self) -> [&BatchNorm; 2] {
        [&self.bn_wide, &self.bn_point]
    }

    fn norms_mut(&mut self) -> [&mut BatchNorm; 2] {
        [&mut self.bn_wide, &mut self.bn_point]
    }
}

#[derive(Clone, Debug)]
pub struct CnnAsr {
    config: AsrConfig,
    input: Linear,
    blocks: Vec<ResBlock>,
    output: Linear,
}

impl CnnAsr {
    pub fn new<R: Rng + ?Sized>(config: AsrConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let input = Linear::new("input", config.input_dim, config.hidden, 0.5, rng);
        let blocks = (0..config.blocks)
            .map(|b| ResBlock::new(&format!("block{b}"), config.hidden, config.kernel, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new("output", config.hidden, config.output_dim(), 0.5, rng);
        Ok(Self {
            config,
            input,
            blocks,
            output,
        })
    }

    pub fn config(&self) -> &AsrConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (frames, dim) = x.expect_matrix("ASR features")?;
        if dim != self.config.input_dim {
            return Err(Error::invalid(format!(
                "ASR expects {}-dimensional features, got {dim}",
                self.config.input_dim
            )));
        }
        if frames == 0 {
            return Err(Error::invalid("ASR input has no frames"));
        }
        Ok(())
    }

    /// Inference-mode logits (`T x (N+1)`); leaves the model untouched.
    pub fn infer(&self, features: &Tensor) -> Result<Tensor> {
        self.check_input(features)?;
        let mut h = self.input.infer(features)?;
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        self.output.infer(&h)
    }

    /// Source posteriorgram of an utterance.
    pub fn posteriorgram(&self, features: &Tensor) -> Result<Posteriorgram> {
        Posteriorgram::from_logits(&self.infer(features)?)
    }

    /// Logits with the activations cached for [`CnnAsr::backward`].
    /// Train mode uses (and updates) per-utterance batch statistics.
    pub fn forward(&mut self, features: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(features)?;
        let mut h = self.input.forward(features)?;
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        self.output.forward(&h)
    }

    /// Accumulates parameter gradients from `dlogits`; returns the feature gradient.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let mut g = self.output.backward(dlogits)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        self.input.backward(&g)
    }

    fn running_stats(&self) -> Vec<(String, &RunningStats)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for bn in block.norms() {
                out.push((bn.gamma.name.trim_end_matches(".gamma").to_string(), &bn.stats));
            }
        }
        out
    }

    pub fn to_checkpoint(&self, inventory: &SymbolInventory, metadata: TrainingMetadata) -> Result<Checkpoint> {
        if inventory.len() != self.config.n_symbols {
            return Err(Error::invalid("inventory size does not match the ASR output layer"));
        }
        let mut ckpt = Checkpoint::new(ModelKind::CnnAsr, serde_json::to_value(&self.config)?, metadata)
            .with_inventory("source", inventory);
        for p in self.params() {
            ckpt.push(p.name.clone(), p.value.clone());
        }
        for (prefix, stats) in self.running_stats() {
            ckpt.push(format!("{prefix}.running_mean"), stats.mean.clone());
            ckpt.push(format!("{prefix}.running_var"), stats.var.clone());
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, SymbolInventory)> {
        ckpt.expect_kind(ModelKind::CnnAsr)?;
        let config: AsrConfig = serde_json::from_value(ckpt.model_config.clone())
            .map_err(|e| crate::CheckpointError::Manifest(format!("ASR config: {e}")))?;
        let inventory = ckpt.inventory("source")?.clone();
        if inventory.len() != config.n_symbols {
            return Err(crate::CheckpointError::Manifest("inventory size disagrees with ASR config".into()).into());
        }
        // Build a skeleton with the right shapes, then overwrite every tensor.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        let mut reader = ckpt.reader();
        for p in model.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = reader.take(&p.name, &shape)?;
        }
        for block in &mut model.blocks {
            for bn in block.norms_mut() {
                let prefix = bn.gamma.name.trim_end_matches(".gamma").to_string();
                let shape = bn.stats.mean.shape().to_vec();
                bn.stats.mean = reader.take(&format!("{prefix}.running_mean"), &shape)?;
                bn.stats.var = reader.take(&format!("{prefix}.running_var"), &shape)?;
            }
        }
        reader.finish()?;
        Ok((model, inventory))
    }
}

impl Module for CnnAsr {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.input.params().into();
        for b in &self.blocks {
            out.extend(b.conv_wide.params());
            out.extend(b.bn_wide.params());
            out.extend(b.conv_point.params());
            out.extend(b.bn_point.params());
        }
        out.extend(self.output.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.input.params_mut().into();
        for b in &mut self.blocks {
            out.extend(b.conv_wide.params_mut());
            out.extend(b.bn_wide.params_mut());
            out.extend(b.conv_point.params_mut());
            out.extend(b.bn_point.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }
}
