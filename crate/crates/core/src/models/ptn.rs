//! Phonetic transformation network: a per-frame map from source-symbol
//! distributions to target-symbol distributions.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind, TrainingMetadata};
use crate::error::{CheckpointError, Error, Result};
use crate::inventory::SymbolInventory;
use crate::nn::{Dropout, Linear, Mode, Module, Param, Relu, Tensor};
use crate::posteriorgram::Posteriorgram;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtnConfig {
    /// Source symbols, blank excluded.
    pub n_source: usize,
    /// Target symbols, blank excluded.
    pub n_target: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl PtnConfig {
    pub fn new(n_source: usize, n_target: usize) -> Self {
        Self {
            n_source,
            n_target,
            hidden: 128,
            dropout: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("degenerate PTN dimensions {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("PTN dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Ptn {
    config: PtnConfig,
    fc1: Linear,
    relu1: Relu,
    drop1: Dropout,
    fc2: Linear,
    relu2: Relu,
    drop2: Dropout,
    fc3: Linear,
}

impl Ptn {
    pub fn new<R: Rng + ?Sized>(config: PtnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (din, h, dout) = (config.n_source + 1, config.hidden, config.n_target + 1);
        Ok(Self {
            fc1: Linear::new("fc1", din, h, 1.0, rng),
            relu1: Relu::default(),
            drop1: Dropout::new(config.dropout)?,
            fc2: Linear::new("fc2", h, h, 1.0, rng),
            relu2: Relu::default(),
            drop2: Dropout::new(config.dropout)?,
            fc3: Linear::new("fc3", h, dout, 0.5, rng),
            config,
        })
    }

    pub fn config(&self) -> &PtnConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, width) = x.expect_matrix("PTN input")?;
        if width != self.config.n_source + 1 {
            return Err(Error::invalid(format!(
                "PTN expects rows of width {}, got {width}",
                self.config.n_source + 1
            )));
        }
        Ok(())
    }

    /// Inference-mode logits; dropout is off and nothing is cached.
    pub fn infer_logits(&self, p_src: &Tensor) -> Result<Tensor> {
        self.check_input(p_src)?;
        let h = crate::nn::relu(&self.fc1.infer(p_src)?);
        let h = crate::nn::relu(&self.fc2.infer(&h)?);
        self.fc3.infer(&h)
    }

    /// Target posteriorgram for a source posteriorgram, frame by frame.
    pub fn transform(&self, p_src: &Posteriorgram) -> Result<Posteriorgram> {
        Posteriorgram::from_logits(&self.infer_logits(p_src.probs())?)
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, p_src: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        self.check_input(p_src)?;
        let h = self.fc1.forward(p_src)?;
        let h = self.relu1.forward(&h);
        let h = self.drop1.forward(&h, mode, rng)?;
        let h = self.fc2.forward(&h)?;
        let h = self.relu2.forward(&h);
        let h = self.drop2.forward(&h, mode, rng)?;
        self.fc3.forward(&h)
    }

    pub fn backward(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let g = self.fc3.backward(dlogits)?;
        let g = self.drop2.backward(&g)?;
        let g = self.relu2.backward(&g)?;
        let g = self.fc2.backward(&g)?;
        let g = self.drop1.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        self.fc1.backward(&g)
    }

    pub fn to_checkpoint(
        &self,
        source: &SymbolInventory,
        target: &SymbolInventory,
        metadata: TrainingMetadata,
    ) -> Result<Checkpoint> {
        if source.len() != self.config.n_source || target.len() != self.config.n_target {
            return Err(Error::invalid("inventory sizes do not match the PTN"));
        }
        let mut ckpt = Checkpoint::new(ModelKind::Ptn, serde_json::to_value(&self.config)?, metadata)
            .with_inventory("source", source)
            .with_inventory("target", target);
        for p in self.params() {
            ckpt.push(p.name.clone(), p.value.clone());
        }
        Ok(ckpt)
    }

    /// Returns the network with its source and target inventories.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, SymbolInventory, SymbolInventory)> {
        ckpt.expect_kind(ModelKind::Ptn)?;
        let config: PtnConfig = serde_json::from_value(ckpt.model_config.clone())
            .map_err(|e| CheckpointError::Manifest(format!("PTN config: {e}")))?;
        let source = ckpt.inventory("source")?.clone();
        let target = ckpt.inventory("target")?.clone();
        if source.len() != config.n_source || target.len() != config.n_target {
            return Err(CheckpointError::Manifest("inventory sizes disagree with PTN config".into()).into());
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        let mut reader = ckpt.reader();
        for p in model.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = reader.take(&p.name, &shape)?;
        }
        reader.finish()?;
        Ok((model, source, target))
    }
}

impl Module for Ptn {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::with_capacity(6);
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out.extend(self.fc3.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::with_capacity(6);
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out.extend(self.fc3.params_mut());
        out
    }
}
