//! The end-to-end experiment as resumable, content-addressed stages.
//!
//! ```text
//! <output_dir>/
//!   data/        languages, inventories, reference mapping, four corpora
//!   asr/         asr.ckpt, training_log.json
//!   ptn/         ptn.ckpt, training_log.json
//!   mapping/     mapping.tsv, probes.json
//!   embeddings/  source_embeddings.ckpt, target_embeddings.ckpt, transfer_report.json
//!   eval/        score.json, report.json
//! ```
//!
//! Every stage directory holds a `manifest.json`; a stage refuses to start
//! unless each upstream manifest matches the current configuration and the
//! files on disk.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Stage, Strategy, DEFAULT_SEED, SEED_ENV};
pub use manifest::{file_digest, path_digest, DirLock, RunManifest, TOOL_VERSION};

use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_mapping, posteriorgram_report, random_baseline_recall, random_baseline_recall_mc, MappingScore,
    MonteCarloEstimate, PosteriorgramReport,
};
use crate::inventory::SymbolInventory;
use crate::mapping::{
    probe, separate_init, table_from_probes, transfer_embeddings, unified_transfer, EmbeddingMatrix,
    HandcraftedTable, MappingTable, TransferReport,
};
use crate::models::{train_asr, train_ptn, CnnAsr, Ptn, TrainingLog};
use crate::synth::{generate_corpus, generate_corpus_with_budget, generate_language_pair, Corpus, GroundTruthMapping, LanguageSpec};

pub const SOURCE_LANGUAGE: &str = "data/source_language.json";
pub const TARGET_LANGUAGE: &str = "data/target_language.json";
pub const SOURCE_INVENTORY: &str = "data/source_inventory.txt";
pub const TARGET_INVENTORY: &str = "data/target_inventory.txt";
pub const TRUTH: &str = "data/truth.tsv";
pub const SOURCE_TRAIN: &str = "data/source_train";
pub const SOURCE_DEV: &str = "data/source_dev";
pub const TARGET_TRAIN: &str = "data/target_train";
pub const TARGET_DEV: &str = "data/target_dev";
pub const DATA_SUMMARY: &str = "data/summary.json";
pub const ASR_CHECKPOINT: &str = "asr/asr.ckpt";
pub const ASR_LOG: &str = "asr/training_log.json";
pub const PTN_CHECKPOINT: &str = "ptn/ptn.ckpt";
pub const PTN_LOG: &str = "ptn/training_log.json";
pub const MAPPING_TABLE: &str = "mapping/mapping.tsv";
pub const PROBES: &str = "mapping/probes.json";
pub const SOURCE_EMBEDDINGS: &str = "embeddings/source_embeddings.ckpt";
pub const TARGET_EMBEDDINGS: &str = "embeddings/target_embeddings.ckpt";
pub const TRANSFER_REPORT: &str = "embeddings/transfer_report.json";
pub const SCORE: &str = "eval/score.json";
pub const REPORT: &str = "eval/report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub utterances: usize,
    pub frames: usize,
    pub minutes: f64,
}

impl CorpusSummary {
    fn of(c: &Corpus) -> Self {
        Self {
            utterances: c.len(),
            frames: c.total_frames(),
            minutes: c.minutes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source_train: CorpusSummary,
    pub source_dev: CorpusSummary,
    pub target_train: CorpusSummary,
    pub target_dev: CorpusSummary,
    pub overlap_size: usize,
    pub source_min_mean_distance: f64,
    pub target_min_mean_distance: f64,
}

/// Source-symbol probe distributions over the target inventory plus blank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub smoothing: f64,
    pub source_symbols: Vec<String>,
    pub target_symbols: Vec<String>,
    pub probes: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub xi: f64,
    pub n_predicted: usize,
    pub n_correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub xi: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_predicted: usize,
    pub n_correct: usize,
    pub overlap_size: usize,
    pub random_baseline_recall: Option<f64>,
    pub random_baseline_monte_carlo: Option<MonteCarloEstimate>,
    pub sweep: Vec<SweepPoint>,
    pub asr_on_target: PosteriorgramReport,
    pub stack_on_target: PosteriorgramReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

fn stage_key(stage: Stage) -> String {
    format!("stage:{}", stage.name())
}

/// Languages and reference mapping written by `gen-data`.
pub struct DataArtifacts {
    pub source: LanguageSpec,
    pub target: LanguageSpec,
    pub truth: GroundTruthMapping,
}

/// A run directory owned by this process.
pub struct Pipeline {
    config: ExperimentConfig,
    root: PathBuf,
    _lock: DirLock,
}

impl Pipeline {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let root = config.output_dir.clone();
        let lock = DirLock::acquire(&root)?;
        Ok(Self {
            config,
            root,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Checks every upstream stage against the configuration, its files, and
    /// the upstream digests it recorded. Returns the inputs to record.
    fn verify_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut verified: BTreeMap<String, String> = BTreeMap::new();
        for &up in stage.upstream() {
            let m = RunManifest::read(&self.root, up)?;
            if m.stage_config_digest != self.config.stage_digest(up) {
                return Err(Error::Integrity(format!(
                    "`{}` output in {} was produced with a different configuration; re-run `phonmap {}`",
                    up.name(),
                    self.root.display(),
                    up.command()
                )));
            }
            m.verify_outputs(&self.root)?;
            for (key, digest) in m.inputs.iter().filter(|(k, _)| k.starts_with("stage:")) {
                if verified.get(key) != Some(digest) {
                    return Err(Error::Integrity(format!(
                        "`{}` was built from a different `{}` than the one on disk; re-run `phonmap {}`",
                        up.name(),
                        key.trim_start_matches("stage:"),
                        up.command()
                    )));
                }
            }
            verified.insert(stage_key(up), m.stage_digest);
        }
        Ok(verified)
    }

    fn fresh_dir(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.root.join(stage.name());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn finish(
        &self,
        stage: Stage,
        inputs: BTreeMap<String, String>,
        outputs: &[&str],
        started: Instant,
    ) -> Result<RunManifest> {
        let mut digests = BTreeMap::new();
        for rel in outputs {
            digests.insert(rel.to_string(), path_digest(&self.path(rel))?);
        }
        let manifest = RunManifest::seal(
            stage,
            self.config.digest(),
            self.config.stage_digest(stage),
            self.config.seed,
            inputs,
            digests,
            started.elapsed().as_secs_f64(),
        );
        manifest.write(&self.root)?;
        info!("{} done in {:.1}s", stage.command(), manifest.wall_time_secs);
        Ok(manifest)
    }

    fn metadata(&self, steps: u64, inputs: &BTreeMap<String, String>) -> TrainingMetadata {
        TrainingMetadata {
            seed: self.config.seed,
            steps,
            config_digest: self.config.digest(),
            extra: inputs.clone(),
        }
    }

    pub fn gen_data(&self) -> Result<RunManifest> {
        let started = Instant::now();
        let cfg = &self.config.synthlang;
        let seed = self.config.seed;
        self.fresh_dir(Stage::Data)?;
        let pair = generate_language_pair(&cfg.pair(), derive_seed(seed, "language"))?;
        let lengths = (cfg.min_length, cfg.max_length);
        let source_train = generate_corpus_with_budget(
            &pair.source,
            cfg.source_frames(),
            lengths,
            "src",
            &mut rng_for(seed, "source-train"),
        )?;
        let source_dev = generate_corpus(&pair.source, cfg.dev_utterances, lengths, "srcdev", &mut rng_for(seed, "source-dev"))?;
        let target_train = generate_corpus_with_budget(
            &pair.target,
            cfg.target_frames(),
            lengths,
            "tgt",
            &mut rng_for(seed, "target-train"),
        )?;
        let target_dev = generate_corpus(&pair.target, cfg.dev_utterances, lengths, "tgtdev", &mut rng_for(seed, "target-dev"))?;

        fs::write(self.path(SOURCE_LANGUAGE), pair.source.to_json()?).map_err(|e| Error::io(SOURCE_LANGUAGE, e))?;
        fs::write(self.path(TARGET_LANGUAGE), pair.target.to_json()?).map_err(|e| Error::io(TARGET_LANGUAGE, e))?;
        pair.source.inventory.save(self.path(SOURCE_INVENTORY))?;
        pair.target.inventory.save(self.path(TARGET_INVENTORY))?;
        fs::write(
            self.path(TRUTH),
            pair.truth.to_text(&pair.source.inventory, &pair.target.inventory),
        )
        .map_err(|e| Error::io(TRUTH, e))?;
        source_train.save(self.path(SOURCE_TRAIN), &pair.source.inventory)?;
        source_dev.save(self.path(SOURCE_DEV), &pair.source.inventory)?;
        target_train.save(self.path(TARGET_TRAIN), &pair.target.inventory)?;
        target_dev.save(self.path(TARGET_DEV), &pair.target.inventory)?;
        write_json(
            &self.path(DATA_SUMMARY),
            &DataSummary {
                source_train: CorpusSummary::of(&source_train),
                source_dev: CorpusSummary::of(&source_dev),
                target_train: CorpusSummary::of(&target_train),
                target_dev: CorpusSummary::of(&target_dev),
                overlap_size: pair.truth.len(),
                source_min_mean_distance: pair.source.min_mean_distance(),
                target_min_mean_distance: pair.target.min_mean_distance(),
            },
        )?;
        info!(
            "source {:.1} min / target {:.1} min, {} shared symbols",
            source_train.minutes(),
            target_train.minutes(),
            pair.truth.len()
        );
        self.finish(
            Stage::Data,
            BTreeMap::new(),
            &[
                SOURCE_LANGUAGE,
                TARGET_LANGUAGE,
                SOURCE_INVENTORY,
                TARGET_INVENTORY,
                TRUTH,
                SOURCE_TRAIN,
                SOURCE_DEV,
                TARGET_TRAIN,
                TARGET_DEV,
                DATA_SUMMARY,
            ],
            started,
        )
    }

    /// Reads the languages and reference mapping (no verification).
    pub fn load_data(&self) -> Result<DataArtifacts> {
        let source = LanguageSpec::from_json(&read_text(&self.path(SOURCE_LANGUAGE))?)?;
        let target = LanguageSpec::from_json(&read_text(&self.path(TARGET_LANGUAGE))?)?;
        let truth = GroundTruthMapping::from_text(&read_text(&self.path(TRUTH))?, &source.inventory, &target.inventory)?;
        Ok(DataArtifacts { source, target, truth })
    }

    fn load_corpus(&self, rel: &str, inventory: &SymbolInventory) -> Result<Corpus> {
        let (corpus, inv) = Corpus::load(self.path(rel))?;
        if &inv != inventory {
            return Err(Error::Integrity(format!("{rel} uses a different inventory")));
        }
        Ok(corpus)
    }

    pub fn load_asr(&self) -> Result<(CnnAsr, SymbolInventory)> {
        CnnAsr::from_checkpoint(&Checkpoint::load(self.path(ASR_CHECKPOINT))?)
    }

    pub fn load_ptn(&self) -> Result<(Ptn, SymbolInventory, SymbolInventory)> {
        Ptn::from_checkpoint(&Checkpoint::load(self.path(PTN_CHECKPOINT))?)
    }

    pub fn train_asr(&self) -> Result<RunManifest> {
        let started = Instant::now();
        let inputs = self.verify_upstream(Stage::Asr)?;
        let data = self.load_data()?;
        let inv = &data.source.inventory;
        let train = self.load_corpus(SOURCE_TRAIN, inv)?;
        let dev = self.load_corpus(SOURCE_DEV, inv)?;
        self.fresh_dir(Stage::Asr)?;
        let seed = self.config.seed;
        let model = CnnAsr::new(self.config.asr.model(data.source.dim(), inv.len()), &mut rng_for(seed, "asr-init"))?;
        let (model, log) = train_asr(model, &train, &dev, &self.config.asr.train(), derive_seed(seed, "asr-train"))?;
        report_log("asr", &log);
        model
            .to_checkpoint(inv, self.metadata(log.steps, &inputs))?
            .save(self.path(ASR_CHECKPOINT))?;
        write_json(&self.path(ASR_LOG), &log)?;
        self.finish(Stage::Asr, inputs, &[ASR_CHECKPOINT, ASR_LOG], started)
    }

    pub fn train_ptn(&self) -> Result<RunManifest> {
        let started = Instant::now();
        let mut inputs = self.verify_upstream(Stage::Ptn)?;
        let data = self.load_data()?;
        let (asr, asr_inv) = self.load_asr()?;
        if asr_inv != data.source.inventory {
            return Err(Error::Integrity("ASR checkpoint inventory differs from the source language".into()));
        }
        let tgt = &data.target.inventory;
        let train = self.load_corpus(TARGET_TRAIN, tgt)?;
        let dev = self.load_corpus(TARGET_DEV, tgt)?;
        let asr_ckpt = Checkpoint::load(self.path(ASR_CHECKPOINT))?;
        let frozen_before = asr_ckpt.parameter_digest();
        inputs.insert("asr_checkpoint".into(), file_digest(&self.path(ASR_CHECKPOINT))?);
        inputs.insert("asr_parameters".into(), frozen_before.clone());
        self.fresh_dir(Stage::Ptn)?;

        let seed = self.config.seed;
        let model = Ptn::new(self.config.ptn.model(asr_inv.len(), tgt.len()), &mut rng_for(seed, "ptn-init"))?;
        let (model, log) = train_ptn(&asr, model, &train, &dev, &self.config.ptn.train(), derive_seed(seed, "ptn-train"))?;
        report_log("ptn", &log);
        let frozen_after = asr.to_checkpoint(&asr_inv, asr_ckpt.metadata.clone())?.parameter_digest();
        if frozen_after != frozen_before {
            return Err(Error::InvalidState("acoustic model changed during PTN training".into()));
        }
        model
            .to_checkpoint(&asr_inv, tgt, self.metadata(log.steps, &inputs))?
            .save(self.path(PTN_CHECKPOINT))?;
        write_json(&self.path(PTN_LOG), &log)?;
        self.finish(Stage::Ptn, inputs, &[PTN_CHECKPOINT, PTN_LOG], started)
    }

    pub fn discover_map(&self) -> Result<RunManifest> {
        let started = Instant::now();
        let inputs = self.verify_upstream(Stage::Mapping)?;
        let data = self.load_data()?;
        let (ptn, src, tgt) = self.load_ptn()?;
        if src != data.source.inventory || tgt != data.target.inventory {
            return Err(Error::Integrity("PTN checkpoint inventories differ from the generated languages".into()));
        }
        self.fresh_dir(Stage::Mapping)?;
        let m = &self.config.mapping;
        let probes = (0..src.len())
            .map(|i| probe(&ptn, i, m.smoothing))
            .collect::<Result<Vec<_>>>()?;
        let table = table_from_probes(&probes, m.xi, &src, &tgt)?;
        info!("{} of {} source symbols mapped at xi = {}", table.n_predicted(), src.len(), m.xi);
        let digest = self.config.digest();
        let text = table.to_text(&src, &tgt, &[("config_digest", &digest)])?;
        fs::write(self.path(MAPPING_TABLE), text).map_err(|e| Error::io(MAPPING_TABLE, e))?;
        let mut target_symbols = tgt.symbols().to_vec();
        target_symbols.push(crate::inventory::BLANK.to_string());
        write_json(
            &self.path(PROBES),
            &ProbeRecord {
                smoothing: m.smoothing,
                source_symbols: src.symbols().to_vec(),
                target_symbols,
                probes,
            },
        )?;
        self.finish(Stage::Mapping, inputs, &[MAPPING_TABLE, PROBES], started)
    }

    pub fn load_mapping(&self, data: &DataArtifacts) -> Result<MappingTable> {
        MappingTable::load(self.path(MAPPING_TABLE), &data.source.inventory, &data.target.inventory)
    }

    pub fn transfer_embeddings(&self) -> Result<RunManifest> {
        let started = Instant::now();
        let mut inputs = self.verify_upstream(Stage::Embeddings)?;
        let data = self.load_data()?;
        let (src, tgt) = (&data.source.inventory, &data.target.inventory);
        let cfg = &self.config.embedding;
        let seed = self.config.seed;
        let handcrafted = match (cfg.strategy, &cfg.unified_table) {
            (Strategy::Unified, Some(path)) => {
                if !path.exists() {
                    return Err(Error::Dependency {
                        path: path.clone(),
                        hint: "embedding.unified_table must name a `source<TAB>target` file".into(),
                    });
                }
                inputs.insert(format!("file:{}", path.display()), file_digest(path)?);
                Some(HandcraftedTable::load(path, src, tgt)?)
            }
            (Strategy::Unified, None) => Some(HandcraftedTable::load(self.path(TRUTH), src, tgt)?),
            _ => None,
        };
        let table = self.load_mapping(&data)?;
        self.fresh_dir(Stage::Embeddings)?;

        // Stand-in for embeddings learned by a source-language model.
        let w_src = separate_init(src, cfg.dim, &mut rng_for(seed, "source-embeddings"))?;
        let mut rng = rng_for(seed, "target-embeddings");
        let (w_tgt, report) = match cfg.strategy {
            Strategy::Separate => {
                let w = separate_init(tgt, cfg.dim, &mut rng)?;
                let rows = vec![crate::mapping::RowOrigin::Random; tgt.len()];
                (w, TransferReport { rows })
            }
            Strategy::Unified => unified_transfer(&w_src, src, handcrafted.as_ref().expect("loaded above"), tgt, &mut rng)?,
            Strategy::Learned => transfer_embeddings(&w_src, src, &table, tgt, &mut rng)?,
        };
        info!("{} target rows copied, {} drawn fresh", report.copied(), report.random());
        let meta = self.metadata(0, &inputs);
        w_src.to_checkpoint(src, meta.clone())?.save(self.path(SOURCE_EMBEDDINGS))?;
        w_tgt.to_checkpoint(tgt, meta)?.save(self.path(TARGET_EMBEDDINGS))?;
        write_json(&self.path(TRANSFER_REPORT), &report)?;
        self.finish(
            Stage::Embeddings,
            inputs,
            &[SOURCE_EMBEDDINGS, TARGET_EMBEDDINGS, TRANSFER_REPORT],
            started,
        )
    }

    pub fn load_embeddings(&self) -> Result<(EmbeddingMatrix, EmbeddingMatrix, TransferReport)> {
        let (w_src, _) = EmbeddingMatrix::from_checkpoint(&Checkpoint::load(self.path(SOURCE_EMBEDDINGS))?)?;
        let (w_tgt, _) = EmbeddingMatrix::from_checkpoint(&Checkpoint::load(self.path(TARGET_EMBEDDINGS))?)?;
        let report = read_json(&self.path(TRANSFER_REPORT))?;
        Ok((w_src, w_tgt, report))
    }

    pub fn eval_map(&self) -> Result<EvalReport> {
        let started = Instant::now();
        let inputs = self.verify_upstream(Stage::Eval)?;
        let data = self.load_data()?;
        let (src, tgt) = (&data.source.inventory, &data.target.inventory);
        let table = self.load_mapping(&data)?;
        let probes: ProbeRecord = read_json(&self.path(PROBES))?;
        let (asr, _) = self.load_asr()?;
        let (ptn, _, _) = self.load_ptn()?;
        let dev = self.load_corpus(TARGET_DEV, tgt)?;
        self.fresh_dir(Stage::Eval)?;

        let score = evaluate_mapping(&table, &data.truth)?;
        let ev = &self.config.evaluation;
        let (baseline, monte_carlo) = if data.truth.is_empty() {
            (None, None)
        } else {
            (
                Some(random_baseline_recall(data.truth.len())?),
                Some(random_baseline_recall_mc(
                    data.truth.len(),
                    ev.baseline_trials,
                    derive_seed(self.config.seed, "baseline"),
                )?),
            )
        };
        let sweep = ev
            .xi_sweep
            .iter()
            .map(|&xi| {
                let t = table_from_probes(&probes.probes, xi, src, tgt)?;
                let s = evaluate_mapping(&t, &data.truth)?;
                Ok(SweepPoint {
                    xi,
                    n_predicted: s.n_predicted,
                    n_correct: s.n_correct,
                    precision: s.precision,
                    recall: s.recall,
                    pairs: t.pairs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let sample = &dev.utterances[..ev.report_utterances.min(dev.len())];
        let source_side = sample
            .iter()
            .map(|u| asr.posteriorgram(&u.features))
            .collect::<Result<Vec<_>>>()?;
        let target_side = source_side
            .iter()
            .map(|p| ptn.transform(p))
            .collect::<Result<Vec<_>>>()?;

        let report = EvalReport {
            config_digest: self.config.digest(),
            xi: table.threshold(),
            precision: score.precision,
            recall: score.recall,
            n_predicted: score.n_predicted,
            n_correct: score.n_correct,
            overlap_size: score.overlap_size,
            random_baseline_recall: baseline,
            random_baseline_monte_carlo: monte_carlo,
            sweep,
            asr_on_target: posteriorgram_report(&source_side)?,
            stack_on_target: posteriorgram_report(&target_side)?,
        };
        write_json(&self.path(SCORE), &score)?;
        write_json(&self.path(REPORT), &report)?;
        self.finish(Stage::Eval, inputs, &[SCORE, REPORT], started)?;
        Ok(report)
    }

    pub fn load_score(&self) -> Result<MappingScore> {
        read_json(&self.path(SCORE))
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.gen_data()?;
        self.train_asr()?;
        self.train_ptn()?;
        self.discover_map()?;
        self.transfer_embeddings()?;
        self.eval_map()
    }
}

fn report_log(name: &str, log: &TrainingLog) {
    if let Some(best) = log.best() {
        info!(
            "{name}: kept epoch {} of {} (dev loss {:.4}, dev SER {:.3}); {} utterances skipped",
            log.best_epoch,
            log.epochs.len(),
            best.dev_loss,
            best.dev_ser,
            log.skipped_infeasible
        );
    }
}

/// Scores a predicted table file against a reference pair file outside of
/// any run directory.
pub fn evaluate_files(
    predicted: &Path,
    reference: &Path,
    source_inventory: &Path,
    target_inventory: &Path,
) -> Result<MappingScore> {
    let src = SymbolInventory::load(source_inventory)?;
    let tgt = SymbolInventory::load(target_inventory)?;
    let table = MappingTable::load(predicted, &src, &tgt)?;
    let truth = GroundTruthMapping::from_text(&read_text(reference)?, &src, &tgt)?;
    evaluate_mapping(&table, &truth)
}
