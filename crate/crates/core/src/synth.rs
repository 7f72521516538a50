//! Synthetic language pairs with a known sound correspondence.
//!
//! Every symbol emits frames i.i.d. from a Gaussian around its own mean for a
//! uniformly drawn number of frames. Symbols "shared" between the two
//! languages reuse the exact same emission model under different names,
//! which gives a ground-truth mapping to score discovered mappings against.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::inventory::SymbolInventory;
use crate::mapping::table::{parse_pairs, write_pairs};
use crate::nn::Tensor;

/// Nominal frame rate used to express corpus sizes in minutes.
pub const FRAMES_PER_SECOND: usize = 100;

/// Minimum distance between distinct emission means, in units of sigma.
pub const SEPARATION_SIGMAS: f64 = 4.0;

const MAX_DRAWS_PER_MEAN: usize = 1000;

pub fn minutes_to_frames(minutes: f64) -> usize {
    (minutes * 60.0 * FRAMES_PER_SECOND as f64).round() as usize
}

pub fn frames_to_minutes(frames: usize) -> f64 {
    frames as f64 / (60.0 * FRAMES_PER_SECOND as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    /// Feature dimension.
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// Fraction of `min(n_source, n_target)` that is shared (floored).
    pub overlap: f64,
    /// Per-dimension noise standard deviation.
    pub sigma: f64,
    /// Emission means are drawn from `N(0, mean_scale^2 I)`.
    pub mean_scale: f64,
    pub min_duration: usize,
    pub max_duration: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            n_source: 20,
            n_target: 20,
            overlap: 0.7,
            sigma: 0.25,
            mean_scale: 1.0,
            min_duration: 2,
            max_duration: 5,
        }
    }
}

impl PairConfig {
    pub fn shared_count(&self) -> usize {
        (self.overlap * self.n_source.min(self.n_target) as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::config(format!("synthlang.{key}"), msg));
        if self.dim == 0 {
            return fail("dim", "must be at least 1");
        }
        if self.n_source == 0 || self.n_target == 0 {
            return fail("n_source", "both inventories need at least one symbol");
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return fail("overlap", "must lie in [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("sigma", "must be finite and non-negative");
        }
        if !(self.mean_scale > 0.0 && self.mean_scale.is_finite()) {
            return fail("mean_scale", "must be positive");
        }
        if self.min_duration == 0 {
            return fail("min_duration", "must be at least 1");
        }
        if self.max_duration < self.min_duration {
            return fail("max_duration", "must be >= min_duration");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub min_duration: usize,
    pub max_duration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSpec {
    pub inventory: SymbolInventory,
    pub emissions: Vec<Emission>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LanguageFile {
    seed: u64,
    symbols: Vec<String>,
    emissions: Vec<Emission>,
}

impl LanguageSpec {
    pub fn dim(&self) -> usize {
        self.emissions[0].mean.len()
    }

    /// Smallest Euclidean distance between two distinct emission means.
    pub fn min_mean_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.emissions.iter().enumerate() {
            for b in &self.emissions[i + 1..] {
                best = best.min(distance(&a.mean, &b.mean));
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&LanguageFile {
            seed: self.seed,
            symbols: self.inventory.symbols().to_vec(),
            emissions: self.emissions.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LanguageFile = serde_json::from_str(text)?;
        if file.symbols.len() != file.emissions.len() {
            return Err(Error::invalid("language file: symbol and emission counts differ"));
        }
        Ok(Self {
            inventory: SymbolInventory::new(file.symbols)?,
            emissions: file.emissions,
            seed: file.seed,
        })
    }
}

/// Source/target index pairs regarded as the same sound.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMapping {
    pairs: Vec<(usize, usize)>,
    source_digest: String,
    target_digest: String,
}

impl GroundTruthMapping {
    /// Pairs must be injective in both coordinates.
    pub fn new(
        mut pairs: Vec<(usize, usize)>,
        source: &SymbolInventory,
        target: &SymbolInventory,
    ) -> Result<Self> {
        pairs.sort_unstable();
        let mut seen_src = vec![false; source.len()];
        let mut seen_tgt = vec![false; target.len()];
        for &(i, j) in &pairs {
            if i >= source.len() || j >= target.len() {
                return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
            }
            if std::mem::replace(&mut seen_src[i], true) || std::mem::replace(&mut seen_tgt[j], true) {
                return Err(Error::invalid(format!(
                    "reference mapping is not one-to-one at ({}, {})",
                    source.symbols()[i],
                    target.symbols()[j]
                )));
            }
        }
        Ok(Self {
            pairs,
            source_digest: source.digest(),
            target_digest: target.digest(),
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        self.pairs.binary_search(&(source, target)).is_ok()
    }

    pub fn target_of(&self, source: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == source).map(|p| p.1)
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn target_digest(&self) -> &str {
        &self.target_digest
    }

    pub fn to_text(&self, source: &SymbolInventory, target: &SymbolInventory) -> String {
        write_pairs(&self.pairs, source, target)
    }

    pub fn from_text(text: &str, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let pairs = parse_pairs(text, source, target)?
            .into_iter()
            .map(|p| (p.source, p.target))
            .collect();
        Self::new(pairs, source, target)
    }
}

pub struct LanguagePair {
    pub source: LanguageSpec,
    pub target: LanguageSpec,
    pub truth: GroundTruthMapping,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn symbol_names(prefix: char, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Draws a language pair. Deterministic in `(config, seed)`.
pub fn generate_language_pair(config: &PairConfig, seed: u64) -> Result<LanguagePair> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = config.shared_count();
    let n_means = config.n_source + config.n_target - shared;
    let min_dist = SEPARATION_SIGMAS * config.sigma;

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_means);
    while means.len() < n_means {
        let mut placed = false;
        for _ in 0..MAX_DRAWS_PER_MEAN {
            let cand: Vec<f64> = (0..config.dim)
                .map(|_| config.mean_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            if means.iter().all(|m| distance(m, &cand) >= min_dist) {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {n_means} emission means at least {min_dist} apart after \
                 {MAX_DRAWS_PER_MEAN} draws; use a larger dim or a smaller sigma"
            )));
        }
    }

    let emission = |mean: &Vec<f64>| Emission {
        mean: mean.clone(),
        sigma: config.sigma,
        min_duration: config.min_duration,
        max_duration: config.max_duration,
    };
    let source_emissions: Vec<Emission> = means[..config.n_source].iter().map(emission).collect();

    let mut src_order: Vec<usize> = (0..config.n_source).collect();
    src_order.shuffle(&mut rng);
    let mut tgt_order: Vec<usize> = (0..config.n_target).collect();
    tgt_order.shuffle(&mut rng);

    let mut target_emissions: Vec<Option<Emission>> = vec![None; config.n_target];
    let mut pairs = Vec::with_capacity(shared);
    for k in 0..shared {
        let (i, j) = (src_order[k], tgt_order[k]);
        target_emissions[j] = Some(source_emissions[i].clone());
        pairs.push((i, j));
    }
    let mut fresh = means[config.n_source..].iter();
    let target_emissions: Vec<Emission> = target_emissions
        .into_iter()
        .map(|e| e.unwrap_or_else(|| emission(fresh.next().expect("one fresh mean per novel symbol"))))
        .collect();

    let source = LanguageSpec {
        inventory: SymbolInventory::new(symbol_names('s', config.n_source))?,
        emissions: source_emissions,
        seed,
    };
    let target = LanguageSpec {
        inventory: SymbolInventory::new(symbol_names('t', config.n_target))?,
        emissions: target_emissions,
        seed,
    };
    let truth = GroundTruthMapping::new(pairs, &source.inventory, &target.inventory)?;
    Ok(LanguagePair {
        source,
        target,
        truth,
    })
}

/// Renders `symbols` as a `T x D` feature matrix with random durations and noise.
pub fn synthesize_utterance<R: Rng + ?Sized>(
    lang: &LanguageSpec,
    symbols: &LabelSequence,
    rng: &mut R,
) -> Result<Tensor> {
    let dim = lang.dim();
    let mut data = Vec::new();
    for &s in symbols.ids() {
        let e = lang
            .emissions
            .get(s)
            .ok_or_else(|| Error::invalid(format!("symbol {s} not in the language")))?;
        let duration = rng.random_range(e.min_duration..=e.max_duration);
        let noise = Normal::new(0.0, e.sigma).map_err(|err| Error::invalid(err.to_string()))?;
        for _ in 0..duration {
            for d in 0..dim {
                data.push(e.mean[d] + noise.sample(rng));
            }
        }
    }
    let frames = data.len() / dim;
    Tensor::matrix(frames, dim, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub labels: LabelSequence,
    pub features: Tensor,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    feature_dim: usize,
    total_frames: usize,
    inventory_digest: String,
    utterances: Vec<UtteranceEntry>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceEntry {
    id: String,
    frames: usize,
    labels: Vec<usize>,
    file: String,
}

fn random_labels<R: Rng + ?Sized>(n_symbols: usize, len: usize, rng: &mut R) -> Result<LabelSequence> {
    LabelSequence::new((0..len).map(|_| rng.random_range(0..n_symbols)).collect(), n_symbols)
}

fn check_lengths(lengths: (usize, usize)) -> Result<()> {
    if lengths.0 == 0 || lengths.1 < lengths.0 {
        return Err(Error::invalid(format!("invalid utterance length range {lengths:?}")));
    }
    Ok(())
}

/// Paired corpus of `n_utts` utterances with uniformly drawn lengths and symbols.
pub fn generate_corpus<R: Rng + ?Sized>(
    lang: &LanguageSpec,
    n_utts: usize,
    lengths: (usize, usize),
    id_prefix: &str,
    rng: &mut R,
) -> Result<Corpus> {
    if n_utts == 0 {
        return Err(Error::invalid("corpus needs at least one utterance"));
    }
    check_lengths(lengths)?;
    let n = lang.inventory.len();
    let mut utterances = Vec::with_capacity(n_utts);
    for u in 0..n_utts {
        let len = rng.random_range(lengths.0..=lengths.1);
        let labels = random_labels(n, len, rng)?;
        let features = synthesize_utterance(lang, &labels, rng)?;
        utterances.push(Utterance {
            id: format!("{id_prefix}{u:06}"),
            labels,
            features,
        });
    }
    Ok(Corpus {
        utterances,
        dim: lang.dim(),
    })
}

/// Keeps adding utterances until the corpus holds at least `frame_budget` frames.
pub fn generate_corpus_with_budget<R: Rng + ?Sized>(
    lang: &LanguageSpec,
    frame_budget: usize,
    lengths: (usize, usize),
    id_prefix: &str,
    rng: &mut R,
) -> Result<Corpus> {
    check_lengths(lengths)?;
    let n = lang.inventory.len();
    let mut utterances = Vec::new();
    let mut total = 0;
    while total < frame_budget.max(1) {
        let len = rng.random_range(lengths.0..=lengths.1);
        let labels = random_labels(n, len, rng)?;
        let features = synthesize_utterance(lang, &labels, rng)?;
        total += features.rows();
        utterances.push(Utterance {
            id: format!("{id_prefix}{:06}", utterances.len()),
            labels,
            features,
        });
    }
    Ok(Corpus {
        utterances,
        dim: lang.dim(),
    })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }

    pub fn minutes(&self) -> f64 {
        frames_to_minutes(self.total_frames())
    }

    /// Writes `inventory.txt`, `manifest.json` and one raw little-endian f64
    /// feature file per utterance under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, inventory: &SymbolInventory) -> Result<()> {
        let dir = dir.as_ref();
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        inventory.save(dir.join("inventory.txt"))?;
        let mut entries = Vec::with_capacity(self.len());
        for u in &self.utterances {
            let file = format!("features/{}.f64", u.id);
            let path = dir.join(&file);
            fs::write(&path, u.features.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
            entries.push(UtteranceEntry {
                id: u.id.clone(),
                frames: u.frames(),
                labels: u.labels.ids().to_vec(),
                file,
            });
        }
        let manifest = CorpusManifest {
            feature_dim: self.dim,
            total_frames: self.total_frames(),
            inventory_digest: inventory.digest(),
            utterances: entries,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, SymbolInventory)> {
        let dir = dir.as_ref();
        let inventory = SymbolInventory::load(dir.join("inventory.txt"))?;
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)?;
        if manifest.inventory_digest != inventory.digest() {
            return Err(Error::Integrity(format!(
                "{}: manifest was written for a different inventory",
                dir.display()
            )));
        }
        let mut utterances = Vec::with_capacity(manifest.utterances.len());
        for e in manifest.utterances {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let features = Tensor::from_le_bytes(vec![e.frames, manifest.feature_dim], &bytes)
                .map_err(|err| Error::Integrity(format!("{}: {err}", path.display())))?;
            utterances.push(Utterance {
                id: e.id,
                labels: LabelSequence::new(e.labels, inventory.len())?,
                features,
            });
        }
        let corpus = Corpus {
            utterances,
            dim: manifest.feature_dim,
        };
        if corpus.total_frames() != manifest.total_frames {
            return Err(Error::Integrity(format!("{}: frame count mismatch", dir.display())));
        }
        Ok((corpus, inventory))
    }
}
