//! Scoring discovered mappings against a reference and diagnosing
//! posteriorgrams.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::collapse;
use crate::error::{Error, Result};
use crate::mapping::MappingTable;
use crate::posteriorgram::Posteriorgram;
use crate::synth::GroundTruthMapping;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    /// No entry although the reference pairs this source symbol.
    Missed,
    /// No entry and nothing to find.
    Unmapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolVerdict {
    pub source: usize,
    pub predicted: Option<usize>,
    pub reference: Option<usize>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingScore {
    pub precision: f64,
    pub recall: f64,
    pub n_predicted: usize,
    pub n_correct: usize,
    pub overlap_size: usize,
    /// Set when nothing was predicted and precision is 1.0 by convention.
    pub precision_vacuous: bool,
    pub verdicts: Vec<SymbolVerdict>,
}

impl MappingScore {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn evaluate_mapping(predicted: &MappingTable, reference: &GroundTruthMapping) -> Result<MappingScore> {
    if predicted.source_digest() != reference.source_digest()
        || predicted.target_digest() != reference.target_digest()
    {
        return Err(Error::Integrity(
            "predicted table and reference were built for different inventories".into(),
        ));
    }
    let mut verdicts = Vec::with_capacity(predicted.entries().len());
    let (mut n_predicted, mut n_correct) = (0, 0);
    for (i, entry) in predicted.entries().iter().enumerate() {
        let reference_target = reference.target_of(i);
        let predicted_target = entry.map(|e| e.target);
        let verdict = match (predicted_target, reference_target) {
            (Some(j), _) if reference.contains(i, j) => Verdict::Correct,
            (Some(_), _) => Verdict::Incorrect,
            (None, Some(_)) => Verdict::Missed,
            (None, None) => Verdict::Unmapped,
        };
        n_predicted += usize::from(predicted_target.is_some());
        n_correct += usize::from(verdict == Verdict::Correct);
        verdicts.push(SymbolVerdict {
            source: i,
            predicted: predicted_target,
            reference: reference_target,
            verdict,
        });
    }
    let overlap_size = reference.len();
    Ok(MappingScore {
        precision: if n_predicted == 0 { 1.0 } else { n_correct as f64 / n_predicted as f64 },
        recall: if overlap_size == 0 { 0.0 } else { n_correct as f64 / overlap_size as f64 },
        n_predicted,
        n_correct,
        overlap_size,
        precision_vacuous: n_predicted == 0,
        verdicts,
    })
}

/// Expected recall when each of the `overlap_size` shared source symbols is
/// assigned a uniformly random target from the overlap.
pub fn random_baseline_recall(overlap_size: usize) -> Result<f64> {
    if overlap_size == 0 {
        return Err(Error::invalid("overlap size must be at least 1"));
    }
    Ok(1.0 / overlap_size as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub trials: usize,
}

/// Simulates the random assignment: each trial maps every overlap source
/// symbol to a uniformly drawn overlap target and records the recall.
pub fn random_baseline_recall_mc(overlap_size: usize, trials: usize, seed: u64) -> Result<MonteCarloEstimate> {
    random_baseline_recall(overlap_size)?;
    if trials < 2 {
        return Err(Error::invalid("Monte Carlo needs at least two trials"));
    }
    let targets: Vec<usize> = (0..overlap_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let correct = (0..overlap_size)
            .filter(|&i| *targets.choose(&mut rng).expect("non-empty") == i)
            .count();
        let recall = correct as f64 / overlap_size as f64;
        sum += recall;
        sum_sq += recall * recall;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        mean,
        standard_error: (var / n).sqrt(),
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorgramReport {
    pub utterances: usize,
    pub frames: usize,
    pub width: usize,
    /// Per-frame entropy in nats.
    pub entropy: EntropySummary,
    /// Share of frames whose argmax is the blank.
    pub blank_fraction: f64,
    /// Mean collapsed symbols per utterance under greedy decoding.
    pub mean_decoded_length: f64,
    pub max_row_sum_deviation: f64,
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn posteriorgram_report(posteriorgrams: &[Posteriorgram]) -> Result<PosteriorgramReport> {
    let first = posteriorgrams
        .first()
        .ok_or_else(|| Error::invalid("no posteriorgrams to report on"))?;
    let width = first.width();
    let mut entropies = Vec::new();
    let mut blanks = 0usize;
    let mut decoded = 0usize;
    let mut deviation: f64 = 0.0;
    for p in posteriorgrams {
        if p.width() != width {
            return Err(Error::invalid("posteriorgrams of different widths"));
        }
        let path = p.argmax();
        blanks += path.iter().filter(|&&k| k == p.blank()).count();
        decoded += collapse(&path, p.blank()).len();
        for t in 0..p.frames() {
            let row = p.frame(t);
            deviation = deviation.max((row.iter().sum::<f64>() - 1.0).abs());
            entropies.push(entropy(row));
        }
    }
    let frames = entropies.len();
    let mut sorted = entropies.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(PosteriorgramReport {
        utterances: posteriorgrams.len(),
        frames,
        width,
        entropy: EntropySummary {
            mean: entropies.iter().sum::<f64>() / frames as f64,
            min: sorted[0],
            max: sorted[frames - 1],
            p10: quantile(&sorted, 0.1),
            p50: quantile(&sorted, 0.5),
            p90: quantile(&sorted, 0.9),
        },
        blank_fraction: blanks as f64 / frames as f64,
        mean_decoded_length: decoded as f64 / posteriorgrams.len() as f64,
        max_row_sum_deviation: deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::SymbolInventory;
    use crate::mapping::MappingEntry;
    use crate::nn::Tensor;

    fn inv(prefix: &str, n: usize) -> SymbolInventory {
        SymbolInventory::new((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
    }

    fn table(pairs: &[(usize, usize)], s: &SymbolInventory, t: &SymbolInventory) -> MappingTable {
        let mut entries = vec![None; s.len()];
        for &(i, j) in pairs {
            entries[i] = Some(MappingEntry { target: j, confidence: 0.9 });
        }
        MappingTable::new(entries, 0.4, s, t).unwrap()
    }

    #[test]
    fn arithmetic_example() {
        let (s, t) = (inv("s", 8), inv("t", 8));
        let reference = GroundTruthMapping::new((0..6).map(|i| (i, i)).collect(), &s, &t).unwrap();
        let predicted = table(&[(0, 0), (1, 1), (2, 2), (6, 3)], &s, &t);
        let score = evaluate_mapping(&predicted, &reference).unwrap();
        assert_eq!((score.n_predicted, score.n_correct, score.overlap_size), (4, 3, 6));
        assert_eq!(score.precision, 0.75);
        assert_eq!(score.recall, 0.5);
        assert!(!score.precision_vacuous);
        assert_eq!(score.verdicts[6].verdict, Verdict::Incorrect);
        assert_eq!(score.verdicts[4].verdict, Verdict::Missed);
        assert_eq!(score.verdicts[7].verdict, Verdict::Unmapped);
        let json = score.to_json().unwrap();
        for key in ["precision", "recall", "n_predicted", "n_correct", "overlap_size", "verdicts"] {
            assert!(json.contains(&format!("\"{key}\"")));
        }
    }

    #[test]
    fn empty_and_perfect_predictions() {
        let (s, t) = (inv("s", 5), inv("t", 5));
        let pairs = [(0, 3), (2, 1), (4, 4)];
        let reference = GroundTruthMapping::new(pairs.to_vec(), &s, &t).unwrap();
        let empty = evaluate_mapping(&table(&[], &s, &t), &reference).unwrap();
        assert_eq!((empty.n_predicted, empty.recall, empty.precision), (0, 0.0, 1.0));
        assert!(empty.precision_vacuous);
        let perfect = evaluate_mapping(&table(&pairs, &s, &t), &reference).unwrap();
        assert_eq!((perfect.precision, perfect.recall), (1.0, 1.0));
    }

    #[test]
    fn permuting_indices_consistently_keeps_the_score() {
        let (s, t) = (inv("s", 4), inv("t", 4));
        let reference = GroundTruthMapping::new(vec![(0, 1), (1, 2), (3, 0)], &s, &t).unwrap();
        let predicted = table(&[(0, 1), (1, 3), (2, 2)], &s, &t);
        let base = evaluate_mapping(&predicted, &reference).unwrap();

        let perm = [3usize, 1, 0, 2];
        let s2 = SymbolInventory::new((0..4).map(|new| format!("s{}", perm.iter().position(|&p| p == new).unwrap())))
            .unwrap();
        let t2 = SymbolInventory::new((0..4).map(|new| format!("t{}", perm.iter().position(|&p| p == new).unwrap())))
            .unwrap();
        let reference2 =
            GroundTruthMapping::new(reference.pairs().iter().map(|&(i, j)| (perm[i], perm[j])).collect(), &s2, &t2)
                .unwrap();
        let predicted2 = table(&[(perm[0], perm[1]), (perm[1], perm[3]), (perm[2], perm[2])], &s2, &t2);
        let moved = evaluate_mapping(&predicted2, &reference2).unwrap();
        assert_eq!(
            (moved.precision, moved.recall, moved.n_predicted, moved.n_correct),
            (base.precision, base.recall, base.n_predicted, base.n_correct)
        );
    }

    #[test]
    fn inventory_mismatch_is_an_integrity_error() {
        let (s, t) = (inv("s", 3), inv("t", 3));
        let reference = GroundTruthMapping::new(vec![(0, 0)], &s, &inv("u", 3)).unwrap();
        assert!(matches!(
            evaluate_mapping(&table(&[], &s, &t), &reference),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn random_baseline_analytic_and_monte_carlo() {
        assert_eq!(random_baseline_recall(1).unwrap(), 1.0);
        assert_eq!(random_baseline_recall(25).unwrap(), 0.04);
        assert!(random_baseline_recall(0).is_err());
        for k in [2, 5, 20, 50] {
            let mc = random_baseline_recall_mc(k, 100_000, 17).unwrap();
            let analytic = random_baseline_recall(k).unwrap();
            assert!(
                (mc.mean - analytic).abs() < 3.0 * mc.standard_error,
                "k={k}: {mc:?} vs {analytic}"
            );
        }
    }

    #[test]
    fn entropy_extremes_and_row_sums() {
        let uniform = Posteriorgram::new(Tensor::filled(&[4, 5], 0.2)).unwrap();
        let report = posteriorgram_report(&[uniform]).unwrap();
        assert!((report.entropy.mean - 5f64.ln()).abs() < 1e-12);
        let one_hot = Posteriorgram::one_hot(5, 2).unwrap();
        let report = posteriorgram_report(&[one_hot]).unwrap();
        assert_eq!(report.entropy.mean, 0.0);
        assert_eq!(report.mean_decoded_length, 1.0);

        let logits = Tensor::matrix(3, 4, vec![3.0, -1.0, 0.5, 2.0, 0.0, 0.0, 9.0, -4.0, 1.0, 1.0, 1.0, 7.0]).unwrap();
        let report = posteriorgram_report(&[Posteriorgram::from_logits(&logits).unwrap()]).unwrap();
        assert!(report.max_row_sum_deviation < 1e-9);
        assert!((report.blank_fraction - 1.0 / 3.0).abs() < 1e-12);
    }
}
