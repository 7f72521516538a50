//! Connectionist temporal classification: loss and gradient by the
//! forward–backward recursion, an exhaustive-enumeration oracle, and greedy
//! decoding.
//!
//! The blank always occupies the last column of a logit or probability
//! matrix.

use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, Tensor};
use crate::posteriorgram::{argmax, Posteriorgram};

/// Upper bound on paths the brute-force oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// A nonempty sequence of symbol indices that never contains the blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    /// `n_symbols` counts linguistic symbols only, so valid ids are `0..n_symbols`.
    pub fn new(ids: Vec<usize>, n_symbols: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("label sequence is empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= n_symbols) {
            return Err(Error::invalid(format!(
                "label id {bad} out of range for {n_symbols} symbols (blank is {n_symbols})"
            )));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fewest frames any alignment needs: one per label plus a separating
    /// blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

#[derive(Clone, Debug)]
pub struct CtcResult {
    /// Negative log-likelihood of the labels.
    pub loss: f64,
    /// Gradient of `loss` with respect to the pre-softmax logits.
    pub grad: Tensor,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_labels(width: usize, labels: &LabelSequence) -> Result<usize> {
    if width < 2 {
        return Err(Error::invalid("need at least one symbol plus blank"));
    }
    let blank = width - 1;
    if let Some(&bad) = labels.ids().iter().find(|&&id| id >= blank) {
        return Err(Error::invalid(format!(
            "label id {bad} collides with blank or exceeds width {width}"
        )));
    }
    Ok(blank)
}

/// CTC loss and its exact gradient with respect to `logits` (`T x (N+1)`).
pub fn ctc_loss(logits: &Tensor, labels: &LabelSequence) -> Result<CtcResult> {
    let (frames, width) = logits.expect_matrix("ctc logits")?;
    let blank = check_labels(width, labels)?;
    let required = labels.min_frames();
    if frames < required {
        return Err(Error::AlignmentInfeasible { frames, required });
    }

    let logp = log_softmax_rows(logits);
    // Labels interleaved with blanks: _ l0 _ l1 _ ... _
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(labels.ids().iter().flat_map(|&l| [l, blank]))
        .collect();
    let states = ext.len();
    // State s may be entered from s-2 when it is a label differing from the
    // label two states back.
    let skip: Vec<bool> = (0..states)
        .map(|s| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        .collect();

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * states];
    alpha[0] = logp.at(0, ext[0]);
    alpha[1] = logp.at(0, ext[1]);
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        let cur = &mut cur[..states];
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip[s] {
                acc = log_add(acc, prev[s - 2]);
            }
            if acc != neg {
                cur[s] = acc + logp.at(t, ext[s]);
            }
        }
    }
    let last = (frames - 1) * states;
    let log_likelihood = log_add(alpha[last + states - 1], alpha[last + states - 2]);
    if log_likelihood == neg {
        return Err(Error::AlignmentInfeasible { frames, required });
    }

    // beta[t][s]: log probability of the remaining frames t..T given state s
    // at frame t, including the emission at t.
    let mut beta = vec![neg; frames * states];
    beta[last + states - 1] = logp.at(frames - 1, ext[states - 1]);
    beta[last + states - 2] = logp.at(frames - 1, ext[states - 2]);
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        let next = &next[..states];
        for s in 0..states {
            let mut acc = next[s];
            if s + 1 < states {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < states && skip[s + 2] {
                acc = log_add(acc, next[s + 2]);
            }
            if acc != neg {
                cur[s] = acc + logp.at(t, ext[s]);
            }
        }
    }

    let mut grad = Tensor::zeros(&[frames, width]);
    for t in 0..frames {
        let row = grad.row_mut(t);
        for (k, g) in row.iter_mut().enumerate() {
            *g = logp.at(t, k).exp();
        }
        for s in 0..states {
            let a = alpha[t * states + s];
            let b = beta[t * states + s];
            if a == neg || b == neg {
                continue;
            }
            // alpha and beta both contain the emission at t.
            let occupancy = a + b - logp.at(t, ext[s]) - log_likelihood;
            row[ext[s]] -= occupancy.exp();
        }
    }

    Ok(CtcResult {
        loss: -log_likelihood,
        grad,
    })
}

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Negative log of the summed probability of every length-T path whose
/// collapse equals `labels`, found by enumerating all `(N+1)^T` paths.
pub fn ctc_brute_force(probs: &Posteriorgram, labels: &LabelSequence) -> Result<f64> {
    let (frames, width) = (probs.frames(), probs.width());
    let blank = check_labels(width, labels)?;
    let paths = (width as u64)
        .checked_pow(frames as u32)
        .filter(|&n| n <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| {
            Error::ResourceLimit(format!(
                "{width}^{frames} paths exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}"
            ))
        })?;

    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    for _ in 0..paths {
        if collapse(&path, blank) == labels.ids() {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs.frame(t)[k])
                .product::<f64>();
        }
        // odometer increment, last frame fastest
        for digit in path.iter_mut().rev() {
            *digit += 1;
            if *digit < width {
                break;
            }
            *digit = 0;
        }
    }
    Ok(-total.ln())
}

/// Per-frame argmax, repeat collapse, blank removal. May be empty.
pub fn greedy_decode(posteriorgram: &Posteriorgram) -> Vec<usize> {
    collapse(&posteriorgram.argmax(), posteriorgram.blank())
}

/// Greedy decode straight from logits (argmax is invariant under softmax).
pub fn greedy_decode_logits(logits: &Tensor) -> Vec<usize> {
    let path: Vec<usize> = logits.row_iter().map(argmax).collect();
    collapse(&path, logits.cols() - 1)
}

/// Levenshtein distance between two symbol sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(ids: &[usize], n: usize) -> LabelSequence {
        LabelSequence::new(ids.to_vec(), n).unwrap()
    }

    fn random_logits(frames: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(
            frames,
            width,
            (0..frames * width).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn label_sequence_validation() {
        assert!(LabelSequence::new(vec![], 3).is_err());
        assert!(LabelSequence::new(vec![3], 3).is_err());
        assert_eq!(labels(&[0, 0, 1, 1, 1, 2], 3).min_frames(), 9);
    }

    #[test]
    fn single_frame_forces_alignment() {
        let logits = Tensor::matrix(1, 3, vec![0.2, -1.0, 0.7]).unwrap();
        let r = ctc_loss(&logits, &labels(&[1], 2)).unwrap();
        let expected = -log_softmax_rows(&logits).at(0, 1);
        assert!((r.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frames_is_log_three() {
        // N = 2 plus blank, all probabilities 1/3; paths (a,a), (a,-), (-,a).
        let logits = Tensor::zeros(&[2, 3]);
        let r = ctc_loss(&logits, &labels(&[0], 2)).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-12, "{}", r.loss);
    }

    #[test]
    fn infeasible_alignment_is_distinct_error() {
        let logits = Tensor::zeros(&[2, 3]);
        match ctc_loss(&logits, &labels(&[0, 0], 2)) {
            Err(Error::AlignmentInfeasible { frames: 2, required: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn brute_force_hand_cases() {
        let probs = Posteriorgram::new(
            Tensor::matrix(3, 3, vec![0.5, 0.2, 0.3, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5]).unwrap(),
        )
        .unwrap();
        // T=1
        let one = Posteriorgram::new(Tensor::matrix(1, 3, vec![0.5, 0.2, 0.3]).unwrap()).unwrap();
        let l = ctc_brute_force(&one, &labels(&[0], 2)).unwrap();
        assert!((l + 0.5f64.ln()).abs() < 1e-15);
        // T=2, [a, b]: only (a, b)
        let two = Posteriorgram::new(
            Tensor::matrix(2, 3, vec![0.5, 0.2, 0.3, 0.1, 0.6, 0.3]).unwrap(),
        )
        .unwrap();
        let l = ctc_brute_force(&two, &labels(&[0, 1], 2)).unwrap();
        assert!((l + (0.5f64 * 0.6).ln()).abs() < 1e-15);
        // T=3, [a, a]: only (a, -, a)
        let l = ctc_brute_force(&probs, &labels(&[0, 0], 2)).unwrap();
        assert!((l + (0.5f64 * 0.3 * 0.25).ln()).abs() < 1e-15);
    }

    #[test]
    fn brute_force_guard() {
        let probs = Posteriorgram::from_logits(&Tensor::zeros(&[11, 5])).unwrap();
        assert!(matches!(
            ctc_brute_force(&probs, &labels(&[0], 4)),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let n = rng.random_range(1..=4);
            let frames = rng.random_range(1..=7);
            let len = rng.random_range(1..=frames.min(4));
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let seq = labels(&ids, n);
            let logits = random_logits(frames, n + 1, &mut rng);
            let probs = Posteriorgram::from_logits(&logits).unwrap();
            match ctc_loss(&logits, &seq) {
                Ok(r) => {
                    let oracle = ctc_brute_force(&probs, &seq).unwrap();
                    assert!((r.loss - oracle).abs() < 1e-9, "{} vs {oracle}", r.loss);
                }
                Err(Error::AlignmentInfeasible { .. }) => {
                    assert!(frames < seq.min_frames());
                    assert!(ctc_brute_force(&probs, &seq).unwrap().is_infinite());
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let eps = 1e-5;
        for _ in 0..20 {
            let n = rng.random_range(1..=4);
            let frames = rng.random_range(3..=8);
            let ids: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..n)).collect();
            let seq = labels(&ids, n);
            let logits = random_logits(frames, n + 1, &mut rng);
            let r = ctc_loss(&logits, &seq).unwrap();
            for i in 0..logits.len() {
                let mut plus = logits.clone();
                plus.data_mut()[i] += eps;
                let mut minus = logits.clone();
                minus.data_mut()[i] -= eps;
                let numeric =
                    (ctc_loss(&plus, &seq).unwrap().loss - ctc_loss(&minus, &seq).unwrap().loss) / (2.0 * eps);
                let rel = crate::nn::gradcheck::relative_error(r.grad.data()[i], numeric);
                assert!(rel < 1e-5, "rel {rel}");
            }
        }
    }

    #[test]
    fn greedy_examples() {
        let blank = 2;
        let frames = |path: &[usize]| {
            let mut data = vec![0.0; path.len() * 3];
            for (t, &k) in path.iter().enumerate() {
                data[t * 3 + k] = 1.0;
            }
            Posteriorgram::new(Tensor::matrix(path.len(), 3, data).unwrap()).unwrap()
        };
        assert_eq!(greedy_decode(&frames(&[0, 0, blank, 1])), vec![0, 1]);
        assert_eq!(greedy_decode(&frames(&[blank, blank])), Vec::<usize>::new());
        assert_eq!(greedy_decode(&frames(&[0, blank, 0])), vec![0, 0]);
    }

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance(&[1, 2], &[2, 1]), 2);
    }

    /// Random alignment of `ids` into `frames` frames: each label gets a run,
    /// blanks are sprinkled in and forced between equal neighbours.
    fn random_alignment(ids: &[usize], frames: usize, blank: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (i, &l) in ids.iter().enumerate() {
            if i > 0 && ids[i - 1] == l {
                runs.push((blank, 1));
            }
            runs.push((l, 1));
        }
        let mut used: usize = runs.iter().map(|r| r.1).sum();
        while used < frames {
            let pos = rng.random_range(0..=runs.len());
            if rng.random::<bool>() || pos == runs.len() {
                runs.insert(pos, (blank, 1));
            } else {
                runs[pos].1 += 1;
            }
            used += 1;
        }
        runs.iter().flat_map(|&(k, n)| std::iter::repeat_n(k, n)).collect()
    }

    proptest! {
        #[test]
        fn grad_rows_sum_to_zero(seed in 0u64..1000, n in 1usize..5, frames in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids = vec![rng.random_range(0..n)];
            let logits = random_logits(frames, n + 1, &mut rng);
            let r = ctc_loss(&logits, &labels(&ids, n)).unwrap();
            prop_assert!(r.loss >= 0.0);
            for row in r.grad.row_iter() {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
            }
        }

        #[test]
        fn relabeling_symbols_keeps_loss(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let frames = 7;
            let ids: Vec<usize> = (0..3).map(|_| rng.random_range(0..n)).collect();
            let logits = random_logits(frames, n + 1, &mut rng);
            let perm = [2usize, 0, 3, 1];
            let mut permuted = logits.clone();
            for t in 0..frames {
                for k in 0..n {
                    permuted.row_mut(t)[perm[k]] = logits.at(t, k);
                }
            }
            let relabeled: Vec<usize> = ids.iter().map(|&k| perm[k]).collect();
            let a = ctc_loss(&logits, &labels(&ids, n)).unwrap().loss;
            let b = ctc_loss(&permuted, &labels(&relabeled, n)).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn greedy_inverts_one_hot_alignments(seed in 0u64..1000, len in 1usize..6, extra in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let seq = labels(&ids, n);
            let frames = seq.min_frames() + extra;
            let path = random_alignment(&ids, frames, n, &mut rng);
            prop_assert_eq!(collapse(&path, n), ids.clone());
            let mut data = vec![0.0; frames * (n + 1)];
            for (t, &k) in path.iter().enumerate() {
                data[t * (n + 1) + k] = 1.0;
            }
            let post = Posteriorgram::new(Tensor::matrix(frames, n + 1, data).unwrap()).unwrap();
            prop_assert_eq!(greedy_decode(&post), ids);
        }
    }
}
