//! Per-channel normalization over the time axis of a single utterance.

use super::ops::Mode;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-6;
pub const BN_MOMENTUM: f64 = 0.1;

/// Exponential moving averages used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::filled(&[channels], 1.0),
        }
    }
}

/// What the train-mode backward needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize)> {
    let (frames, channels) = x.expect_matrix("batchnorm input")?;
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::invalid(format!(
            "batchnorm shape mismatch: input {:?}, gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((frames, channels))
}

/// Train mode normalizes with the utterance's own statistics and folds them
/// into `stats`; infer mode reads `stats` only.
pub fn batchnorm_time(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    stats: &mut RunningStats,
) -> Result<(Tensor, Option<BnCache>)> {
    if mode == Mode::Infer {
        return batchnorm_infer(x, gamma, beta, stats).map(|y| (y, None));
    }
    let (frames, channels) = check(x, gamma, beta)?;
    if frames < 2 {
        return Err(Error::invalid(format!(
            "batchnorm in train mode needs at least 2 frames, got {frames}"
        )));
    }
    let n = frames as f64;
    let mut mean = vec![0.0; channels];
    for row in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; channels];
    for row in x.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut normalized = x.clone();
    let mut y = x.clone();
    for t in 0..frames {
        let xr = normalized.row_mut(t);
        for c in 0..channels {
            xr[c] = (xr[c] - mean[c]) * inv_std[c];
        }
        let yr = y.row_mut(t);
        for c in 0..channels {
            yr[c] = gamma.data()[c] * normalized.at(t, c) + beta.data()[c];
        }
    }

    let unbias = n / (n - 1.0);
    for c in 0..channels {
        let rm = &mut stats.mean.data_mut()[c];
        *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c];
        let rv = &mut stats.var.data_mut()[c];
        *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[c] * unbias;
    }
    Ok((y, Some(BnCache { normalized, inv_std })))
}

pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
) -> Result<Tensor> {
    let (frames, channels) = check(x, gamma, beta)?;
    let scale: Vec<f64> = (0..channels)
        .map(|c| gamma.data()[c] / (stats.var.data()[c] + BN_EPSILON).sqrt())
        .collect();
    let mut y = x.clone();
    for t in 0..frames {
        let row = y.row_mut(t);
        for c in 0..channels {
            row[c] = (row[c] - stats.mean.data()[c]) * scale[c] + beta.data()[c];
        }
    }
    Ok(y)
}

pub fn batchnorm_time_backward(cache: &BnCache, gamma: &Tensor, dy: &Tensor) -> BnGrads {
    let (frames, channels) = (dy.rows(), dy.cols());
    let n = frames as f64;
    let xhat = &cache.normalized;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for t in 0..frames {
        for c in 0..channels {
            let g = dy.at(t, c);
            dbeta[c] += g;
            dgamma[c] += g * xhat.at(t, c);
        }
    }
    // dxhat = dy * gamma; sums over time of dxhat and dxhat*xhat follow from
    // dbeta and dgamma.
    let mut dx = Tensor::zeros(&[frames, channels]);
    for t in 0..frames {
        let row = dx.row_mut(t);
        for c in 0..channels {
            let gm = gamma.data()[c];
            let dxhat = dy.at(t, c) * gm;
            row[c] = cache.inv_std[c] / n
                * (n * dxhat - gm * dbeta[c] - xhat.at(t, c) * gm * dgamma[c]);
        }
    }
    BnGrads {
        input: dx,
        gamma: Tensor::vector(dgamma).expect("channels > 0"),
        beta: Tensor::vector(dbeta).expect("channels > 0"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_input_is_fixed_point() {
        // Per channel: mean 0, biased variance 1.
        let x = Tensor::matrix(4, 2, vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let mut stats = RunningStats::new(2);
        let (y, _) = batchnorm_time(
            &x,
            &Tensor::filled(&[2], 1.0),
            &Tensor::zeros(&[2]),
            Mode::Train,
            &mut stats,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gamma_emits_beta() {
        let x = Tensor::matrix(3, 2, vec![0.3, 9.0, -2.0, 4.0, 7.0, 1.0]).unwrap();
        let beta = Tensor::vector(vec![0.5, -0.25]).unwrap();
        let mut stats = RunningStats::new(2);
        let (y, _) =
            batchnorm_time(&x, &Tensor::zeros(&[2]), &beta, Mode::Train, &mut stats).unwrap();
        for row in y.row_iter() {
            assert_eq!(row, beta.data());
        }
    }

    #[test]
    fn single_frame_train_is_rejected() {
        let mut stats = RunningStats::new(1);
        let r = batchnorm_time(
            &Tensor::zeros(&[1, 1]),
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            Mode::Train,
            &mut stats,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        // Inference has no such restriction.
        let r = batchnorm_time(
            &Tensor::zeros(&[1, 1]),
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            Mode::Infer,
            &mut stats,
        );
        assert!(r.is_ok());
    }

    #[test]
    fn running_stats_track_batches() {
        let x = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        batchnorm_time(
            &x,
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            Mode::Train,
            &mut stats,
        )
        .unwrap();
        assert!((stats.mean.data()[0] - 0.2).abs() < 1e-15);
        // unbiased variance of (1, 3) is 2
        assert!((stats.var.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
