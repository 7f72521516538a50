use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Tensor};

/// Row sums must be within this of 1 for a posteriorgram to be accepted.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-frame probability distributions over an inventory plus blank
/// (the blank is the last column).
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    probs: Tensor,
}

impl Posteriorgram {
    pub fn new(probs: Tensor) -> Result<Self> {
        let (_, width) = probs.expect_matrix("posteriorgram")?;
        if width < 2 {
            return Err(Error::invalid("posteriorgram needs at least one symbol plus blank"));
        }
        for (t, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("frame {t} has a value outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("frame {t} sums to {sum}, not 1")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        logits.expect_matrix("logits")?;
        Ok(Self {
            probs: softmax_rows(logits),
        })
    }

    /// A single frame that puts all mass on `index`.
    pub fn one_hot(width: usize, index: usize) -> Result<Self> {
        if index >= width {
            return Err(Error::invalid(format!("index {index} out of range for width {width}")));
        }
        let mut row = vec![0.0; width];
        row[index] = 1.0;
        Self::new(Tensor::matrix(1, width, row)?)
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn width(&self) -> usize {
        self.probs.cols()
    }

    pub fn blank(&self) -> usize {
        self.width() - 1
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor {
        self.probs
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    /// Per-frame argmax, ties resolved to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.row_iter().map(argmax).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
