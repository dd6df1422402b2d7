use serde::{Deserialize, Serialize};

use crate::autodiff::row_softmax;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadTag {
    Prototypical,
    Matching,
    Relation,
    GraphMetric,
    Linear,
    Ensemble,
}

/// Query-by-class scores from one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadScores {
    pub logits: Matrix,
    pub tag: HeadTag,
}

impl HeadScores {
    pub fn new(logits: Matrix, tag: HeadTag) -> Result<Self> {
        logits.ensure_finite("head scores")?;
        Ok(Self { logits, tag })
    }

    pub fn way(&self) -> usize {
        self.logits.cols()
    }

    /// Highest-scoring class per query; ties go to the lower index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|i| {
                let row = self.logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let preds = self.predictions();
        let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

pub const DEFAULT_ENSEMBLE_WEIGHT: f64 = 0.5;

/// Row-softmax both score sets, then `weight * a + (1 - weight) * b`.
pub fn ensemble_scores(a: &HeadScores, b: &HeadScores, weight: f64) -> Result<HeadScores> {
    if a.logits.shape() != b.logits.shape() {
        return Err(Error::Shape {
            op: "ensemble_scores",
            left: a.logits.shape(),
            right: b.logits.shape(),
        });
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!("ensemble weight {weight} outside [0, 1]")));
    }
    let pa = row_softmax(&a.logits);
    let pb = row_softmax(&b.logits);
    HeadScores::new(pa.scale(weight).add(&pb.scale(1.0 - weight))?, HeadTag::Ensemble)
}
