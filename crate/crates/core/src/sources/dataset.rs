use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Values used as generated.
    Raw,
    /// Bytes divided by 255, no mean subtraction.
    UnitInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `[N, d_x]`.
    pub samples: Tensor,
    pub labels: Option<Vec<u16>>,
    pub num_classes: Option<usize>,
    pub normalization: Normalization,
    /// Latent draws behind synthetic samples, `[N, d_z]`.
    pub latents: Option<Tensor>,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Option<Vec<u16>>, normalization: Normalization) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::Shape(format!("samples must be [N, d], got {:?}", samples.shape())));
        }
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != samples.rows() {
                    return Err(Error::Shape(format!(
                        "{} labels for {} samples",
                        l.len(),
                        samples.rows()
                    )));
                }
                l.iter().max().map(|&m| m as usize + 1)
            }
            None => None,
        };
        Ok(Dataset {
            samples,
            labels,
            num_classes,
            normalization,
            latents: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            normalization: self.normalization,
            latents: self.latents.as_ref().map(|z| z.select_rows(idx)),
        }
    }
}
