//! Image datasets, client partitioning and mini-batch iteration.

mod batches;
mod idx;
mod partition;
mod pnm;
mod synth;

pub use batches::{minibatches, MiniBatches};
pub use idx::{encode_idx_images, load_idx, parse_idx};
pub use partition::{partition, ClientData, Partition, PartitionSpec, PartitionStrategy};
pub use pnm::{load_image_dir, parse_pnm, PnmKind};
pub use synth::{synth_dataset, SynthKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images of a common `C×H×W` shape with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Vec<Tensor>,
    ids: Vec<usize>,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(images: Vec<Tensor>, split: Split) -> Result<Self> {
        if let Some(first) = images.first() {
            for (i, img) in images.iter().enumerate() {
                if img.shape() != first.shape() {
                    return Err(Error::Data(format!(
                        "image {i} has shape {:?}, expected {:?}",
                        img.shape(),
                        first.shape()
                    )));
                }
                if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Data(format!("image {i} has pixels outside [0, 1]")));
                }
            }
        }
        let ids = (0..images.len()).collect();
        Ok(Self { images, ids, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    /// Subset by position, keeping the original ids.
    pub fn select(&self, positions: &[usize], split: Split) -> Self {
        Self {
            images: positions.iter().map(|&i| self.images[i].clone()).collect(),
            ids: positions.iter().map(|&i| self.ids[i]).collect(),
            split,
        }
    }
}
