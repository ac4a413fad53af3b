use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Index batches over `epochs` passes, each a fresh permutation cut into consecutive chunks.
#[derive(Debug, Clone)]
pub struct MiniBatches {
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for MiniBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.batches.next()
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.batches.size_hint()
    }
}

impl ExactSizeIterator for MiniBatches {}

pub fn minibatches<R: Rng + ?Sized>(
    len: usize,
    batch_size: usize,
    rng: &mut R,
    epochs: usize,
) -> Result<MiniBatches> {
    if len == 0 {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut batches = Vec::with_capacity(epochs * len.div_ceil(batch_size));
    let mut order: Vec<usize> = (0..len).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        batches.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    Ok(MiniBatches {
        batches: batches.into_iter(),
    })
}
