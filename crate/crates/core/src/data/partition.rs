use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    #[default]
    Iid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub clients: usize,
    pub local_size: usize,
    pub public_size: usize,
    /// Images held out for evaluation, taken from what the clients leave over.
    #[serde(default)]
    pub test_size: usize,
    #[serde(default)]
    pub strategy: PartitionStrategy,
}

impl PartitionSpec {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.clients == 0 || self.local_size == 0 {
            return Err(Error::Config(
                "partition.clients and partition.local_size must be positive".into(),
            ));
        }
        if self.public_size > self.local_size {
            return Err(Error::Config(format!(
                "partition.public_size {} exceeds partition.local_size {}",
                self.public_size, self.local_size
            )));
        }
        let needed = self
            .clients
            .checked_mul(self.local_size)
            .and_then(|n| n.checked_add(self.test_size))
            .ok_or_else(|| Error::Config("partition sizes overflow".into()))?;
        if needed > available {
            return Err(Error::Config(format!(
                "partition needs {needed} images but the dataset has {available}"
            )));
        }
        Ok(())
    }
}

/// One client's share: dataset positions of `D_k` and of its public subset `P_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub local: Vec<usize>,
    pub public: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientData>,
    pub test: Vec<usize>,
}

/// Splits `available` dataset positions into disjoint IID client shards plus a test split.
pub fn partition<R: Rng + ?Sized>(available: usize, spec: &PartitionSpec, rng: &mut R) -> Result<Partition> {
    spec.validate(available)?;
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(rng);
    let total: usize = spec.clients * spec.local_size;
    let clients = order[..total]
        .chunks_exact(spec.local_size)
        .enumerate()
        .map(|(id, chunk)| {
            let mut public: Vec<usize> = index::sample(rng, chunk.len(), spec.public_size)
                .into_iter()
                .map(|i| chunk[i])
                .collect();
            public.sort_unstable();
            ClientData {
                id,
                local: chunk.to_vec(),
                public,
                weight: chunk.len() as f64 / total as f64,
            }
        })
        .collect();
    let test = order[total..total + spec.test_size].to_vec();
    Ok(Partition { clients, test })
}
