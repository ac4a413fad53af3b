use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::LearningRates;
use crate::config::Grouping;
use crate::error::{Error, Result};

/// Who does what in one round, with the budgets and learning rates in force.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub t: usize,
    /// `A_m`, ascending ids.
    pub model_group: Vec<usize>,
    /// `A_o`, ascending ids.
    pub feature_group: Vec<usize>,
    pub model_budget: usize,
    pub feature_budget: usize,
    pub rates: LearningRates,
}

impl RoundPlan {
    /// `A_m ∪ A_o`, ascending.
    pub fn participants(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.model_group.iter().chain(&self.feature_group).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Draws `K_m + K_o` distinct clients uniformly without replacement and splits
/// them into `A_m` and `A_o`.
#[allow(clippy::too_many_arguments)]
pub fn sample_round<R: Rng + ?Sized>(
    rng: &mut R,
    clients: usize,
    model_clients: usize,
    feature_clients: usize,
    grouping: Grouping,
    budgets: (usize, usize),
    rates: LearningRates,
    t: usize,
) -> Result<RoundPlan> {
    let total = model_clients + feature_clients;
    if total > clients {
        return Err(Error::InvalidArgument(format!(
            "K_m + K_o = {total} exceeds K = {clients}"
        )));
    }
    let mut picked = index::sample(rng, clients, total).into_vec();
    match grouping {
        Grouping::Random => picked.shuffle(rng),
        Grouping::Capacity => {
            let mut scored: Vec<(f64, usize)> = picked.iter().map(|&k| (rng.random::<f64>(), k)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            picked = scored.into_iter().map(|(_, k)| k).collect();
        }
    }
    let mut feature_group = picked.split_off(model_clients);
    let mut model_group = picked;
    model_group.sort_unstable();
    feature_group.sort_unstable();
    Ok(RoundPlan {
        t,
        model_group,
        feature_group,
        model_budget: budgets.0,
        feature_budget: budgets.1,
        rates,
    })
}
