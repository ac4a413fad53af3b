use rand::seq::index;
use rand::Rng;

use super::ClientState;
use crate::compression::{build_local_update, SparseUpdate};
use crate::data::minibatches;
use crate::error::{Error, Result};
use crate::jscc::{encode, transmit_grad, ChannelConfig, JsccModel};
use crate::tensor::{sgd_step_in_place, Tensor};

/// Result of `E_c` epochs of local SGD from the broadcast model.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    /// `w − w_k^(t,E_c)`, i.e. the learning-rate-weighted gradient sum.
    pub accum: Vec<f64>,
    /// `w_k^(t,E_c)`, encoder first.
    pub final_params: Vec<f64>,
    pub steps: usize,
    /// Mean mini-batch `l_c` over all steps.
    pub mean_loss: f64,
    /// Largest mini-batch gradient norm seen.
    pub max_grad_norm: f64,
}

impl LocalOutcome {
    /// The encoder slice `θ_k^(t,E_c)`.
    pub fn theta<'a>(&'a self, model: &JsccModel) -> &'a [f64] {
        &self.final_params[..model.theta_len()]
    }
}

/// Mini-batch SGD on `l_c` over `images`, starting from `model`.
pub fn local_update<R: Rng + ?Sized>(
    model: &JsccModel,
    images: &[&Tensor],
    eta_c: f64,
    epochs: usize,
    batch_size: usize,
    channel: ChannelConfig,
    rng: &mut R,
) -> Result<LocalOutcome> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("local epochs must be at least 1".into()));
    }
    let batches = minibatches(images.len(), batch_size, rng, epochs)?;
    let start = model.flat().into_values();
    let mut w = start.clone();
    let mut local = model.clone();
    let mut grad = vec![0.0; w.len()];
    let (mut steps, mut loss_sum, mut max_norm) = (0, 0.0, 0.0f64);
    for batch in batches {
        grad.fill(0.0);
        let mut loss = 0.0;
        for &i in &batch {
            loss += transmit_grad(&local, images[i], channel, rng, &mut grad)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("client gradient"));
        }
        max_norm = max_norm.max(norm);
        loss_sum += loss * scale;
        steps += 1;
        sgd_step_in_place(&mut w, &grad, eta_c)?;
        local.load_flat(&w)?;
    }
    let accum = start.iter().zip(&w).map(|(a, b)| a - b).collect();
    Ok(LocalOutcome {
        accum,
        final_params: w,
        steps,
        mean_loss: loss_sum / steps as f64,
        max_grad_norm: max_norm,
    })
}

/// Sparsifies `accum` through the client's error memory, updating the memory.
pub fn make_model_payload(
    client: &mut ClientState,
    accum: &[f64],
    boundaries: &[(usize, usize)],
    budget: &[usize],
    round: u64,
) -> Result<SparseUpdate> {
    let (g, memory) = build_local_update(accum, &client.memory, boundaries, budget, round)?;
    client.memory = memory;
    Ok(g)
}

/// Encoder outputs uploaded by one feature client. `source_ids` is kept for
/// auditing only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub owner: usize,
    pub vectors: Vec<Tensor>,
    pub source_ids: Vec<usize>,
}

/// How many length-`d` vectors fit in a budget of `s_o` values.
pub fn feature_budget_vectors(s_o: usize, d: usize) -> usize {
    s_o.checked_div(d).unwrap_or(0)
}

/// Encodes a uniform subset of the public images with the client's updated
/// encoder. `public` pairs each image with its dataset id.
pub fn make_feature_payload<R: Rng + ?Sized>(
    owner: usize,
    model: &JsccModel,
    public: &[(usize, &Tensor)],
    budget_vectors: usize,
    rng: &mut R,
) -> Result<FeatureSet> {
    if public.is_empty() {
        return Err(Error::Data(format!("client {owner} has no public images")));
    }
    let count = budget_vectors.min(public.len());
    if count == 0 {
        log::warn!("client {owner}: feature budget admits no vectors");
    }
    let mut picks = index::sample(rng, public.len(), count).into_vec();
    picks.sort_unstable();
    let vectors = picks
        .iter()
        .map(|&i| encode(model, public[i].1))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        owner,
        vectors,
        source_ids: picks.iter().map(|&i| public[i].0).collect(),
    })
}
