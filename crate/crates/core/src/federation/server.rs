use rand::Rng;

use crate::compression::{ErrorMemory, SparseUpdate};
use crate::data::minibatches;
use crate::error::{Error, Result};
use crate::jscc::{fr_grad, ChannelConfig, JsccModel};
use crate::tensor::{sgd_step_in_place, Tensor};

/// `w − (K/K_m) Σ p_k g_k`, summed in ascending client id. Each update is
/// `(client id, p_k, g_k)`.
pub fn aggregate(
    w: &[f64],
    updates: &[(usize, f64, &SparseUpdate)],
    boundaries: &[(usize, usize)],
    clients: usize,
    model_clients: usize,
) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Ok(w.to_vec());
    }
    if model_clients == 0 {
        return Err(Error::InvalidArgument("model updates received with K_m = 0".into()));
    }
    let mut ordered: Vec<&(usize, f64, &SparseUpdate)> = updates.iter().collect();
    ordered.sort_by_key(|u| u.0);
    if ordered.windows(2).any(|p| p[0].0 == p[1].0) {
        return Err(Error::InvalidArgument("duplicate client in aggregation".into()));
    }
    let mut acc = vec![0.0; w.len()];
    for &&(_, p, g) in &ordered {
        if g.layers.len() != boundaries.len() {
            return Err(Error::Length {
                expected: boundaries.len(),
                actual: g.layers.len(),
            });
        }
        g.for_each_entry(boundaries, |j, v| acc[j] += p * v);
    }
    let scale = clients as f64 / model_clients as f64;
    Ok(w.iter().zip(&acc).map(|(wi, a)| wi - scale * a).collect())
}

/// Summary of the server's feature-reconstruction pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerOutcome {
    pub model: JsccModel,
    pub steps: usize,
    pub mean_loss: f64,
}

/// `E_s` epochs of mini-batch SGD on `l_s` over the pooled features.
pub fn server_fr_update<R: Rng + ?Sized>(
    model: &JsccModel,
    features: &[Tensor],
    eta_s: f64,
    epochs: usize,
    batch_size: usize,
    channel: ChannelConfig,
    rng: &mut R,
) -> Result<ServerOutcome> {
    if epochs == 0 || eta_s == 0.0 || features.is_empty() {
        if features.is_empty() && epochs > 0 {
            log::debug!("server: empty feature pool, skipping reconstruction");
        }
        return Ok(ServerOutcome {
            model: model.clone(),
            steps: 0,
            mean_loss: 0.0,
        });
    }
    let mut w = model.flat().into_values();
    let mut current = model.clone();
    let mut grad = vec![0.0; w.len()];
    let (mut steps, mut loss_sum) = (0, 0.0);
    for batch in minibatches(features.len(), batch_size, rng, epochs)? {
        grad.fill(0.0);
        let mut loss = 0.0;
        for &i in &batch {
            loss += fr_grad(&current, &features[i], channel, rng, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("server loss"));
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        sgd_step_in_place(&mut w, &grad, eta_s)?;
        current.load_flat(&w)?;
        loss_sum += loss * scale;
        steps += 1;
    }
    Ok(ServerOutcome {
        model: current,
        steps,
        mean_loss: loss_sum / steps as f64,
    })
}

/// Unsparsified average over every participant of `accum + m` (memories as
/// they were entering the round): `w − K/|A| Σ p_k (accum_k + m_k)`.
/// Diagnostic only; it needs every client's private state.
pub fn best_reference_update(
    w: &[f64],
    participants: &[(f64, &[f64], &ErrorMemory)],
    clients: usize,
) -> Result<Vec<f64>> {
    if participants.is_empty() {
        return Ok(w.to_vec());
    }
    let mut acc = vec![0.0; w.len()];
    for &(p, accum, memory) in participants {
        if accum.len() != w.len() || memory.residual.len() != w.len() {
            return Err(Error::Length {
                expected: w.len(),
                actual: accum.len().min(memory.residual.len()),
            });
        }
        for ((a, u), m) in acc.iter_mut().zip(accum).zip(&memory.residual) {
            *a += p * (u + m);
        }
    }
    let scale = clients as f64 / participants.len() as f64;
    Ok(w.iter().zip(&acc).map(|(wi, a)| wi - scale * a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{top_s_sparsify, SparseLayer};
    use crate::jscc::{fr_pass, Architecture};
    use crate::tensor::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sparse(indices: Vec<u32>, values: Vec<f64>) -> SparseUpdate {
        SparseUpdate {
            layers: vec![SparseLayer { indices, values }],
            origin_round: 0,
        }
    }

    #[test]
    fn aggregate_examples() {
        let g = sparse(vec![0], vec![1.0]);
        assert_eq!(aggregate(&[0.0, 0.0], &[(0, 0.5, &g)], &[(0, 2)], 2, 1).unwrap(), [-1.0, 0.0]);

        let w = [0.3, -1.7, 2.5e-9];
        let empty = sparse(vec![], vec![]);
        let out = aggregate(&w, &[(3, 0.2, &empty), (1, 0.1, &empty)], &[(0, 3)], 4, 2).unwrap();
        assert!(out.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(aggregate(&w, &[(0, 0.2, &empty)], &[(0, 3)], 4, 0).is_err());
        assert!(aggregate(&w, &[(0, 0.2, &empty), (0, 0.2, &empty)], &[(0, 3)], 4, 2).is_err());
    }

    #[test]
    fn aggregate_is_order_independent() {
        let a = sparse(vec![0, 2], vec![0.1, 0.7]);
        let b = sparse(vec![0, 1], vec![0.3, -0.2]);
        let w = [1.0, 2.0, 3.0];
        let x = aggregate(&w, &[(0, 0.3, &a), (5, 0.1, &b)], &[(0, 3)], 6, 2).unwrap();
        let y = aggregate(&w, &[(5, 0.1, &b), (0, 0.3, &a)], &[(0, 3)], 6, 2).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn full_budget_matches_fedavg() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let deltas: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let p = [0.5, 0.3, 0.2];
        let updates: Vec<SparseUpdate> = deltas
            .iter()
            .map(|d| top_s_sparsify(d, &[(0, n)], &[n], 0).unwrap().0)
            .collect();
        let refs: Vec<(usize, f64, &SparseUpdate)> = updates.iter().enumerate().map(|(k, u)| (k, p[k], u)).collect();
        let out = aggregate(&w, &refs, &[(0, n)], 3, 3).unwrap();
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += p[k] * deltas[k][j];
            }
            assert_eq!(out[j].to_bits(), (w[j] - 1.0 * acc).to_bits());
        }
    }

    #[test]
    fn fr_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Architecture::desk().build(&mut rng).unwrap();
        let feats = vec![Tensor::filled(&[16], 0.3)];
        let ch = ChannelConfig::new(20.0);
        assert_eq!(server_fr_update(&model, &feats, 0.1, 0, 4, ch, &mut rng).unwrap().model, model);
        assert_eq!(server_fr_update(&model, &feats, 0.0, 3, 4, ch, &mut rng).unwrap().model, model);
        assert_eq!(server_fr_update(&model, &[], 0.1, 3, 4, ch, &mut rng).unwrap().model, model);
    }

    #[test]
    fn single_fr_step_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Architecture::desk().build(&mut rng).unwrap();
        let y = crate::jscc::encode(&model, &Tensor::filled(&[1, 8, 8], 0.4)).unwrap();
        let eta = 0.1;
        let ch = ChannelConfig::noiseless();
        let out = server_fr_update(&model, std::slice::from_ref(&y), eta, 1, 1, ch, &mut rng).unwrap();
        assert_eq!(out.steps, 1);
        let w = model.flat().into_values();
        let coords: Vec<usize> = (0..w.len()).step_by(53).collect();
        let fd = central_difference(
            &w,
            |p| fr_pass(&model.with_flat(p)?, &y, ch, &mut ChaCha8Rng::seed_from_u64(0)).map(|(_, l)| l),
            Some(&coords),
        )
        .unwrap();
        let stepped = out.model.flat().into_values();
        for &j in &coords {
            let expected = w[j] - eta * fd[j];
            assert!((stepped[j] - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "coord {j}");
        }
    }

    #[test]
    fn best_reference_is_fedavg_without_memory() {
        let w = [1.0, 1.0];
        let zero = ErrorMemory::new(0, 2);
        let a = [0.2, 0.4];
        let b = [0.6, -0.4];
        let out = best_reference_update(&w, &[(0.5, &a, &zero), (0.5, &b, &zero)], 2).unwrap();
        assert_eq!(out, [0.6, 1.0]);
    }
}
