//! Self-checks against independent oracles: gradients vs finite differences,
//! FedAvg equivalence, the error-feedback identity and the unbiasedness of
//! scaled client sampling.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compression::{
    allocate_budget, build_local_update, densify, top_s_sparsify, ErrorMemory, SparseUpdate,
};
use crate::config::{Algorithm, Grouping, RunConfig};
use crate::data::minibatches;
use crate::error::Result;
use crate::federation::{aggregate, lr_schedule, sample_round, LearningRates, Simulator};
use crate::jscc::{encode, fr_grad, fr_pass, transmit_grad, transmit_image, Architecture, ChannelConfig};
use crate::rng::{Purpose, StreamFactory};
use crate::tensor::{central_difference, mse_loss, relative_error, ConvSpec, LayerSpec, Network, Tensor};

/// Gradient agreement threshold (norm-wise relative error).
pub const GRAD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Grad,
    Fedavg,
    Feedback,
    Sampling,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Grad, Suite::Fedavg, Suite::Feedback, Suite::Sampling];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::Fedavg => "fedavg",
            Suite::Feedback => "feedback",
            Suite::Sampling => "sampling",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Runs one suite. Errors inside a suite become failed checks.
pub fn run_suite(suite: Suite, config: &RunConfig) -> Vec<CheckResult> {
    let out = match suite {
        Suite::Grad => check_gradients(config.seed, 20, 10),
        Suite::Fedavg => check_fedavg(config, 20).map(|r| vec![r]),
        Suite::Feedback => Ok(vec![
            check_error_feedback(build_local_update, 100, 10, config.seed),
            check_top_s(1000, config.seed),
            check_aggregation(200, config.seed),
        ]),
        Suite::Sampling => Ok(vec![check_sampling_unbiased(100_000, config.seed)]),
    };
    out.unwrap_or_else(|e| vec![CheckResult::new(suite.name(), false, format!("error: {e}"))])
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_layer<R: Rng>(rng: &mut R, kind: usize) -> LayerSpec {
    loop {
        let conv = ConvSpec {
            in_channels: rng.random_range(1..=3),
            out_channels: rng.random_range(1..=3),
            kernel: rng.random_range(1..=4),
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
            in_height: rng.random_range(2..=5),
            in_width: rng.random_range(2..=5),
        };
        let layer = match kind {
            0 => LayerSpec::Dense {
                inputs: rng.random_range(1..=6),
                outputs: rng.random_range(1..=6),
            },
            1 => LayerSpec::Conv2d(conv),
            2 => LayerSpec::TransposeConv2d(conv),
            3 => LayerSpec::Relu,
            _ => LayerSpec::Sigmoid,
        };
        if layer.validate().is_ok() {
            return layer;
        }
    }
}

/// Analytic vs central-difference gradient of an MSE loss with respect to
/// parameters and input, for a single layer.
pub fn layer_gradient_error<R: Rng>(layer: LayerSpec, rng: &mut R) -> Result<f64> {
    let net = Network::new(vec![layer], rng)?;
    let in_len = layer.input_shape().map_or(rng.random_range(2..=12), |s| s.iter().product());
    let input: Vec<f64> = (0..in_len)
        .map(|_| {
            // keep activations away from the ReLU kink
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    let input = Tensor::from_vec(input);
    let (out, tape) = net.forward(&input)?;
    let target = Tensor::new(out.shape().to_vec(), random_vec(rng, out.len(), -1.0, 1.0))?;
    let (_, dl) = mse_loss(&out, &target)?;
    let (pg, ig) = net.backward(&tape, &dl)?;
    let n = net.param_count();
    let mut joint = net.flatten().into_values();
    joint.extend_from_slice(input.data());
    let mut probe = net.clone();
    let fd = central_difference(
        &joint,
        |v| {
            probe.load_flat(&v[..n])?;
            let (o, _) = probe.forward(&Tensor::from_vec(v[n..].to_vec()))?;
            Ok(mse_loss(&o, &target)?.0)
        },
        None,
    )?;
    let mut analytic = pg.into_values();
    analytic.extend_from_slice(ig.data());
    Ok(relative_error(&analytic, &fd, None))
}

/// `(l_c error, l_s error)` on a freshly initialised desk-scale model.
pub fn jscc_gradient_error(seed: u64, coord_stride: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::desk();
    let model = arch.build(&mut rng)?;
    let image = Tensor::new(arch.input.to_vec(), random_vec(&mut rng, arch.input.iter().product(), 0.0, 1.0))?;
    let channel = ChannelConfig::new(20.0);
    let noise_seed = rng.random::<u64>();
    let w = model.flat().into_values();
    let coords: Vec<usize> = (seed as usize % coord_stride..w.len()).step_by(coord_stride).collect();

    let mut analytic = vec![0.0; w.len()];
    transmit_grad(&model, &image, channel, &mut ChaCha8Rng::seed_from_u64(noise_seed), &mut analytic)?;
    let fd = central_difference(
        &w,
        |p| {
            let m = model.with_flat(p)?;
            Ok(transmit_image(&m, &image, channel, &mut ChaCha8Rng::seed_from_u64(noise_seed))?.1)
        },
        Some(&coords),
    )?;
    let lc = relative_error(&analytic, &fd, Some(&coords));

    let feature = encode(&model, &image)?;
    let mut analytic = vec![0.0; w.len()];
    fr_grad(&model, &feature, channel, &mut ChaCha8Rng::seed_from_u64(noise_seed), &mut analytic)?;
    let fd = central_difference(
        &w,
        |p| {
            let m = model.with_flat(p)?;
            Ok(fr_pass(&m, &feature, channel, &mut ChaCha8Rng::seed_from_u64(noise_seed))?.1)
        },
        Some(&coords),
    )?;
    let ls = relative_error(&analytic, &fd, Some(&coords));
    Ok((lc, ls))
}

/// `per_kind` instances of every layer kind plus `models` desk-scale models
/// on both loss paths.
pub fn check_gradients(seed: u64, per_kind: usize, models: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let names = ["dense", "conv2d", "transpose_conv2d", "relu", "sigmoid"];
    let mut results = Vec::new();
    for (kind, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for _ in 0..per_kind {
            let layer = random_layer(&mut rng, kind);
            worst = worst.max(layer_gradient_error(layer, &mut rng)?);
        }
        results.push(CheckResult::new(
            format!("grad/{name}"),
            worst < GRAD_TOLERANCE,
            format!("{per_kind} instances, worst relative error {worst:.2e}"),
        ));
    }
    let (mut worst_lc, mut worst_ls) = (0.0f64, 0.0f64);
    for i in 0..models {
        let (lc, ls) = jscc_gradient_error(seed.wrapping_add(i as u64), 7)?;
        worst_lc = worst_lc.max(lc);
        worst_ls = worst_ls.max(ls);
    }
    results.push(CheckResult::new(
        "grad/jscc_lc",
        worst_lc < GRAD_TOLERANCE,
        format!("{models} models, worst relative error {worst_lc:.2e}"),
    ));
    results.push(CheckResult::new(
        "grad/jscc_ls",
        worst_ls < GRAD_TOLERANCE,
        format!("{models} models, worst relative error {worst_ls:.2e}"),
    ));
    Ok(results)
}

/// Runs the simulator with `K_o = 0`, `E_s = 0`, `S = N` next to a plain
/// FedAvg loop and compares the weights bitwise after every round.
pub fn check_fedavg(base: &RunConfig, rounds: usize) -> Result<CheckResult> {
    let mut cfg = base.clone();
    cfg.algorithm = Algorithm::Fedsfr;
    cfg.federation.feature_clients = 0;
    cfg.federation.server_epochs = 0;
    cfg.federation.model_budget = 1.0;
    cfg.federation.feature_budget = cfg.federation.feature_budget.min(0.5);
    cfg.federation.rounds = rounds;
    let mut sim = Simulator::new(cfg.clone())?;
    let streams = StreamFactory::new(cfg.seed);
    let template = sim.model().clone();
    let channel = ChannelConfig::new(cfg.channel.snr_db);
    let f = &cfg.federation;
    let k = sim.clients().len();
    let mut w = template.flat().into_values();

    for t in 0..rounds {
        let plan = sim.plan()?;
        sim.step()?;
        let eta = lr_schedule(t, &cfg.schedule, f.rounds).eta_c;
        let mut acc = vec![0.0; w.len()];
        for &id in &plan.model_group {
            let client = &sim.clients()[id];
            let mut rng = streams.stream(Purpose::Client, id as u64, t as u64);
            let mut wk = w.clone();
            let mut local = template.with_flat(&w)?;
            for batch in minibatches(client.local.len(), f.client_batch, &mut rng, f.local_epochs)? {
                let mut g = vec![0.0; w.len()];
                for &i in &batch {
                    let image = sim.train_set().image(client.local[i]);
                    transmit_grad(&local, image, channel, &mut rng, &mut g)?;
                }
                let inv = 1.0 / batch.len() as f64;
                for (x, gi) in wk.iter_mut().zip(&g) {
                    *x -= eta * (gi * inv);
                }
                local = template.with_flat(&wk)?;
            }
            for j in 0..w.len() {
                acc[j] += client.weight * (w[j] - wk[j]);
            }
        }
        let scale = k as f64 / plan.model_group.len() as f64;
        for j in 0..w.len() {
            w[j] -= scale * acc[j];
        }
        let got = sim.model().flat().into_values();
        if let Some(j) = (0..w.len()).find(|&j| got[j].to_bits() != w[j].to_bits()) {
            return Ok(CheckResult::new(
                "fedavg/bitwise",
                false,
                format!("round {t}, coordinate {j}: {} vs oracle {}", got[j], w[j]),
            ));
        }
    }
    Ok(CheckResult::new(
        "fedavg/bitwise",
        true,
        format!("{rounds} rounds bitwise identical to plain FedAvg"),
    ))
}

/// Signature of a local-update sparsifier, so mutants can be checked too.
pub type Sparsifier =
    fn(&[f64], &ErrorMemory, &[(usize, usize)], &[usize], u64) -> Result<(SparseUpdate, ErrorMemory)>;

/// Random updates with exact zeros and ties fed through `sparsify` for
/// `rounds × clients` steps. Checks `m' + g = m + a` exactly, that every
/// layer keeps `min(S_l, nonzeros)` entries, and that nothing dropped is
/// larger in magnitude than anything kept.
pub fn check_error_feedback(sparsify: Sparsifier, rounds: usize, clients: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0065_7133);
    let lengths = [7usize, 30, 13, 50, 1];
    let mut boundaries = Vec::new();
    let mut offset = 0;
    for &l in &lengths {
        boundaries.push((offset, l));
        offset += l;
    }
    let n = offset;
    let mut memories: Vec<ErrorMemory> = (0..clients).map(|k| ErrorMemory::new(k, n)).collect();
    for t in 0..rounds {
        let s = rng.random_range(1..=n);
        let budget = match allocate_budget(s, &lengths) {
            Ok(b) => b,
            Err(e) => return CheckResult::new("feedback/identity", false, e.to_string()),
        };
        for memory in memories.iter_mut() {
            let accum: Vec<f64> = (0..n)
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => 0.25,
                    2 => -0.25,
                    _ => rng.random_range(-1.0..1.0),
                })
                .collect();
            let (g, next) = match sparsify(&accum, memory, &boundaries, &budget, t as u64) {
                Ok(v) => v,
                Err(e) => return CheckResult::new("feedback/identity", false, format!("round {t}: {e}")),
            };
            let dense = match densify(&g, &boundaries) {
                Ok(d) => d,
                Err(e) => return CheckResult::new("feedback/identity", false, format!("round {t}: {e}")),
            };
            for j in 0..n {
                if next.residual[j] + dense[j] != memory.residual[j] + accum[j] {
                    return CheckResult::new(
                        "feedback/identity",
                        false,
                        format!("round {t}, client {}, coordinate {j}", memory.owner),
                    );
                }
            }
            for (l, &(off, len)) in boundaries.iter().enumerate() {
                let corrected: Vec<f64> = (off..off + len).map(|j| memory.residual[j] + accum[j]).collect();
                let nonzero = corrected.iter().filter(|v| **v != 0.0).count();
                let kept = g.layers.get(l).map_or(0, |x| x.nnz());
                if kept != budget[l].min(nonzero) {
                    return CheckResult::new(
                        "feedback/identity",
                        false,
                        format!("round {t}, layer {l}: kept {kept}, budget {}, nonzero {nonzero}", budget[l]),
                    );
                }
                let min_kept = (off..off + len).filter(|&j| dense[j] != 0.0).map(|j| dense[j].abs()).fold(f64::INFINITY, f64::min);
                let max_dropped = (off..off + len).map(|j| next.residual[j].abs()).fold(0.0, f64::max);
                if kept > 0 && max_dropped > min_kept {
                    return CheckResult::new("feedback/identity", false, format!("round {t}, layer {l}: dropped {max_dropped} > kept {min_kept}"));
                }
            }
            *memory = next;
        }
    }
    CheckResult::new(
        "feedback/identity",
        true,
        format!("{rounds} rounds x {clients} clients exact"),
    )
}

/// Full-sort oracle: magnitude descending, index ascending, zeros excluded.
fn top_s_oracle(v: &[f64], s: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    order.truncate(s);
    let mut kept: Vec<u32> = order.into_iter().map(|i| i as u32).collect();
    kept.sort_unstable();
    kept
}

pub fn check_top_s(vectors: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_7073);
    for case in 0..vectors {
        let n = rng.random_range(1..=64);
        // a small value alphabet forces many exact ties
        let tied = case % 2 == 0;
        let v: Vec<f64> = (0..n)
            .map(|_| {
                if tied {
                    [-2.0, -1.0, 0.0, 1.0, 2.0][rng.random_range(0..5)]
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let s = rng.random_range(0..=n);
        let (g, _) = match top_s_sparsify(&v, &[(0, n)], &[s], 0) {
            Ok(r) => r,
            Err(e) => return CheckResult::new("feedback/top_s_oracle", false, e.to_string()),
        };
        let want = top_s_oracle(&v, s);
        if g.layers[0].indices != want {
            return CheckResult::new(
                "feedback/top_s_oracle",
                false,
                format!("vector {case}: kept {:?}, oracle {want:?}", g.layers[0].indices),
            );
        }
    }
    CheckResult::new("feedback/top_s_oracle", true, format!("{vectors} vectors match the full-sort oracle"))
}

/// `w − (K/K_m) Σ p_k g_k` with every update densified first.
fn aggregate_naive_order(
    w: &[f64],
    updates: &[(usize, f64, SparseUpdate)],
    n: usize,
    k: usize,
    k_m: usize,
) -> Vec<f64> {
    let mut sorted: Vec<&(usize, f64, SparseUpdate)> = updates.iter().collect();
    sorted.sort_by_key(|u| u.0);
    let mut acc = vec![0.0; n];
    for (_, p, g) in sorted {
        let dense = densify(g, &[(0, n)]).expect("single layer");
        for j in 0..n {
            acc[j] += p * dense[j];
        }
    }
    let scale = k as f64 / k_m as f64;
    (0..n).map(|j| w[j] - scale * acc[j]).collect()
}

pub fn check_aggregation(cases: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0061_6767);
    for case in 0..cases {
        let k = rng.random_range(1..=12);
        let k_m = rng.random_range(1..=k);
        let n = rng.random_range(1..=40);
        let w = random_vec(&mut rng, n, -1.0, 1.0);
        let ids = index::sample(&mut rng, k, k_m).into_vec();
        let mut updates = Vec::new();
        for &id in &ids {
            let v = random_vec(&mut rng, n, -1.0, 1.0);
            let s = rng.random_range(0..=n);
            let g = top_s_sparsify(&v, &[(0, n)], &[s], 0).expect("valid budget").0;
            updates.push((id, rng.random_range(0.01..0.2), g));
        }
        let refs: Vec<(usize, f64, &SparseUpdate)> = updates.iter().map(|(i, p, g)| (*i, *p, g)).collect();
        let got = match aggregate(&w, &refs, &[(0, n)], k, k_m) {
            Ok(g) => g,
            Err(e) => return CheckResult::new("feedback/aggregation", false, e.to_string()),
        };
        let want = aggregate_naive_order(&w, &updates, n, k, k_m);
        if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return CheckResult::new("feedback/aggregation", false, format!("case {case} differs"));
        }
    }
    CheckResult::new("feedback/aggregation", true, format!("{cases} cases bitwise equal"))
}

/// Monte Carlo mean of `(K/|B₀|) Σ_{B₀} p_k x_k` over uniform draws vs the
/// full weighted sum.
pub fn check_sampling_unbiased(draws: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c31);
    let (k, k_m, k_o, dim) = (10usize, 3usize, 2usize, 4usize);
    let raw = random_vec(&mut rng, k, 0.5, 1.5);
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let x: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut rng, dim, 0.5, 1.5)).collect();
    let full: Vec<f64> = (0..dim).map(|j| (0..k).map(|i| p[i] * x[i][j]).sum()).collect();
    let rates = LearningRates { eta_c: 0.0, eta_s: 0.0 };
    let scale = k as f64 / (k_m + k_o) as f64;
    let mut mean = vec![0.0; dim];
    for _ in 0..draws {
        let plan = match sample_round(&mut rng, k, k_m, k_o, Grouping::Capacity, (0, 0), rates, 0) {
            Ok(p) => p,
            Err(e) => return CheckResult::new("sampling/unbiased", false, e.to_string()),
        };
        for id in plan.participants() {
            for j in 0..dim {
                mean[j] += scale * p[id] * x[id][j];
            }
        }
    }
    let worst = (0..dim)
        .map(|j| ((mean[j] / draws as f64) - full[j]).abs() / full[j].abs())
        .fold(0.0, f64::max);
    CheckResult::new(
        "sampling/unbiased",
        worst < 0.01,
        format!("{draws} draws, worst relative deviation {worst:.2e}"),
    )
}
