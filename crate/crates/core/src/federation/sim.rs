use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    aggregate, best_reference_update, feature_budget_vectors, local_update, lr_schedule,
    make_feature_payload, make_model_payload, sample_round, server_fr_update, ClientState,
    LocalOutcome, RoundPlan,
};
use crate::compression::{allocate_budget, memory_bound, reset_memory, ErrorMemory, SparseUpdate};
use crate::config::{DataConfig, RunConfig};
use crate::data::{self, ImageDataset, Split};
use crate::error::{Error, Result};
use crate::jscc::{ChannelConfig, JsccModel};
use crate::metrics::{epsilon_hat, evaluate, model_grad_norm, MetricsLog, RoundMetrics};
use crate::rng::{Purpose, StreamFactory};
use crate::tensor::Tensor;

/// A full federated run held in memory: datasets, client states, the global
/// model and the metrics gathered so far.
pub struct Simulator {
    config: RunConfig,
    streams: StreamFactory,
    train: ImageDataset,
    test: ImageDataset,
    clients: Vec<ClientState>,
    model: JsccModel,
    boundaries: Vec<(usize, usize)>,
    layer_budget: Vec<usize>,
    model_budget: usize,
    feature_budget: usize,
    t: usize,
    grad_bound: f64,
    log: MetricsLog,
    best_distance: Vec<f64>,
    dump_dir: Option<PathBuf>,
}

impl Simulator {
    /// Loads or generates the data named in `config` and builds the initial model.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let streams = StreamFactory::new(config.seed);
        let (pool, test_file) = match &config.data {
            DataConfig::Synthetic { kind, count } => {
                let mut rng = streams.stream(Purpose::Data, 0, 0);
                (data::synth_dataset(&mut rng, *count, config.model.input, *kind)?, None)
            }
            DataConfig::Idx { path, test_path } => {
                let test = test_path.as_ref().map(data::load_idx).transpose()?;
                (data::load_idx(path)?, test)
            }
            DataConfig::Images { dir, format } => (data::load_image_dir(dir, (*format).into())?, None),
        };
        Self::with_data(config, pool, test_file)
    }

    /// Builds a simulator over an already loaded image pool. With `test_file`
    /// the test split is its first `test_size` images (all if zero);
    /// otherwise it is carved out of `pool`.
    pub fn with_data(config: RunConfig, pool: ImageDataset, test_file: Option<ImageDataset>) -> Result<Self> {
        config.validate()?;
        let expected = config.model.input.to_vec();
        for (name, ds) in [("training", Some(&pool)), ("test", test_file.as_ref())] {
            if let Some(shape) = ds.and_then(|d| d.shape()) {
                if shape != expected.as_slice() {
                    return Err(Error::Config(format!(
                        "{name} images have shape {shape:?} but model.input is {expected:?}"
                    )));
                }
            }
        }
        let streams = StreamFactory::new(config.seed);
        let mut spec = config.partition.clone();
        if test_file.is_some() {
            spec.test_size = 0;
        }
        let part = data::partition(pool.len(), &spec, &mut streams.stream(Purpose::Partition, 0, 0))?;
        let test = match test_file {
            Some(file) => {
                let n = if config.partition.test_size == 0 {
                    file.len()
                } else {
                    config.partition.test_size.min(file.len())
                };
                file.select(&(0..n).collect::<Vec<_>>(), Split::Test)
            }
            None => pool.select(&part.test, Split::Test),
        };
        if test.is_empty() {
            return Err(Error::Config("the test split is empty".into()));
        }

        let model = config.model.build(&mut streams.stream(Purpose::Init, 0, 0))?;
        let n = model.param_count();
        let boundaries = model.flat().boundaries().to_vec();
        let lengths: Vec<usize> = boundaries.iter().map(|b| b.1).collect();
        let model_budget = ((config.federation.model_budget * n as f64).round() as usize).clamp(1, n);
        let feature_budget = (config.federation.feature_budget * n as f64).floor() as usize;
        let layer_budget = allocate_budget(model_budget, &lengths)?;
        let clients = part
            .clients
            .into_iter()
            .map(|c| ClientState {
                id: c.id,
                local: c.local,
                public: c.public,
                weight: c.weight,
                memory: ErrorMemory::new(c.id, n),
            })
            .collect();
        log::info!(
            "N = {n}, d = {}, S_m = {model_budget}, S_o = {feature_budget} ({} vectors)",
            model.feature_dim(),
            feature_budget_vectors(feature_budget, model.feature_dim())
        );
        Ok(Self {
            config,
            streams,
            train: pool,
            test,
            clients,
            model,
            boundaries,
            layer_budget,
            model_budget,
            feature_budget,
            t: 0,
            grad_bound: 0.0,
            log: MetricsLog::new(),
            best_distance: Vec::new(),
            dump_dir: None,
        })
    }

    /// Writes every round's sparse updates to `dir/round_TTTT_client_KKK.bin`.
    pub fn set_dump_dir(&mut self, dir: Option<PathBuf>) {
        self.dump_dir = dir;
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &JsccModel {
        &self.model
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn train_set(&self) -> &ImageDataset {
        &self.train
    }

    pub fn test_set(&self) -> &ImageDataset {
        &self.test
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.federation.rounds
    }

    /// `S_m` and `S_o` in values.
    pub fn budgets(&self) -> (usize, usize) {
        (self.model_budget, self.feature_budget)
    }

    /// `‖w_best − w^(t+1)‖` per round, against the unsparsified reference step.
    pub fn best_reference_distances(&self) -> &[f64] {
        &self.best_distance
    }

    /// The round plan the next `step` will execute.
    pub fn plan(&self) -> Result<RoundPlan> {
        let f = &self.config.federation;
        let (k_m, k_o) = self.config.effective_split();
        let rates = lr_schedule(self.t, &self.config.schedule, f.rounds);
        sample_round(
            &mut self.streams.stream(Purpose::Sampling, self.t as u64, 0),
            self.clients.len(),
            k_m,
            k_o,
            f.grouping,
            (self.model_budget, self.feature_budget),
            rates,
            self.t,
        )
    }

    fn images(&self, positions: &[usize]) -> Vec<&Tensor> {
        positions.iter().map(|&i| self.train.image(i)).collect()
    }

    /// Executes one global round and appends its metrics.
    pub fn step(&mut self) -> Result<&RoundMetrics> {
        let started = Instant::now();
        let plan = self.plan()?;
        let t = self.t;
        let f = self.config.federation.clone();
        let channel = ChannelConfig::new(self.config.channel.snr_db);
        let k = self.clients.len();
        let (k_m, _) = self.config.effective_split();
        if !plan.rates.server_slower() && self.config.effective_server_epochs() > 0 {
            log::warn!(
                "round {t}: eta_s = {} is not below eta_c = {}",
                plan.rates.eta_s,
                plan.rates.eta_c
            );
        }

        let w = self.model.flat().into_values();
        let participants = plan.participants();
        let outcomes: Vec<LocalOutcome> = participants
            .par_iter()
            .map(|&id| {
                let images = self.images(&self.clients[id].local);
                let mut rng = self.streams.stream(Purpose::Client, id as u64, t as u64);
                local_update(&self.model, &images, plan.rates.eta_c, f.local_epochs, f.client_batch, channel, &mut rng)
            })
            .collect::<Result<_>>()?;
        let outcome = |id: usize| &outcomes[participants.binary_search(&id).expect("participant")];

        let train_lc = outcomes.iter().map(|o| o.mean_loss).sum::<f64>() / outcomes.len() as f64;
        for o in &outcomes {
            self.grad_bound = self.grad_bound.max(o.max_grad_norm);
        }
        let local_steps = outcomes.first().map_or(0, |o| o.steps);

        let best = {
            let entries: Vec<(f64, &[f64], &ErrorMemory)> = participants
                .iter()
                .map(|&id| (self.clients[id].weight, outcome(id).accum.as_slice(), &self.clients[id].memory))
                .collect();
            best_reference_update(&w, &entries, k)?
        };

        let mut updates: Vec<(usize, f64, SparseUpdate)> = Vec::with_capacity(plan.model_group.len());
        for &id in &plan.model_group {
            let g = make_model_payload(
                &mut self.clients[id],
                &outcome(id).accum,
                &self.boundaries,
                &self.layer_budget,
                t as u64,
            )?;
            updates.push((id, self.clients[id].weight, g));
        }
        if let Some(dir) = &self.dump_dir {
            std::fs::create_dir_all(dir)?;
            for (id, _, g) in &updates {
                let path = dir.join(format!("round_{t:04}_client_{id:03}.bin"));
                g.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))?;
            }
        }
        let refs: Vec<(usize, f64, &SparseUpdate)> = updates.iter().map(|(id, p, g)| (*id, *p, g)).collect();
        let w_half = aggregate(&w, &refs, &self.boundaries, k, k_m)?;

        let vectors_per_client = feature_budget_vectors(plan.feature_budget, self.model.feature_dim());
        let mut pool: Vec<Tensor> = Vec::new();
        for &id in &plan.feature_group {
            let local_model = self.model.with_flat(&outcome(id).final_params)?;
            let client = &self.clients[id];
            let public: Vec<(usize, &Tensor)> = client
                .public
                .iter()
                .map(|&i| (self.train.ids()[i], self.train.image(i)))
                .collect();
            let mut rng = self.streams.stream(Purpose::Features, id as u64, t as u64);
            let set = make_feature_payload(id, &local_model, &public, vectors_per_client, &mut rng)?;
            pool.extend(set.vectors);
            self.clients[id].memory = reset_memory(&self.clients[id].memory);
        }

        let model_half = self.model.with_flat(&w_half)?;
        let test: Vec<&Tensor> = self.test.images().iter().collect();
        let passes = self.config.output.eval_passes;
        let pre = evaluate(&model_half, &test, channel, &self.streams, passes)?;
        let server = server_fr_update(
            &model_half,
            &pool,
            plan.rates.eta_s,
            self.config.effective_server_epochs(),
            f.server_batch,
            channel,
            &mut self.streams.stream(Purpose::Server, t as u64, 0),
        )?;
        let post = if server.steps == 0 {
            pre
        } else {
            evaluate(&server.model, &test, channel, &self.streams, passes)?
        };
        let w_next = server.model.flat().into_values();

        let mut a = vec![0.0; w.len()];
        for c in &self.clients {
            for (ai, m) in a.iter_mut().zip(&c.memory.residual) {
                *ai += c.weight * m;
            }
        }
        let b: Vec<f64> = w_half.iter().zip(&w_next).map(|(h, n)| h - n).collect();
        let eps = epsilon_hat(&a, &b)?;
        let mean_mem_sq = if plan.model_group.is_empty() {
            0.0
        } else {
            plan.model_group.iter().map(|&id| self.clients[id].memory.norm_sq()).sum::<f64>()
                / plan.model_group.len() as f64
        };
        let eta_c0 = lr_schedule(0, &self.config.schedule, f.rounds).eta_c;
        let bound = memory_bound(eta_c0, local_steps, self.grad_bound, f.model_budget)?;
        if mean_mem_sq > bound {
            log::debug!("round {t}: mean memory {mean_mem_sq:.3e} above bound {bound:.3e}");
        }

        let grad_norm_sq = model_grad_norm(
            &self.model,
            &test,
            channel,
            self.config.output.grad_norm_budget,
            &mut self.streams.stream(Purpose::Eval, t as u64, 1 << 40),
            &self.streams,
        )?;

        let distance = best.iter().zip(&w_next).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        log::debug!("round {t}: distance to unsparsified reference {distance:.4e}");
        self.best_distance.push(distance);

        self.model = server.model;
        let wall_ms = if self.config.output.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.log.push(RoundMetrics {
            t,
            eta_c: plan.rates.eta_c,
            eta_s: plan.rates.eta_s,
            train_lc,
            test_lc_pre_fr: pre.mean_lc,
            test_lc_post_fr: post.mean_lc,
            test_psnr_pre_fr: pre.psnr,
            test_psnr_post_fr: post.psnr,
            fr_improved: post.mean_lc < pre.mean_lc,
            epsilon_hat: eps.epsilon,
            cos_ab: eps.cosine,
            mean_mem_sq,
            memory_bound: bound,
            grad_norm_sq,
            wall_ms,
        });
        self.t += 1;
        log::info!(
            "round {t}: train l_c {train_lc:.5}, test PSNR {:.3} -> {:.3} dB, eps {:.3}",
            pre.psnr,
            post.psnr,
            eps.epsilon
        );
        Ok(self.log.last().expect("just pushed"))
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<&MetricsLog> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(&self.log)
    }
}

/// Runs `config` to completion and returns its metrics.
pub fn run_training(config: &RunConfig) -> Result<MetricsLog> {
    let mut sim = Simulator::new(config.clone())?;
    sim.run()?;
    Ok(sim.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Algorithm;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.federation.rounds = 3;
        cfg.partition.local_size = 16;
        cfg.partition.public_size = 8;
        cfg.partition.test_size = 20;
        cfg
    }

    #[test]
    fn short_run_logs_every_round() {
        let log = run_training(&small()).unwrap();
        assert_eq!(log.len(), 3);
        for (t, r) in log.rounds.iter().enumerate() {
            assert_eq!(r.t, t);
            assert!(r.test_psnr_pre_fr.is_finite() && r.epsilon_hat >= 0.0);
            assert!(r.eta_s < r.eta_c);
        }
    }

    #[test]
    fn feature_clients_leave_with_zero_memory() {
        let mut sim = Simulator::new(small()).unwrap();
        for _ in 0..3 {
            let plan = sim.plan().unwrap();
            sim.step().unwrap();
            for &id in &plan.feature_group {
                assert!(sim.clients()[id].memory.is_zero());
            }
            for &id in &plan.model_group {
                assert!(!sim.clients()[id].memory.is_zero());
            }
        }
    }

    #[test]
    fn dsgd_diverges_from_fedsfr() {
        let mut a = Simulator::new(small()).unwrap();
        let mut cfg = small();
        cfg.algorithm = Algorithm::Dsgd;
        let mut b = Simulator::new(cfg).unwrap();
        a.step().unwrap();
        b.step().unwrap();
        assert_ne!(a.model(), b.model());
        assert!(b.log().rounds[0].test_lc_pre_fr == b.log().rounds[0].test_lc_post_fr);
    }

    #[test]
    fn pure_feature_round_changes_only_through_server() {
        let mut cfg = small();
        cfg.federation.model_clients = 0;
        let mut sim = Simulator::new(cfg).unwrap();
        let w0 = sim.model().clone();
        sim.step().unwrap();
        let r = &sim.log().rounds[0];
        assert_eq!(r.mean_mem_sq, 0.0);
        assert_ne!(sim.model(), &w0);
        let mut cfg = small();
        cfg.federation.model_clients = 0;
        cfg.federation.server_epochs = 0;
        let mut sim = Simulator::new(cfg).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.model(), &w0);
    }
}
