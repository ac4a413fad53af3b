use crate::config::{ScheduleConfig, ScheduleMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub eta_c: f64,
    pub eta_s: f64,
}

impl LearningRates {
    /// Whether the server steps more cautiously than the clients.
    pub fn server_slower(&self) -> bool {
        self.eta_s < self.eta_c
    }
}

/// Client and server learning rates for round `t` of a `rounds`-round run.
pub fn lr_schedule(t: usize, cfg: &ScheduleConfig, rounds: usize) -> LearningRates {
    let decay = cfg.decay.powi((t / cfg.decay_every) as i32);
    match cfg.mode {
        ScheduleMode::Staircase => LearningRates {
            eta_c: cfg.eta_c0 * decay,
            eta_s: cfg.eta_s0 * decay,
        },
        ScheduleMode::Theory => {
            let alpha = cfg.alpha0 * decay;
            let t_total = rounds.max(1) as f64;
            LearningRates {
                eta_c: alpha / t_total.sqrt(),
                eta_s: alpha / t_total.powf(0.75),
            }
        }
    }
}
