//! Evaluation, convergence diagnostics and the per-round CSV log.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jscc::{transmit_grad, transmit_image, ChannelConfig, JsccModel};
use crate::rng::{Purpose, StreamFactory};
use crate::tensor::Tensor;

/// Pixel dynamic range of every dataset in this crate.
pub const PIXEL_MAX: f64 = 1.0;

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    pub eta_c: f64,
    pub eta_s: f64,
    pub train_lc: f64,
    pub test_lc_pre_fr: f64,
    pub test_lc_post_fr: f64,
    pub test_psnr_pre_fr: f64,
    pub test_psnr_post_fr: f64,
    pub fr_improved: bool,
    pub epsilon_hat: f64,
    pub cos_ab: f64,
    pub mean_mem_sq: f64,
    pub memory_bound: f64,
    pub grad_norm_sq: f64,
    pub wall_ms: f64,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "t",
    "eta_c",
    "eta_s",
    "train_lc",
    "test_lc_pre_fr",
    "test_lc_post_fr",
    "test_psnr_pre_fr",
    "test_psnr_post_fr",
    "fr_improved",
    "epsilon_hat",
    "cos_ab",
    "mean_mem_sq",
    "memory_bound",
    "grad_norm_sq",
    "wall_ms",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rounds: Vec<RoundMetrics>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: RoundMetrics) {
        self.rounds.push(m);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(CSV_COLUMNS)?;
        for row in &self.rounds {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(Error::format("metrics csv", format!("unexpected header {headers:?}")));
        }
        let rounds = rdr.deserialize().collect::<Result<Vec<RoundMetrics>, _>>()?;
        Ok(Self { rounds })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `10·log₁₀(MAX²/MSE)`; `+∞` when the MSE is zero.
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn psnr(recon: &Tensor, reference: &Tensor, max_val: f64) -> Result<f64> {
    if recon.shape() != reference.shape() {
        return Err(Error::shape(reference.shape(), recon.shape()));
    }
    let n = recon.len() as f64;
    let mse = recon
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, max_val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonEstimate {
    /// `‖a−b‖² / (‖a‖² + ‖b‖²)`, in `[0, 2]`.
    pub epsilon: f64,
    /// `a·b / (‖a‖‖b‖)`, zero if either side vanishes.
    pub cosine: f64,
}

/// Relative mismatch between the memory drift `a` and the server step `b`.
pub fn epsilon_hat(a: &[f64], b: &[f64]) -> Result<EpsilonEstimate> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut aa, mut bb, mut ab, mut diff) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        aa += x * x;
        bb += y * y;
        ab += x * y;
        diff += (x - y) * (x - y);
    }
    if aa + bb == 0.0 {
        log::debug!("epsilon_hat: both vectors are zero, reporting 0");
        return Ok(EpsilonEstimate {
            epsilon: 0.0,
            cosine: 0.0,
        });
    }
    let epsilon = diff / (aa + bb);
    let cosine = if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    };
    if epsilon > 1.0 {
        log::debug!("epsilon_hat {epsilon:.4} exceeds 1");
    }
    Ok(EpsilonEstimate { epsilon, cosine })
}

/// Fraction of the last `window` rounds (all rounds if `None`) whose FR step
/// lowered the test loss. Empty logs give 0.
pub fn improvement_ratio(log: &MetricsLog, window: Option<usize>) -> f64 {
    let n = window.unwrap_or(log.len()).min(log.len());
    if n == 0 {
        return 0.0;
    }
    let improved = log.rounds[log.len() - n..]
        .iter()
        .filter(|r| r.test_lc_post_fr < r.test_lc_pre_fr)
        .count();
    improved as f64 / n as f64
}

/// `‖(1/B) Σ_i ∇ℓ_i‖²` over a uniform subsample of `budget` of the `n`
/// samples. `sample_grad(i, acc)` adds sample `i`'s gradient into `acc`.
/// With `budget ≥ n` every sample is used in order.
pub fn grad_norm_estimate<R, F>(
    dim: usize,
    n: usize,
    budget: usize,
    rng: &mut R,
    mut sample_grad: F,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut [f64]) -> Result<()>,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("gradient sample budget must be positive".into()));
    }
    if n == 0 {
        return Err(Error::Data("gradient estimate over an empty set".into()));
    }
    let picks: Vec<usize> = if budget >= n {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, budget).into_vec();
        v.sort_unstable();
        v
    };
    let mut acc = vec![0.0; dim];
    for &i in &picks {
        sample_grad(i, &mut acc)?;
    }
    let scale = 1.0 / picks.len() as f64;
    Ok(acc.iter().map(|g| (g * scale) * (g * scale)).sum())
}

/// `‖∇F(w)‖²` for the transmission loss over `images`.
pub fn model_grad_norm<R: Rng + ?Sized>(
    model: &JsccModel,
    images: &[&Tensor],
    channel: ChannelConfig,
    budget: usize,
    rng: &mut R,
    streams: &StreamFactory,
) -> Result<f64> {
    grad_norm_estimate(model.param_count(), images.len(), budget, rng, |i, acc| {
        let mut noise = streams.stream(Purpose::Eval, i as u64, u64::MAX);
        transmit_grad(model, images[i], channel, &mut noise, acc).map(|_| ())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean_lc: f64,
    pub psnr: f64,
}

/// Mean `l_c` over `images` and the PSNR of that mean, averaged over `passes`
/// noise draws. Image `i` in pass `p` always sees the same noise, so two
/// models evaluated with the same factory are compared on paired noise.
pub fn evaluate(
    model: &JsccModel,
    images: &[&Tensor],
    channel: ChannelConfig,
    streams: &StreamFactory,
    passes: usize,
) -> Result<Evaluation> {
    if images.is_empty() || passes == 0 {
        return Err(Error::InvalidArgument("evaluation needs images and at least one pass".into()));
    }
    let losses = (0..passes * images.len())
        .into_par_iter()
        .map(|j| {
            let (pass, i) = (j / images.len(), j % images.len());
            let mut rng = streams.stream(Purpose::Eval, i as u64, pass as u64);
            transmit_image(model, images[i], channel, &mut rng).map(|(_, l)| l)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_lc = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(Evaluation {
        mean_lc,
        psnr: psnr_from_mse(mean_lc, PIXEL_MAX),
    })
}
