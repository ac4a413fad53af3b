//! JSCC pipeline: encoder, power normalisation, AWGN channel, decoder, and the
//! server-side feature-reconstruction composite (decoder first, then encoder).

mod arch;

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use arch::Architecture;

use crate::error::{Error, Result};
use crate::tensor::{self, FlatParams, Network, Tensor};

/// AWGN channel parameterised by its SNR in dB. `SNR = 1/σ²` because the
/// transmitted feature has unit power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64) -> Self {
        Self { snr_db }
    }

    /// Noise-free channel (`σ² = 0`).
    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY }
    }

    pub fn from_sigma2(sigma2: f64) -> Self {
        Self {
            snr_db: -10.0 * sigma2.log10(),
        }
    }

    pub fn sigma2(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

/// Encoder `θ` and decoder `φ`; the flat view is `w = concat(θ, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JsccModel {
    encoder: Network,
    decoder: Network,
}

impl JsccModel {
    pub fn new(encoder: Network, decoder: Network) -> Result<Self> {
        let d_out: usize = encoder
            .output_shape()
            .ok_or_else(|| Error::InvalidArgument("encoder has no shaped layer".into()))?
            .iter()
            .product();
        let d_in: usize = decoder
            .input_shape()
            .ok_or_else(|| Error::InvalidArgument("decoder has no shaped layer".into()))?
            .iter()
            .product();
        if d_out != d_in {
            return Err(Error::Length {
                expected: d_out,
                actual: d_in,
            });
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    /// Feature dimension `d`.
    pub fn feature_dim(&self) -> usize {
        self.encoder.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn image_shape(&self) -> Vec<usize> {
        self.encoder.input_shape().unwrap_or_default()
    }

    /// Total parameter count `N`.
    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Length of the encoder slice `θ` at the front of `w`.
    pub fn theta_len(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn flat(&self) -> FlatParams {
        self.encoder.flatten().concat(&self.decoder.flatten())
    }

    pub fn load_flat(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::Length {
                expected: self.param_count(),
                actual: w.len(),
            });
        }
        let (theta, phi) = w.split_at(self.theta_len());
        self.encoder.load_flat(theta)?;
        self.decoder.load_flat(phi)
    }

    pub fn with_flat(&self, w: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.load_flat(w)?;
        Ok(m)
    }

    pub fn load_encoder(&mut self, theta: &[f64]) -> Result<()> {
        self.encoder.load_flat(theta)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        tensor::write_checkpoint(w, &[&self.encoder, &self.decoder])
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut nets = tensor::read_checkpoint(r)?;
        if nets.len() != 2 {
            return Err(Error::format(
                "checkpoint",
                format!("expected encoder and decoder, found {} networks", nets.len()),
            ));
        }
        let decoder = nets.pop().expect("two networks");
        let encoder = nets.pop().expect("two networks");
        Self::new(encoder, decoder)
    }
}

/// `y = f_θ(X)` as a flat length-`d` vector.
pub fn encode(model: &JsccModel, image: &Tensor) -> Result<Tensor> {
    let (y, _) = model.encoder.forward(image)?;
    let d = y.len();
    y.reshape(&[d])
}

/// `y / ‖y‖₂`.
pub fn normalize(feature: &Tensor) -> Result<Tensor> {
    let norm = feature.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Tensor::new(
        feature.shape().to_vec(),
        feature.data().iter().map(|v| v / norm).collect(),
    )
}

/// Adds i.i.d. `N(0, σ²)` noise drawn from `rng`.
pub fn apply_awgn<R: Rng + ?Sized>(signal: &Tensor, cfg: ChannelConfig, rng: &mut R) -> Tensor {
    let sigma2 = cfg.sigma2();
    if sigma2 == 0.0 {
        return signal.clone();
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("finite positive sigma");
    let data = signal.data().iter().map(|v| v + normal.sample(rng)).collect();
    Tensor::new(signal.shape().to_vec(), data).expect("same shape")
}

/// Full client-side transmission `X → y → ỹ + n → X̂`; returns `X̂` and
/// `l_c = MSE(X̂, X)`.
pub fn transmit_image<R: Rng + ?Sized>(
    model: &JsccModel,
    image: &Tensor,
    cfg: ChannelConfig,
    rng: &mut R,
) -> Result<(Tensor, f64)> {
    let y = encode(model, image)?;
    let received = apply_awgn(&normalize(&y)?, cfg, rng);
    let (recon, _) = model.decoder.forward(&received)?;
    let (loss, _) = tensor::mse_loss(&recon, image)?;
    Ok((recon, loss))
}

/// Server-side feature reconstruction `ŷ = f_θ(f⁻¹_φ(ỹ + n))` with
/// `l_s = MSE(ŷ, y)` against the un-normalised feature.
pub fn fr_pass<R: Rng + ?Sized>(
    model: &JsccModel,
    feature: &Tensor,
    cfg: ChannelConfig,
    rng: &mut R,
) -> Result<(Tensor, f64)> {
    let received = apply_awgn(&normalize(feature)?, cfg, rng);
    let decoded = decode_to_image(model, &received)?;
    let y_hat = encode(model, &decoded)?;
    let (loss, _) = tensor::mse_loss(&y_hat, &flat_view(feature)?)?;
    Ok((y_hat, loss))
}

fn decode_to_image(model: &JsccModel, received: &Tensor) -> Result<Tensor> {
    let (x, _) = model.decoder.forward(received)?;
    x.reshape(&model.image_shape())
}

fn flat_view(t: &Tensor) -> Result<Tensor> {
    let n = t.len();
    t.clone().reshape(&[n])
}

/// Gradient of `y/‖y‖` pulled back: `(g − ỹ(ỹ·g)) / ‖y‖`.
fn normalize_backward(unit: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(grad).map(|(u, g)| u * g).sum();
    unit.iter().zip(grad).map(|(u, g)| (g - u * dot) / norm).collect()
}

/// `l_c` for one image, adding `∇_w l_c` into `grads` (length `N`, `θ` first).
pub fn transmit_grad<R: Rng + ?Sized>(
    model: &JsccModel,
    image: &Tensor,
    cfg: ChannelConfig,
    rng: &mut R,
    grads: &mut [f64],
) -> Result<f64> {
    check_grad_len(model, grads)?;
    let (y, enc_tape) = model.encoder.forward(image)?;
    let norm = y.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let unit = normalize(&y)?;
    let d = unit.len();
    let received = apply_awgn(&unit.clone().reshape(&[d])?, cfg, rng);
    let (recon, dec_tape) = model.decoder.forward(&received)?;
    let (loss, dl) = tensor::mse_loss(&recon, image)?;
    let (g_theta, g_phi) = grads.split_at_mut(model.theta_len());
    let g_received = model.decoder.backward_accumulate(&dec_tape, dl.data(), g_phi)?;
    let g_y = normalize_backward(unit.data(), norm, g_received.data());
    model.encoder.backward_accumulate(&enc_tape, &g_y, g_theta)?;
    Ok(loss)
}

/// `l_s` for one feature, adding `∇_w l_s` into `grads`.
pub fn fr_grad<R: Rng + ?Sized>(
    model: &JsccModel,
    feature: &Tensor,
    cfg: ChannelConfig,
    rng: &mut R,
    grads: &mut [f64],
) -> Result<f64> {
    check_grad_len(model, grads)?;
    let received = apply_awgn(&normalize(&flat_view(feature)?)?, cfg, rng);
    let (decoded, dec_tape) = model.decoder.forward(&received)?;
    let decoded = decoded.reshape(&model.image_shape())?;
    let (y_hat, enc_tape) = model.encoder.forward(&decoded)?;
    let y_hat = flat_view(&y_hat)?;
    let (loss, dl) = tensor::mse_loss(&y_hat, &flat_view(feature)?)?;
    let (g_theta, g_phi) = grads.split_at_mut(model.theta_len());
    let g_image = model.encoder.backward_accumulate(&enc_tape, dl.data(), g_theta)?;
    model.decoder.backward_accumulate(&dec_tape, g_image.data(), g_phi)?;
    Ok(loss)
}

fn check_grad_len(model: &JsccModel, grads: &[f64]) -> Result<()> {
    if grads.len() != model.param_count() {
        return Err(Error::Length {
            expected: model.param_count(),
            actual: grads.len(),
        });
    }
    Ok(())
}

/// Writes a feature vector as `u32` length followed by little-endian `f64`s.
pub fn write_feature<W: Write>(mut w: W, feature: &[f64]) -> Result<()> {
    let len = u32::try_from(feature.len())
        .map_err(|_| Error::InvalidArgument("feature too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    for v in feature {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::format("feature", "truncated length prefix"))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(len.min(1 << 20));
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("feature", "truncated payload"))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}
