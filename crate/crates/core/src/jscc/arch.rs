use rand::Rng;
use serde::{Deserialize, Serialize};

use super::JsccModel;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, LayerSpec, Network};

/// Symmetric convolutional autoencoder: every encoder stage is a stride-2
/// convolution that halves the spatial extent, every decoder stage a stride-2
/// transpose convolution that doubles it. ReLU sits between stages, the
/// decoder ends in a sigmoid so reconstructions live in `[0, 1]`, and the
/// feature vector is the flattened output of the last encoder stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Image shape `[C, H, W]`.
    pub input: [usize; 3],
    /// Output channels of each encoder stage.
    pub channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_kernel() -> usize {
    4
}

const STRIDE: usize = 2;

impl Architecture {
    /// 1×8×8 images, three stages, `d = 16`.
    pub fn desk() -> Self {
        Self {
            input: [1, 8, 8],
            channels: vec![8, 16, 16],
            kernel: 4,
        }
    }

    /// 3×32×32 images, five conv / five transpose-conv stages, `d = 256`,
    /// about 0.33M parameters.
    pub fn reference() -> Self {
        Self {
            input: [3, 32, 32],
            channels: vec![16, 24, 32, 32, 256],
            kernel: 4,
        }
    }

    fn padding(&self) -> usize {
        // (n + 2p - k)/2 + 1 = n/2
        (self.kernel - STRIDE) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(
                "model.channels must be non-empty with nonzero entries".into(),
            ));
        }
        if self.kernel < STRIDE || !(self.kernel - STRIDE).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.kernel = {} must be even and at least 2",
                self.kernel
            )));
        }
        let div = 1usize << self.channels.len();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "model.input {h}x{w} must be divisible by 2^{} (one halving per stage)",
                self.channels.len()
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        let div = 1usize << self.channels.len();
        self.channels.last().copied().unwrap_or(0) * (self.input[1] / div) * (self.input[2] / div)
    }

    pub fn encoder_layers(&self) -> Vec<LayerSpec> {
        let [mut c, mut h, mut w] = self.input;
        let mut layers = Vec::new();
        for (i, &out) in self.channels.iter().enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Conv2d(ConvSpec {
                in_channels: c,
                out_channels: out,
                kernel: self.kernel,
                stride: STRIDE,
                padding: self.padding(),
                in_height: h,
                in_width: w,
            }));
            c = out;
            h /= 2;
            w /= 2;
        }
        layers
    }

    pub fn decoder_layers(&self) -> Vec<LayerSpec> {
        let stages = self.channels.len();
        let mut h = self.input[1] >> stages;
        let mut w = self.input[2] >> stages;
        let mut layers = Vec::new();
        for i in (0..stages).rev() {
            let in_c = self.channels[i];
            let out_c = if i == 0 { self.input[0] } else { self.channels[i - 1] };
            layers.push(LayerSpec::TransposeConv2d(ConvSpec {
                in_channels: in_c,
                out_channels: out_c,
                kernel: self.kernel,
                stride: STRIDE,
                padding: self.padding(),
                in_height: h,
                in_width: w,
            }));
            layers.push(if i == 0 { LayerSpec::Sigmoid } else { LayerSpec::Relu });
            h *= 2;
            w *= 2;
        }
        layers
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<JsccModel> {
        self.validate()?;
        let encoder = Network::new(self.encoder_layers(), rng)?;
        let decoder = Network::new(self.decoder_layers(), rng)?;
        JsccModel::new(encoder, decoder)
    }

    pub fn param_count(&self) -> usize {
        self.encoder_layers()
            .iter()
            .chain(self.decoder_layers().iter())
            .map(|l| l.param_count())
            .sum()
    }
}
