use rand::Rng;

use crate::error::{Error, Result};

/// Geometry of a 2-D (transpose) convolution over a `C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_height: usize,
    pub in_width: usize,
}

impl ConvSpec {
    fn conv_out(&self) -> Option<(usize, usize)> {
        let span = |n: usize| {
            let padded = n + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((span(self.in_height)?, span(self.in_width)?))
    }

    fn transpose_out(&self) -> Option<(usize, usize)> {
        let span = |n: usize| ((n - 1) * self.stride + self.kernel).checked_sub(2 * self.padding);
        if self.in_height == 0 || self.in_width == 0 {
            return None;
        }
        Some((span(self.in_height)?, span(self.in_width)?))
    }

    fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

/// One layer of a feed-forward network.
///
/// Parameterized layers store their weights first, then the bias, in a single
/// contiguous slice:
/// - `Dense`: weight `[outputs][inputs]`, bias `[outputs]`
/// - `Conv2d`: weight `[out_c][in_c][k][k]`, bias `[out_c]`
/// - `TransposeConv2d`: weight `[in_c][out_c][k][k]`, bias `[out_c]`
///
/// Layers with a declared input geometry accept any tensor with the matching
/// element count and reinterpret it, so a flat feature vector can feed a
/// convolution stack directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d(ConvSpec),
    TransposeConv2d(ConvSpec),
    Relu,
    Sigmoid,
}

impl LayerSpec {
    pub fn kind_id(&self) -> u8 {
        match self {
            LayerSpec::Dense { .. } => 0,
            LayerSpec::Conv2d(_) => 1,
            LayerSpec::TransposeConv2d(_) => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Sigmoid => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::TransposeConv2d(_) => "transpose_conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }

    /// Kind-specific dimensions as stored in checkpoints.
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerSpec::Conv2d(c) | LayerSpec::TransposeConv2d(c) => vec![
                c.in_channels,
                c.out_channels,
                c.kernel,
                c.stride,
                c.padding,
                c.in_height,
                c.in_width,
            ],
            LayerSpec::Relu | LayerSpec::Sigmoid => Vec::new(),
        }
    }

    pub fn from_parts(kind: u8, dims: &[usize]) -> Result<Self> {
        let conv = |d: &[usize]| ConvSpec {
            in_channels: d[0],
            out_channels: d[1],
            kernel: d[2],
            stride: d[3],
            padding: d[4],
            in_height: d[5],
            in_width: d[6],
        };
        let want = match kind {
            0 => 2,
            1 | 2 => 7,
            3 | 4 => 0,
            _ => return Err(Error::format("checkpoint", format!("unknown layer kind {kind}"))),
        };
        if dims.len() != want {
            return Err(Error::format(
                "checkpoint",
                format!("layer kind {kind} expects {want} dims, found {}", dims.len()),
            ));
        }
        let layer = match kind {
            0 => LayerSpec::Dense {
                inputs: dims[0],
                outputs: dims[1],
            },
            1 => LayerSpec::Conv2d(conv(dims)),
            2 => LayerSpec::TransposeConv2d(conv(dims)),
            3 => LayerSpec::Relu,
            _ => LayerSpec::Sigmoid,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => Err(
                Error::InvalidArgument("dense layer needs nonzero extents".into()),
            ),
            LayerSpec::Conv2d(c) | LayerSpec::TransposeConv2d(c)
                if c.in_channels == 0 || c.out_channels == 0 || c.kernel == 0 || c.stride == 0 =>
            {
                Err(Error::InvalidArgument(format!(
                    "{} needs nonzero channels, kernel and stride",
                    self.name()
                )))
            }
            LayerSpec::Conv2d(_) | LayerSpec::TransposeConv2d(_) if self.output_shape().is_none() => {
                Err(Error::InvalidArgument(format!(
                    "{} geometry yields an empty output",
                    self.name()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv2d(c) | LayerSpec::TransposeConv2d(c) => c.weight_len() + c.out_channels,
            LayerSpec::Relu | LayerSpec::Sigmoid => 0,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.param_count() > 0
    }

    /// Declared input shape, `None` for shape-preserving activations.
    pub fn input_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, .. } => Some(vec![inputs]),
            LayerSpec::Conv2d(c) | LayerSpec::TransposeConv2d(c) => {
                Some(vec![c.in_channels, c.in_height, c.in_width])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => None,
        }
    }

    /// Declared output shape, `None` for shape-preserving activations.
    pub fn output_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { outputs, .. } => Some(vec![outputs]),
            LayerSpec::Conv2d(c) => c.conv_out().map(|(h, w)| vec![c.out_channels, h, w]),
            LayerSpec::TransposeConv2d(c) => {
                c.transpose_out().map(|(h, w)| vec![c.out_channels, h, w])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => None,
        }
    }

    /// Kaiming-uniform style initialisation: weights uniform in
    /// `±sqrt(6 / fan_in)`, biases zero.
    pub(crate) fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (weights, fan_in) = match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, inputs as f64),
            LayerSpec::Conv2d(c) => (c.weight_len(), (c.in_channels * c.kernel * c.kernel) as f64),
            LayerSpec::TransposeConv2d(c) => {
                // each output pixel sees about k²/s² taps per input channel
                let taps = (c.kernel * c.kernel) as f64 / (c.stride * c.stride) as f64;
                (c.weight_len(), c.in_channels as f64 * taps.max(1.0))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => return Vec::new(),
        };
        let bound = (6.0 / fan_in).sqrt();
        let mut params: Vec<f64> = (0..weights).map(|_| rng.random_range(-bound..bound)).collect();
        params.resize(self.param_count(), 0.0);
        params
    }

    /// Forward pass on raw buffers; `input` must already have the declared
    /// element count.
    pub(crate) fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = params.split_at(inputs * outputs);
                (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        let mut acc = b[o];
                        for (wi, xi) in row.iter().zip(input) {
                            acc += wi * xi;
                        }
                        acc
                    })
                    .collect()
            }
            LayerSpec::Conv2d(c) => conv_forward(&c, params, input),
            LayerSpec::TransposeConv2d(c) => transpose_conv_forward(&c, params, input),
            LayerSpec::Relu => input.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            LayerSpec::Sigmoid => input.iter().map(|&x| sigmoid(x)).collect(),
        }
    }

    /// Backward pass. Accumulates into `param_grad` and returns the gradient
    /// with respect to the layer input.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        output: &[f64],
        out_grad: &[f64],
        param_grad: &mut [f64],
    ) -> Vec<f64> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = params.split_at(inputs * outputs);
                let (gw, gb) = param_grad.split_at_mut(inputs * outputs);
                let mut in_grad = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = out_grad[o];
                    gb[o] += go;
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for i in 0..inputs {
                        grow[i] += go * input[i];
                        in_grad[i] += go * row[i];
                    }
                }
                in_grad
            }
            LayerSpec::Conv2d(c) => conv_backward(&c, params, input, out_grad, param_grad),
            LayerSpec::TransposeConv2d(c) => {
                transpose_conv_backward(&c, params, input, out_grad, param_grad)
            }
            // subgradient at exactly zero is taken as 0
            LayerSpec::Relu => input
                .iter()
                .zip(out_grad)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::Sigmoid => output
                .iter()
                .zip(out_grad)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps output coordinate + kernel tap to an input coordinate, if in range.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

fn conv_forward(c: &ConvSpec, params: &[f64], input: &[f64]) -> Vec<f64> {
    let (oh, ow) = c.conv_out().expect("validated geometry");
    let (h, w, k) = (c.in_height, c.in_width, c.kernel);
    let (weights, bias) = params.split_at(c.weight_len());
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for oc in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c.in_channels {
                    let wbase = (oc * c.in_channels + ic) * k * k;
                    let ibase = ic * h * w;
                    for ky in 0..k {
                        let Some(iy) = tap(oy, ky, c.stride, c.padding, h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = tap(ox, kx, c.stride, c.padding, w) else { continue };
                            acc += weights[wbase + ky * k + kx] * input[ibase + iy * w + ix];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    c: &ConvSpec,
    params: &[f64],
    input: &[f64],
    out_grad: &[f64],
    param_grad: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = c.conv_out().expect("validated geometry");
    let (h, w, k) = (c.in_height, c.in_width, c.kernel);
    let weights = &params[..c.weight_len()];
    let (gw, gb) = param_grad.split_at_mut(c.weight_len());
    let mut in_grad = vec![0.0; input.len()];
    for oc in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = out_grad[(oc * oh + oy) * ow + ox];
                gb[oc] += g;
                for ic in 0..c.in_channels {
                    let wbase = (oc * c.in_channels + ic) * k * k;
                    let ibase = ic * h * w;
                    for ky in 0..k {
                        let Some(iy) = tap(oy, ky, c.stride, c.padding, h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = tap(ox, kx, c.stride, c.padding, w) else { continue };
                            let ii = ibase + iy * w + ix;
                            gw[wbase + ky * k + kx] += g * input[ii];
                            in_grad[ii] += g * weights[wbase + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    in_grad
}

fn transpose_conv_forward(c: &ConvSpec, params: &[f64], input: &[f64]) -> Vec<f64> {
    let (oh, ow) = c.transpose_out().expect("validated geometry");
    let (h, w, k) = (c.in_height, c.in_width, c.kernel);
    let (weights, bias) = params.split_at(c.weight_len());
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for oc in 0..c.out_channels {
        out[oc * oh * ow..(oc + 1) * oh * ow].fill(bias[oc]);
    }
    for ic in 0..c.in_channels {
        for iy in 0..h {
            for ix in 0..w {
                let v = input[(ic * h + iy) * w + ix];
                for oc in 0..c.out_channels {
                    let wbase = (ic * c.out_channels + oc) * k * k;
                    let obase = oc * oh * ow;
                    for ky in 0..k {
                        let Some(oy) = tap(iy, ky, c.stride, c.padding, oh) else { continue };
                        for kx in 0..k {
                            let Some(ox) = tap(ix, kx, c.stride, c.padding, ow) else { continue };
                            out[obase + oy * ow + ox] += weights[wbase + ky * k + kx] * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn transpose_conv_backward(
    c: &ConvSpec,
    params: &[f64],
    input: &[f64],
    out_grad: &[f64],
    param_grad: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = c.transpose_out().expect("validated geometry");
    let (h, w, k) = (c.in_height, c.in_width, c.kernel);
    let weights = &params[..c.weight_len()];
    let (gw, gb) = param_grad.split_at_mut(c.weight_len());
    for oc in 0..c.out_channels {
        for &g in &out_grad[oc * oh * ow..(oc + 1) * oh * ow] {
            gb[oc] += g;
        }
    }
    let mut in_grad = vec![0.0; input.len()];
    for ic in 0..c.in_channels {
        for iy in 0..h {
            for ix in 0..w {
                let ii = (ic * h + iy) * w + ix;
                let v = input[ii];
                let mut acc = 0.0;
                for oc in 0..c.out_channels {
                    let wbase = (ic * c.out_channels + oc) * k * k;
                    let obase = oc * oh * ow;
                    for ky in 0..k {
                        let Some(oy) = tap(iy, ky, c.stride, c.padding, oh) else { continue };
                        for kx in 0..k {
                            let Some(ox) = tap(ix, kx, c.stride, c.padding, ow) else { continue };
                            let g = out_grad[obase + oy * ow + ox];
                            gw[wbase + ky * k + kx] += v * g;
                            acc += weights[wbase + ky * k + kx] * g;
                        }
                    }
                }
                in_grad[ii] = acc;
            }
        }
    }
    in_grad
}
