use rand::Rng;

use super::{LayerSpec, Tensor};
use crate::error::{Error, Result};

/// All trainable parameters of one or more networks laid out in a single
/// vector, with a per-layer `(offset, length)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    values: Vec<f64>,
    boundaries: Vec<(usize, usize)>,
}

impl FlatParams {
    pub fn new(values: Vec<f64>, boundaries: Vec<(usize, usize)>) -> Result<Self> {
        let mut next = 0;
        for &(offset, len) in &boundaries {
            if offset != next {
                return Err(Error::InvalidArgument(format!(
                    "layer boundary at {offset} does not continue from {next}"
                )));
            }
            next += len;
        }
        if next != values.len() {
            return Err(Error::Length {
                expected: next,
                actual: values.len(),
            });
        }
        Ok(Self { values, boundaries })
    }

    pub fn zeros_like(other: &FlatParams) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            boundaries: other.boundaries.clone(),
        }
    }

    /// Same layout as `self` with replacement values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.boundaries.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn boundaries(&self) -> &[(usize, usize)] {
        &self.boundaries
    }

    pub fn layer_lengths(&self) -> Vec<usize> {
        self.boundaries.iter().map(|&(_, len)| len).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        let (o, l) = self.boundaries[i];
        &self.values[o..o + l]
    }

    /// Concatenation; the layer tables are appended in order.
    pub fn concat(&self, other: &FlatParams) -> FlatParams {
        let shift = self.values.len();
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mut boundaries = self.boundaries.clone();
        boundaries.extend(other.boundaries.iter().map(|&(o, l)| (o + shift, l)));
        FlatParams { values, boundaries }
    }

    /// Splits after the first `layers` layers.
    pub fn split_layers(&self, layers: usize) -> (FlatParams, FlatParams) {
        let at = self.boundaries[..layers].iter().map(|&(_, l)| l).sum::<usize>();
        let head = FlatParams {
            values: self.values[..at].to_vec(),
            boundaries: self.boundaries[..layers].to_vec(),
        };
        let tail = FlatParams {
            values: self.values[at..].to_vec(),
            boundaries: self.boundaries[layers..].iter().map(|&(o, l)| (o - at, l)).collect(),
        };
        (head, tail)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    layer_count: usize,
    param_count: usize,
    input_shape: Vec<usize>,
    /// `activations[i]` is the (reshaped) input of layer `i`; the last entry
    /// is the network output.
    activations: Vec<Vec<f64>>,
    output_shape: Vec<usize>,
}

impl Tape {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// An ordered stack of layers together with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    param_count: usize,
}

impl Network {
    /// Zero-initialised network. Checks that the declared layer shapes chain.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        Self::check_chain(&layers)?;
        let params = layers
            .iter()
            .filter(|l| l.is_parameterized())
            .map(|l| Tensor::zeros(&[l.param_count()]))
            .collect();
        let param_count = layers.iter().map(|l| l.param_count()).sum();
        Ok(Self {
            layers,
            params,
            param_count,
        })
    }

    pub fn new<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut slot = 0;
        for layer in &net.layers {
            if layer.is_parameterized() {
                net.params[slot] = Tensor::from_vec(layer.init_params(rng));
                slot += 1;
            }
        }
        Ok(net)
    }

    fn check_chain(layers: &[LayerSpec]) -> Result<()> {
        let mut current: Option<Vec<usize>> = None;
        for layer in layers {
            layer.validate()?;
            if let (Some(have), Some(want)) = (&current, layer.input_shape()) {
                let (a, b): (usize, usize) = (have.iter().product(), want.iter().product());
                if a != b {
                    return Err(Error::shape(&want, have));
                }
            }
            if let Some(out) = layer.output_shape() {
                current = Some(out);
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn input_shape(&self) -> Option<Vec<usize>> {
        self.layers.iter().find_map(|l| l.input_shape())
    }

    pub fn output_shape(&self) -> Option<Vec<usize>> {
        self.layers.iter().rev().find_map(|l| l.output_shape())
    }

    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        let mut offset = 0;
        self.params
            .iter()
            .map(|p| {
                let b = (offset, p.len());
                offset += p.len();
                b
            })
            .collect()
    }

    pub fn flatten(&self) -> FlatParams {
        let values = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        FlatParams {
            values,
            boundaries: self.boundaries(),
        }
    }

    /// Overwrites parameters from a flat vector with this network's layout.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count {
            return Err(Error::Length {
                expected: self.param_count,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn unflatten(&self, flat: &FlatParams) -> Result<Network> {
        if flat.boundaries() != self.boundaries().as_slice() {
            return Err(Error::InvalidArgument(
                "flat parameter layout does not match network".into(),
            ));
        }
        let mut net = self.clone();
        net.load_flat(flat.values())?;
        Ok(net)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        // exact shape, or a flat vector with the declared element count
        if let Some(want) = self.input_shape() {
            let flat_ok = input.shape().len() == 1 && input.len() == want.iter().product::<usize>();
            if input.shape() != want.as_slice() && !flat_ok {
                return Err(Error::shape(&want, input.shape()));
            }
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut current = input.data().to_vec();
        let mut shape = input.shape().to_vec();
        let mut slot = 0;
        for layer in &self.layers {
            if let Some(want) = layer.input_shape() {
                if want.iter().product::<usize>() != current.len() {
                    return Err(Error::shape(&want, &shape));
                }
            }
            let params: &[f64] = if layer.is_parameterized() {
                slot += 1;
                self.params[slot - 1].data()
            } else {
                &[]
            };
            let next = layer.forward(params, &current);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(layer.name()));
            }
            if let Some(out) = layer.output_shape() {
                shape = out;
            }
            activations.push(std::mem::replace(&mut current, next));
        }
        activations.push(current.clone());
        let tape = Tape {
            layer_count: self.layers.len(),
            param_count: self.param_count,
            input_shape: input.shape().to_vec(),
            activations,
            output_shape: shape.clone(),
        };
        Ok((Tensor::new(shape, current)?, tape))
    }

    pub fn backward(&self, tape: &Tape, output_grad: &Tensor) -> Result<(FlatParams, Tensor)> {
        let mut grads = vec![0.0; self.param_count];
        let input_grad = self.backward_accumulate(tape, output_grad.data(), &mut grads)?;
        Ok((
            FlatParams {
                values: grads,
                boundaries: self.boundaries(),
            },
            input_grad,
        ))
    }

    /// Backward pass adding parameter gradients into `grads` (length N).
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Tensor> {
        if tape.layer_count != self.layers.len() || tape.param_count != self.param_count {
            return Err(Error::TapeMismatch(format!(
                "tape has {} layers / {} params, network has {} / {}",
                tape.layer_count,
                tape.param_count,
                self.layers.len(),
                self.param_count
            )));
        }
        if grads.len() != self.param_count {
            return Err(Error::Length {
                expected: self.param_count,
                actual: grads.len(),
            });
        }
        let last = &tape.activations[self.layers.len()];
        if output_grad.len() != last.len() {
            return Err(Error::Length {
                expected: last.len(),
                actual: output_grad.len(),
            });
        }
        let boundaries = self.boundaries();
        let mut slot = boundaries.len();
        let mut grad = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.activations[i];
            let output = &tape.activations[i + 1];
            if let Some(want) = layer.input_shape() {
                if want.iter().product::<usize>() != input.len() {
                    return Err(Error::TapeMismatch(format!("layer {i} input length")));
                }
            }
            grad = if layer.is_parameterized() {
                slot -= 1;
                let (offset, len) = boundaries[slot];
                layer.backward(
                    self.params[slot].data(),
                    input,
                    output,
                    &grad,
                    &mut grads[offset..offset + len],
                )
            } else {
                layer.backward(&[], input, output, &grad, &mut [])
            };
        }
        Tensor::new(tape.input_shape.clone(), grad)
    }
}
