use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Layer widths plus the activation applied after each linear map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// Relu on hidden layers, linear output.
    pub fn new(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::usage("an MLP needs at least input and output widths"));
        }
        let n = layer_dims.len() - 1;
        let activations =
            (0..n).map(|i| if i + 1 == n { Activation::None } else { Activation::Relu }).collect();
        Self::with_activations(layer_dims, activations)
    }

    pub fn with_activations(layer_dims: &[usize], activations: Vec<Activation>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::usage(format!("invalid layer widths {layer_dims:?}")));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::usage("one activation per linear layer"));
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), activations })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
}

/// `y = x·Wᵀ + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(output, input), bias: vec![T::zero(); output] }
    }

    /// Uniform fan-in init: every entry drawn from U(-1/√in, 1/√in).
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-bound..bound));
        let weight = (0..input * output).map(|_| draw()).collect();
        let bias = (0..output).map(|_| draw()).collect();
        Self { weight: Matrix::from_vec(output, input, weight).unwrap(), bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul_t(&self.weight)?;
        for r in 0..y.rows() {
            for (v, &b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn cast<U: Real>(&self) -> DenseLayer<U> {
        DenseLayer {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&b| U::from(b).unwrap()).collect(),
        }
    }
}

/// Values saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    layer_dims: Vec<usize>,
    inputs: Vec<Matrix<T>>,
    pre_activations: Vec<Matrix<T>>,
}

impl<T: Real> MlpCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows())
    }
}

/// Parameter gradients, shaped like the network.
pub type MlpGrads<T> = Vec<DenseLayer<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let layers =
            spec.layer_dims.windows(2).map(|w| DenseLayer::init(w[0], w[1], rng)).collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec.layer_dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        Self { spec, layers }
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let ok = layers.len() + 1 == spec.layer_dims.len()
            && layers.iter().zip(spec.layer_dims.windows(2)).all(|(l, w)| {
                l.weight.shape() == (w[1], w[0]) && l.bias.len() == w[1]
            });
        if !ok {
            return Err(Error::usage("layer shapes do not match the MLP spec"));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        self.layers.iter().map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim())).collect()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp { spec: self.spec.clone(), layers: self.layers.iter().map(DenseLayer::cast).collect() }
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.spec.input_dim() {
            return Err(Error::usage(format!(
                "MLP expects width {}, got {}",
                self.spec.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let mut h = input.clone();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            h = layer.forward(&h)?;
            apply(*act, &mut h);
        }
        Ok(h)
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let z = layer.forward(&h)?;
            inputs.push(std::mem::replace(&mut h, z.clone()));
            apply(*act, &mut h);
            pre_activations.push(z);
        }
        let cache = MlpCache { layer_dims: self.spec.layer_dims.clone(), inputs, pre_activations };
        Ok((h, cache))
    }

    /// Exact gradients of a scalar loss given `upstream = ∂loss/∂output`.
    /// Returns parameter gradients and `∂loss/∂input`.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        upstream: &Matrix<T>,
    ) -> Result<(MlpGrads<T>, Matrix<T>)> {
        if cache.layer_dims != self.spec.layer_dims || cache.inputs.len() != self.layers.len() {
            return Err(Error::usage("cache was produced by a differently shaped MLP"));
        }
        if upstream.shape() != (cache.batch_size(), self.spec.output_dim()) {
            return Err(Error::usage(format!(
                "upstream gradient {:?} does not match output ({}, {})",
                upstream.shape(),
                cache.batch_size(),
                self.spec.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            if self.spec.activations[i] == Activation::Relu {
                let z = &cache.pre_activations[i];
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let weight = delta.t_matmul(&cache.inputs[i])?;
            let mut bias = vec![T::zero(); delta.cols()];
            for row in delta.iter_rows() {
                for (b, &d) in bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let next = delta.matmul(&self.layers[i].weight)?;
            grads.push(DenseLayer { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((grads, delta))
    }
}

fn apply<T: Real>(act: Activation, m: &mut Matrix<T>) {
    if act == Activation::Relu {
        for x in m.as_mut_slice() {
            if *x < T::zero() {
                *x = T::zero();
            }
        }
    }
}

/// Flat views over the trainable tensors of a list of layers, weights then
/// bias per layer.
pub(crate) fn layer_slices<T>(layers: &[DenseLayer<T>]) -> impl Iterator<Item = &[T]> + '_
where
    T: Real,
{
    layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
}

pub(crate) fn layer_slices_mut<T>(
    layers: &mut [DenseLayer<T>],
) -> impl Iterator<Item = &mut [T]> + '_
where
    T: Real,
{
    layers.iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
}
