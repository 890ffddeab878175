//! Stacked autoencoder: unfolding pre-trained layers into an encoder/decoder
//! pair, the forward pass, and squared-error backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::MinibatchPlan;
use crate::linalg::{
    affine_sigmoid, check_cols, mean_row_sq_error, sigmoid_grad_from_output, DataMatrix,
    ShapeError,
};
use crate::rbm::{RbmParams, INIT_WEIGHT_STD};

/// A fully connected sigmoid layer; `weights` is (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self, ShapeError> {
        if bias.len() != weights.nrows() {
            return Err(ShapeError::Length {
                context: "layer bias",
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        Ok(Layer { weights, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Small Gaussian weights, zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        let mut layer = Self::zeros(in_dim, out_dim);
        layer.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        affine_sigmoid(input, &self.weights, &self.bias)
    }
}

/// An encoder layer together with the bias its mirrored decoder layer starts
/// from (the RBM visible bias, or an autoencoder unit's output bias).
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedLayer {
    pub encoder: Layer,
    pub decoder_bias: Array1<f64>,
}

impl PretrainedLayer {
    pub fn from_layer(encoder: Layer) -> Self {
        let decoder_bias = Array1::zeros(encoder.in_dim());
        PretrainedLayer {
            encoder,
            decoder_bias,
        }
    }
}

impl From<&RbmParams> for PretrainedLayer {
    fn from(rbm: &RbmParams) -> Self {
        PretrainedLayer {
            encoder: Layer {
                weights: rbm.weights.clone(),
                bias: rbm.hidden_bias.clone(),
            },
            decoder_bias: rbm.visible_bias.clone(),
        }
    }
}

/// Gradient of the loss with respect to one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-layer gradients, flattened as weights then bias for each layer in turn.
pub fn flatten_grads(grads: &[LayerGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
        .collect()
}

/// Outputs of a forward pass. `activations[0]` is the input itself and the
/// last entry is the reconstruction.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn reconstruction(&self) -> &Array2<f64> {
        self.activations.last().expect("at least the input")
    }
}

/// Encoder layers followed by their mirrored decoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedAutoencoder {
    pub layers: Vec<Layer>,
    /// Number of encoder layers; `activations[code_index]` is the code.
    pub code_index: usize,
}

/// Builds the full autoencoder from pre-trained encoder layers. Decoder layer
/// `k` starts as an untied copy of the transposed weights of the matching
/// encoder layer.
pub fn unfold(encoder: &[PretrainedLayer]) -> Result<StackedAutoencoder, ShapeError> {
    if encoder.is_empty() {
        return Err(ShapeError::Length {
            context: "encoder layers",
            expected: 1,
            actual: 0,
        });
    }
    for pair in encoder.windows(2) {
        if pair[0].encoder.out_dim() != pair[1].encoder.in_dim() {
            return Err(ShapeError::Mismatch {
                context: "encoder chain",
                expected: (pair[0].encoder.out_dim(), pair[1].encoder.out_dim()),
                actual: (pair[1].encoder.in_dim(), pair[1].encoder.out_dim()),
            });
        }
    }
    for p in encoder {
        if p.decoder_bias.len() != p.encoder.in_dim() {
            return Err(ShapeError::Length {
                context: "decoder bias",
                expected: p.encoder.in_dim(),
                actual: p.decoder_bias.len(),
            });
        }
    }
    let mut layers: Vec<Layer> = encoder.iter().map(|p| p.encoder.clone()).collect();
    layers.extend(encoder.iter().rev().map(|p| Layer {
        weights: p.encoder.weights.t().to_owned(),
        bias: p.decoder_bias.clone(),
    }));
    Ok(StackedAutoencoder {
        layers,
        code_index: encoder.len(),
    })
}

/// `(1/N) Σ_examples Σ_features (x − x̂)²`.
pub fn mse_per_example<'a, 'b>(
    x: impl Into<ArrayView2<'a, f64>>,
    xhat: impl Into<ArrayView2<'b, f64>>,
) -> Result<f64, ShapeError> {
    let (x, xhat) = (x.into(), xhat.into());
    if x.dim() != xhat.dim() {
        return Err(ShapeError::Mismatch {
            context: "reconstruction",
            expected: x.dim(),
            actual: xhat.dim(),
        });
    }
    Ok(mean_row_sq_error(x, xhat))
}

impl StackedAutoencoder {
    /// Layer sizes from input to output, e.g. `[784, 1000, …, 1000, 784]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn forward<'a>(
        &self,
        x: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<ForwardPass, ShapeError> {
        let x = x.into();
        check_cols("autoencoder input", x, self.input_dim())?;
        Ok(self.forward_raw(x))
    }

    fn forward_raw(&self, x: ArrayView2<'_, f64>) -> ForwardPass {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap().view());
            activations.push(next);
        }
        ForwardPass { activations }
    }

    pub fn reconstruct<'a>(
        &self,
        x: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<DataMatrix, ShapeError> {
        let mut pass = self.forward(x)?;
        Ok(DataMatrix::from(pass.activations.pop().unwrap()))
    }

    /// Code-layer activations.
    pub fn encode<'a>(&self, x: impl Into<ArrayView2<'a, f64>>) -> Result<DataMatrix, ShapeError> {
        let x = x.into();
        check_cols("autoencoder input", x, self.input_dim())?;
        let mut a = x.to_owned();
        for layer in &self.layers[..self.code_index] {
            a = layer.forward(a.view());
        }
        Ok(DataMatrix::from(a))
    }

    /// [`mse_per_example`] of the reconstruction of `x`.
    pub fn loss<'a>(&self, x: impl Into<ArrayView2<'a, f64>>) -> Result<f64, ShapeError> {
        let x = x.into();
        let pass = self.forward(x)?;
        Ok(mean_row_sq_error(x, pass.reconstruction().view()))
    }

    /// Loss and its gradient for targets equal to the inputs.
    pub fn gradient<'a>(
        &self,
        x: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<(f64, Vec<LayerGrad>), ShapeError> {
        let x = x.into();
        check_cols("autoencoder input", x, self.input_dim())?;
        Ok(self.gradient_raw(x))
    }

    fn gradient_raw(&self, x: ArrayView2<'_, f64>) -> (f64, Vec<LayerGrad>) {
        let pass = self.forward_raw(x);
        let out = pass.reconstruction();
        let n = x.nrows().max(1) as f64;
        let loss = mean_row_sq_error(x, out.view());

        // dL/d(pre-activation) of the output layer
        let mut delta = Array2::zeros(out.raw_dim());
        Zip::from(&mut delta)
            .and(out)
            .and(&x)
            .for_each(|d, &a, &t| *d = 2.0 * (a - t) / n * sigmoid_grad_from_output(a));

        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &pass.activations[l];
            grads.push(LayerGrad {
                weights: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut back = delta.dot(&layer.weights);
                Zip::from(&mut back)
                    .and(input)
                    .for_each(|d, &a| *d *= sigmoid_grad_from_output(a));
                delta = back;
            }
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn apply_gradient(&mut self, grads: &[LayerGrad], learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights.scaled_add(-learning_rate, &g.weights);
            layer.bias.scaled_add(-learning_rate, &g.bias);
        }
    }

    /// One epoch of minibatch gradient descent on the reconstruction error.
    /// Returns the training error of the updated network over all of `data`.
    pub fn backprop_epoch<'a>(
        &mut self,
        data: impl Into<ArrayView2<'a, f64>>,
        learning_rate: f64,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<f64, ShapeError> {
        let data = data.into();
        check_cols("training data", data, self.input_dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        self.train_epoch_with(data, learning_rate, batch_size, &mut rng, &mut || {});
        Ok(mean_row_sq_error(data, self.forward_raw(data).reconstruction().view()))
    }

    pub(crate) fn train_epoch_with<R: Rng + ?Sized>(
        &mut self,
        data: ArrayView2<'_, f64>,
        learning_rate: f64,
        batch_size: usize,
        rng: &mut R,
        on_batch: &mut dyn FnMut(),
    ) {
        let plan = MinibatchPlan::with_rng(data.nrows(), batch_size, rng, 0);
        for batch in plan.gather(data) {
            if learning_rate != 0.0 {
                let (_, grads) = self.gradient_raw(batch.view());
                self.apply_gradient(&grads, learning_rate);
            }
            on_batch();
        }
    }

    /// Layer `l` as a mutable flat parameter view: weights then bias.
    fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for layer in &mut self.layers {
            if i < layer.weights.len() {
                let cols = layer.weights.ncols();
                return &mut layer.weights[[i / cols, i % cols]];
            }
            i -= layer.weights.len();
            if i < layer.bias.len() {
                return &mut layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("parameter index {index} out of range");
    }
}

/// Central-difference gradient of [`StackedAutoencoder::loss`] for every
/// parameter, in the layout of [`flatten_grads`].
pub fn finite_diff_grad(
    sae: &StackedAutoencoder,
    x: &DataMatrix,
    eps: f64,
) -> Result<Vec<f64>, ShapeError> {
    let mut probe = sae.clone();
    let mut out = Vec::with_capacity(sae.param_count());
    for k in 0..sae.param_count() {
        let base = *probe.param_mut(k);
        *probe.param_mut(k) = base + eps;
        let up = probe.loss(x)?;
        *probe.param_mut(k) = base - eps;
        let down = probe.loss(x)?;
        *probe.param_mut(k) = base;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}
