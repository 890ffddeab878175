//! The per-layer learner used by both pre-training schedules.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{unfold, Layer, PretrainedLayer, StackedAutoencoder};
use crate::linalg::{mean_row_sq_error, ShapeError};
use crate::rbm::{CdHyperparams, RbmParams};

/// Generator owned by the worker that trains layer `layer` (0-based).
///
/// Every layer reads its own ChaCha stream of the global seed, so the order in
/// which layers run never changes what any single layer draws.
pub fn layer_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64 + 1);
    rng
}

/// One layer's learner: trainable for an epoch at a time on whatever data it
/// is handed, and able to map data to the next layer's input space.
pub trait PretrainUnit: Send + 'static {
    type Output: Send + 'static;

    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// One pass over `data`; `epoch` counts this unit's previous epochs.
    fn fit_epoch(
        &mut self,
        data: ArrayView2<'_, f64>,
        epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        on_batch: &mut dyn FnMut(),
    ) -> Result<(), ShapeError>;

    fn reconstruction_error(&self, data: ArrayView2<'_, f64>) -> Result<f64, ShapeError>;

    fn transform(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>, ShapeError>;

    fn pretrained(&self) -> PretrainedLayer;

    fn into_output(self) -> Self::Output;
}

/// RBM trained with contrastive divergence.
#[derive(Debug, Clone)]
pub struct RbmUnit {
    pub params: RbmParams,
    pub hp: CdHyperparams,
}

impl RbmUnit {
    pub fn new(n_visible: usize, n_hidden: usize, hp: CdHyperparams, rng: &mut ChaCha8Rng) -> Self {
        RbmUnit {
            params: RbmParams::random(n_visible, n_hidden, rng),
            hp,
        }
    }
}

impl PretrainUnit for RbmUnit {
    type Output = RbmParams;

    fn in_dim(&self) -> usize {
        self.params.n_visible()
    }

    fn out_dim(&self) -> usize {
        self.params.n_hidden()
    }

    fn fit_epoch(
        &mut self,
        data: ArrayView2<'_, f64>,
        epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        on_batch: &mut dyn FnMut(),
    ) -> Result<(), ShapeError> {
        self.params
            .train_epoch(data, batch_size, &self.hp, epoch, rng, on_batch)
    }

    fn reconstruction_error(&self, data: ArrayView2<'_, f64>) -> Result<f64, ShapeError> {
        self.params.reconstruction_error(data)
    }

    fn transform(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>, ShapeError> {
        Ok(self.params.transform(data)?.into_array())
    }

    fn pretrained(&self) -> PretrainedLayer {
        PretrainedLayer::from(&self.params)
    }

    fn into_output(self) -> RbmParams {
        self.params
    }
}

/// Single-hidden-layer autoencoder trained by backpropagation.
#[derive(Debug, Clone)]
pub struct AeUnit {
    pub net: StackedAutoencoder,
    pub learning_rate: f64,
}

impl AeUnit {
    pub fn new(in_dim: usize, out_dim: usize, learning_rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let encoder = PretrainedLayer::from_layer(Layer::random(in_dim, out_dim, rng));
        let mut net = unfold(&[encoder]).expect("single layer always unfolds");
        // independent decoder weights
        net.layers[1] = Layer::random(out_dim, in_dim, rng);
        AeUnit { net, learning_rate }
    }

    pub fn encoder(&self) -> &Layer {
        &self.net.layers[0]
    }
}

impl PretrainUnit for AeUnit {
    type Output = Layer;

    fn in_dim(&self) -> usize {
        self.net.layers[0].in_dim()
    }

    fn out_dim(&self) -> usize {
        self.net.layers[0].out_dim()
    }

    fn fit_epoch(
        &mut self,
        data: ArrayView2<'_, f64>,
        _epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        on_batch: &mut dyn FnMut(),
    ) -> Result<(), ShapeError> {
        crate::linalg::check_cols("training data", data, self.in_dim())?;
        self.net
            .train_epoch_with(data, self.learning_rate, batch_size, rng, on_batch);
        Ok(())
    }

    fn reconstruction_error(&self, data: ArrayView2<'_, f64>) -> Result<f64, ShapeError> {
        let pass = self.net.forward(data)?;
        Ok(mean_row_sq_error(data, pass.reconstruction().view()))
    }

    fn transform(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>, ShapeError> {
        crate::linalg::check_cols("transform input", data, self.in_dim())?;
        Ok(self.net.layers[0].forward(data))
    }

    fn pretrained(&self) -> PretrainedLayer {
        PretrainedLayer {
            encoder: self.net.layers[0].clone(),
            decoder_bias: self.net.layers[1].bias.clone(),
        }
    }

    fn into_output(self) -> Layer {
        self.net.layers.into_iter().next().unwrap()
    }
}

/// Which learner each layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Rbm,
    Autoencoder,
}
