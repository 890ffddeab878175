//! Bernoulli–Bernoulli restricted Boltzmann machine trained with CD-k.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::MinibatchPlan;
use crate::linalg::{affine_sigmoid, check_cols, mean_row_sq_error, DataMatrix, ShapeError};

/// Standard deviation of the Gaussian used for initial weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

/// Weights, biases and momentum state of one RBM.
///
/// `weights` is stored as (hidden × visible), so row `i` holds the incoming
/// weights of hidden unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub vel_weights: Array2<f64>,
    pub vel_visible: Array1<f64>,
    pub vel_hidden: Array1<f64>,
}

/// A gradient (or update direction) with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmGradient {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmGradient {
            weights: Array2::zeros((n_hidden, n_visible)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    /// Weights (row-major), then visible biases, then hidden biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.visible_bias.iter())
            .chain(self.hidden_bias.iter())
            .copied()
            .collect()
    }

    pub fn add_assign(&mut self, other: &RbmGradient) {
        self.weights += &other.weights;
        self.visible_bias += &other.visible_bias;
        self.hidden_bias += &other.hidden_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.visible_bias *= factor;
        self.hidden_bias *= factor;
    }

    pub fn cosine_similarity(&self, other: &RbmGradient) -> f64 {
        let (a, b) = (self.flatten(), other.flatten());
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }
}

/// Contrastive-divergence settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CdHyperparams {
    pub learning_rate: f64,
    /// `(first_epoch, momentum)` pairs sorted by epoch; the last entry whose
    /// epoch is `<=` the current one applies.
    pub momentum_schedule: Vec<(usize, f64)>,
    pub cd_steps: usize,
    /// Sample binary hidden states in the positive phase; when false the
    /// hidden probabilities are propagated directly.
    pub sample_hidden: bool,
}

impl Default for CdHyperparams {
    fn default() -> Self {
        CdHyperparams {
            learning_rate: 0.1,
            momentum_schedule: vec![(0, 0.5), (5, 0.9)],
            cd_steps: 1,
            sample_hidden: true,
        }
    }
}

impl CdHyperparams {
    pub fn momentum(&self, epoch: usize) -> f64 {
        self.momentum_schedule
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(0.0, |&(_, m)| m)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if self.cd_steps == 0 {
            return Err("cd steps must be at least 1".into());
        }
        if let Some(&(_, m)) = self
            .momentum_schedule
            .iter()
            .find(|(_, m)| !(0.0..1.0).contains(m))
        {
            return Err(format!("momentum {m} is outside [0, 1)"));
        }
        if self.momentum_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err("momentum schedule epochs must be strictly increasing".into());
        }
        Ok(())
    }
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            weights: Array2::zeros((n_hidden, n_visible)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
            vel_weights: Array2::zeros((n_hidden, n_visible)),
            vel_visible: Array1::zeros(n_visible),
            vel_hidden: Array1::zeros(n_hidden),
        }
    }

    /// Zero biases, weights drawn from N(0, 0.01²).
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        let mut rbm = Self::zeros(n_visible, n_hidden);
        rbm.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        rbm
    }

    /// Builds a model from explicit parameters with zero velocities.
    pub fn from_parts(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self, ShapeError> {
        let (h, v) = weights.dim();
        if visible_bias.len() != v {
            return Err(ShapeError::Length {
                context: "visible bias",
                expected: v,
                actual: visible_bias.len(),
            });
        }
        if hidden_bias.len() != h {
            return Err(ShapeError::Length {
                context: "hidden bias",
                expected: h,
                actual: hidden_bias.len(),
            });
        }
        Ok(RbmParams {
            vel_weights: Array2::zeros((h, v)),
            vel_visible: Array1::zeros(v),
            vel_hidden: Array1::zeros(h),
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn n_visible(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.weights, &self.vel_weights]
            .iter()
            .all(|a| a.iter().all(|x| x.is_finite()))
            && [
                &self.visible_bias,
                &self.hidden_bias,
                &self.vel_visible,
                &self.vel_hidden,
            ]
            .iter()
            .all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// The same machine with the roles of the two layers exchanged.
    pub fn flipped(&self) -> RbmParams {
        RbmParams {
            weights: self.weights.t().to_owned(),
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
            vel_weights: self.vel_weights.t().to_owned(),
            vel_visible: self.vel_hidden.clone(),
            vel_hidden: self.vel_visible.clone(),
        }
    }

    /// `E(v,h) = −hᵀWv − bᵀv − cᵀh`.
    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64, ShapeError> {
        if v.len() != self.n_visible() {
            return Err(ShapeError::Length {
                context: "visible state",
                expected: self.n_visible(),
                actual: v.len(),
            });
        }
        if h.len() != self.n_hidden() {
            return Err(ShapeError::Length {
                context: "hidden state",
                expected: self.n_hidden(),
                actual: h.len(),
            });
        }
        let v = ArrayView1::from(v);
        let h = ArrayView1::from(h);
        let interaction = h.dot(&self.weights.dot(&v));
        Ok(-interaction - self.visible_bias.dot(&v) - self.hidden_bias.dot(&h))
    }

    /// `p(H_i = 1 | v)` for each row of `v_batch`.
    pub fn hidden_probs<'a>(
        &self,
        v_batch: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<DataMatrix, ShapeError> {
        let v = v_batch.into();
        check_cols("visible batch", v, self.n_visible())?;
        Ok(DataMatrix::from(self.hidden_probs_raw(v)))
    }

    /// `p(V_j = 1 | h)` for each row of `h_batch`.
    pub fn visible_probs<'a>(
        &self,
        h_batch: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<DataMatrix, ShapeError> {
        let h = h_batch.into();
        check_cols("hidden batch", h, self.n_hidden())?;
        Ok(DataMatrix::from(self.visible_probs_raw(h)))
    }

    pub(crate) fn hidden_probs_raw(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        affine_sigmoid(v, &self.weights, &self.hidden_bias)
    }

    pub(crate) fn visible_probs_raw(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = h.dot(&self.weights);
        Zip::from(out.rows_mut()).for_each(|mut row| row += &self.visible_bias);
        crate::linalg::sigmoid_inplace(&mut out);
        out
    }

    /// Hidden activation probabilities of `data`: the representation handed to
    /// the next layer.
    pub fn transform<'a>(
        &self,
        data: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<DataMatrix, ShapeError> {
        self.hidden_probs(data)
    }

    /// Mean over rows of `Σ_j (v_j − v̂_j)²` where `v̂` is the deterministic
    /// probability round trip visible → hidden → visible.
    pub fn reconstruction_error<'a>(
        &self,
        data: impl Into<ArrayView2<'a, f64>>,
    ) -> Result<f64, ShapeError> {
        let v = data.into();
        check_cols("reconstruction data", v, self.n_visible())?;
        let recon = self.visible_probs_raw(self.hidden_probs_raw(v).view());
        Ok(mean_row_sq_error(v, recon.view()))
    }

    /// CD-k estimate of the mean log-likelihood gradient over `batch`.
    ///
    /// Positive statistics use the data and its hidden probabilities. Hidden
    /// states are sampled (when enabled); each reconstruction and the negative
    /// hidden statistics use probabilities.
    pub fn cd_gradient<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<'_, f64>,
        hp: &CdHyperparams,
        rng: &mut R,
    ) -> Result<RbmGradient, ShapeError> {
        check_cols("training batch", batch, self.n_visible())?;
        let rows = batch.nrows();
        if rows == 0 {
            return Ok(RbmGradient::zeros(self.n_visible(), self.n_hidden()));
        }
        let pos_hidden = self.hidden_probs_raw(batch);
        let mut hidden = if hp.sample_hidden {
            bernoulli(&pos_hidden, rng)
        } else {
            pos_hidden.clone()
        };
        let mut recon = self.visible_probs_raw(hidden.view());
        let mut neg_hidden = self.hidden_probs_raw(recon.view());
        for _ in 1..hp.cd_steps.max(1) {
            hidden = if hp.sample_hidden {
                bernoulli(&neg_hidden, rng)
            } else {
                neg_hidden
            };
            recon = self.visible_probs_raw(hidden.view());
            neg_hidden = self.hidden_probs_raw(recon.view());
        }

        let scale = 1.0 / rows as f64;
        let mut weights = pos_hidden.t().dot(&batch);
        ndarray::linalg::general_mat_mul(-1.0, &neg_hidden.t(), &recon, 1.0, &mut weights);
        weights *= scale;
        let visible_bias = (batch.sum_axis(Axis(0)) - recon.sum_axis(Axis(0))) * scale;
        let hidden_bias = (pos_hidden.sum_axis(Axis(0)) - neg_hidden.sum_axis(Axis(0))) * scale;
        Ok(RbmGradient {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    /// Applies `velocity ← momentum·velocity + learning_rate·gradient` and
    /// `params += velocity`.
    pub fn apply_update(&mut self, grad: &RbmGradient, learning_rate: f64, momentum: f64) {
        fn step<D: ndarray::Dimension>(
            param: &mut ndarray::Array<f64, D>,
            vel: &mut ndarray::Array<f64, D>,
            grad: &ndarray::Array<f64, D>,
            lr: f64,
            m: f64,
        ) {
            Zip::from(param).and(vel).and(grad).for_each(|p, v, g| {
                *v = m * *v + lr * g;
                *p += *v;
            });
        }
        step(&mut self.weights, &mut self.vel_weights, &grad.weights, learning_rate, momentum);
        step(
            &mut self.visible_bias,
            &mut self.vel_visible,
            &grad.visible_bias,
            learning_rate,
            momentum,
        );
        step(
            &mut self.hidden_bias,
            &mut self.vel_hidden,
            &grad.hidden_bias,
            learning_rate,
            momentum,
        );
    }

    /// One CD-k parameter update on `batch`; `epoch` selects the momentum.
    pub fn cd_update<'a, R: Rng + ?Sized>(
        &mut self,
        batch: impl Into<ArrayView2<'a, f64>>,
        hp: &CdHyperparams,
        epoch: usize,
        rng: &mut R,
    ) -> Result<(), ShapeError> {
        let grad = self.cd_gradient(batch.into(), hp, rng)?;
        self.apply_update(&grad, hp.learning_rate, hp.momentum(epoch));
        Ok(())
    }

    /// A full pass over `data` in shuffled minibatches. The permutation is
    /// drawn from `rng`, the same stream later used for hidden sampling.
    /// `on_batch` is called after every update.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        data: ArrayView2<'_, f64>,
        batch_size: usize,
        hp: &CdHyperparams,
        epoch: usize,
        rng: &mut R,
        on_batch: &mut dyn FnMut(),
    ) -> Result<(), ShapeError> {
        check_cols("training data", data, self.n_visible())?;
        let plan = MinibatchPlan::with_rng(data.nrows(), batch_size, rng, epoch as u64);
        for batch in plan.gather(data) {
            self.cd_update(batch.view(), hp, epoch, rng)?;
            on_batch();
        }
        Ok(())
    }
}

fn bernoulli<R: Rng + ?Sized>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    probs.mapv(|p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(nv: usize, nh: usize, scale: f64, seed: u64) -> RbmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = RbmParams::zeros(nv, nh);
        r.weights.mapv_inplace(|_| rng.gen_range(-scale..scale));
        r.visible_bias.mapv_inplace(|_| rng.gen_range(-scale..scale));
        r.hidden_bias.mapv_inplace(|_| rng.gen_range(-scale..scale));
        r
    }

    fn bits(n: usize, code: usize) -> Vec<f64> {
        (0..n).map(|i| ((code >> i) & 1) as f64).collect()
    }

    #[test]
    fn energy_of_zero_model_is_zero() {
        let r = RbmParams::zeros(3, 2);
        assert_eq!(r.energy(&[1.0, 0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_single_term() {
        let r = RbmParams::from_parts(array![[1.0]], array![0.0], array![0.0]).unwrap();
        assert_eq!(r.energy(&[1.0], &[1.0]).unwrap(), -1.0);
    }

    #[test]
    fn energy_matches_per_state_summation() {
        let r = random_model(3, 2, 1.0, 5);
        for code in 0..32 {
            let v = bits(3, code);
            let h = bits(2, code >> 3);
            let mut e = 0.0;
            for i in 0..2 {
                for j in 0..3 {
                    e -= r.weights[[i, j]] * h[i] * v[j];
                }
            }
            for j in 0..3 {
                e -= r.visible_bias[j] * v[j];
            }
            for i in 0..2 {
                e -= r.hidden_bias[i] * h[i];
            }
            assert!((r.energy(&v, &h).unwrap() - e).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_dimension_mismatch() {
        let r = RbmParams::zeros(3, 2);
        assert!(r.energy(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_model_conditionals_are_half() {
        let r = RbmParams::zeros(4, 3);
        let v = DataMatrix::filled(2, 4, 1.0);
        assert!(r.hidden_probs(&v).unwrap().as_slice().iter().all(|&p| p == 0.5));
        let h = DataMatrix::filled(2, 3, 1.0);
        assert!(r.visible_probs(&h).unwrap().as_slice().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn saturated_hidden_unit() {
        let r = RbmParams::from_parts(array![[1e6, 0.0, 0.0]], array![0.0, 0.0, 0.0], array![0.0])
            .unwrap();
        let v = DataMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!((1.0 - r.hidden_probs(&v).unwrap().get(0, 0)).abs() < 1e-9);
    }

    #[test]
    fn visible_probs_is_flipped_hidden_probs() {
        let r = random_model(4, 3, 2.0, 9);
        let h = DataMatrix::from_rows(&[[1.0, 0.0, 1.0], [0.2, 0.7, 0.1]]).unwrap();
        assert_eq!(
            r.visible_probs(&h).unwrap(),
            r.flipped().hidden_probs(&h).unwrap()
        );
    }

    #[test]
    fn conditionals_match_exact_joint() {
        let r = random_model(4, 3, 1.5, 21);
        for code in 0..16 {
            let v = bits(4, code);
            let vm = DataMatrix::from_rows(&[&v]).unwrap();
            let fast = r.hidden_probs(&vm).unwrap();
            let exact = oracle::hidden_conditional(&r, &v).unwrap();
            for (a, b) in fast.as_slice().iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let r = random_model(3, 3, 1.5, 22);
        for code in 0..8 {
            let h = bits(3, code);
            let hm = DataMatrix::from_rows(&[&h]).unwrap();
            let fast = r.visible_probs(&hm).unwrap();
            let exact = oracle::visible_conditional(&r, &h).unwrap();
            for (a, b) in fast.as_slice().iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transform_is_hidden_probs() {
        let r = random_model(5, 2, 1.0, 2);
        let d = DataMatrix::filled(3, 5, 0.3);
        assert_eq!(r.transform(&d).unwrap(), r.hidden_probs(&d).unwrap());
        let z = RbmParams::zeros(5, 2).transform(&d).unwrap();
        assert_eq!(z.shape(), (3, 2));
        assert!(z.as_slice().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn reconstruction_error_cases() {
        let zero = RbmParams::zeros(3, 2);
        assert_eq!(zero.reconstruction_error(&DataMatrix::filled(4, 3, 0.5)).unwrap(), 0.0);

        // identity channel: hidden i copies visible i with steep weights
        let k = 40.0;
        let w = Array2::from_diag(&Array1::from_elem(3, 2.0 * k));
        let r = RbmParams::from_parts(w, Array1::from_elem(3, -k), Array1::from_elem(3, -k)).unwrap();
        let data = DataMatrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        assert!(r.reconstruction_error(&data).unwrap() < 1e-3);

        let any = random_model(3, 2, 3.0, 4);
        assert!(any.reconstruction_error(&data).unwrap() >= 0.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut r = random_model(3, 2, 1.0, 8);
        let before = r.clone();
        let hp = CdHyperparams {
            learning_rate: 0.0,
            ..CdHyperparams::default()
        };
        let batch = r.visible_probs(&r.hidden_probs(&DataMatrix::filled(2, 3, 0.5)).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        r.cd_update(&batch, &hp, 0, &mut rng).unwrap();
        assert_eq!(r, before);
    }

    #[test]
    fn zero_momentum_has_no_memory() {
        let mut r = random_model(3, 2, 1.0, 8);
        let grad = RbmGradient {
            weights: Array2::from_elem((2, 3), 0.25),
            visible_bias: Array1::from_elem(3, -0.5),
            hidden_bias: Array1::from_elem(2, 1.0),
        };
        let w0 = r.weights.clone();
        r.apply_update(&grad, 0.1, 0.0);
        let first = &r.weights - &w0;
        let w1 = r.weights.clone();
        r.apply_update(&grad, 0.1, 0.0);
        let second = &r.weights - &w1;
        for (a, b) in first.iter().zip(second.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_schedule_lookup() {
        let hp = CdHyperparams::default();
        assert_eq!(hp.momentum(0), 0.5);
        assert_eq!(hp.momentum(4), 0.5);
        assert_eq!(hp.momentum(5), 0.9);
        assert_eq!(hp.momentum(100), 0.9);
        assert!(hp.validate().is_ok());
        let bad = CdHyperparams {
            momentum_schedule: vec![(0, 1.0)],
            ..CdHyperparams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cd_direction_agrees_with_exact_gradient() {
        let data = DataMatrix::from_rows(&[
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        let r = random_model(3, 2, 0.5, 31);
        let exact = oracle::exact_loglik_grad(&r, &data).unwrap();
        let hp = CdHyperparams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut avg = RbmGradient::zeros(3, 2);
        for _ in 0..200 {
            avg.add_assign(&r.cd_gradient(data.view(), &hp, &mut rng).unwrap());
        }
        avg.scale(1.0 / 200.0);
        assert!(avg.cosine_similarity(&exact) > 0.0);
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let data = DataMatrix::from_rows(&[
            [1.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = RbmParams::random(3, 2, &mut rng);
        let hp = CdHyperparams::default();
        let mut errors = Vec::new();
        for epoch in 0..500 {
            r.train_epoch(data.view(), 2, &hp, epoch, &mut rng, &mut || {}).unwrap();
            errors.push(r.reconstruction_error(&data).unwrap());
        }
        assert!(errors[499] < errors[0], "{} !< {}", errors[499], errors[0]);
        assert!(r.is_finite());
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = DataMatrix::filled(10, 4, 0.3);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut r = RbmParams::random(4, 3, &mut rng);
            for e in 0..7 {
                r.train_epoch(data.view(), 3, &CdHyperparams::default(), e, &mut rng, &mut || {})
                    .unwrap();
            }
            r
        };
        assert_eq!(run(), run());
    }
}
