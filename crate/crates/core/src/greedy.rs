//! Baseline schedule: each layer trains to completion before the next one
//! starts on its transformed data.

use std::sync::Arc;

use ndarray::Array2;

use crate::autoencoder::{Layer, PretrainedLayer};
use crate::config::TrainingConfig;
use crate::error::{DataError, Result};
use crate::linalg::DataMatrix;
use crate::metrics::{EventKind, TraceEvent, TraceSink};
use crate::rbm::RbmParams;
use crate::unit::{layer_rng, AeUnit, PretrainUnit, RbmUnit};

/// Builds the untrained unit for every layer of `cfg.arch`, each seeded from
/// its own stream. Shared with the synchronized schedule so both start from
/// identical parameters.
pub fn rbm_units(cfg: &TrainingConfig) -> Vec<(RbmUnit, rand_chacha::ChaCha8Rng)> {
    cfg.arch
        .windows(2)
        .enumerate()
        .map(|(l, dims)| {
            let mut rng = layer_rng(cfg.seed, l);
            (RbmUnit::new(dims[0], dims[1], cfg.cd.clone(), &mut rng), rng)
        })
        .collect()
}

pub fn ae_units(cfg: &TrainingConfig) -> Vec<(AeUnit, rand_chacha::ChaCha8Rng)> {
    cfg.arch
        .windows(2)
        .enumerate()
        .map(|(l, dims)| {
            let mut rng = layer_rng(cfg.seed, l);
            (AeUnit::new(dims[0], dims[1], cfg.ae_learning_rate, &mut rng), rng)
        })
        .collect()
}

pub(crate) fn check_input(cfg: &TrainingConfig, train: &DataMatrix, valid: &DataMatrix) -> Result<()> {
    for m in [train, valid] {
        if m.cols() != cfg.arch[0] {
            return Err(DataError::FeatureMismatch {
                cols: m.cols(),
                expected: cfg.arch[0],
            }
            .into());
        }
    }
    Ok(())
}

/// Trains one unit for `epochs` epochs on fixed data, recording an `EPOCH`
/// event (with train/valid reconstruction errors) per epoch.
pub(crate) fn run_epoch<U: PretrainUnit>(
    unit: &mut U,
    rng: &mut rand_chacha::ChaCha8Rng,
    worker: usize,
    epoch: usize,
    input_version: u64,
    train: &Array2<f64>,
    valid: &Array2<f64>,
    batch_size: usize,
    trace: &TraceSink,
) -> Result<()> {
    let start = trace.now_ns();
    unit.fit_epoch(train.view(), epoch, batch_size, rng, &mut || trace.beat())?;
    let train_err = unit.reconstruction_error(train.view())?;
    let valid_err = if valid.nrows() > 0 {
        Some(unit.reconstruction_error(valid.view())?)
    } else {
        None
    };
    trace.record(TraceEvent {
        worker,
        epoch: epoch + 1,
        kind: EventKind::Epoch,
        input_version,
        train_err: Some(train_err),
        valid_err,
        t_start_ns: start,
        t_end_ns: trace.now_ns(),
    });
    Ok(())
}

/// Greedy schedule over arbitrary units.
pub fn greedy_pretrain_units<U: PretrainUnit>(
    units: Vec<(U, rand_chacha::ChaCha8Rng)>,
    epochs: &[usize],
    batch_size: usize,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<U>> {
    let mut data_train = Arc::new(train.as_array().clone());
    let mut data_valid = Arc::new(valid.as_array().clone());
    let mut trained = Vec::with_capacity(units.len());
    let last = units.len() - 1;
    for (l, (mut unit, mut rng)) in units.into_iter().enumerate() {
        let worker = l + 1;
        for epoch in 0..epochs[l] {
            run_epoch(
                &mut unit, &mut rng, worker, epoch, 0, &data_train, &data_valid, batch_size, trace,
            )?;
        }
        if l < last {
            let start = trace.now_ns();
            data_train = Arc::new(unit.transform(data_train.view())?);
            data_valid = Arc::new(unit.transform(data_valid.view())?);
            trace.record(TraceEvent {
                worker,
                epoch: epochs[l],
                kind: EventKind::Publish,
                input_version: 0,
                train_err: None,
                valid_err: None,
                t_start_ns: start,
                t_end_ns: trace.now_ns(),
            });
        }
        let now = trace.now_ns();
        trace.record(TraceEvent {
            worker,
            epoch: epochs[l],
            kind: EventKind::Done,
            input_version: 0,
            train_err: None,
            valid_err: None,
            t_start_ns: now,
            t_end_ns: now,
        });
        trained.push(unit);
    }
    Ok(trained)
}

/// Greedy layer-wise RBM pre-training.
pub fn greedy_pretrain(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<RbmParams>> {
    check_input(cfg, train, valid)?;
    let units = greedy_pretrain_units(rbm_units(cfg), &cfg.epochs_per_layer, cfg.batch_size, train, valid, trace)?;
    Ok(units.into_iter().map(PretrainUnit::into_output).collect())
}

/// Greedy pre-training with one-hidden-layer autoencoders as units.
pub fn greedy_pretrain_ae(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<Layer>> {
    Ok(greedy_pretrain_ae_layers(cfg, train, valid, trace)?
        .into_iter()
        .map(|p| p.encoder)
        .collect())
}

/// Like [`greedy_pretrain_ae`] but keeps each unit's decoder bias for unfolding.
pub fn greedy_pretrain_ae_layers(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<PretrainedLayer>> {
    check_input(cfg, train, valid)?;
    let units = greedy_pretrain_units(ae_units(cfg), &cfg.epochs_per_layer, cfg.batch_size, train, valid, trace)?;
    Ok(units.iter().map(PretrainUnit::pretrained).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigBuilder;
    use rand::{Rng, SeedableRng};

    pub(crate) fn toy_config(arch: &str, epochs: usize) -> TrainingConfig {
        let mut b = ConfigBuilder::new();
        b.merge_str(
            "test",
            &format!(
                "arch.dims = {arch}\ntrain.epochs_per_layer = {epochs}\ntrain.batch_size = 10\nsync.extra_epochs = [0]\n"
            ),
        )
        .unwrap();
        b.build(None).unwrap()
    }

    fn toy_data(rows: usize, cols: usize, seed: u64) -> DataMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn single_layer_equals_direct_rbm_training() {
        let cfg = toy_config("[6, 4]", 3);
        let (train, valid) = (toy_data(30, 6, 1), toy_data(10, 6, 2));
        let trace = TraceSink::new();
        let out = greedy_pretrain(&cfg, &train, &valid, &trace).unwrap();

        let mut rng = layer_rng(cfg.seed, 0);
        let mut rbm = RbmParams::random(6, 4, &mut rng);
        for e in 0..3 {
            rbm.train_epoch(train.view(), 10, &cfg.cd, e, &mut rng, &mut || {}).unwrap();
        }
        assert_eq!(out, vec![rbm]);
    }

    #[test]
    fn one_epoch_event_per_epoch_and_sequential() {
        let cfg = toy_config("[6, 5, 4, 3]", 2);
        let trace = TraceSink::new();
        greedy_pretrain(&cfg, &toy_data(20, 6, 1), &toy_data(5, 6, 2), &trace).unwrap();
        let events = trace.events();
        let epochs: Vec<_> = events.iter().filter(|e| e.kind == EventKind::Epoch).collect();
        assert_eq!(epochs.len(), 6);
        for l in 2..=3 {
            let first = events.iter().filter(|e| e.worker == l).map(|e| e.t_start_ns).min().unwrap();
            let prev_last = events.iter().filter(|e| e.worker == l - 1).map(|e| e.t_end_ns).max().unwrap();
            assert!(first >= prev_last);
        }
    }

    #[test]
    fn bit_identical_reruns() {
        let cfg = toy_config("[6, 5, 4]", 2);
        let (train, valid) = (toy_data(20, 6, 3), toy_data(5, 6, 4));
        let a = greedy_pretrain(&cfg, &train, &valid, &TraceSink::new()).unwrap();
        let b = greedy_pretrain(&cfg, &train, &valid, &TraceSink::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn autoencoder_units_chain_and_respect_zero_rate() {
        let mut cfg = toy_config("[6, 5, 3]", 2);
        let layers = greedy_pretrain_ae(&cfg, &toy_data(20, 6, 1), &toy_data(5, 6, 2), &TraceSink::new()).unwrap();
        assert_eq!(layers.len(), 2);
        assert_eq!((layers[0].in_dim(), layers[0].out_dim()), (6, 5));
        assert_eq!((layers[1].in_dim(), layers[1].out_dim()), (5, 3));

        cfg = toy_config("[6, 5]", 3);
        cfg.ae_learning_rate = 0.0;
        let trained = greedy_pretrain_ae(&cfg, &toy_data(20, 6, 1), &toy_data(5, 6, 2), &TraceSink::new()).unwrap();
        let (init, _) = ae_units(&cfg).remove(0);
        assert_eq!(trained[0], *init.encoder());
    }

    #[test]
    fn feature_mismatch_is_reported() {
        let cfg = toy_config("[6, 4]", 1);
        let err = greedy_pretrain(&cfg, &toy_data(5, 7, 1), &toy_data(5, 7, 1), &TraceSink::new()).unwrap_err();
        assert!(err.to_string().contains("7 features"));
    }
}
