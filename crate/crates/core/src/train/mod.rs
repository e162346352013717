//! Sparse-supervision training: masked loss, Adam, clipping, a multi-step
//! learning-rate schedule and the epoch loop with best-epoch selection.
//!
//! Optimiser state and master weights are kept in `f64`; the model's `f32`
//! parameters are refreshed from them after every step. Minibatches are drawn
//! with replacement, and the data term of a batch pools every masked pixel of
//! every sample in the batch.

mod config;
mod loss;
mod optim;

pub use config::{parse_key_values, TrainConfig};
pub use loss::{add_l2_grad, l2_penalty, loss, masked_mse_grad, masked_squared_error};
pub use optim::{adam_step, clip_gradients, lr_at, AdamState};

use std::io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fusion::Sample;
use crate::net::{HeadGrads, Model, NetError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss mask has no labeled pixels")]
    EmptyMask,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite value at iteration {iteration}: {context}")]
    NonFinite { iteration: u64, context: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Seeded shuffle of `0..n` split into `(train, val)` index lists with
/// `|val| = round(val_fraction · n)`.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(TrainError::TooFewSamples { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * n as f64).round() as usize).min(n - 1);
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

pub fn split_train_val<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), val_fraction, seed)?;
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        va.iter().map(|&i| items[i].clone()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch, L2 term included.
    pub train_loss: f64,
    /// Pooled masked MSE over all validation pixels.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub iterations: u64,
}

/// Pooled masked MSE of `model` over `samples`.
pub fn validation_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0;
    for s in samples {
        let out = model.forward(&s.patch)?;
        let (a, b) = masked_squared_error(out.pred.data(), &s.labels, &s.mask)?;
        sq += a;
        n += b;
    }
    if n == 0 {
        return Err(TrainError::EmptyMask);
    }
    Ok(sq / n as f64)
}

/// Mean label over every masked pixel.
pub fn mean_label(samples: &[Sample]) -> Option<f64> {
    let (sum, n) = samples
        .iter()
        .flat_map(|s| s.labels.iter().zip(&s.mask))
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn non_finite(iteration: u64, e: NetError) -> TrainError {
    match e {
        NetError::NonFinite(context) => TrainError::NonFinite { iteration, context },
        other => TrainError::Net(other),
    }
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation loss.
pub fn train_loop(model: &mut Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_loop_observed(model, train, val, cfg, &mut |_| {})
}

/// [`train_loop`] with a callback after every epoch.
pub fn train_loop_observed(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::TooFewSamples {
            needed: 1,
            got: train.len().min(val.len()),
        });
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.masked_count() == 0) {
        return Err(TrainError::Shape(format!("sample at {:?} has no labeled pixels", s.origin)));
    }
    if cfg.init_bias_from_labels {
        let b = model.head_bias_index(0);
        model.params_mut()[b] = mean_label(train).unwrap_or(0.0) as f32;
    }

    let n = model.param_count();
    let mut master: Vec<f64> = model.params().iter().map(|&p| p as f64).collect();
    let mut state = AdamState::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads32 = vec![0.0f32; n];
    let mut grads = vec![0.0f64; n];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<f32>)> = None;
    let mut iteration = 0u64;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            batch.clear();
            batch.extend((0..cfg.batch_size).map(|_| &train[rng.gen_range(0..train.len())]));
            let n_total: usize = batch.iter().map(|s| s.masked_count()).sum();
            grads32.iter_mut().for_each(|g| *g = 0.0);
            let mut sq = 0.0;
            for s in &batch {
                let (out, cache) = model.forward_train(&s.patch).map_err(|e| non_finite(iteration, e))?;
                sq += masked_squared_error(out.pred.data(), &s.labels, &s.mask)?.0;
                let dpred = masked_mse_grad(out.pred.data(), &s.labels, &s.mask, n_total);
                let up = HeadGrads {
                    pred: &dpred,
                    var: None,
                    m2: None,
                };
                model.backward(&cache, up, &mut grads32).map_err(|e| non_finite(iteration, e))?;
            }
            let batch_loss = sq / n_total as f64 + l2_penalty(model.params(), cfg.l2_lambda);
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    iteration,
                    context: "batch loss".into(),
                });
            }
            epoch_loss += batch_loss;
            for (g, &g32) in grads.iter_mut().zip(&grads32) {
                *g = g32 as f64;
            }
            add_l2_grad(model.params(), cfg.l2_lambda, &mut grads);
            clip_gradients(&mut grads, cfg.grad_clip);
            adam_step(&mut master, &grads, &mut state, lr_at(iteration, cfg), cfg).map_err(|e| match e {
                TrainError::NonFinite { context, .. } => TrainError::NonFinite { iteration, context },
                other => other,
            })?;
            for (p, &m) in model.params_mut().iter_mut().zip(&master) {
                *p = m as f32;
            }
            iteration += 1;
        }
        let val_loss = validation_loss(model, val).map_err(|e| match e {
            TrainError::Net(e) => non_finite(iteration, e),
            other => other,
        })?;
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / cfg.iters_per_epoch as f64,
            val_loss,
        };
        on_epoch(&rec);
        trace.push(rec);
        if best.as_ref().map_or(true, |(_, v, _)| val_loss < *v) {
            best = Some((epoch, val_loss, model.params().to_vec()));
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    model.set_params(params)?;
    Ok(TrainReport {
        trace,
        best_epoch,
        best_val_loss,
        iterations: iteration,
    })
}

/// Splits `samples` with `cfg.val_fraction` and trains.
pub fn fit(model: &mut Model, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    let (train, val) = split_train_val(samples, cfg.val_fraction, cfg.seed)?;
    if val.is_empty() {
        return Err(TrainError::TooFewSamples {
            needed: (0.5 / cfg.val_fraction).ceil() as usize,
            got: samples.len(),
        });
    }
    train_loop(model, &train, &val, cfg)
}

/// Writes the trace as CSV `epoch,train_loss,val_loss`.
pub fn write_loss_trace<W: io::Write>(w: W, trace: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in trace {
        out.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ModelConfig, Tensor, DEFAULT_BRANCHES};

    fn tiny_model(in_ch: usize, seed: u64) -> Model {
        let cfg = ModelConfig {
            in_channels: in_ch,
            entry_widths: vec![6],
            num_blocks: 1,
            branches: DEFAULT_BRANCHES[..2].to_vec(),
        };
        Model::new(&cfg, seed).unwrap()
    }

    /// Patches whose labels are `f(band0)` at a sparse set of pixels.
    fn samples(n: usize, seed: u64, f: impl Fn(f32) -> f32) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 5;
        (0..n)
            .map(|i| {
                let cube: Vec<f32> = (0..2 * p * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mask: Vec<bool> = (0..p * p).map(|_| rng.gen_bool(0.3)).collect();
                let mut mask = mask;
                mask[12] = true;
                let labels = (0..p * p).map(|j| if mask[j] { f(cube[j]) } else { 0.0 }).collect();
                Sample {
                    patch: Tensor::new(vec![2, p, p], cube).unwrap(),
                    mask,
                    labels,
                    origin: (i, 0),
                }
            })
            .collect()
    }

    fn quick_config(iters: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            epochs,
            iters_per_epoch: iters,
            milestones: vec![],
            ..Default::default()
        }
    }

    #[test]
    fn split_examples() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, va) = split_train_val(&items, 0.1, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (9, 1));
        assert_eq!(split_train_val(&items, 0.1, 7).unwrap(), (tr.clone(), va.clone()));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert!(split_train_val(&items[..1], 0.1, 7).is_err());
        let (tr, va) = split_indices(95, 0.1, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (85, 10));
    }

    #[test]
    fn linear_task_converges() {
        let data = samples(20, 1, |b| 3.0 * b);
        let mut model = tiny_model(2, 2);
        let initial = validation_loss(&model, &data).unwrap();
        let cfg = quick_config(200, 1);
        train_loop(&mut model, &data, &data, &cfg).unwrap();
        let last = validation_loss(&model, &data).unwrap();
        assert!(last < 0.1 * initial, "{initial} -> {last}");
    }

    #[test]
    fn constant_labels_are_fit() {
        let data = samples(12, 3, |_| 42.0);
        let (tr, va) = split_train_val(&data, 0.25, 0).unwrap();
        let mut model = tiny_model(2, 4);
        let cfg = TrainConfig {
            lr: 0.05,
            ..quick_config(100, 3)
        };
        let rep = train_loop(&mut model, &tr, &va, &cfg).unwrap();
        assert!(rep.best_val_loss.sqrt() < 1.0, "val rmse {}", rep.best_val_loss.sqrt());
    }

    #[test]
    fn returns_best_epoch() {
        let data = samples(10, 5, |b| 10.0 * b + 5.0);
        let (tr, va) = split_train_val(&data, 0.2, 0).unwrap();
        let mut model = tiny_model(2, 6);
        let rep = train_loop(&mut model, &tr, &va, &quick_config(10, 6)).unwrap();
        let min = rep.trace.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(rep.best_val_loss, min);
        assert_eq!(rep.trace[rep.best_epoch].val_loss, min);
        assert_eq!(validation_loss(&model, &va).unwrap(), min);
        assert_eq!(rep.iterations, 60);
    }

    #[test]
    fn training_is_deterministic() {
        let data = samples(8, 7, |b| b * b);
        let run = || {
            let mut m = tiny_model(2, 8);
            fit(&mut m, &data, &TrainConfig { val_fraction: 0.25, ..quick_config(15, 2) }).unwrap();
            m
        };
        assert_eq!(run().params(), run().params());
    }

    #[test]
    fn bias_initialisation_uses_mean_label() {
        let data = samples(4, 9, |_| 17.0);
        let mut model = tiny_model(2, 10);
        let cfg = TrainConfig {
            init_bias_from_labels: true,
            lr: 1e-12,
            ..quick_config(1, 1)
        };
        train_loop(&mut model, &data, &data, &cfg).unwrap();
        let b = model.params()[model.head_bias_index(0)];
        assert!((b - 17.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_loss_aborts_with_iteration() {
        let data = samples(4, 11, |_| f32::MAX);
        let mut model = tiny_model(2, 12);
        let b = model.head_bias_index(0);
        model.params_mut()[b] = -f32::MAX;
        let err = train_loop(&mut model, &data, &data, &quick_config(5, 1)).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { iteration: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_empty_pools() {
        let data = samples(2, 13, |b| b);
        let mut model = tiny_model(2, 14);
        assert!(train_loop(&mut model, &data, &[], &quick_config(1, 1)).is_err());
        let mut blank = data.clone();
        blank[0].mask.iter_mut().for_each(|m| *m = false);
        assert!(train_loop(&mut model, &blank, &data, &quick_config(1, 1)).is_err());
    }

    #[test]
    fn loss_trace_csv() {
        let mut buf = Vec::new();
        let trace = [EpochRecord {
            epoch: 0,
            train_loss: 1.5,
            val_loss: 2.0,
        }];
        write_loss_trace(&mut buf, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n0,1.5,2\n");
    }

    #[test]
    fn unmasked_predictions_do_not_reach_parameters() {
        let model = tiny_model(2, 15);
        let s = &samples(1, 16, |b| b)[0];
        let (out, cache) = model.forward_train(&s.patch).unwrap();
        let mut pred = out.pred.data().to_vec();
        let n = s.masked_count();
        let g0 = masked_mse_grad(&pred, &s.labels, &s.mask, n);
        for (p, &m) in pred.iter_mut().zip(&s.mask) {
            if !m {
                *p += 1234.5;
            }
        }
        let g1 = masked_mse_grad(&pred, &s.labels, &s.mask, n);
        assert_eq!(g0, g1);
        let mut a = vec![0.0; model.param_count()];
        let mut b = vec![0.0; model.param_count()];
        for (g, buf) in [(&g0, &mut a), (&g1, &mut b)] {
            let up = HeadGrads {
                pred: g,
                var: None,
                m2: None,
            };
            model.backward(&cache, up, buf).unwrap();
        }
        assert_eq!(a, b);
    }
}
