//! Configuration-driven training and evaluation.
//!
//! One process trains one model: per epoch the train split is shuffled,
//! per-sample gradients are computed in parallel (batch members are
//! independent graphs) and reduced in sample order so results do not depend
//! on thread count, then a serialized optimizer step is applied. Validation
//! runs every epoch with frozen subset plans; the best-validation parameters
//! are kept and evaluated on the test split at the end.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::decoders::{self, AnswerSpace};
use crate::gradcheck;
use crate::io::{self, IoError};
use crate::metrics::MetricsSink;
use crate::model::{self, HierarchyConfig};
use crate::optim::{self, Adam};
use crate::params::{GradMap, ModelError, ModelParams, TapeBinder};
use crate::seed::{self, tag};
use crate::synth::{self, Answer, Dataset, SyntheticSample, SynthError};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("loss became non-finite ({loss}) at step {step}; aborting")]
    NanLoss { step: u64, loss: f64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Label(usize),
    Count { raw: f64, rounded: i64 },
    Choice(usize),
}

impl Prediction {
    pub fn matches(&self, answer: &Answer) -> bool {
        match (self, answer) {
            (Prediction::Label(p), Answer::Label(a)) => p == a,
            (Prediction::Count { rounded, .. }, Answer::Count(a)) => rounded == a,
            (Prediction::Choice(p), Answer::Choice(a)) => p == a,
            _ => false,
        }
    }
}

/// All parameters for a run: hierarchy, encoders, pool and decoder head.
pub fn init_full_params(config: &RunConfig, vocab_size: usize) -> Result<ModelParams, TrainError> {
    let mut params = ModelParams::new();
    let mut rng = seed::rng(seed::derive(config.seed, &[tag::INIT]));
    model::init_model_params(&mut params, &config.hierarchy(), vocab_size, &mut rng)?;
    decoders::init_decoder(
        &mut params,
        config.d,
        &config.dataset_spec().answer_space(),
        &mut rng,
    );
    Ok(params)
}

/// Forward one sample to a scalar loss and a prediction. The tape is left
/// ready for `backward(loss)`.
pub fn sample_graph(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    hierarchy: &HierarchyConfig,
    space: &AnswerSpace,
    sample: &SyntheticSample,
    plan_seed: u64,
) -> Result<(crate::tensor::TensorId, Prediction), TrainError> {
    match space {
        AnswerSpace::OpenEnded { .. } => {
            let out = model::forward(
                tape,
                binder,
                hierarchy,
                &sample.appearance,
                &sample.clip_motion,
                &sample.question,
                plan_seed,
            )?;
            let probs = decoders::openended_probs(tape, binder, out.pooled, out.cue)?;
            let target = sample.answer.as_i64() as usize;
            let loss = decoders::cross_entropy_loss(tape, probs, target)?;
            let p = tape.data(probs);
            let pred = decoders::rank_candidates(p);
            Ok((loss, Prediction::Label(pred)))
        }
        AnswerSpace::Count { lo, hi } => {
            let out = model::forward(
                tape,
                binder,
                hierarchy,
                &sample.appearance,
                &sample.clip_motion,
                &sample.question,
                plan_seed,
            )?;
            let raw = decoders::count_raw(tape, binder, out.pooled, out.cue)?;
            let target = sample.answer.as_i64() as f64;
            let loss = decoders::mse_loss(tape, raw, target)?;
            let raw_v = tape.data(raw)[0];
            Ok((
                loss,
                Prediction::Count {
                    raw: raw_v,
                    rounded: decoders::round_count(raw_v, *lo, *hi),
                },
            ))
        }
        AnswerSpace::MultiChoice => {
            let q_out = model::forward(
                tape,
                binder,
                hierarchy,
                &sample.appearance,
                &sample.clip_motion,
                &sample.question,
                plan_seed,
            )?;
            let mut scores = Vec::with_capacity(sample.candidates.len());
            for cand in &sample.candidates {
                let a_out = model::forward(
                    tape,
                    binder,
                    hierarchy,
                    &sample.appearance,
                    &sample.clip_motion,
                    cand,
                    plan_seed,
                )?;
                scores.push(decoders::multichoice_score(
                    tape, binder, q_out.pooled, a_out.pooled, q_out.cue, a_out.cue,
                )?);
            }
            let correct = sample.answer.as_i64() as usize;
            let loss = decoders::hinge_loss(tape, &scores, correct)?;
            let score_values: Vec<f64> = scores.iter().map(|&s| tape.data(s)[0]).collect();
            let pred = decoders::rank_candidates(&score_values);
            Ok((loss, Prediction::Choice(pred)))
        }
    }
}

/// Loss value, gradients and prediction for one sample.
fn sample_loss_and_grads(
    params: &ModelParams,
    hierarchy: &HierarchyConfig,
    space: &AnswerSpace,
    sample: &SyntheticSample,
    plan_seed: u64,
) -> Result<(f64, GradMap, Prediction), TrainError> {
    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(params);
    let (loss, pred) = sample_graph(&mut tape, &mut binder, hierarchy, space, sample, plan_seed)?;
    let loss_value = tape.data(loss)[0];
    tape.backward(loss)?;
    Ok((loss_value, binder.harvest(&tape), pred))
}

/// Deterministic Fisher-Yates shuffle of sample indices.
fn shuffled_indices(n: usize, seed_v: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_v);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = crate::sampler::pick_index(&mut rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Evaluate a split with frozen plans; returns `(metric_name, value)`.
/// Classification tasks report accuracy, count reports MSE of the rounded,
/// clamped prediction.
pub fn evaluate(
    params: &ModelParams,
    config: &RunConfig,
    samples: &[SyntheticSample],
) -> Result<(String, f64), TrainError> {
    let hierarchy = config.hierarchy();
    let space = config.dataset_spec().answer_space();
    let eval_seed = seed::derive(config.seed, &[tag::EVAL_PLAN]);
    let results: Vec<Result<Prediction, TrainError>> = samples
        .par_iter()
        .map(|sample| {
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(params);
            let (_, pred) =
                sample_graph(&mut tape, &mut binder, &hierarchy, &space, sample, eval_seed)?;
            Ok(pred)
        })
        .collect();
    let mut preds = Vec::with_capacity(samples.len());
    for r in results {
        preds.push(r?);
    }
    match space {
        AnswerSpace::Count { .. } => {
            let mse = preds
                .iter()
                .zip(samples)
                .map(|(p, s)| {
                    let got = match p {
                        Prediction::Count { rounded, .. } => *rounded as f64,
                        _ => 0.0,
                    };
                    let want = s.answer.as_i64() as f64;
                    (got - want) * (got - want)
                })
                .sum::<f64>()
                / samples.len().max(1) as f64;
            Ok(("mse".to_string(), mse))
        }
        _ => {
            let correct = preds
                .iter()
                .zip(samples)
                .filter(|(p, s)| p.matches(&s.answer))
                .count();
            Ok((
                "accuracy".to_string(),
                correct as f64 / samples.len().max(1) as f64,
            ))
        }
    }
}

pub struct TrainOutcome {
    /// Parameters from the best-validation epoch (kept for evaluation).
    pub best_params: ModelParams,
    /// Parameters after the last optimizer step.
    pub final_params: ModelParams,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_metric: Option<(String, f64)>,
    pub steps: u64,
}

/// Higher-is-better ordering for the validation metric.
fn better(metric: &str, candidate: f64, incumbent: f64) -> bool {
    if metric == "mse" {
        candidate < incumbent
    } else {
        candidate > incumbent
    }
}

/// Full training loop over a prepared dataset.
pub fn train(
    config: &RunConfig,
    dataset: &Dataset,
    sink: &mut MetricsSink,
) -> Result<TrainOutcome, TrainError> {
    let hierarchy = config.hierarchy();
    hierarchy.validate()?;
    let space = dataset.spec.answer_space();
    let task = config.task.name();
    let mut params = init_full_params(config, dataset.vocab.len())?;
    let mut adam = Adam::new();
    let eval_seed = seed::derive(config.seed, &[tag::EVAL_PLAN]);

    let (metric_name, initial_val) = evaluate(&params, config, &dataset.val)?;
    sink.emit(0, "val", task, &metric_name, initial_val);
    let mut best_epoch = 0usize;
    let mut best_val = initial_val;
    let mut best_params = params.clone();

    let mut step: u64 = 0;
    for epoch in 1..=config.epochs {
        let lr = config.lr_at_epoch(epoch);
        let order = shuffled_indices(
            dataset.train.len(),
            seed::derive(config.seed, &[tag::SHUFFLE, epoch as u64]),
        );
        let mut epoch_loss = 0.0;
        let mut clip_events = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            step += 1;
            let plan_base = if config.resample_per_step {
                seed::derive(config.seed, &[tag::TRAIN_PLAN, step])
            } else {
                eval_seed
            };
            let per_sample: Vec<Result<(f64, GradMap, Prediction), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let plan_seed = if config.resample_per_step {
                        seed::derive(plan_base, &[i as u64])
                    } else {
                        eval_seed
                    };
                    sample_loss_and_grads(&params, &hierarchy, &space, &dataset.train[i], plan_seed)
                })
                .collect();
            let mut grads = GradMap::new();
            let mut batch_loss = 0.0;
            for r in per_sample {
                let (loss, g, _) = r?;
                batch_loss += loss;
                optim::accumulate(&mut grads, &g);
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            optim::scale(&mut grads, scale);
            if !batch_loss.is_finite() {
                return Err(TrainError::NanLoss {
                    step,
                    loss: batch_loss,
                });
            }
            if optim::clip_global_norm(&mut grads, config.grad_clip) {
                clip_events += 1;
            }
            adam.step(&mut params, &grads, lr);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let denom = dataset.train.len().max(1) as f64;
        sink.emit(epoch, "train", task, "loss", epoch_loss / denom);
        if clip_events > 0 {
            sink.emit(epoch, "train", task, "grad_clip_events", clip_events as f64);
        }
        let (metric_name, val) = evaluate(&params, config, &dataset.val)?;
        sink.emit(epoch, "val", task, &metric_name, val);
        if better(&metric_name, val, best_val) {
            best_val = val;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    let test_metric = if config.epochs > 0 {
        let (name, value) = evaluate(&best_params, config, &dataset.test)?;
        sink.emit(config.epochs, "test", task, &name, value);
        Some((name, value))
    } else {
        None
    };

    Ok(TrainOutcome {
        best_params,
        final_params: params,
        best_epoch,
        best_val,
        test_metric,
        steps: step,
    })
}

/// Dataset for a run: load from `dataset_dir` when set, generate otherwise.
pub fn prepare_dataset(config: &RunConfig) -> Result<Dataset, TrainError> {
    match &config.dataset_dir {
        Some(dir) => Ok(synth::load_dataset(Path::new(dir))?),
        None => Ok(synth::generate(&config.dataset_spec())?),
    }
}

/// CLI entry: train per config, writing config, metrics log and best
/// checkpoint under `out_dir`.
pub fn run_training(config: &RunConfig) -> Result<TrainOutcome, TrainError> {
    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(IoError::from)?;
    std::fs::write(out_dir.join("config.txt"), config.to_text()).map_err(IoError::from)?;
    let dataset = prepare_dataset(config)?;
    let mut sink = MetricsSink::with_file(&out_dir.join("metrics.log")).map_err(IoError::from)?;
    let outcome = train(config, &dataset, &mut sink)?;
    io::save_params(&out_dir.join("checkpoint_best.bin"), &outcome.best_params)?;
    Ok(outcome)
}

/// CLI entry: evaluate a checkpoint on a dataset directory's test split.
pub fn run_evaluation(
    checkpoint: &Path,
    dataset_dir: &Path,
    config_path: Option<&Path>,
) -> Result<(String, f64), TrainError> {
    let config_file = match config_path {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .map(|d| d.join("config.txt"))
            .ok_or_else(|| TrainError::Other("cannot locate config next to checkpoint".into()))?,
    };
    let config = RunConfig::from_file(&config_file)?;
    let dataset = synth::load_dataset(dataset_dir)?;
    let template = init_full_params(&config, dataset.vocab.len())?;
    let params = io::load_params(checkpoint, &template)?;
    evaluate(&params, &config, &dataset.test)
}

/// End-to-end differentiability check on a micro model: analytic gradients
/// of the configured loss vs central finite differences.
pub fn micro_gradcheck(
    config: &RunConfig,
    sample: &SyntheticSample,
    vocab_size: usize,
    eps: f64,
) -> Result<gradcheck::GradCheckReport, TrainError> {
    let hierarchy = config.hierarchy();
    let space = config.dataset_spec().answer_space();
    let params = init_full_params(config, vocab_size)?;
    let plan_seed = seed::derive(config.seed, &[tag::EVAL_PLAN]);

    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(&params);
    let (loss, _) = sample_graph(&mut tape, &mut binder, &hierarchy, &space, sample, plan_seed)?;
    tape.backward(loss)?;
    let grads = binder.harvest(&tape);

    let f = |p: &ModelParams| -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(p);
        let (loss, _) =
            sample_graph(&mut tape, &mut binder, &hierarchy, &space, sample, plan_seed)?;
        Ok(tape.data(loss)[0])
    };
    gradcheck::finite_diff_check(f, &params, &grads, eps)
}
