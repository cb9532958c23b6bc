//! Training: the optimization loop with periodic evaluation, best-checkpoint
//! tracking, early stopping, and divergence handling.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod metrics;

pub use adam::{clip_grads, global_grad_norm, noam_lr, Adam, LrSchedule};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use loss::{batch_loss, example_ce};
pub use metrics::MetricsWriter;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use crate::data::{Batcher, DataBundle};
use crate::eval::evaluate_ce;
use crate::model::Seq2SeqModel;
use crate::nn::blocks::DropoutCtx;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::util::Fingerprint;

#[derive(Debug)]
pub enum TrainError {
    NonFiniteGrad { param: String },
    Diverged { step: u64, ce: f64 },
    Io(String, String),
    Checkpoint(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient on parameter {param:?}; step aborted")
            }
            TrainError::Diverged { step, ce } => {
                write!(
                    f,
                    "training diverged at step {step} (loss {ce}); last good checkpoint retained"
                )
            }
            TrainError::Io(path, err) => write!(f, "io error on {path}: {err}"),
            TrainError::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
        }
    }
}

impl std::error::Error for TrainError {}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; insurance against divergence.
    pub clip_norm: Option<f64>,
    pub eval_interval: u64,
    /// Evaluations without validation improvement before stopping.
    pub patience: u64,
    pub eval_batch: usize,
    /// Stop once validation cross-entropy drops below this value.
    pub ce_stop: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Dialogue protocol: constant 1e-4 Adam, betas (0.9, 0.999).
    pub fn dialogue() -> Self {
        TrainConfig {
            steps: 200_000,
            batch_size: 32,
            lr: LrSchedule::Constant(1e-4),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            eval_interval: 1000,
            patience: 10,
            eval_batch: 32,
            ce_stop: None,
            seed: 1,
        }
    }

    /// Translation protocol: warmup schedule, batch 128, 200k steps.
    pub fn translation() -> Self {
        TrainConfig {
            lr: LrSchedule::Noam { warmup: 4000 },
            batch_size: 128,
            ..TrainConfig::dialogue()
        }
    }

    /// Short protocol for synthetic tasks.
    pub fn smoke(steps: u64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size: 16,
            lr: LrSchedule::Constant(1e-3),
            eval_interval: 100,
            patience: u64::MAX,
            eval_batch: 32,
            ce_stop: Some(0.05),
            seed,
            ..TrainConfig::dialogue()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    CompletedAllSteps,
    ValidationTargetReached,
    EarlyStopped,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub best_val_ce: f64,
    pub best_step: u64,
    pub final_val_ce: f64,
    /// Fingerprint of every consumed batch; equal fingerprints mean two runs
    /// saw exactly the same data in the same order.
    pub batch_fingerprint: u64,
    pub stopped: StopReason,
    /// Per-step training cross-entropy, for smoothing diagnostics.
    pub train_ce_by_step: Vec<f64>,
}

/// Runs the training loop. When `out_dir` is given, metrics and the
/// best/last checkpoints land there; the directory must already exist.
pub fn train_loop<F: Scalar>(
    model: &mut Seq2SeqModel<F>,
    data: &DataBundle,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    assert_eq!(
        model.cfg.src_vocab,
        data.src_vocab.size(),
        "model and data disagree on the source vocabulary"
    );
    assert_eq!(
        model.cfg.tgt_vocab,
        data.tgt_vocab.size(),
        "model and data disagree on the target vocabulary"
    );
    let started = Instant::now();
    let batcher = Batcher::new(&data.train, cfg.batch_size, cfg.seed);
    let mut optimizer = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut dropout_rng = Rng::new(cfg.seed).fork(0xd20);
    let mut writer = match out_dir {
        Some(dir) => Some(MetricsWriter::create(dir)?),
        None => None,
    };
    let mut fingerprint = Fingerprint::new();

    let save = |model: &Seq2SeqModel<F>,
                optimizer: &Adam<F>,
                rng: &Rng,
                name: &str,
                step: u64,
                best: f64|
     -> Result<(), TrainError> {
        let Some(dir) = out_dir else { return Ok(()) };
        save_checkpoint(
            &dir.join(name),
            &model.cfg,
            &model.params,
            Some(optimizer),
            rng.state(),
            step,
            best,
            &data.src_vocab,
            &data.tgt_vocab,
        )
    };

    let mut val_ce = evaluate_ce(model, &data.val, cfg.eval_batch);
    if let Some(w) = writer.as_mut() {
        w.row(0, "val", val_ce, val_ce.exp(), 0.0, started.elapsed().as_millis())?;
        w.flush()?;
    }
    let mut best_val_ce = val_ce;
    let mut best_step = 0u64;
    let mut evals_since_best = 0u64;
    save(model, &optimizer, &dropout_rng, "best.ckpt", 0, best_val_ce)?;

    let mut stopped = StopReason::CompletedAllSteps;
    let mut steps_run = 0u64;
    let mut train_ce_by_step = Vec::new();
    let mut window_sum = 0.0f64;
    let mut window_n = 0u64;

    for step in 1..=cfg.steps {
        let batch = batcher.batch_for_step(step - 1);
        fingerprint.push_u64(step);
        for row in batch.src.iter().chain(batch.tgt.iter()) {
            fingerprint.push_u32s(row);
        }

        let lr = cfg.lr.lr_at(step, model.cfg.d_model);
        let mut tape: Tape<F> = Tape::new();
        let ce = {
            let mut dctx = if model.cfg.dropout > 0.0 {
                DropoutCtx::new(
                    model.cfg.dropout,
                    model.cfg.dropout_on_attn,
                    model.cfg.dropout_on_sublayer,
                    &mut dropout_rng,
                )
            } else {
                DropoutCtx::off()
            };
            let (loss, _count) = batch_loss(model, &mut tape, &batch, &mut dctx);
            let ce = tape.value(loss).item().to_f64();
            if !ce.is_finite() {
                return Err(TrainError::Diverged { step, ce });
            }
            tape.backward(loss);
            ce
        };
        let mut grads: Vec<Tensor<F>> = model
            .params
            .ids()
            .map(|id| tape.param_grad(&model.params, id))
            .collect();
        drop(tape);
        if let Some(max_norm) = cfg.clip_norm {
            clip_grads(&mut grads, max_norm);
        }
        optimizer.step(&mut model.params, &grads, lr)?;
        steps_run = step;
        train_ce_by_step.push(ce);
        window_sum += ce;
        window_n += 1;

        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let train_ce = window_sum / window_n as f64;
            window_sum = 0.0;
            window_n = 0;
            val_ce = evaluate_ce(model, &data.val, cfg.eval_batch);
            if let Some(w) = writer.as_mut() {
                let wall = started.elapsed().as_millis();
                w.row(step, "train", train_ce, train_ce.exp(), lr, wall)?;
                w.row(step, "val", val_ce, val_ce.exp(), lr, wall)?;
                w.flush()?;
            }
            if val_ce < best_val_ce {
                best_val_ce = val_ce;
                best_step = step;
                evals_since_best = 0;
                save(model, &optimizer, &dropout_rng, "best.ckpt", step, best_val_ce)?;
            } else {
                evals_since_best += 1;
            }
            if let Some(target) = cfg.ce_stop {
                if val_ce < target {
                    stopped = StopReason::ValidationTargetReached;
                    break;
                }
            }
            if evals_since_best > cfg.patience {
                stopped = StopReason::EarlyStopped;
                break;
            }
        }
    }

    save(model, &optimizer, &dropout_rng, "last.ckpt", steps_run, best_val_ce)?;
    if let Some(w) = writer.as_mut() {
        w.note("batch_fingerprint", &format!("{:016x}", fingerprint.value()))?;
        w.note("stopped", &format!("{stopped:?}"))?;
        w.flush()?;
    }
    Ok(TrainOutcome {
        steps_run,
        best_val_ce,
        best_step,
        final_val_ce: val_ce,
        batch_fingerprint: fingerprint.value(),
        stopped,
        train_ce_by_step,
    })
}

/// Moving average over trailing windows of `window` steps; used to judge the
/// training trend without per-batch noise.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    history
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
