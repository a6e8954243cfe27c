//! Supervised warm-up on a corpus of random valid designs.
//!
//! The policy is taught to imitate the corpus distribution with a
//! next-coordinate cross-entropy over both heads. Every predicted position
//! contributes one row term and one column term; the first coordinate is
//! conditioning only. A freshly initialized model scores every value
//! uniformly, so its loss is exactly `2 ln(max_width)` and anything below
//! that is learned structure.

use crate::adam::Adam;
use ndarray::Array2;
use prefixforge_model::math::softmax_f64;
use prefixforge_model::{
    save_checkpoint, unmasked_legal_rate, CacheMode, LegalRateReport, ModelError, PackedBatch,
    Params, PolicyModel, Real, RolloutConfig, RolloutError,
};
use prefixforge_core::CoordinateSequence;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus mixes widths {0} and {1}")]
    MixedWidths(usize, usize),
    #[error("holdout of {holdout} sequences leaves no training data (corpus has {corpus})")]
    BadSplit { holdout: usize, corpus: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}; run aborted")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// Hyperparameters for the supervised phase.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Sequences reserved from the corpus tail for held-out evaluation.
    pub holdout: usize,
    /// Unmasked rollouts drawn for the final legality probe.
    pub legal_samples: usize,
    pub seed: u64,
    /// When set, a checkpoint `epoch-{k}.ckpt` is written after each epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl PretrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 5,
            lr: 1e-4,
            batch_size: 64,
            holdout: 1000,
            legal_samples: 1000,
            seed,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean step loss across the epoch.
    pub train_loss: f64,
    /// Loss on the held-out tail, absent when `holdout` is zero.
    pub holdout_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub width: usize,
    pub train_sequences: usize,
    pub holdout_sequences: usize,
    pub epochs: Vec<EpochReport>,
    /// Fraction of unmasked rollouts that stayed legal to completion.
    pub legal_rate: LegalRateReport,
}

/// Mean next-coordinate cross-entropy of `model` on `seqs`, in nats.
///
/// Per sequence the row and column log-losses of each predicted position are
/// summed and divided by the number of predicted positions; the batch value
/// is the mean over sequences. Evaluation runs in fixed-size chunks so the
/// result is independent of caller-side batching.
pub fn pretrain_loss<F: Real>(model: &PolicyModel<F>, seqs: &[CoordinateSequence]) -> f64 {
    const EVAL_CHUNK: usize = 256;
    assert!(!seqs.is_empty(), "loss of an empty set is undefined");
    let mut total = 0.0;
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let batch = PackedBatch::teacher_forcing(chunk);
        let pass = model.forward(&batch, CacheMode::Inference);
        for (s, seq) in chunk.iter().enumerate() {
            let k = seq.len() - 1;
            let mut seq_loss = 0.0;
            for (offset, t) in batch.range(s).enumerate() {
                let target = seq.coords()[offset + 1];
                let p_row = softmax_f64(pass.row_logits.row(t).as_slice().unwrap());
                let p_col = softmax_f64(pass.col_logits.row(t).as_slice().unwrap());
                seq_loss -= p_row[target.row()].ln();
                seq_loss -= p_col[target.col()].ln();
            }
            total += seq_loss / k as f64;
        }
    }
    total / seqs.len() as f64
}

/// Loss of one training batch together with its analytic gradient.
///
/// The gradient of the mean cross-entropy with respect to a logit row is
/// `(softmax - onehot) / (k_i * B)`, pushed through the network by the
/// model's backward pass.
pub fn pretrain_loss_and_grad<F: Real>(
    model: &PolicyModel<F>,
    batch_seqs: &[&CoordinateSequence],
) -> (f64, Params<F>) {
    assert!(!batch_seqs.is_empty(), "gradient of an empty batch is undefined");
    let b = batch_seqs.len() as f64;
    let width = model.config().max_width;
    let batch = PackedBatch::teacher_forcing(batch_seqs.iter().copied());
    let pass = model.forward(&batch, CacheMode::Training);

    let mut d_row = Array2::<F>::zeros((batch.num_tokens(), width));
    let mut d_col = Array2::<F>::zeros((batch.num_tokens(), width));
    let mut loss = 0.0;
    for (s, seq) in batch_seqs.iter().enumerate() {
        let k = (seq.len() - 1) as f64;
        let scale = 1.0 / (k * b);
        let mut seq_loss = 0.0;
        for (offset, t) in batch.range(s).enumerate() {
            let target = seq.coords()[offset + 1];
            let p_row = softmax_f64(pass.row_logits.row(t).as_slice().unwrap());
            let p_col = softmax_f64(pass.col_logits.row(t).as_slice().unwrap());
            seq_loss -= p_row[target.row()].ln();
            seq_loss -= p_col[target.col()].ln();
            for j in 0..width {
                let dr = p_row[j] - f64::from(j == target.row());
                let dc = p_col[j] - f64::from(j == target.col());
                d_row[[t, j]] = F::from_f64(dr * scale);
                d_col[[t, j]] = F::from_f64(dc * scale);
            }
        }
        loss += seq_loss / k;
    }
    let grads = model.backward(&batch, &pass, &d_row, &d_col);
    (loss / b, grads)
}

pub(crate) fn num_params<F: Real>(params: &Params<F>) -> usize {
    params.flatten().iter().map(|(_, t)| t.as_slice().len()).sum()
}

/// Runs the full supervised phase: shuffled minibatch epochs under Adam,
/// held-out evaluation and an optional checkpoint after each epoch, then a
/// final unmasked legality probe. A non-finite loss aborts the run with the
/// step that produced it; the model keeps the last finite update.
pub fn pretrain<F: Real>(
    model: &mut PolicyModel<F>,
    corpus: &[CoordinateSequence],
    config: &PretrainConfig,
) -> Result<PretrainReport, PretrainError> {
    let width = corpus.first().ok_or(PretrainError::EmptyCorpus)?.width();
    if let Some(other) = corpus.iter().find(|s| s.width() != width) {
        return Err(PretrainError::MixedWidths(width, other.width()));
    }
    if config.holdout >= corpus.len() {
        return Err(PretrainError::BadSplit {
            holdout: config.holdout,
            corpus: corpus.len(),
        });
    }
    let split = corpus.len() - config.holdout;
    let (train, held) = corpus.split_at(split);

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(config.lr, num_params(model.params()));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.random());
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&CoordinateSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = pretrain_loss_and_grad(model, &batch);
            if !loss.is_finite() {
                return Err(PretrainError::Diverged { epoch, step: steps + 1 });
            }
            optimizer.step(model.params_mut(), &grads);
            loss_sum += loss;
            steps += 1;
        }
        let train_loss = loss_sum / steps as f64;
        let holdout_loss = (!held.is_empty()).then(|| pretrain_loss(model, held));

        let checkpoint = match &config.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch-{epoch}.ckpt"));
                let metadata = serde_json::json!({
                    "phase": "pretrain",
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "holdout_loss": holdout_loss,
                    "width": width,
                });
                save_checkpoint(&path, model.config(), model.params(), metadata)?;
                Some(path)
            }
            None => None,
        };

        log::info!(
            "pretrain epoch {epoch}/{}: train {train_loss:.4}, holdout {}",
            config.epochs,
            holdout_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
        );
        epochs.push(EpochReport {
            epoch,
            train_loss,
            holdout_loss,
            checkpoint,
        });
    }

    let mut probe = RolloutConfig::new(width, config.legal_samples, master.random());
    probe.max_batch = config.batch_size.max(64);
    let legal_rate = unmasked_legal_rate(model, &probe)?;

    Ok(PretrainReport {
        width,
        train_sequences: train.len(),
        holdout_sequences: held.len(),
        epochs,
        legal_rate,
    })
}
