//! Autoregressive sequence generation from a policy model.
//!
//! Two regimes: masked rollout always yields complete valid sequences by
//! constraining every step to the legality mask, and the unmasked legal-rate
//! probe measures how often raw model samples stay legal on their own.
//!
//! Determinism: each sequence index gets its own child RNG seeded up front
//! from the master seed, and forward passes are bitwise reproducible per
//! token row, so results do not depend on `max_batch` chunking.

use crate::forward::{CacheMode, PackedBatch, PolicyModel};
use crate::math::softmax_f64;
use crate::scalar::Real;
use prefixforge_core::{
    legal_mask, legal_mask_batched, masked_sample_step, Coordinate, CoordinateSequence,
    SampleError, SequenceError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("rollout width {width} exceeds model maximum {max}")]
    WidthExceedsModel { width: usize, max: usize },
    #[error("max_batch must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Sampling parameters shared by both rollout regimes.
#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub width: usize,
    pub count: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Upper bound on sequences advanced per forward pass.
    pub max_batch: usize,
}

impl RolloutConfig {
    pub fn new(width: usize, count: usize, seed: u64) -> Self {
        Self {
            width,
            count,
            temperature: 1.0,
            seed,
            max_batch: 256,
        }
    }

    fn check<F: Real>(&self, model: &PolicyModel<F>) -> Result<(), RolloutError> {
        if self.width > model.config().max_width {
            return Err(RolloutError::WidthExceedsModel {
                width: self.width,
                max: model.config().max_width,
            });
        }
        if self.max_batch == 0 {
            return Err(RolloutError::ZeroBatch);
        }
        Ok(())
    }
}

/// Outcome of the unmasked legality probe.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LegalRateReport {
    pub samples: usize,
    pub legal: usize,
    pub rate: f64,
}

fn child_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

/// Temperature-scaled distribution over the first `width` entries of a logit
/// row. Slicing before the softmax renormalizes mass onto in-range values.
fn width_probs<F: Real>(logits: &[F], width: usize, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits[..width]
        .iter()
        .map(|&v| v.to_f64() / temperature)
        .collect();
    softmax_f64(&scaled)
}

/// Samples `count` complete valid sequences, constraining every step to the
/// legality mask. Sequences advance in lockstep so each step is one packed
/// forward pass.
pub fn rollout_masked<F: Real>(
    model: &PolicyModel<F>,
    config: &RolloutConfig,
) -> Result<Vec<CoordinateSequence>, RolloutError> {
    config.check(model)?;
    if !(config.temperature.is_finite() && config.temperature > 0.0) {
        return Err(RolloutError::Sample(SampleError::InvalidTemperature(
            config.temperature,
        )));
    }
    let seeds = child_seeds(config.seed, config.count);
    // Results land in their sequence-index slot so the output order is
    // independent of batch chunking and completion timing.
    let mut out: Vec<Option<CoordinateSequence>> = vec![None; config.count];
    for (chunk_idx, chunk) in seeds.chunks(config.max_batch).enumerate() {
        let base = chunk_idx * config.max_batch;
        let mut seqs: Vec<CoordinateSequence> = chunk
            .iter()
            .map(|_| CoordinateSequence::start(config.width))
            .collect::<Result<_, SequenceError>>()?;
        let mut rngs: Vec<ChaCha8Rng> = chunk
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s))
            .collect();
        let mut ids: Vec<usize> = (base..base + chunk.len()).collect();
        while !seqs.is_empty() {
            let masks = legal_mask_batched(&seqs)
                .expect("active sequences are incomplete by construction");
            let batch = PackedBatch::full(seqs.iter());
            let pass = model.forward(&batch, CacheMode::Inference);
            let last = batch.last_indices();
            let mut still_seqs = Vec::with_capacity(seqs.len());
            let mut still_rngs = Vec::with_capacity(rngs.len());
            let mut still_ids = Vec::with_capacity(ids.len());
            for (i, ((mut seq, mut rng), id)) in
                seqs.into_iter().zip(rngs).zip(ids).enumerate()
            {
                let row = pass.row_logits.row(last[i]);
                let col = pass.col_logits.row(last[i]);
                let pr = width_probs(row.as_slice().expect("contiguous"), config.width, 1.0);
                let pc = width_probs(col.as_slice().expect("contiguous"), config.width, 1.0);
                let coord =
                    masked_sample_step(&pr, &pc, &masks[i], config.temperature, &mut rng)?;
                seq.push_unchecked(coord);
                if seq.is_complete() {
                    out[id] = Some(seq);
                } else {
                    still_seqs.push(seq);
                    still_rngs.push(rng);
                    still_ids.push(id);
                }
            }
            seqs = still_seqs;
            rngs = still_rngs;
            ids = still_ids;
        }
    }
    Ok(out
        .into_iter()
        .map(|s| s.expect("every rollout runs to completion"))
        .collect())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generates `count` rollouts without any mask and reports how many stay
/// legal to completion. A rollout fails the moment it samples a coordinate
/// the mask would have rejected; steps draw from the model's full coordinate
/// range, so out-of-width values count as failures too.
pub fn unmasked_legal_rate<F: Real>(
    model: &PolicyModel<F>,
    config: &RolloutConfig,
) -> Result<LegalRateReport, RolloutError> {
    config.check(model)?;
    if !(config.temperature.is_finite() && config.temperature > 0.0) {
        return Err(RolloutError::Sample(SampleError::InvalidTemperature(
            config.temperature,
        )));
    }
    let seeds = child_seeds(config.seed, config.count);
    let mut legal = 0usize;
    for chunk in seeds.chunks(config.max_batch) {
        let mut active: Vec<(CoordinateSequence, ChaCha8Rng)> = chunk
            .iter()
            .map(|&s| {
                Ok((
                    CoordinateSequence::start(config.width)?,
                    ChaCha8Rng::seed_from_u64(s),
                ))
            })
            .collect::<Result<_, SequenceError>>()?;
        while !active.is_empty() {
            let batch = PackedBatch::full(active.iter().map(|(s, _)| s));
            let pass = model.forward(&batch, CacheMode::Inference);
            let last = batch.last_indices();
            let mut still = Vec::with_capacity(active.len());
            for (i, (mut seq, mut rng)) in active.into_iter().enumerate() {
                let row = pass.row_logits.row(last[i]);
                let col = pass.col_logits.row(last[i]);
                // Full-range distributions: the model is free to pick values
                // the mask would forbid, which is exactly what is measured.
                let n = model.config().max_width;
                let pr = width_probs(row.as_slice().expect("contiguous"), n, config.temperature);
                let pc = width_probs(col.as_slice().expect("contiguous"), n, config.temperature);
                let rv = sample_index(&pr, &mut rng);
                let cv = sample_index(&pc, &mut rng);
                let mask = legal_mask(&seq).expect("active sequences are incomplete");
                // Membership checks run on raw integers: (rv, cv) may not
                // even form a lower-triangular coordinate.
                if !(mask.is_row_valid(rv) && mask.is_col_valid(cv)) {
                    continue;
                }
                seq.push_unchecked(Coordinate::new(rv, cv));
                if seq.is_complete() {
                    legal += 1;
                } else {
                    still.push((seq, rng));
                }
            }
            active = still;
        }
    }
    Ok(LegalRateReport {
        samples: config.count,
        legal,
        rate: legal as f64 / config.count.max(1) as f64,
    })
}
