//! Which coordinate may come next in a partially built sequence.
//!
//! For a prefix ending at `(r, c)` there are two regimes. If `c == 0` the row
//! is finished and the only continuation is the next row's diagonal entry
//! `(r+1, r+1)` (a finished bottom row means the sequence is complete and has
//! no continuation at all). Otherwise the walk stays in row `r`, and a column
//! `c2` is legal exactly when row `c-1` contains `c2`: the new node's upper
//! parent is the node just placed at `(r, c)`, so its lower parent `(c-1, c2)`
//! must exist. Column 0 is always legal in this regime because every earlier
//! row is complete.

use crate::coord::Coordinate;
use crate::sequence::{CoordinateSequence, SequenceError};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LegalityError {
    #[error("sequence is already complete; no next coordinate exists")]
    Complete,
    #[error("malformed partial sequence: {0}")]
    Malformed(#[from] SequenceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("temperature must be finite and positive, got {0}")]
    InvalidTemperature(f64),
    #[error("probability vector length {got} does not match mask width {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("probabilities must be finite and non-negative, found {0}")]
    BadProbability(f64),
    #[error("mask admits no valid {0}")]
    NoValidEntry(&'static str),
}

/// Validity mask over the next coordinate's row and column indices.
///
/// `true` marks an index as *invalid*; sampling keeps the `false` entries.
/// Both vectors have one entry per bit position of the target width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegalityMask {
    row_invalid: Vec<bool>,
    col_invalid: Vec<bool>,
}

impl LegalityMask {
    fn all_invalid(width: usize) -> Self {
        Self {
            row_invalid: vec![true; width],
            col_invalid: vec![true; width],
        }
    }

    pub fn width(&self) -> usize {
        self.row_invalid.len()
    }

    /// Row mask, `true` = invalid.
    pub fn row_invalid(&self) -> &[bool] {
        &self.row_invalid
    }

    /// Column mask, `true` = invalid.
    pub fn col_invalid(&self) -> &[bool] {
        &self.col_invalid
    }

    pub fn is_row_valid(&self, row: usize) -> bool {
        row < self.width() && !self.row_invalid[row]
    }

    pub fn is_col_valid(&self, col: usize) -> bool {
        col < self.width() && !self.col_invalid[col]
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.row_invalid
            .iter()
            .enumerate()
            .filter(|(_, &inv)| !inv)
            .map(|(i, _)| i)
    }

    pub fn valid_cols(&self) -> impl Iterator<Item = usize> + '_ {
        self.col_invalid
            .iter()
            .enumerate()
            .filter(|(_, &inv)| !inv)
            .map(|(i, _)| i)
    }

    /// True when `coord` survives both halves of the mask.
    pub fn admits(&self, coord: Coordinate) -> bool {
        self.is_row_valid(coord.row()) && self.is_col_valid(coord.col())
    }
}

/// Computes the legality mask for the next coordinate of `partial`.
///
/// The partial sequence's structural invariants hold by construction of
/// [`CoordinateSequence`]; a complete sequence has no next coordinate and is
/// rejected. The scan walks the prefix once to recover the columns of the row
/// below the split point.
pub fn legal_mask(partial: &CoordinateSequence) -> Result<LegalityMask, LegalityError> {
    if partial.is_complete() {
        return Err(LegalityError::Complete);
    }
    let width = partial.width();
    let last = partial.last();
    let mut mask = LegalityMask::all_invalid(width);
    if last.col() == 0 {
        // Row finished: open the next row at its diagonal.
        let next = last.row() + 1;
        mask.row_invalid[next] = false;
        mask.col_invalid[next] = false;
    } else {
        // Stay in the row; legal columns are those of row `last.col - 1`.
        mask.row_invalid[last.row()] = false;
        let parent_row = last.col() - 1;
        for c in partial.coords() {
            if c.row() == parent_row {
                mask.col_invalid[c.col()] = false;
            }
        }
    }
    Ok(mask)
}

/// Batched mask computation over many partial sequences.
///
/// Implemented independently of [`legal_mask`]: each sequence is folded into a
/// per-row occupancy table (bit sets) first, and masks are read off the table.
/// The two implementations cross-check each other in tests.
pub fn legal_mask_batched(
    partials: &[CoordinateSequence],
) -> Result<Vec<LegalityMask>, LegalityError> {
    partials
        .par_iter()
        .map(|partial| {
            if partial.is_complete() {
                return Err(LegalityError::Complete);
            }
            let width = partial.width();
            let mut rows = vec![0u64; width];
            for c in partial.coords() {
                rows[c.row()] |= 1 << c.col();
            }
            let last = partial.last();
            let mut mask = LegalityMask::all_invalid(width);
            if last.col() == 0 {
                let next = last.row() + 1;
                mask.row_invalid[next] = false;
                mask.col_invalid[next] = false;
            } else {
                mask.row_invalid[last.row()] = false;
                let mut bits = rows[last.col() - 1];
                while bits != 0 {
                    let col = bits.trailing_zeros() as usize;
                    mask.col_invalid[col] = false;
                    bits &= bits - 1;
                }
            }
            Ok(mask)
        })
        .collect()
}

/// Draws the next coordinate from per-index row and column probabilities.
///
/// Temperature is applied first (`p^(1/T)`, the power form of logit scaling),
/// then invalid entries are zeroed and the remainder renormalized; the row is
/// drawn before the column, each from its own masked distribution. If masking
/// leaves no finite probability mass, sampling falls back to a uniform draw
/// over the valid entries and logs a warning rather than failing the rollout.
pub fn masked_sample_step<R: Rng + ?Sized>(
    probs_row: &[f64],
    probs_col: &[f64],
    mask: &LegalityMask,
    temperature: f64,
    rng: &mut R,
) -> Result<Coordinate, SampleError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(SampleError::InvalidTemperature(temperature));
    }
    let row = sample_half(probs_row, &mask.row_invalid, temperature, "row", rng)?;
    let col = sample_half(probs_col, &mask.col_invalid, temperature, "column", rng)?;
    Ok(Coordinate::new(row, col))
}

fn sample_half<R: Rng + ?Sized>(
    probs: &[f64],
    invalid: &[bool],
    temperature: f64,
    what: &'static str,
    rng: &mut R,
) -> Result<usize, SampleError> {
    if probs.len() != invalid.len() {
        return Err(SampleError::LengthMismatch {
            got: probs.len(),
            want: invalid.len(),
        });
    }
    if !invalid.contains(&false) {
        return Err(SampleError::NoValidEntry(what));
    }
    let inv_t = 1.0 / temperature;
    let mut weights = Vec::with_capacity(probs.len());
    let mut total = 0.0f64;
    for (&p, &inv) in probs.iter().zip(invalid) {
        if !(p.is_finite() && p >= 0.0) {
            return Err(SampleError::BadProbability(p));
        }
        let w = if inv { 0.0 } else { p.powf(inv_t) };
        total += w;
        weights.push(w);
    }
    if total.is_finite() && total > 0.0 {
        let mut x = rng.random::<f64>() * total;
        for (i, &w) in weights.iter().enumerate() {
            x -= w;
            if x <= 0.0 && w > 0.0 {
                return Ok(i);
            }
        }
        // Rounding pushed the draw past the last positive weight.
        if let Some(i) = weights.iter().rposition(|&w| w > 0.0) {
            return Ok(i);
        }
    }
    // Degenerate mass after masking: every valid entry starved. Keep the
    // rollout alive with a uniform draw over the valid entries.
    log::warn!("masked {what} probabilities degenerate (mass {total:e}); falling back to uniform");
    let valid: Vec<usize> = invalid
        .iter()
        .enumerate()
        .filter(|(_, &inv)| !inv)
        .map(|(i, _)| i)
        .collect();
    Ok(valid[rng.random_range(0..valid.len())])
}

/// Grows a complete sequence by repeatedly choosing uniformly among the legal
/// next coordinates. The generator behind the pre-training corpus.
pub fn random_walk<R: Rng + ?Sized>(width: usize, rng: &mut R) -> CoordinateSequence {
    let mut seq = CoordinateSequence::start(width).expect("width validated by caller");
    while !seq.is_complete() {
        let mask = legal_mask(&seq).expect("incomplete sequence always has a mask");
        let rows: Vec<usize> = mask.valid_rows().collect();
        debug_assert_eq!(rows.len(), 1, "exactly one row is ever legal");
        let cols: Vec<usize> = mask.valid_cols().collect();
        let col = cols[rng.random_range(0..cols.len())];
        seq.push_unchecked(Coordinate::new(rows[0], col));
    }
    seq
}
