//! Random-walk corpus files: one JSON sequence object per line.

use prefixforge_core::{random_walk, sequence_to_graph, CoordinateSequence, SequenceError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {source}")]
    BadSequence {
        line: usize,
        #[source]
        source: SequenceError,
    },
    #[error("corpus is empty")]
    Empty,
}

/// Streams `count` uniform random walks of the given width into `out`.
/// The walk RNG is a fixed-seed stream, so identical arguments always
/// produce byte-identical output.
pub fn write_corpus(
    width: usize,
    count: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let seq = random_walk(width, &mut rng);
        out.write_all(seq.to_json().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// [`write_corpus`] straight to a file path.
pub fn gen_corpus(
    width: usize,
    count: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_corpus(width, count, seed, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads a corpus file, re-checking every design rule on every line. The
/// line number in errors is 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CoordinateSequence>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut seqs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = CoordinateSequence::from_json(&line)
            .and_then(|s| sequence_to_graph(&s).map(|_| s))
            .map_err(|source| CorpusError::BadSequence {
                line: idx + 1,
                source,
            })?;
        seqs.push(seq);
    }
    if seqs.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(seqs)
}
