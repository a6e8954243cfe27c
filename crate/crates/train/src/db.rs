//! The design database: every design ever scored, deduplicated, queryable
//! by area-delay product, optionally persisted as append-only JSONL.

use crate::reward::DesignRecord;
use prefixforge_core::sequence_to_graph;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("database i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("database line {line} is not a design record: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("record holds an invalid design: {0}")]
    InvalidDesign(String),
}

/// Insert-only store keyed by canonical sequence bytes. The first record
/// for a sequence wins; later duplicates are dropped. With a backing file,
/// every accepted record is appended as one JSON line before `insert`
/// returns, so a crash loses at most the in-flight record.
pub struct DesignDb {
    records: Vec<DesignRecord>,
    index: HashMap<Vec<u8>, usize>,
    sink: Option<BufWriter<File>>,
}

impl DesignDb {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            index: HashMap::new(),
            sink: None,
        }
    }

    /// Opens or creates a JSONL-backed database, replaying existing lines
    /// through the same dedup rule as live insertion.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let path = path.as_ref();
        let mut db = Self::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: DesignRecord =
                    serde_json::from_str(&line).map_err(|e| DbError::BadRecord {
                        line: idx + 1,
                        reason: e.to_string(),
                    })?;
                db.accept(record)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        db.sink = Some(BufWriter::new(file));
        Ok(db)
    }

    fn accept(&mut self, record: DesignRecord) -> Result<bool, DbError> {
        sequence_to_graph(&record.sequence)
            .map_err(|e| DbError::InvalidDesign(e.to_string()))?;
        let key = record.sequence.key();
        if self.index.contains_key(&key) {
            return Ok(false);
        }
        self.index.insert(key, self.records.len());
        self.records.push(record);
        Ok(true)
    }

    /// Stores a record unless its sequence is already present. Returns
    /// whether the record was new.
    pub fn insert(&mut self, record: DesignRecord) -> Result<bool, DbError> {
        let fresh = self.accept(record)?;
        if fresh {
            if let Some(sink) = &mut self.sink {
                let stored = self.records.last().expect("just pushed");
                serde_json::to_writer(&mut *sink, stored)
                    .map_err(|e| DbError::InvalidDesign(e.to_string()))?;
                sink.write_all(b"\n")?;
                sink.flush()?;
            }
        }
        Ok(fresh)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DesignRecord] {
        &self.records
    }

    /// The `k` records with the lowest area-delay product. Ties prefer the
    /// smaller size, then the earlier iteration.
    pub fn top_k_by_adp(&self, k: usize) -> Vec<&DesignRecord> {
        let mut sorted: Vec<&DesignRecord> = self.records.iter().collect();
        sorted.sort_by(|a, b| {
            a.adp()
                .total_cmp(&b.adp())
                .then(a.size.cmp(&b.size))
                .then(a.iteration.cmp(&b.iteration))
        });
        sorted.truncate(k);
        sorted
    }

    pub fn best(&self) -> Option<&DesignRecord> {
        self.top_k_by_adp(1).into_iter().next()
    }

    /// Records not dominated on (area, delay): no other record is at least
    /// as good on both metrics and better on one. Sorted by ascending area.
    pub fn pareto(&self) -> Vec<&DesignRecord> {
        pareto_of(&self.records)
    }
}

/// The (area, delay) Pareto front of any record set, sorted by ascending
/// area with duplicate metric points collapsed.
pub fn pareto_of(records: &[DesignRecord]) -> Vec<&DesignRecord> {
    let mut front: Vec<&DesignRecord> = records
        .iter()
        .filter(|candidate| {
            !records.iter().any(|other| {
                other.area <= candidate.area
                    && other.delay <= candidate.delay
                    && (other.area < candidate.area || other.delay < candidate.delay)
            })
        })
        .collect();
    front.sort_by(|a, b| a.area.total_cmp(&b.area).then(a.delay.total_cmp(&b.delay)));
    front.dedup_by(|a, b| a.area == b.area && a.delay == b.delay);
    front
}
