//! Scan-order sequence form of a prefix graph.
//!
//! Reading the occupancy matrix row by row (diagonal first, then occupied
//! columns in decreasing order) linearizes any graph into a coordinate
//! sequence that starts at `(0,0)` and ends at `(width-1, 0)`. The sequence is
//! the native format for the autoregressive policy: prefixes of a valid
//! sequence are exactly the states the legality mask reasons about.

use crate::coord::{Coordinate, MAX_WIDTH, MIN_WIDTH};
use crate::graph::{GraphError, PrefixGraph};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequenceError {
    #[error("width {0} outside supported range {MIN_WIDTH}..={MAX_WIDTH}")]
    InvalidWidth(usize),
    #[error("sequence is empty; it must at least contain the start coordinate (0,0)")]
    Empty,
    #[error("sequence must start at (0,0), found {0} at index 0")]
    BadStart(Coordinate),
    #[error("coordinate {coord} at index {index} out of range for width {width}")]
    OutOfRange {
        index: usize,
        coord: Coordinate,
        width: usize,
    },
    #[error("scan-order violation at index {index}: after {prev} the next coordinate must {expected}, found {coord}")]
    Ordering {
        index: usize,
        prev: Coordinate,
        coord: Coordinate,
        expected: &'static str,
    },
    #[error("merge rule violated at index {index}: column {col} of {coord} is not occupied in row {parent_row}")]
    IllegalColumn {
        index: usize,
        coord: Coordinate,
        col: usize,
        parent_row: usize,
    },
    #[error("sequence ends at {last} instead of the terminal coordinate ({terminal},0)")]
    MissingTerminal { last: Coordinate, terminal: usize },
    #[error("sequence longer than the width-{width} maximum of {max} coordinates")]
    TooLong { width: usize, max: usize },
    #[error("malformed sequence JSON: {0}")]
    Json(String),
}

/// A (possibly partial) scan-order coordinate sequence for a fixed width.
///
/// Invariants held by construction: the sequence starts at `(0,0)`, rows are
/// visited in increasing order, each new row opens with its diagonal entry,
/// and columns strictly decrease inside a row. A sequence is *complete* once
/// it reaches `(width-1, 0)`. The merge rule (each non-diagonal column must be
/// occupied in the row above the span split) is checked by
/// [`sequence_to_graph`] and by [`CoordinateSequence::push_checked`], not by
/// the structural constructors.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CoordinateSequence {
    width: usize,
    coords: Vec<Coordinate>,
}

/// On-disk JSON form: `{"width": n, "seq": [[row, col], ...]}` with the full
/// scan-order walk including diagonal and column-0 coordinates.
#[derive(Serialize, Deserialize)]
struct SequenceFile {
    width: usize,
    seq: Vec<Coordinate>,
}

impl CoordinateSequence {
    /// The one-coordinate prefix every sequence begins with.
    pub fn start(width: usize) -> Result<Self, SequenceError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(SequenceError::InvalidWidth(width));
        }
        Ok(Self {
            width,
            coords: vec![Coordinate::new(0, 0)],
        })
    }

    /// Builds a sequence from raw coordinates, checking the structural
    /// invariants (start, scan order, bounds, length cap) but not the merge
    /// rule. The reported index is the first offending coordinate.
    pub fn from_coords(
        width: usize,
        coords: Vec<Coordinate>,
    ) -> Result<Self, SequenceError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(SequenceError::InvalidWidth(width));
        }
        let max = width * (width + 1) / 2;
        if coords.len() > max {
            return Err(SequenceError::TooLong { width, max });
        }
        let first = *coords.first().ok_or(SequenceError::Empty)?;
        if first != Coordinate::new(0, 0) {
            return Err(SequenceError::BadStart(first));
        }
        for (index, pair) in coords.windows(2).enumerate() {
            let (prev, next) = (pair[0], pair[1]);
            let index = index + 1;
            if next.row() >= width {
                return Err(SequenceError::OutOfRange {
                    index,
                    coord: next,
                    width,
                });
            }
            Self::check_transition(prev, next).map_err(|expected| SequenceError::Ordering {
                index,
                prev,
                coord: next,
                expected,
            })?;
        }
        Ok(Self { width, coords })
    }

    /// Scan-order transition rule: from a column-0 coordinate the walk opens
    /// the next row at its diagonal; otherwise it stays in the row and the
    /// column strictly decreases.
    fn check_transition(prev: Coordinate, next: Coordinate) -> Result<(), &'static str> {
        if prev.col() == 0 {
            if next.row() == prev.row() + 1 && next.is_input() {
                Ok(())
            } else {
                Err("open the next row at its diagonal")
            }
        } else if next.row() == prev.row() && next.col() < prev.col() {
            Ok(())
        } else {
            Err("stay in the row with a strictly smaller column")
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn last(&self) -> Coordinate {
        *self.coords.last().expect("sequence is never empty")
    }

    /// The terminal coordinate `(width-1, 0)` ends every complete sequence.
    pub fn terminal(&self) -> Coordinate {
        Coordinate::new(self.width - 1, 0)
    }

    pub fn is_complete(&self) -> bool {
        self.last() == self.terminal()
    }

    /// Longest possible sequence for this width: the full lower triangle.
    pub fn max_len(&self) -> usize {
        self.width * (self.width + 1) / 2
    }

    /// Appends a coordinate that is already known to be legal (e.g. drawn
    /// from a legality mask). Structural invariants are still asserted in
    /// debug builds.
    pub fn push_unchecked(&mut self, coord: Coordinate) {
        debug_assert!(
            Self::check_transition(self.last(), coord).is_ok() && coord.row() < self.width,
            "illegal transition {} -> {}",
            self.last(),
            coord
        );
        debug_assert!(!self.is_complete(), "pushing past the terminal coordinate");
        self.coords.push(coord);
    }

    /// Appends a coordinate after checking both the structural transition and
    /// the merge rule against this prefix.
    pub fn push_checked(&mut self, coord: Coordinate) -> Result<(), SequenceError> {
        let index = self.coords.len();
        let prev = self.last();
        if self.is_complete() {
            return Err(SequenceError::Ordering {
                index,
                prev,
                coord,
                expected: "stop; the sequence already reached its terminal coordinate",
            });
        }
        if coord.row() >= self.width {
            return Err(SequenceError::OutOfRange {
                index,
                coord,
                width: self.width,
            });
        }
        Self::check_transition(prev, coord).map_err(|expected| SequenceError::Ordering {
            index,
            prev,
            coord,
            expected,
        })?;
        if coord.is_merge() {
            // The merge's upper parent is the coordinate just placed in this
            // row, `prev = (row, c)`; its lower parent `(c-1, col)` must
            // already exist. Column 0 always qualifies: row c-1 is complete.
            let parent_row = prev.col() - 1;
            let occupied = coord.col() == 0
                || self
                    .coords
                    .iter()
                    .any(|c| c.row() == parent_row && c.col() == coord.col());
            if !occupied {
                return Err(SequenceError::IllegalColumn {
                    index,
                    coord,
                    col: coord.col(),
                    parent_row,
                });
            }
        }
        self.coords.push(coord);
        Ok(())
    }

    /// Serializes to the `{"width", "seq"}` JSON interchange form.
    pub fn to_json(&self) -> String {
        let file = SequenceFile {
            width: self.width,
            seq: self.coords.clone(),
        };
        serde_json::to_string(&file).expect("sequence serialization cannot fail")
    }

    /// Parses the JSON interchange form, enforcing the structural invariants.
    pub fn from_json(s: &str) -> Result<Self, SequenceError> {
        let file: SequenceFile =
            serde_json::from_str(s).map_err(|e| SequenceError::Json(e.to_string()))?;
        Self::from_coords(file.width, file.seq)
    }

    /// Compact byte key identifying the sequence (width, then coordinate
    /// pairs). Used for deduplication.
    pub fn key(&self) -> Vec<u8> {
        let mut key = Vec::with_capacity(1 + 2 * self.coords.len());
        key.push(self.width as u8);
        for c in &self.coords {
            key.push(c.row() as u8);
            key.push(c.col() as u8);
        }
        key
    }
}

impl fmt::Debug for CoordinateSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoordinateSequence(width={}, ", self.width)?;
        f.debug_list().entries(self.coords.iter()).finish()?;
        write!(f, ")")
    }
}

impl Serialize for CoordinateSequence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SequenceFile {
            width: self.width,
            seq: self.coords.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CoordinateSequence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = SequenceFile::deserialize(deserializer)?;
        Self::from_coords(file.width, file.seq).map_err(serde::de::Error::custom)
    }
}

/// Replays a complete sequence into its occupancy matrix, enforcing every
/// design rule along the way. Errors name the first offending index.
pub fn sequence_to_graph(seq: &CoordinateSequence) -> Result<PrefixGraph, SequenceError> {
    let width = seq.width();
    if !seq.is_complete() {
        return Err(SequenceError::MissingTerminal {
            last: seq.last(),
            terminal: width - 1,
        });
    }
    // Structural invariants hold by construction; replay only the merge rule,
    // keeping per-row occupancy as bit sets. For a merge at (j,i) the upper
    // parent is the previous coordinate (j,c) of the same row, so the lower
    // parent (c-1,i) must already be occupied.
    let mut rows = vec![0u64; width];
    let mut prev = seq.coords()[0];
    for (index, &coord) in seq.coords().iter().enumerate() {
        let (j, i) = (coord.row(), coord.col());
        if coord.is_merge() && i > 0 {
            let parent_row = prev.col() - 1;
            if rows[parent_row] >> i & 1 == 0 {
                return Err(SequenceError::IllegalColumn {
                    index,
                    coord,
                    col: i,
                    parent_row,
                });
            }
        }
        rows[j] |= 1 << i;
        prev = coord;
    }
    let g = PrefixGraph::from_merge_nodes(
        width,
        seq.coords().iter().copied().filter(|c| c.is_merge()),
    )
    .expect("bounds already checked");
    debug_assert!(g.validate().is_valid());
    Ok(g)
}

/// Linearizes a valid graph into its scan-order sequence. Fails with the
/// first design-rule violation if the graph is invalid.
pub fn graph_to_sequence(graph: &PrefixGraph) -> Result<CoordinateSequence, GraphError> {
    let report = graph.validate();
    if let Some(first) = report.violations.first() {
        return Err(GraphError::Invalid(*first));
    }
    let coords: Vec<Coordinate> = graph.nodes().collect();
    Ok(CoordinateSequence {
        width: graph.width(),
        coords,
    })
}
