//! Coordinates in the lower-triangular prefix matrix.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Smallest adder width that has any merge structure.
pub const MIN_WIDTH: usize = 2;

/// Largest supported adder width. Occupancy rows are packed into single
/// 64-bit words, which caps the width; practical searches stay far below it.
pub const MAX_WIDTH: usize = 64;

/// Position `(row, col)` of a node in the prefix matrix.
///
/// A node at `(j, i)` carries the group signal for bit span `j..=i` (spans are
/// written high:low, so `col <= row` always). Diagonal entries (`col == row`)
/// are the input nodes, column-0 entries are the carry outputs, and everything
/// with `col < row` is a merge node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(u8, u8)", into = "(u8, u8)")]
pub struct Coordinate {
    row: u8,
    col: u8,
}

impl Coordinate {
    /// Builds a coordinate; panics if `col > row` or either index exceeds
    /// [`MAX_WIDTH`]. Call sites that handle untrusted input go through
    /// `TryFrom<(u8, u8)>` instead.
    pub fn new(row: usize, col: usize) -> Self {
        assert!(
            col <= row && row < MAX_WIDTH,
            "coordinate ({row},{col}) outside the lower triangle of a {MAX_WIDTH}-wide matrix"
        );
        Self {
            row: row as u8,
            col: col as u8,
        }
    }

    pub fn row(&self) -> usize {
        self.row as usize
    }

    pub fn col(&self) -> usize {
        self.col as usize
    }

    /// Input node: sits on the diagonal.
    pub fn is_input(&self) -> bool {
        self.row == self.col
    }

    /// Output node: produces the carry for its row.
    pub fn is_output(&self) -> bool {
        self.col == 0
    }

    /// Merge node: combines two shorter spans (column 0 entries of rows > 0
    /// are merges as well as outputs).
    pub fn is_merge(&self) -> bool {
        self.col < self.row
    }
}

impl fmt::Debug for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

impl TryFrom<(u8, u8)> for Coordinate {
    type Error = String;

    fn try_from((row, col): (u8, u8)) -> Result<Self, Self::Error> {
        if col > row || row as usize >= MAX_WIDTH {
            return Err(format!(
                "coordinate ({row},{col}) is not in the lower triangle (width cap {MAX_WIDTH})"
            ));
        }
        Ok(Self { row, col })
    }
}

impl From<Coordinate> for (u8, u8) {
    fn from(c: Coordinate) -> Self {
        (c.row, c.col)
    }
}
