//! Occupancy-matrix form of a prefix adder and its design rules.

use crate::coord::{Coordinate, MAX_WIDTH, MIN_WIDTH};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("width {0} outside supported range {MIN_WIDTH}..={MAX_WIDTH}")]
    InvalidWidth(usize),
    #[error("coordinate {0} out of range for width {1}")]
    OutOfRange(Coordinate, usize),
    #[error("node {0} is absent from the graph")]
    NodeAbsent(Coordinate),
    #[error("node {0} is not a merge node")]
    NotMergeNode(Coordinate),
    #[error("invalid graph: {0}")]
    Invalid(Violation),
    #[error("failed to parse graph JSON: {0}")]
    Json(String),
    #[error("module name '{0}' is not a valid Verilog identifier")]
    InvalidModuleName(String),
}

/// One broken design rule, pinned to the entry that breaks it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// A diagonal entry is missing.
    InputRule { bit: usize },
    /// A column-0 entry is missing.
    OutputRule { row: usize },
    /// A merge node whose lower parent does not exist. `missing_lsp` is the
    /// entry that the span decomposition requires but the matrix lacks.
    MergeRule {
        node: Coordinate,
        missing_lsp: Coordinate,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InputRule { bit } => write!(f, "input rule violated at bit {bit}"),
            Violation::OutputRule { row } => write!(f, "output rule violated at row {row}"),
            Violation::MergeRule { node, missing_lsp } => write!(
                f,
                "merge rule violated at node {node}: lower parent {missing_lsp} is absent"
            ),
        }
    }
}

/// Outcome of checking every design rule of a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "valid")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Node levels of a valid graph: inputs sit at level 0, every merge node one
/// above the deeper of its two parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLevels {
    levels: HashMap<Coordinate, usize>,
    max_level: usize,
}

impl NodeLevels {
    pub fn level(&self, node: Coordinate) -> Option<usize> {
        self.levels.get(&node).copied()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Logic depth of the whole adder: one input-processing level plus the
    /// deepest merge level.
    pub fn depth(&self) -> usize {
        1 + self.max_level
    }
}

/// Lower-triangular occupancy matrix of a width-`n` prefix adder.
///
/// Row `j` is a bit set over columns `0..=j`; bit `i` set means the node
/// `(j,i)` exists. `PrefixGraph::new` starts from the minimal legal matrix
/// (diagonal plus column 0, which is exactly the ripple-carry adder), so the
/// input and output rules hold from the start and only merge structure varies.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PrefixGraph {
    width: usize,
    rows: Vec<u64>,
}

/// On-disk JSON form: `{"width": n, "nodes": [[row, col], ...]}` listing merge
/// nodes in scan order. Diagonal and column-0 entries are implied and may be
/// omitted (they are accepted on input for tolerance).
#[derive(Serialize, Deserialize)]
struct GraphFile {
    width: usize,
    nodes: Vec<Coordinate>,
}

impl PrefixGraph {
    /// Minimal valid graph of the given width: inputs plus the carry chain.
    pub fn new(width: usize) -> Result<Self, GraphError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(GraphError::InvalidWidth(width));
        }
        let rows = (0..width)
            .map(|j| (1u64 << j) | 1)
            .collect();
        Ok(Self { width, rows })
    }

    /// Builds a graph from its merge nodes (diagonal and column 0 are always
    /// present). Does not check the merge rule; call [`PrefixGraph::validate`]
    /// or convert through a sequence when legality matters.
    pub fn from_merge_nodes<I>(width: usize, merges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = Coordinate>,
    {
        let mut g = Self::new(width)?;
        for node in merges {
            if node.row() >= width {
                return Err(GraphError::OutOfRange(node, width));
            }
            g.set(node);
        }
        Ok(g)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn contains(&self, node: Coordinate) -> bool {
        node.row() < self.width && self.rows[node.row()] >> node.col() & 1 == 1
    }

    /// Marks a node present. Panics if the coordinate is outside the matrix;
    /// the result may violate the merge rule until validated.
    pub fn set(&mut self, node: Coordinate) {
        assert!(node.row() < self.width, "node {node} out of range");
        self.rows[node.row()] |= 1 << node.col();
    }

    /// Removes a node. Diagonal and column-0 entries are load-bearing for the
    /// input/output rules but removal is allowed so rule checks can be tested.
    pub fn clear(&mut self, node: Coordinate) {
        assert!(node.row() < self.width, "node {node} out of range");
        self.rows[node.row()] &= !(1 << node.col());
    }

    /// Occupied columns of one row, as a bit set.
    pub fn row_bits(&self, row: usize) -> u64 {
        self.rows[row]
    }

    /// All occupied entries in scan order: rows top to bottom, and inside a
    /// row from the diagonal down to column 0.
    pub fn nodes(&self) -> impl Iterator<Item = Coordinate> + '_ {
        (0..self.width).flat_map(move |j| {
            (0..=j)
                .rev()
                .filter(move |&i| self.rows[j] >> i & 1 == 1)
                .map(move |i| Coordinate::new(j, i))
        })
    }

    /// Merge nodes only, in scan order.
    pub fn merge_nodes(&self) -> impl Iterator<Item = Coordinate> + '_ {
        self.nodes().filter(Coordinate::is_merge)
    }

    /// Number of merge nodes. Proxy for adder area.
    pub fn size(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(j, &bits)| (bits & !(1 << j)).count_ones() as usize)
            .sum()
    }

    /// Column of the nearest occupied entry strictly to the right of `col` in
    /// `row`, if any. "Right" means a higher column index.
    fn nearest_right(&self, row: usize, col: usize) -> Option<usize> {
        let above = self.rows[row] >> (col + 1);
        if above == 0 {
            None
        } else {
            Some(col + 1 + above.trailing_zeros() as usize)
        }
    }

    /// Resolves the two parents of a merge node under the span decomposition
    /// used throughout: the upper parent is the nearest occupied entry to the
    /// right in the same row, `(j, c)`, and the lower parent is then forced to
    /// be `(c-1, i)`.
    pub fn resolve_parents(
        &self,
        node: Coordinate,
    ) -> Result<(Coordinate, Coordinate), GraphError> {
        if node.row() >= self.width {
            return Err(GraphError::OutOfRange(node, self.width));
        }
        if !self.contains(node) {
            return Err(GraphError::NodeAbsent(node));
        }
        if !node.is_merge() {
            return Err(GraphError::NotMergeNode(node));
        }
        // A present merge node always has the diagonal entry of its own row to
        // its right, so an upper parent exists.
        let c = self
            .nearest_right(node.row(), node.col())
            .expect("diagonal entry guarantees a right neighbour");
        let msp = Coordinate::new(node.row(), c);
        let lsp = Coordinate::new(c - 1, node.col());
        if !self.contains(lsp) {
            return Err(GraphError::Invalid(Violation::MergeRule {
                node,
                missing_lsp: lsp,
            }));
        }
        Ok((msp, lsp))
    }

    /// Checks the input, output, and merge rules and reports every violation
    /// in scan order.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for j in 0..self.width {
            if self.rows[j] >> j & 1 == 0 {
                violations.push(Violation::InputRule { bit: j });
            }
            if self.rows[j] & 1 == 0 {
                violations.push(Violation::OutputRule { row: j });
            }
        }
        for node in self.merge_nodes() {
            // The merge rule can only be checked where an upper parent exists;
            // without the diagonal entry the row is already reported above.
            if let Some(c) = self.nearest_right(node.row(), node.col()) {
                let lsp = Coordinate::new(c - 1, node.col());
                if !self.contains(lsp) {
                    violations.push(Violation::MergeRule {
                        node,
                        missing_lsp: lsp,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Computes node levels. Fails with the first violation if the graph is
    /// invalid. Scan order is topological here: upper parents live to the
    /// right in the same row, lower parents in an earlier row.
    pub fn levels(&self) -> Result<NodeLevels, GraphError> {
        let report = self.validate();
        if let Some(first) = report.violations.first() {
            return Err(GraphError::Invalid(*first));
        }
        let mut levels: HashMap<Coordinate, usize> = HashMap::new();
        let mut max_level = 0;
        for node in self.nodes() {
            let level = if node.is_input() {
                0
            } else {
                let (msp, lsp) = self.resolve_parents(node)?;
                1 + levels[&msp].max(levels[&lsp])
            };
            max_level = max_level.max(level);
            levels.insert(node, level);
        }
        Ok(NodeLevels { levels, max_level })
    }

    /// Logic depth: one level of input processing plus the deepest merge.
    pub fn depth(&self) -> Result<usize, GraphError> {
        Ok(self.levels()?.depth())
    }

    /// Serializes to the `{"width", "nodes"}` JSON interchange form.
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            width: self.width,
            nodes: self.merge_nodes().collect(),
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }

    /// Parses the JSON interchange form. Structural checks only; merge-rule
    /// validity is a separate concern.
    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| GraphError::Json(e.to_string()))?;
        Self::from_merge_nodes(file.width, file.nodes)
    }
}

impl fmt::Debug for PrefixGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PrefixGraph(width={})", self.width)?;
        for j in 0..self.width {
            for i in (0..=j).rev() {
                write!(f, "{}", if self.rows[j] >> i & 1 == 1 { '#' } else { '.' })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
