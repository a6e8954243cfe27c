//! Classic prefix-adder topologies, used as references and seeds.

use crate::coord::Coordinate;
use crate::graph::{GraphError, PrefixGraph};
use std::fmt;
use std::str::FromStr;

/// The four classic baseline families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Serial carry chain: minimal size `n-1`, maximal depth `n`.
    Ripple,
    /// Divide-and-conquer tree: minimal depth, high fanout.
    Sklansky,
    /// Dense minimal-depth tree with maximal wiring.
    KoggeStone,
    /// Sparse tree trading a little depth for near-minimal size.
    BrentKung,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Ripple,
        BaselineKind::Sklansky,
        BaselineKind::KoggeStone,
        BaselineKind::BrentKung,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Ripple => "ripple",
            BaselineKind::Sklansky => "sklansky",
            BaselineKind::KoggeStone => "kogge_stone",
            BaselineKind::BrentKung => "brent_kung",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ripple" => Ok(BaselineKind::Ripple),
            "sklansky" => Ok(BaselineKind::Sklansky),
            "kogge_stone" | "koggestone" => Ok(BaselineKind::KoggeStone),
            "brent_kung" | "brentkung" => Ok(BaselineKind::BrentKung),
            other => Err(format!(
                "unknown baseline '{other}' (expected one of ripple, sklansky, kogge_stone, brent_kung)"
            )),
        }
    }
}

/// Builds the named baseline at the given width.
pub fn baseline(kind: BaselineKind, width: usize) -> Result<PrefixGraph, GraphError> {
    let g = match kind {
        BaselineKind::Ripple => PrefixGraph::new(width)?,
        BaselineKind::Sklansky => sklansky(width)?,
        BaselineKind::KoggeStone => kogge_stone(width)?,
        BaselineKind::BrentKung => brent_kung(width)?,
    };
    debug_assert!(g.validate().is_valid(), "{kind} construction broke a rule");
    Ok(g)
}

/// Row `j` holds the spans `(j, floor(j / 2^t) * 2^t)` for every `t`, which
/// recursively halves the problem.
fn sklansky(width: usize) -> Result<PrefixGraph, GraphError> {
    let mut g = PrefixGraph::new(width)?;
    for j in 0..width {
        for t in 1..usize::BITS {
            let col = (j >> t) << t;
            if col < j {
                g.set(Coordinate::new(j, col));
            }
            if col == 0 {
                break;
            }
        }
    }
    Ok(g)
}

/// Row `j` holds the spans `(j, max(0, j - 2^t + 1))`: every span doubles per
/// level, giving minimal depth at maximal node count.
fn kogge_stone(width: usize) -> Result<PrefixGraph, GraphError> {
    let mut g = PrefixGraph::new(width)?;
    for j in 0..width {
        for t in 1..usize::BITS {
            let span = (1usize << t) - 1;
            let col = j.saturating_sub(span);
            if col < j {
                g.set(Coordinate::new(j, col));
            }
            if col == 0 {
                break;
            }
        }
    }
    Ok(g)
}

/// Forward halving tree (`(j, j+1-2^t)` wherever `j+1` is a multiple of
/// `2^t`), then a backward pass that closes the carry of every row still
/// missing column 0. Rows are closed in increasing order, so each new carry
/// can lean on the one below it.
fn brent_kung(width: usize) -> Result<PrefixGraph, GraphError> {
    let mut g = PrefixGraph::new(width)?;
    for t in 1..usize::BITS {
        let step = 1usize << t;
        if step > width {
            break;
        }
        for j in (step - 1..width).step_by(step) {
            let col = j + 1 - step;
            if col < j {
                g.set(Coordinate::new(j, col));
            }
        }
    }
    // PrefixGraph::new presets column 0 everywhere, so the backward pass is
    // implicit; validity still needs the scan-order argument from above.
    Ok(g)
}
