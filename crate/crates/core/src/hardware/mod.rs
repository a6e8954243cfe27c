//! From topology to adder behaviour: simulation, netlist export, synthesis.
//!
//! Every node `(j,i)` of a valid graph carries a generate/propagate pair for
//! the bit span `j..=i`. Inputs compute `g = a AND b`, `p = a XOR b` for their
//! bit; a merge combines its upper parent `(j,c)` with its lower parent
//! `(c-1,i)` as `g = g_up OR (p_up AND g_low)`, `p = p_up AND p_low`. Column-0
//! nodes then hold the carries `c_j`, and the sum falls out as
//! `s_j = p_{j,j} XOR c_{j-1}` (with a zero carry-in).

mod netlist;
mod synth;

pub use netlist::export_netlist;
pub use synth::{synthesize_external, SynthError, SynthHook, SynthesisResult};

use crate::graph::{GraphError, PrefixGraph};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimulateError {
    #[error("operand {value:#x} does not fit in {width} bits")]
    OperandOutOfRange { value: u64, width: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Precompiled evaluator for one graph: parents are resolved once, additions
/// then run as straight-line bit operations.
pub struct Simulator {
    width: usize,
    // Merge steps in scan order: (row, col, upper-parent col).
    merges: Vec<(usize, usize, usize)>,
}

impl Simulator {
    pub fn new(graph: &PrefixGraph) -> Result<Self, GraphError> {
        require_valid(graph)?;
        let mut merges = Vec::with_capacity(graph.size());
        for node in graph.merge_nodes() {
            let (msp, _) = graph.resolve_parents(node)?;
            merges.push((node.row(), node.col(), msp.col()));
        }
        Ok(Self {
            width: graph.width(),
            merges,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Adds two width-bit operands. Returns the truncated sum and the carry
    /// out of the top bit.
    pub fn add(&self, a: u64, b: u64) -> Result<(u64, bool), SimulateError> {
        let width = self.width;
        if width < 64 {
            for value in [a, b] {
                if value >> width != 0 {
                    return Err(SimulateError::OperandOutOfRange { value, width });
                }
            }
        }
        // g[j] bit i holds G over span j..=i; same layout for p. Scan order
        // is topological, so parents are ready when a merge needs them.
        let mut g = vec![0u64; width];
        let mut p = vec![0u64; width];
        let ab_and = a & b;
        let ab_xor = a ^ b;
        for j in 0..width {
            g[j] |= (ab_and >> j & 1) << j;
            p[j] |= (ab_xor >> j & 1) << j;
        }
        for &(j, i, c) in &self.merges {
            let g_up = g[j] >> c & 1;
            let p_up = p[j] >> c & 1;
            let g_low = g[c - 1] >> i & 1;
            let p_low = p[c - 1] >> i & 1;
            g[j] |= (g_up | (p_up & g_low)) << i;
            p[j] |= (p_up & p_low) << i;
        }
        // Carries: c_j = G over j..=0. Sum: s_0 = p_0, s_j = p_j XOR c_{j-1}.
        let mut sum = ab_xor & 1;
        for j in 1..width {
            let carry = g[j - 1] & 1;
            sum |= ((ab_xor >> j & 1) ^ carry) << j;
        }
        let carry_out = g[width - 1] & 1 == 1;
        Ok((sum, carry_out))
    }
}

/// One-shot convenience wrapper around [`Simulator`].
pub fn simulate_add(graph: &PrefixGraph, a: u64, b: u64) -> Result<(u64, bool), SimulateError> {
    Simulator::new(graph)?.add(a, b)
}

/// Shared precondition of every consumer here: first violation as an error.
pub(crate) fn require_valid(graph: &PrefixGraph) -> Result<(), GraphError> {
    if let Some(first) = graph.validate().violations.first() {
        return Err(GraphError::Invalid(*first));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{baseline, BaselineKind};
    use crate::coord::Coordinate;
    use crate::legality::random_walk;
    use crate::sequence::sequence_to_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exhaustive_small_widths_match_integer_addition() {
        for width in 2..=5usize {
            for kind in BaselineKind::ALL {
                let g = baseline(kind, width).unwrap();
                let sim = Simulator::new(&g).unwrap();
                for a in 0..1u64 << width {
                    for b in 0..1u64 << width {
                        let (sum, cout) = sim.add(a, b).unwrap();
                        let full = a + b;
                        assert_eq!(sum, full & ((1 << width) - 1), "{kind} {a}+{b}");
                        assert_eq!(cout, full >> width == 1, "{kind} {a}+{b} carry");
                    }
                }
            }
        }
    }

    #[test]
    fn random_graphs_add_correctly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for width in [6usize, 16, 33, 64] {
            for _ in 0..20 {
                let g = sequence_to_graph(&random_walk(width, &mut rng)).unwrap();
                let sim = Simulator::new(&g).unwrap();
                for _ in 0..200 {
                    let mask = if width == 64 { u64::MAX } else { (1 << width) - 1 };
                    let a = rng.random::<u64>() & mask;
                    let b = rng.random::<u64>() & mask;
                    let (sum, cout) = sim.add(a, b).unwrap();
                    let full = a as u128 + b as u128;
                    assert_eq!(sum as u128, full & mask as u128);
                    assert_eq!(cout, full >> width & 1 == 1);
                }
            }
        }
    }

    #[test]
    fn operand_range_enforced() {
        let g = baseline(BaselineKind::Ripple, 4).unwrap();
        assert!(matches!(
            simulate_add(&g, 16, 0),
            Err(SimulateError::OperandOutOfRange { value: 16, width: 4 })
        ));
        assert!(simulate_add(&g, 15, 15).is_ok());
    }

    #[test]
    fn invalid_graph_rejected() {
        let mut g = baseline(BaselineKind::Sklansky, 8).unwrap();
        g.clear(Coordinate::new(3, 3));
        assert!(matches!(
            simulate_add(&g, 1, 2),
            Err(SimulateError::Graph(GraphError::Invalid(_)))
        ));
    }
}
