//! Core representation of parallel-prefix adder topologies.
//!
//! A width-`n` prefix adder is stored as a lower-triangular occupancy matrix
//! ([`PrefixGraph`]) or, equivalently, as the scan-order walk over its occupied
//! entries ([`CoordinateSequence`]). The [`legality`] module answers "which
//! coordinate may come next" for partially built sequences, which is what both
//! the random-walk generator and the sampling policy consume. The [`hardware`]
//! module turns validated graphs into adder behaviour (bitwise simulation) and
//! structural netlists, and can hand netlists to an external synthesis tool.

pub mod baselines;
pub mod coord;
pub mod graph;
pub mod hardware;
pub mod legality;
pub mod sequence;

pub use baselines::{baseline, BaselineKind};
pub use coord::{Coordinate, MAX_WIDTH, MIN_WIDTH};
pub use graph::{GraphError, NodeLevels, PrefixGraph, ValidationReport, Violation};
pub use hardware::{
    export_netlist, simulate_add, synthesize_external, SimulateError, Simulator, SynthError,
    SynthHook, SynthesisResult,
};
pub use legality::{
    legal_mask, legal_mask_batched, masked_sample_step, random_walk, LegalityError, LegalityMask,
    SampleError,
};
pub use sequence::{graph_to_sequence, sequence_to_graph, CoordinateSequence, SequenceError};
