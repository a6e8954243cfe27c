//! Structural Verilog export.
//!
//! The emitted dialect is deliberately tiny: primitive `and`/`or`/`xor` gate
//! instances plus two `assign`s (the constant carry-in and the carry out), so
//! any synthesis flow or the test-side evaluator can consume it. Output is a
//! pure function of the graph and module name, byte for byte.

use super::require_valid;
use crate::graph::{GraphError, PrefixGraph};
use std::fmt::Write;

/// Renders a validated graph as a structural Verilog module.
///
/// Gate inventory: one AND + XOR pair per input bit, one AND + OR (generate)
/// and one AND (propagate) per merge node, and one XOR per sum bit. Wire
/// names encode the span: `g_3_1` is the generate signal over bits 3..=1.
pub fn export_netlist(graph: &PrefixGraph, module_name: &str) -> Result<String, GraphError> {
    require_valid(graph)?;
    validate_module_name(module_name)?;
    let n = graph.width();
    let hi = n - 1;
    let mut out = String::new();

    writeln!(out, "// structural prefix adder netlist").unwrap();
    writeln!(
        out,
        "// width {n}, size {}, depth {}",
        graph.size(),
        graph.depth().expect("validated above")
    )
    .unwrap();
    writeln!(out, "module {module_name} (").unwrap();
    writeln!(out, "  input  [{hi}:0] a,").unwrap();
    writeln!(out, "  input  [{hi}:0] b,").unwrap();
    writeln!(out, "  output [{hi}:0] sum,").unwrap();
    writeln!(out, "  output cout").unwrap();
    writeln!(out, ");").unwrap();
    writeln!(out).unwrap();

    writeln!(out, "  wire const_zero;").unwrap();
    for node in graph.nodes() {
        let (j, i) = (node.row(), node.col());
        if node.is_merge() {
            writeln!(out, "  wire g_{j}_{i}, p_{j}_{i}, t_{j}_{i};").unwrap();
        } else {
            writeln!(out, "  wire g_{j}_{i}, p_{j}_{i};").unwrap();
        }
    }
    writeln!(out).unwrap();
    writeln!(out, "  assign const_zero = 1'b0;").unwrap();
    writeln!(out).unwrap();

    writeln!(out, "  // input cells").unwrap();
    for j in 0..n {
        writeln!(out, "  and u_g_{j}_{j} (g_{j}_{j}, a[{j}], b[{j}]);").unwrap();
        writeln!(out, "  xor u_p_{j}_{j} (p_{j}_{j}, a[{j}], b[{j}]);").unwrap();
    }
    writeln!(out).unwrap();

    writeln!(out, "  // merge cells").unwrap();
    for node in graph.merge_nodes() {
        let (msp, lsp) = graph.resolve_parents(node).expect("validated above");
        let (j, i) = (node.row(), node.col());
        let (uj, ui) = (msp.row(), msp.col());
        let (lj, li) = (lsp.row(), lsp.col());
        writeln!(out, "  and u_t_{j}_{i} (t_{j}_{i}, p_{uj}_{ui}, g_{lj}_{li});").unwrap();
        writeln!(out, "  or  u_g_{j}_{i} (g_{j}_{i}, g_{uj}_{ui}, t_{j}_{i});").unwrap();
        writeln!(out, "  and u_p_{j}_{i} (p_{j}_{i}, p_{uj}_{ui}, p_{lj}_{li});").unwrap();
    }
    writeln!(out).unwrap();

    writeln!(out, "  // sum cells").unwrap();
    writeln!(out, "  xor u_s_0 (sum[0], p_0_0, const_zero);").unwrap();
    for j in 1..n {
        let c = j - 1;
        writeln!(out, "  xor u_s_{j} (sum[{j}], p_{j}_{j}, g_{c}_0);").unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "  assign cout = g_{hi}_0;").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "endmodule").unwrap();
    Ok(out)
}

fn validate_module_name(name: &str) -> Result<(), GraphError> {
    let mut chars = name.chars();
    let head_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if head_ok && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Ok(())
    } else {
        Err(GraphError::InvalidModuleName(name.to_string()))
    }
}
