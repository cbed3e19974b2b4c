//! Graphviz output: classes as dashed clusters, e-nodes as boxes, and an edge
//! from each e-node to every operand class.

use std::fmt::Write;

use super::EGraph;
use crate::grammar::Op;

fn label(op: Op) -> String {
    match op {
        Op::Add => "+".into(),
        Op::Sub => "-".into(),
        Op::Mul => "*".into(),
        Op::Div => "/".into(),
        Op::Pow => "^".into(),
        Op::Partial(i) => format!("d/dx{i}"),
        Op::Var(i) => format!("x{i}"),
        Op::Const => "const".into(),
        Op::Lit(v) => format!("{}", v.0),
        Op::Hole => "A".into(),
        Op::Placeholder(c) => (c as char).to_string(),
        op => op.tag(),
    }
}

impl EGraph {
    /// DOT text, ordered by class id and then by e-node order.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph egraph {\n  compound=true;\n  clusterrank=local;\n");
        for id in self.class_ids() {
            let _ = writeln!(out, "  subgraph cluster_{} {{", id.0);
            let _ = writeln!(out, "    style=dashed;\n    label=\"{id}\";");
            for (k, node) in self.nodes(id).iter().enumerate() {
                let _ = writeln!(out, "    n{}_{k} [shape=box, label=\"{}\"];", id.0, label(node.op));
            }
            out.push_str("  }\n");
        }
        for id in self.class_ids() {
            for (k, node) in self.nodes(id).iter().enumerate() {
                for (pos, child) in node.children.iter().enumerate() {
                    let child = self.find(*child);
                    let _ = writeln!(
                        out,
                        "  n{}_{k} -> n{}_0 [lhead=cluster_{}, label=\"{pos}\"];",
                        id.0, child.0, child.0
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}
