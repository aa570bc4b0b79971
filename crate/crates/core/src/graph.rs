//! Graph notation for a state as Graphviz DOT.
//!
//! Vertices are the four emissions. The undirected subgraph carries the
//! indistinguishabilities, the directed one the phases; an edge exists only
//! when `J > zero`. A directed edge `a -> b` is labelled `φ(a, b) ≥ 0`, so
//! flipping the sign of a phase reverses the arrow. Fully coherent pairs
//! (`J = 1`) are drawn black.

use std::fmt::Write as _;

use crate::qstate::{Emission, StateParams, Tolerances, PAIRS};

const PALETTE: [&str; 6] = ["red", "blue", "darkgreen", "orange", "purple", "brown"];

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: Emission,
    pub to: Emission,
    pub weight: f64,
    pub color: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGraph {
    pub indistinguishability: Vec<Edge>,
    pub phase: Vec<Edge>,
}

pub fn state_graph(p: &StateParams, tol: &Tolerances) -> StateGraph {
    let mut g = StateGraph { indistinguishability: Vec::new(), phase: Vec::new() };
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        let j = p.indistinguishability(a, b);
        if j <= tol.zero {
            continue;
        }
        let color = if (j - 1.0).abs() <= tol.zero { "black" } else { PALETTE[k] };
        g.indistinguishability.push(Edge { from: a, to: b, weight: j, color });
        let phi = p.phase(a, b);
        let (from, to, weight) = if phi >= 0.0 { (a, b, phi) } else { (b, a, -phi) };
        g.phase.push(Edge { from, to, weight, color });
    }
    g
}

pub fn export_graph(p: &StateParams) -> String {
    to_dot(&state_graph(p, &Tolerances::default()))
}

pub fn to_dot(g: &StateGraph) -> String {
    let mut out = String::from("digraph state {\n");
    let mut cluster = |name: &str, prefix: &str, edges: &[Edge], directed: bool| {
        writeln!(out, "  subgraph cluster_{name} {{").unwrap();
        writeln!(out, "    label=\"{name}\";").unwrap();
        for e in Emission::ALL {
            writeln!(out, "    {prefix}_{e} [label=\"{e}\"];").unwrap();
        }
        for edge in edges {
            let dir = if directed { "" } else { ", dir=none" };
            writeln!(
                out,
                "    {prefix}_{} -> {prefix}_{} [label=\"{:.4}\", color=\"{}\"{dir}];",
                edge.from, edge.to, edge.weight, edge.color
            )
            .unwrap();
        }
        out.push_str("  }\n");
    };
    cluster("indistinguishability", "j", &g.indistinguishability, false);
    cluster("phase", "phi", &g.phase, true);
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::preset;
    use crate::qstate::random_state;

    #[test]
    fn bell_has_one_black_edge_per_subgraph() {
        let g = state_graph(&preset("bell").unwrap(), &Tolerances::default());
        assert_eq!(g.indistinguishability.len(), 1);
        assert_eq!(g.phase.len(), 1);
        assert_eq!(g.indistinguishability[0].color, "black");
        assert_eq!((g.indistinguishability[0].from, g.indistinguishability[0].to), (Emission::HH, Emission::VV));
        let dot = export_graph(&preset("bell").unwrap());
        assert_eq!(dot.matches("color=\"black\"").count(), 2);
    }

    #[test]
    fn maximally_mixed_has_isolated_vertices() {
        let dot = export_graph(&preset("mixed-max").unwrap());
        assert!(!dot.contains("->"));
        assert_eq!(dot.matches("[label=\"HH\"]").count(), 2);
    }

    #[test]
    fn full_rank_state_has_six_edges_each() {
        let g = state_graph(&random_state(3), &Tolerances::default());
        assert_eq!(g.indistinguishability.len(), 6);
        assert_eq!(g.phase.len(), 6);
        assert!(g.phase.iter().all(|e| e.weight >= 0.0));
    }

    #[test]
    fn negated_phase_reverses_arrow() {
        let p = preset("worked").unwrap();
        let g = state_graph(&p, &Tolerances::default());
        // φ(HH,VV) = −3π/4, so the arrow runs VV -> HH.
        assert_eq!((g.phase[0].from, g.phase[0].to), (Emission::VV, Emission::HH));
        let q = p.clone().with_coherence(
            Emission::HH,
            Emission::VV,
            p.indistinguishability(Emission::HH, Emission::VV),
            3.0 * std::f64::consts::PI / 4.0,
        );
        let h = state_graph(&q, &Tolerances::default());
        assert_eq!((h.phase[0].from, h.phase[0].to), (Emission::HH, Emission::VV));
        assert_ne!(g.phase[0].color, "black");
        assert_eq!(g.phase[0].color, g.indistinguishability[0].color);
    }
}
