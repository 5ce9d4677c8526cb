//! Graphviz DOT export for pooled graphs, cluster assignments and node
//! importance maps.

use std::fmt::Write;

use crate::graph::Graph;
use crate::lapool::ClusterAssignment;

/// Affinities below this are left out of overview labels and links.
pub const AFFINITY_CUTOFF: f64 = 1e-9;

fn pen_width(w: f64, max: f64) -> f64 {
    if max > 0.0 {
        1.0 + 4.0 * (w / max)
    } else {
        1.0
    }
}

fn max_edge_weight(g: &Graph) -> f64 {
    g.edges().iter().map(|&(i, j)| g.adjacency()[[i, j]]).fold(0.0, f64::max)
}

fn write_pooled(out: &mut String, pooled: &Graph, centroids: &[usize], indent: &str) {
    let max = max_edge_weight(pooled);
    for (j, c) in centroids.iter().enumerate() {
        let _ = writeln!(out, "{indent}p{j} [label=\"c{c}\", shape=doublecircle];");
    }
    for (i, j) in pooled.edges() {
        let w = pooled.adjacency()[[i, j]];
        let _ = writeln!(out, "{indent}p{i} -- p{j} [label=\"{w:.3}\", penwidth={:.3}];", pen_width(w, max));
    }
}

/// Renders a pooled graph. Pooled node `j` is drawn as cluster `centroids[j]`
/// and edge widths scale with the coarsened weights.
pub fn pooled_graph(pooled: &Graph, centroids: &[usize]) -> String {
    assert_eq!(pooled.n(), centroids.len(), "one centroid per pooled node");
    let mut out = String::from("graph pooled {\n");
    write_pooled(&mut out, pooled, centroids, "  ");
    out.push_str("}\n");
    out
}

/// Renders the input graph next to its pooled graph. Centroids are boxed and
/// bold, every input node lists its cluster affinities, and dotted links
/// connect nodes to the clusters they feed.
pub fn pooling_overview(g: &Graph, assignment: &ClusterAssignment, pooled: &Graph) -> String {
    let c = &assignment.affinity;
    assert_eq!(c.nrows(), g.n(), "affinity rows must match the input graph");
    assert_eq!(pooled.n(), assignment.num_clusters(), "one pooled node per cluster");
    let mut out = String::from("graph lapool {\n  compound=true;\n  subgraph cluster_input {\n    label=\"input\";\n");
    for v in 0..g.n() {
        let parts: Vec<String> = (0..c.ncols())
            .filter(|&j| c[[v, j]] > AFFINITY_CUTOFF)
            .map(|j| format!("c{}:{:.3}", assignment.centroids[j], c[[v, j]]))
            .collect();
        let label = if parts.is_empty() { format!("{v}") } else { format!("{v}\\n{}", parts.join(" ")) };
        let style = if assignment.centroids.contains(&v) { ", shape=box, style=bold" } else { "" };
        let _ = writeln!(out, "    n{v} [label=\"{label}\"{style}];");
    }
    let max = max_edge_weight(g);
    for (i, j) in g.edges() {
        let _ = writeln!(out, "    n{i} -- n{j} [penwidth={:.3}];", pen_width(g.adjacency()[[i, j]], max));
    }
    out.push_str("  }\n  subgraph cluster_pooled {\n    label=\"pooled\";\n");
    write_pooled(&mut out, pooled, &assignment.centroids, "    ");
    out.push_str("  }\n");
    for v in 0..g.n() {
        for j in 0..c.ncols() {
            if c[[v, j]] > AFFINITY_CUTOFF {
                let _ = writeln!(out, "  n{v} -- p{j} [style=dotted, penwidth={:.3}];", pen_width(c[[v, j]], 1.0));
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Renders node importances as grey shading, darkest for the largest
/// absolute importance. Nodes flagged in `mask` get a double outline.
pub fn attribution_map(g: &Graph, importance: &[f64], mask: Option<&[u8]>) -> String {
    assert_eq!(importance.len(), g.n(), "one importance per node");
    let max = importance.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut out = String::from("graph attribution {\n  node [style=filled];\n");
    for (v, &imp) in importance.iter().enumerate() {
        let level = if max > 0.0 { imp.abs() / max } else { 0.0 };
        let grey = (255.0 * (1.0 - level)).round() as u8;
        let font = if level > 0.5 { "white" } else { "black" };
        let outline = if mask.is_some_and(|m| m.get(v).copied().unwrap_or(0) != 0) { ", peripheries=2" } else { "" };
        let _ = writeln!(
            out,
            "  n{v} [label=\"{v}\\n{imp:.3}\", fillcolor=\"#{grey:02x}{grey:02x}{grey:02x}\", fontcolor={font}{outline}];"
        );
    }
    for (i, j) in g.edges() {
        let _ = writeln!(out, "  n{i} -- n{j};");
    }
    out.push_str("}\n");
    out
}
