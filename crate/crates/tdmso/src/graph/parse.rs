//! Line-based text format for graphs.
//!
//! ```text
//! graph 3 2
//! node 1 label=red w=2
//! node 2
//! node 3 label=red,leaf
//! edge 1 2 w=-1
//! edge 2 3 label=bridge
//! ```
//!
//! The header declares the node and edge counts; `label=` takes a
//! comma-separated list of names and `w=` an integer weight. Blank lines and
//! `#` comments are ignored. Errors carry the 1-based line number.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Graph, GraphError, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Graph { line: usize, source: GraphError },
    #[error("header declares {declared} {what}s but the file defines {found}")]
    CountMismatch { what: &'static str, declared: usize, found: usize },
    #[error("missing `graph <n> <m>` header")]
    MissingHeader,
}

fn syntax(line: usize, msg: impl Into<String>) -> GraphFileError {
    GraphFileError::Syntax { line, msg: msg.into() }
}

fn parse_id(tok: &str, line: usize) -> Result<NodeId, GraphFileError> {
    let raw: u32 = tok
        .parse()
        .map_err(|_| syntax(line, format!("`{tok}` is not a node id")))?;
    Ok(NodeId(raw))
}

/// Parses `label=...` / `w=...` trailers shared by node and edge lines.
fn parse_attrs<'a>(
    toks: &[&'a str],
    line: usize,
) -> Result<(Vec<&'a str>, Option<i64>), GraphFileError> {
    let mut labels = Vec::new();
    let mut weight = None;
    for tok in toks {
        if let Some(list) = tok.strip_prefix("label=") {
            for name in list.split(',') {
                if name.is_empty() {
                    return Err(syntax(line, "empty label name"));
                }
                labels.push(name);
            }
        } else if let Some(raw) = tok.strip_prefix("w=") {
            let w: i64 = raw
                .parse()
                .map_err(|_| syntax(line, format!("`{raw}` is not an integer weight")))?;
            if weight.replace(w).is_some() {
                return Err(syntax(line, "duplicate w= attribute"));
            }
        } else {
            return Err(syntax(line, format!("unexpected token `{tok}`")));
        }
    }
    Ok((labels, weight))
}

/// Parses the text format above. Nodes must be declared before edges that
/// use them; duplicates and self-loops are rejected with their line number.
pub fn parse_graph(text: &str) -> Result<Graph, GraphFileError> {
    let mut g = Graph::new();
    let mut header: Option<(usize, usize)> = None;
    let mut edges_seen = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0] {
            "graph" => {
                if header.is_some() {
                    return Err(syntax(line, "duplicate header"));
                }
                if toks.len() != 3 {
                    return Err(syntax(line, "expected `graph <n> <m>`"));
                }
                let n = toks[1]
                    .parse()
                    .map_err(|_| syntax(line, format!("`{}` is not a count", toks[1])))?;
                let m = toks[2]
                    .parse()
                    .map_err(|_| syntax(line, format!("`{}` is not a count", toks[2])))?;
                header = Some((n, m));
            }
            "node" => {
                if header.is_none() {
                    return Err(GraphFileError::MissingHeader);
                }
                if toks.len() < 2 {
                    return Err(syntax(line, "expected `node <id> ...`"));
                }
                let v = parse_id(toks[1], line)?;
                let (labels, weight) = parse_attrs(&toks[2..], line)?;
                let wrap = |source| GraphFileError::Graph { line, source };
                g.add_node(v).map_err(wrap)?;
                for name in labels {
                    g.add_node_label(v, name).map_err(wrap)?;
                }
                if let Some(w) = weight {
                    g.set_node_weight(v, w).map_err(wrap)?;
                }
            }
            "edge" => {
                if header.is_none() {
                    return Err(GraphFileError::MissingHeader);
                }
                if toks.len() < 3 {
                    return Err(syntax(line, "expected `edge <u> <v> ...`"));
                }
                let u = parse_id(toks[1], line)?;
                let v = parse_id(toks[2], line)?;
                let (labels, weight) = parse_attrs(&toks[3..], line)?;
                let wrap = |source| GraphFileError::Graph { line, source };
                g.add_edge(u, v).map_err(wrap)?;
                for name in labels {
                    g.add_edge_label(u, v, name).map_err(wrap)?;
                }
                if let Some(w) = weight {
                    g.set_edge_weight(u, v, w).map_err(wrap)?;
                }
                edges_seen += 1;
            }
            other => return Err(syntax(line, format!("unknown directive `{other}`"))),
        }
    }
    let (n, m) = header.ok_or(GraphFileError::MissingHeader)?;
    if g.n() != n {
        return Err(GraphFileError::CountMismatch { what: "node", declared: n, found: g.n() });
    }
    if edges_seen != m {
        return Err(GraphFileError::CountMismatch { what: "edge", declared: m, found: edges_seen });
    }
    Ok(g)
}

/// Renders a graph in the same text format; `parse_graph` inverts it.
pub fn write_graph(g: &Graph) -> String {
    let mut out = String::new();
    writeln!(out, "graph {} {}", g.n(), g.m()).unwrap();
    for v in g.nodes() {
        write!(out, "node {v}").unwrap();
        let labels: Vec<&str> = g.node_labels(v).collect();
        if !labels.is_empty() {
            write!(out, " label={}", labels.join(",")).unwrap();
        }
        if g.node_weight(v) != 1 {
            write!(out, " w={}", g.node_weight(v)).unwrap();
        }
        writeln!(out).unwrap();
    }
    for (u, v) in g.edges() {
        write!(out, "edge {u} {v}").unwrap();
        let labels: Vec<&str> = g.edge_labels(u, v).collect();
        if !labels.is_empty() {
            write!(out, " label={}", labels.join(",")).unwrap();
        }
        if g.edge_weight(u, v) != 1 {
            write!(out, " w={}", g.edge_weight(u, v)).unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_doc_example() {
        let text = "graph 3 2\nnode 1 label=red w=2\nnode 2\nnode 3 label=red,leaf\nedge 1 2 w=-1\nedge 2 3 label=bridge\n";
        let g = parse_graph(text).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.m(), 2);
        assert_eq!(g.node_weight(NodeId(1)), 2);
        assert_eq!(g.edge_weight(NodeId(1), NodeId(2)), -1);
        assert!(g.node_has_label(NodeId(3), "leaf"));
        assert!(g.edge_has_label(NodeId(2), NodeId(3), "bridge"));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# a triangle\ngraph 3 3\n\nnode 1\nnode 2\nnode 3 # last one\nedge 1 2\nedge 2 3\nedge 1 3\n";
        assert_eq!(parse_graph(text).unwrap().m(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = "graph 2 0\nnode 1\nnode 1\n";
        assert_eq!(
            parse_graph(dup),
            Err(GraphFileError::Graph { line: 3, source: GraphError::DuplicateNode(NodeId(1)) })
        );
        let loop_ = "graph 1 1\nnode 1\nedge 1 1\n";
        assert!(matches!(
            parse_graph(loop_),
            Err(GraphFileError::Graph { line: 3, source: GraphError::SelfLoop(_) })
        ));
        let bad = "graph 1 0\nnode zero\n";
        assert!(matches!(parse_graph(bad), Err(GraphFileError::Syntax { line: 2, .. })));
    }

    #[test]
    fn header_counts_are_enforced() {
        assert_eq!(
            parse_graph("graph 2 0\nnode 1\n"),
            Err(GraphFileError::CountMismatch { what: "node", declared: 2, found: 1 })
        );
        assert_eq!(
            parse_graph("graph 1 1\nnode 1\n"),
            Err(GraphFileError::CountMismatch { what: "edge", declared: 1, found: 0 })
        );
        assert_eq!(parse_graph("node 1\n"), Err(GraphFileError::MissingHeader));
    }

    #[test]
    fn round_trips() {
        let text = "graph 4 3\nnode 1 w=-5\nnode 2 label=a,b\nnode 3\nnode 4\nedge 1 2\nedge 2 3 label=x w=9\nedge 3 4\n";
        let g = parse_graph(text).unwrap();
        let again = parse_graph(&write_graph(&g)).unwrap();
        assert_eq!(g, again);
    }
}
