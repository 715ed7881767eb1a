use std::fmt::Write as _;

use thiserror::Error;

use super::{GraphError, WeightedGraph};

#[derive(Debug, Error, PartialEq)]
pub enum GraphParseError {
    #[error("missing \"n m\" header")]
    Header,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("header declares {declared} edges, found {found}")]
    EdgeCount { declared: usize, found: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `n m` header, then one `u v w` line per edge. Weights use the shortest
/// decimal form that round-trips exactly.
pub fn format_graph(graph: &WeightedGraph) -> String {
    let mut out = format!("{} {}\n", graph.node_count(), graph.edge_count());
    for (u, v, w) in graph.edges() {
        writeln!(out, "{u} {v} {w}").expect("writing to a String");
    }
    out
}

pub fn parse_graph(text: &str) -> Result<WeightedGraph, GraphParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or(GraphParseError::Header)?;
    let mut head = header.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(n)), Some(Ok(m)), None) = (head.next(), head.next(), head.next()) else {
        return Err(GraphParseError::Header);
    };
    let mut graph = WeightedGraph::empty(n)?;
    let mut found = 0;
    for (line, text) in lines {
        let bad = |message: &str| GraphParseError::Line {
            line,
            message: message.to_string(),
        };
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad("expected \"u v w\""));
        }
        let u = parts[0].parse().map_err(|_| bad("bad node index"))?;
        let v = parts[1].parse().map_err(|_| bad("bad node index"))?;
        let w: f64 = parts[2].parse().map_err(|_| bad("bad weight"))?;
        graph.add_edge(u, v, w)?;
        found += 1;
    }
    if found != m {
        return Err(GraphParseError::EdgeCount { declared: m, found });
    }
    Ok(graph)
}

/// Several graphs, separated by blank lines.
pub fn format_graphs(graphs: &[WeightedGraph]) -> String {
    let parts: Vec<String> = graphs.iter().map(format_graph).collect();
    parts.join("\n")
}

pub fn parse_graphs(text: &str) -> Result<Vec<WeightedGraph>, GraphParseError> {
    let mut graphs = Vec::new();
    let mut block = String::new();
    let mut offset = 0;
    for (i, line) in text.lines().chain(std::iter::once("")).enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                graphs.push(parse_graph(&block).map_err(|e| match e {
                    GraphParseError::Line { line, message } => GraphParseError::Line {
                        line: line + offset,
                        message,
                    },
                    other => other,
                })?);
                block.clear();
            }
            offset = i + 1;
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    Ok(graphs)
}

pub fn format_tour(nodes: &[usize]) -> String {
    let parts: Vec<String> = nodes.iter().map(usize::to_string).collect();
    parts.join(" ")
}

pub fn parse_tour(text: &str) -> Result<Vec<usize>, std::num::ParseIntError> {
    text.split_whitespace().map(str::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsp::{generate_chord_graph, generate_complete_graph};

    #[test]
    fn graphs_round_trip_exactly() {
        for seed in 0..20 {
            for g in [generate_complete_graph(7, seed), generate_chord_graph(9, seed)] {
                assert_eq!(parse_graph(&format_graph(&g)).unwrap(), g);
            }
        }
    }

    #[test]
    fn graph_lists_round_trip() {
        let gs: Vec<_> = (0..5).map(|s| generate_chord_graph(6 + s as usize, s)).collect();
        assert_eq!(parse_graphs(&format_graphs(&gs)).unwrap(), gs);
        assert!(parse_graphs("").unwrap().is_empty());
        match parse_graphs("2 1\n0 1 0.5\n\n2 1\n0 x 1\n") {
            Err(GraphParseError::Line { line: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tours_round_trip() {
        let t = vec![0, 4, 2, 1, 3];
        assert_eq!(format_tour(&t), "0 4 2 1 3");
        assert_eq!(parse_tour(&format_tour(&t)).unwrap(), t);
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(parse_graph(""), Err(GraphParseError::Header));
        assert_eq!(parse_graph("3\n"), Err(GraphParseError::Header));
        assert!(matches!(parse_graph("3 1\n0 1\n"), Err(GraphParseError::Line { line: 2, .. })));
        assert_eq!(
            parse_graph("3 2\n0 1 0.5\n"),
            Err(GraphParseError::EdgeCount { declared: 2, found: 1 })
        );
        assert!(matches!(parse_graph("3 1\n0 0 0.5\n"), Err(GraphParseError::Graph(GraphError::SelfLoop(0)))));
    }
}
