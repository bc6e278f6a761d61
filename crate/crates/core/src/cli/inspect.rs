use std::fmt;

use crate::error::{Error, Result};
use crate::graphgen::{build_filtered, OptimalAdjacency};
use crate::model::ModelState;
use crate::preprocess::{pearson_correlation, BoldMatrix};

pub const EDGES_HEADER: &str = "source,target,weight";
pub const DEGREES_HEADER: &str = "graph,node_id,in_degree";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Filtered,
    Optimal,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Filtered => "filtered",
            GraphKind::Optimal => "optimal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Both graphs of one subject: truncated edge lists and full-graph degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectionReport {
    pub filtered_edges: Vec<Edge>,
    pub optimal_edges: Vec<Edge>,
    /// Number of edges present before truncation.
    pub filtered_total: usize,
    pub optimal_total: usize,
    pub filtered_degrees: Vec<usize>,
    pub optimal_degrees: Vec<usize>,
}

/// `ceil(p% · present)`.
pub fn top_count(present: usize, top_percent: f64) -> usize {
    let exact = top_percent * present as f64 / 100.0;
    // absorb representation error such as 2% of 50 = 1.0000000000000002
    ((exact - 1e-9).ceil().max(0.0) as usize).min(present)
}

/// Sorts by weight descending, ties by `(source, target)`, and keeps the top
/// `top_percent` percent.
fn truncate(mut edges: Vec<Edge>, top_percent: f64) -> Vec<Edge> {
    edges.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    });
    edges.truncate(top_count(edges.len(), top_percent));
    edges
}

/// Builds both graphs for `subject`.
///
/// Filtered edges are undirected, emitted once with `source < target` and
/// weighted by correlation; a node's degree counts its incident edges.
/// Optimal edges come from the hardened noise-free sample, are directed
/// (`A_ij = 1` is the edge `i → j`), weighted by the noise-free relaxed
/// probability; in-degree of `j` counts edges `i → j`.
pub fn inspect(state: &ModelState, subject: &BoldMatrix, top_percent: f64) -> Result<InspectionReport> {
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::Validation(format!(
            "top-percent must lie in (0, 100], got {top_percent}"
        )));
    }
    let input = state.prepare(subject)?;
    let n = state.config.n_rois;
    let corr = pearson_correlation(subject)?;
    let filtered = build_filtered(&corr, state.config.threshold_c)?;
    let theta = state.edge_probabilities(&input.series)?;
    let optimal = OptimalAdjacency::noise_free(&theta, state.config.tau)?;

    let mut f_edges = Vec::new();
    let mut f_deg = vec![0; n];
    let mut o_edges = Vec::new();
    let mut o_deg = vec![0; n];
    for i in 0..n {
        for j in 0..n {
            if i < j && filtered.values[(i, j)] == 1.0 {
                f_edges.push(Edge {
                    source: i,
                    target: j,
                    weight: corr.values()[(i, j)],
                });
                f_deg[i] += 1;
                f_deg[j] += 1;
            }
            if optimal.hard[(i, j)] == 1.0 {
                o_edges.push(Edge {
                    source: i,
                    target: j,
                    weight: optimal.soft[(i, j)],
                });
                o_deg[j] += 1;
            }
        }
    }
    Ok(InspectionReport {
        filtered_total: f_edges.len(),
        optimal_total: o_edges.len(),
        filtered_edges: truncate(f_edges, top_percent),
        optimal_edges: truncate(o_edges, top_percent),
        filtered_degrees: f_deg,
        optimal_degrees: o_deg,
    })
}

pub fn edges_csv(edges: &[Edge]) -> String {
    let mut out = format!("{EDGES_HEADER}\n");
    for e in edges {
        out.push_str(&format!("{},{},{}\n", e.source, e.target, e.weight));
    }
    out
}

pub fn degrees_csv(report: &InspectionReport) -> String {
    let mut out = format!("{DEGREES_HEADER}\n");
    for (kind, degs) in [
        (GraphKind::Filtered, &report.filtered_degrees),
        (GraphKind::Optimal, &report.optimal_degrees),
    ] {
        for (node, d) in degs.iter().enumerate() {
            out.push_str(&format!("{kind},{node},{d}\n"));
        }
    }
    out
}

pub fn parse_edges_csv(text: &str) -> Result<Vec<Edge>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>().join(",") != EDGES_HEADER {
        return Err(Error::Validation(format!("edge list must start with `{EDGES_HEADER}`")));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let bad = || Error::Validation(format!("malformed edge row `{}`", rec.iter().collect::<Vec<_>>().join(",")));
            Ok(Edge {
                source: rec[0].parse().map_err(|_| bad())?,
                target: rec[1].parse().map_err(|_| bad())?,
                weight: rec[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Rows of `degrees.csv` as `(graph, node_id, in_degree)`.
pub fn parse_degrees_csv(text: &str) -> Result<Vec<(String, usize, usize)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>().join(",") != DEGREES_HEADER {
        return Err(Error::Validation(format!("degree table must start with `{DEGREES_HEADER}`")));
    }
    reader
        .deserialize::<(String, usize, usize)>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_count_rounds_up() {
        assert_eq!(top_count(50, 2.0), 1);
        assert_eq!(top_count(51, 2.0), 2);
        assert_eq!(top_count(120, 2.0), 3);
        assert_eq!(top_count(0, 2.0), 0);
        assert_eq!(top_count(7, 100.0), 7);
        assert_eq!(top_count(1, 0.01), 1);
    }

    #[test]
    fn truncation_breaks_ties_by_endpoints() {
        let e = |s, t, w| Edge {
            source: s,
            target: t,
            weight: w,
        };
        let kept = truncate(vec![e(2, 1, 0.5), e(0, 3, 0.9), e(1, 0, 0.5), e(0, 2, 0.5)], 75.0);
        assert_eq!(kept, vec![e(0, 3, 0.9), e(0, 2, 0.5), e(1, 0, 0.5)]);
    }

    #[test]
    fn csv_round_trip() {
        let edges = vec![
            Edge {
                source: 0,
                target: 4,
                weight: 0.612_345_678_901_234_5,
            },
            Edge {
                source: 3,
                target: 1,
                weight: 1.0,
            },
        ];
        assert_eq!(parse_edges_csv(&edges_csv(&edges)).unwrap(), edges);
        let report = InspectionReport {
            filtered_edges: vec![],
            optimal_edges: vec![],
            filtered_total: 0,
            optimal_total: 0,
            filtered_degrees: vec![1, 0],
            optimal_degrees: vec![2, 3],
        };
        let rows = parse_degrees_csv(&degrees_csv(&report)).unwrap();
        assert_eq!(rows[3], ("optimal".to_string(), 1, 3));
        assert_eq!(rows.len(), 4);
    }
}
