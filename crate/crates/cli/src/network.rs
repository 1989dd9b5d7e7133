//! Sparse export of the per-regime networks.

use missnet::contextual::partial_correlation_matrix;
use missnet::Network;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;

/// `(row, column, value)` with `row <= column`.
pub type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeNetwork {
    pub regime: usize,
    pub mean: Vec<f64>,
    /// Diagonal plus the entries on retained edges.
    pub precision: Vec<Triplet>,
    /// Retained edges only; the diagonal is one by construction.
    pub partial_correlation: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkExport {
    pub features: Vec<String>,
    /// Edges are kept where `|partial correlation| > threshold`.
    pub threshold: f64,
    /// Whether means and precisions refer to z-scored features.
    pub standardized: bool,
    pub regimes: Vec<RegimeNetwork>,
}

fn edges(pcor: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let n = pcor.nrows();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| pcor[(i, j)].abs() > threshold)
        .collect()
}

pub fn export(features: &[String], networks: &[Network<f64>], threshold: f64, standardized: bool) -> Result<NetworkExport> {
    let regimes = networks
        .iter()
        .enumerate()
        .map(|(k, net)| {
            let p = &net.precision;
            let pcor = partial_correlation_matrix(p)?;
            let kept = edges(&pcor, threshold);
            let mut precision: Vec<Triplet> = (0..p.nrows()).map(|i| (i, i, p[(i, i)])).collect();
            precision.extend(kept.iter().map(|&(i, j)| (i, j, p[(i, j)])));
            precision.sort_by_key(|&(i, j, _)| (i, j));
            Ok(RegimeNetwork {
                regime: k,
                mean: net.mean.iter().copied().collect(),
                precision,
                partial_correlation: kept.iter().map(|&(i, j)| (i, j, pcor[(i, j)])).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkExport {
        features: features.to_vec(),
        threshold,
        standardized,
        regimes,
    })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering: one cluster per regime, edge labels are partial
/// correlations.
pub fn to_dot(export: &NetworkExport) -> String {
    let mut out = String::from("graph networks {\n  node [shape=ellipse];\n");
    for r in &export.regimes {
        out.push_str(&format!("  subgraph cluster_{} {{\n    label=\"regime {}\";\n", r.regime, r.regime));
        for name in &export.features {
            out.push_str(&format!("    {};\n", quote(&format!("{}@{}", name, r.regime))));
        }
        for &(i, j, v) in &r.partial_correlation {
            let a = quote(&format!("{}@{}", export.features[i], r.regime));
            let b = quote(&format!("{}@{}", export.features[j], r.regime));
            let color = if v >= 0.0 { "firebrick" } else { "steelblue" };
            out.push_str(&format!("    {a} -- {b} [label=\"{v:.3}\", color={color}];\n"));
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}
