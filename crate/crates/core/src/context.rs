//! Queen contiguity between cells and the percentile expansion of primary
//! attributes over topological neighborhoods.

use geo::{Coord, MultiPolygon};
use rayon::prelude::*;
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::io::FeatureTable;
use crate::morphometrics::catalog::N_PRIMARY;

/// Boundaries closer than this are treated as touching (m). Covers the
/// rounding that boolean clipping applies to shared cell edges.
pub const CONTIGUITY_TOL: f64 = 1e-4;

pub const N_CONTEXT: usize = 3 * N_PRIMARY;

/// Undirected queen-contiguity graph; node `i` is the `i`-th cell.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContiguityGraph {
    pub adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Copy)]
struct Edge {
    a: Coord,
    b: Coord,
    owner: usize,
}

impl RTreeObject for Edge {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        AABB::from_corners([self.a.x.min(self.b.x), self.a.y.min(self.b.y)], [self.a.x.max(self.b.x), self.a.y.max(self.b.y)])
    }
}

impl ContiguityGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    /// Cells within `k` steps of `i` (excluding `i`), each with its step count.
    pub fn within_steps(&self, i: usize, k: usize) -> Vec<(usize, usize)> {
        let mut seen = vec![false; self.len()];
        seen[i] = true;
        let mut frontier = vec![i];
        let mut out = Vec::new();
        for step in 1..=k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                        out.push((v, step));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        out.sort_unstable();
        out
    }

    /// Per cell, the neighborhood within `k` steps with step counts.
    pub fn neighborhoods(&self, k: usize) -> Vec<Vec<(usize, usize)>> {
        (0..self.len()).into_par_iter().map(|i| self.within_steps(i, k)).collect()
    }
}

/// Queen contiguity: two cells are adjacent when their boundaries share at
/// least one point (within [`CONTIGUITY_TOL`]).
pub fn build_contiguity(cells: &[MultiPolygon]) -> ContiguityGraph {
    build_contiguity_tol(cells, CONTIGUITY_TOL)
}

pub fn build_contiguity_tol(cells: &[MultiPolygon], tol: f64) -> ContiguityGraph {
    let edges: Vec<Edge> = cells
        .iter()
        .enumerate()
        .flat_map(|(owner, mp)| geom::boundary_segments(mp).into_iter().map(move |(a, b)| Edge { a, b, owner }))
        .collect();
    let tree = RTree::bulk_load(edges.clone());
    let mut pairs: Vec<(usize, usize)> = edges
        .par_iter()
        .flat_map_iter(|e| {
            let env = e.envelope();
            let (lo, hi) = (env.lower(), env.upper());
            let q = AABB::from_corners([lo[0] - tol, lo[1] - tol], [hi[0] + tol, hi[1] + tol]);
            tree.locate_in_envelope_intersecting(&q)
                .filter(|f| f.owner > e.owner && geom::segment_segment_distance(e.a, e.b, f.a, f.b) <= tol)
                .map(|f| (e.owner, f.owner))
                .collect::<Vec<_>>()
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut adjacency = vec![Vec::new(); cells.len()];
    for (a, b) in pairs {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for a in adjacency.iter_mut() {
        a.sort_unstable();
    }
    ContiguityGraph { adjacency }
}

/// Percentile of sorted values with linear interpolation between closest
/// ranks (position `q/100 · (n − 1)`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ContextConfig {
    pub steps: usize,
    pub percentiles: Vec<f64>,
    /// Leave the focal cell out of its own neighborhood.
    pub exclude_focal: bool,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { steps: 3, percentiles: vec![25.0, 50.0, 75.0], exclude_focal: false }
    }
}

fn pct_label(q: f64) -> String {
    if q.fract() == 0.0 {
        format!("p{}", q as i64)
    } else {
        format!("p{q}")
    }
}

/// Expands every primary column into its percentiles over the cells within
/// `steps` contiguity steps. Missing values are ignored; a neighborhood with
/// no values yields a missing value. Primary columns are not carried over.
pub fn contextualize(primary: &FeatureTable, graph: &ContiguityGraph, cfg: &ContextConfig) -> Result<FeatureTable> {
    if graph.len() != primary.n_rows() {
        return Err(Error::Data(format!(
            "contiguity graph has {} cells but the primary matrix has {} rows",
            graph.len(),
            primary.n_rows()
        )));
    }
    let d = primary.n_cols();
    let mut columns = Vec::with_capacity(d * cfg.percentiles.len());
    for c in &primary.columns {
        for q in &cfg.percentiles {
            columns.push(format!("{c}_{}", pct_label(*q)));
        }
    }
    let rows: Vec<Vec<f64>> = (0..primary.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut members: Vec<usize> = graph.within_steps(i, cfg.steps).into_iter().map(|(j, _)| j).collect();
            if !cfg.exclude_focal {
                members.push(i);
            }
            let mut out = Vec::with_capacity(d * cfg.percentiles.len());
            let mut vals = Vec::with_capacity(members.len());
            for c in 0..d {
                vals.clear();
                vals.extend(members.iter().map(|&j| primary.get(j, c)).filter(|v| !v.is_nan()));
                vals.sort_by(f64::total_cmp);
                for q in &cfg.percentiles {
                    out.push(percentile_sorted(&vals, *q));
                }
            }
            out
        })
        .collect();
    let mut table = FeatureTable::new(primary.id_column.clone(), columns);
    for (i, r) in rows.iter().enumerate() {
        table.push_row(primary.row_ids[i], r);
    }
    Ok(table)
}

/// [`contextualize`] with the column-count guard for the full catalog.
pub fn contextualize_primary(primary: &FeatureTable, graph: &ContiguityGraph, cfg: &ContextConfig) -> Result<FeatureTable> {
    if primary.n_cols() != N_PRIMARY {
        return Err(Error::Data(format!("expected {N_PRIMARY} primary columns, found {}", primary.n_cols())));
    }
    let t = contextualize(primary, graph, cfg)?;
    if cfg.percentiles.len() == 3 && t.n_cols() != N_CONTEXT {
        return Err(Error::Data(format!("expected {N_CONTEXT} contextual columns, found {}", t.n_cols())));
    }
    Ok(t)
}
