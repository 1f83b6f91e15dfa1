//! Links from cells to the nearest street segment, network node and edge.

use std::collections::HashMap;

use geo::{BoundingRect, Coord, MultiPolygon};
use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::{RTree, AABB};

use super::EtcCell;
use crate::geom;
use crate::ingest::{Building, SegItem, StreetNetwork};

pub type NodePoint = GeomWithData<[f64; 2], usize>;

/// Nearest element by distance; candidates within `tol` of the minimum
/// resolve to the lowest id.
fn pick(cands: Vec<(usize, f64)>, tol: f64) -> Option<usize> {
    let dmin = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    cands.iter().filter(|c| c.1 <= dmin + tol).map(|c| c.0).min()
}

fn search_box(fp: &MultiPolygon, pad: f64) -> AABB<[f64; 2]> {
    let r = fp.bounding_rect().expect("non-empty footprint");
    AABB::from_corners([r.min().x - pad, r.min().y - pad], [r.max().x + pad, r.max().y + pad])
}

fn footprint_segment_distance(fp: &MultiPolygon, edges: &[(Coord, Coord)], a: Coord, b: Coord) -> f64 {
    if geom::point_in_multipolygon(a, fp) {
        return 0.0;
    }
    edges
        .iter()
        .map(|(p, q)| geom::segment_segment_distance(*p, *q, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Nearest street to a footprint (edge-to-edge distance).
pub fn nearest_street(fp: &MultiPolygon, tree: &RTree<SegItem>, tol: f64) -> Option<usize> {
    let c = *geom::all_coords(fp).first()?;
    let edges = geom::boundary_segments(fp);
    let seed = tree.nearest_neighbor(&[c.x, c.y])?;
    let upper = footprint_segment_distance(fp, &edges, seed.a, seed.b);
    let mut per_street: HashMap<usize, f64> = HashMap::new();
    for s in tree.locate_in_envelope_intersecting(&search_box(fp, upper + tol)) {
        let d = footprint_segment_distance(fp, &edges, s.a, s.b);
        let e = per_street.entry(s.owner).or_insert(f64::INFINITY);
        *e = e.min(d);
    }
    pick(per_street.into_iter().collect(), tol)
}

/// Nearest network node to a footprint.
pub fn nearest_node(fp: &MultiPolygon, tree: &RTree<NodePoint>, tol: f64) -> Option<usize> {
    let c = *geom::all_coords(fp).first()?;
    let seed = tree.nearest_neighbor(&[c.x, c.y])?;
    let at = |p: &NodePoint| Coord { x: p.geom()[0], y: p.geom()[1] };
    let upper = geom::multipolygon_point_distance(fp, at(seed));
    let cands = tree
        .locate_in_envelope_intersecting(&search_box(fp, upper + tol))
        .map(|p| (p.data, geom::multipolygon_point_distance(fp, at(p))))
        .collect();
    pick(cands, tol)
}

pub fn segment_tree(network: &StreetNetwork) -> RTree<SegItem> {
    RTree::bulk_load(
        network
            .segments
            .iter()
            .flat_map(|s| s.line.0.windows(2).map(move |w| SegItem::new(w[0], w[1], s.id)))
            .collect(),
    )
}

pub fn node_tree(network: &StreetNetwork) -> RTree<NodePoint> {
    RTree::bulk_load(network.nodes.iter().enumerate().map(|(i, c)| NodePoint::new([c.x, c.y], i)).collect())
}

/// Fills the street, node and edge links of every cell from its parent
/// footprint. With an empty network the links stay unset.
pub fn link_elements(cells: &mut [EtcCell], buildings: &[Building], network: &StreetNetwork, snap_tol: f64) {
    if network.segments.is_empty() {
        for c in cells.iter_mut() {
            c.nearest_street_id = None;
            c.nearest_node_id = None;
            c.nearest_edge_id = None;
        }
        return;
    }
    let seg_tree = segment_tree(network);
    let node_tree = node_tree(network);
    let by_id: HashMap<usize, &Building> = buildings.iter().map(|b| (b.id, b)).collect();
    cells.par_iter_mut().for_each(|c| {
        let fp = match by_id.get(&c.building_id) {
            Some(b) => b.as_multi(),
            None => c.polygon.clone(),
        };
        c.nearest_street_id = nearest_street(&fp, &seg_tree, snap_tol);
        c.nearest_edge_id = c.nearest_street_id;
        c.nearest_node_id = nearest_node(&fp, &node_tree, snap_tol);
    });
}
