//! The 107 primary morphometric attributes over buildings, cells and the
//! street network, joined onto cells.

pub mod catalog;
pub mod distribution;
pub mod network;
pub mod shape;
pub mod street;

use std::collections::HashMap;

use geo::{Area, BoundingRect, Centroid, Coord, MultiPolygon};
use rayon::prelude::*;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::context::ContiguityGraph;
use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::{Building, SegItem, StreetNetwork};
use crate::io::FeatureTable;
use crate::tessellation::EtcCell;

use catalog::{catalog, Element, N_PRIMARY, SHAPE_METRICS};
use distribution::{alignment, fold90, weighted_mean, CentroidIndex};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MorphometricsConfig {
    /// Total ray length of the street profile (m).
    pub tick_len: f64,
    /// Station spacing of the street profile (m).
    pub tick_spacing: f64,
    /// Tile edge used to batch the pairwise interbuilding distances (m).
    pub pairwise_tile: f64,
}

impl Default for MorphometricsConfig {
    fn default() -> Self {
        MorphometricsConfig { tick_len: 50.0, tick_spacing: 10.0, pairwise_tile: 200.0 }
    }
}

/// Columns per element, keyed by catalog name.
#[derive(Debug, Clone, Default)]
pub struct ElementColumns {
    pub building: HashMap<String, Vec<f64>>,
    pub etc: HashMap<String, Vec<f64>>,
    pub street: HashMap<String, Vec<f64>>,
    pub node: HashMap<String, Vec<f64>>,
    /// Building id → row in the building columns.
    pub building_row: HashMap<usize, usize>,
}

fn centroid(mp: &MultiPolygon) -> Coord {
    mp.centroid().map(|p| p.0).unwrap_or(Coord { x: f64::NAN, y: f64::NAN })
}

/// Building characters for the buildings that own a cell.
fn building_columns(
    buildings: &[&Building],
    street_of: &[Option<usize>],
    network: &StreetNetwork,
    cfg: &MorphometricsConfig,
) -> HashMap<String, Vec<f64>> {
    let n = buildings.len();
    let mps: Vec<MultiPolygon> = buildings.iter().map(|b| b.as_multi()).collect();
    let mut cols: HashMap<String, Vec<f64>> = HashMap::new();
    let area: Vec<f64> = mps.iter().map(|m| m.unsigned_area()).collect();
    cols.insert("bld_area".into(), area.clone());
    cols.insert("bld_courtyard_area".into(), buildings.iter().map(|b| shape::courtyard_area(&b.footprint)).collect());
    cols.insert("bld_courtyard_index".into(), buildings.iter().map(|b| shape::courtyard_index(&b.footprint)).collect());
    let shapes: Vec<shape::ShapeRow> = mps.par_iter().map(shape::shape_metrics).collect();
    for (k, m) in SHAPE_METRICS.iter().enumerate() {
        cols.insert(format!("bld_{m}"), shapes.iter().map(|s| s[k]).collect());
    }

    // touching structure
    let segments: Vec<Vec<(Coord, Coord)>> = mps.iter().map(geom::boundary_segments).collect();
    let bboxes: Vec<geo::Rect> = mps.iter().map(|m| m.bounding_rect().expect("footprint has extent")).collect();
    let touching = distribution::touching_pairs(&segments, &bboxes, geom::TOUCH_TOL);
    let labels = distribution::component_labels(n, &touching);
    let mut shared = vec![0.0; n];
    for &(a, b) in &touching {
        let l = geom::shared_boundary_length(&mps[a], &mps[b], geom::TOUCH_TOL);
        shared[a] += l;
        shared[b] += l;
    }
    cols.insert("bld_shared_walls".into(), shared);
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let mut comp_keys: Vec<usize> = members.keys().copied().collect();
    comp_keys.sort_unstable();
    let comp_perim: HashMap<usize, f64> = comp_keys
        .par_iter()
        .map(|k| {
            let m = &members[k];
            let p = if m.len() == 1 {
                geom::perimeter(&mps[m[0]])
            } else {
                let u = geo::unary_union(m.iter().map(|&i| &mps[i]));
                geom::perimeter(&u)
            };
            (*k, p)
        })
        .collect();
    cols.insert("bld_perimeter_wall".into(), labels.iter().map(|l| comp_perim[l]).collect());

    // orientation and street alignment
    let orient: Vec<f64> = mps
        .iter()
        .map(|m| geom::min_rotated_rect(&shape::localize(m)).map(|r| fold90(r.azimuth)).unwrap_or(f64::NAN))
        .collect();
    let street_orient: HashMap<usize, f64> = network
        .segments
        .iter()
        .map(|s| (s.id, fold90(geom::azimuth_deg(s.line.0[0], *s.line.0.last().unwrap()))))
        .collect();
    cols.insert(
        "bld_street_alignment".into(),
        (0..n)
            .map(|i| match street_of[i].and_then(|s| street_orient.get(&s)) {
                Some(so) if !orient[i].is_nan() => alignment(orient[i], *so),
                _ => f64::NAN,
            })
            .collect(),
    );

    // neighborhoods
    let idx = CentroidIndex::new(mps.iter().map(centroid).collect());
    let bands: HashMap<u32, Vec<Vec<usize>>> = [20u32, 100, 200]
        .into_iter()
        .map(|r| (r, (0..n).into_par_iter().map(|i| idx.band(i, r as f64)).collect()))
        .collect();
    for r in [20u32, 100, 200] {
        let b = &bands[&r];
        cols.insert(format!("bld_neighbors_d{r}"), b.iter().map(|s| (s.len() - 1) as f64).collect());
        cols.insert(format!("bld_neighbor_distance_d{r}"), (0..n).map(|i| idx.mean_distance(i, &b[i])).collect());
    }
    for k in [10usize, 20, 30] {
        cols.insert(
            format!("bld_neighbor_distance_knn{k}"),
            (0..n).into_par_iter().map(|i| idx.mean_distance(i, &idx.knn(i, k))).collect(),
        );
    }
    let b200 = &bands[&200];
    cols.insert(
        "bld_adjacency".into(),
        b200.iter()
            .map(|s| {
                let mut ls: Vec<usize> = s.iter().map(|&j| labels[j]).collect();
                ls.sort_unstable();
                ls.dedup();
                ls.len() as f64 / s.len() as f64
            })
            .collect(),
    );
    cols.insert(
        "bld_interbuilding_distance".into(),
        distribution::mean_pairwise_distance(b200, &idx.centroids, &segments, cfg.pairwise_tile),
    );

    // area-weighted variants
    for m in catalog().iter().filter(|m| m.element == Element::Building) {
        let (Some(base), catalog::Scale::Dist(r)) = (&m.weighted_of, m.scale) else { continue };
        let values = cols[base].clone();
        let b = &bands[&r];
        let w: Vec<f64> = (0..n).map(|i| weighted_mean(values[i], &b[i], &values, &area)).collect();
        cols.insert(m.name.clone(), w);
    }
    cols
}

fn etc_columns(cells: &[EtcCell], building_area: &[f64], graph: &ContiguityGraph) -> HashMap<String, Vec<f64>> {
    let n = cells.len();
    let mut cols: HashMap<String, Vec<f64>> = HashMap::new();
    let area: Vec<f64> = cells.iter().map(|c| c.area()).collect();
    cols.insert("etc_area".into(), area.clone());
    let shapes: Vec<shape::ShapeRow> = cells.par_iter().map(|c| shape::shape_metrics(&c.polygon)).collect();
    for (k, m) in SHAPE_METRICS.iter().enumerate() {
        cols.insert(format!("etc_{m}"), shapes.iter().map(|s| s[k]).collect());
    }
    cols.insert(
        "etc_car".into(),
        (0..n).map(|i| if area[i] > 0.0 { building_area[i] / area[i] } else { f64::NAN }).collect(),
    );
    let hoods = graph.neighborhoods(3);
    let within = |i: usize, k: usize| -> Vec<usize> { hoods[i].iter().filter(|(_, s)| *s <= k).map(|(j, _)| *j).collect() };
    let centroids = CentroidIndex::new(cells.iter().map(|c| centroid(&c.polygon)).collect());
    for k in [1usize, 2, 3] {
        cols.insert(format!("etc_neighbors_t{k}"), (0..n).map(|i| within(i, k).len() as f64).collect());
    }
    for k in [2usize, 3] {
        cols.insert(format!("etc_neighbor_distance_t{k}"), (0..n).map(|i| centroids.mean_distance(i, &within(i, k))).collect());
    }
    cols.insert(
        "etc_granularity".into(),
        (0..n).map(|i| area[i] + within(i, 1).iter().map(|&j| area[j]).sum::<f64>()).collect(),
    );
    for m in catalog().iter().filter(|m| m.element == Element::Etc) {
        let (Some(base), catalog::Scale::Topo(k)) = (&m.weighted_of, m.scale) else { continue };
        let values = cols[base].clone();
        let w: Vec<f64> = (0..n)
            .map(|i| {
                let mut members = within(i, k as usize);
                members.push(i);
                weighted_mean(values[i], &members, &values, &area)
            })
            .collect();
        cols.insert(m.name.clone(), w);
    }
    cols
}

fn street_columns(network: &StreetNetwork, buildings: &[&Building], cfg: &MorphometricsConfig) -> HashMap<String, Vec<f64>> {
    let edges: RTree<SegItem> = RTree::bulk_load(
        buildings
            .iter()
            .enumerate()
            .flat_map(|(i, b)| geom::boundary_segments(&b.as_multi()).into_iter().map(move |(a, c)| SegItem::new(a, c, i)))
            .collect(),
    );
    let profiles: Vec<street::Profile> = network
        .segments
        .par_iter()
        .map(|s| street::street_profile(&s.line, &edges, cfg.tick_len, cfg.tick_spacing))
        .collect();
    let mut cols = HashMap::new();
    cols.insert("str_length".into(), network.segments.iter().map(|s| s.length_m()).collect());
    cols.insert("str_linearity".into(), network.segments.iter().map(|s| street::linearity(&s.line)).collect());
    cols.insert("str_width".into(), profiles.iter().map(|p| p.width).collect());
    cols.insert("str_width_deviation".into(), profiles.iter().map(|p| p.width_deviation).collect());
    cols.insert("str_openness".into(), profiles.iter().map(|p| p.openness).collect());
    cols
}

fn node_columns(network: &StreetNetwork) -> HashMap<String, Vec<f64>> {
    let g = network::Graph::from_network(network);
    let mut cols = HashMap::new();
    cols.insert("node_degree".into(), (0..g.n).map(|v| g.degree(v) as f64).collect());
    cols.insert("node_mean_distance".into(), (0..g.n).map(|v| network::mean_node_distance(&g, v)).collect());
    cols.insert("node_squares_clustering".into(), network::squares_clustering(&g));
    for r in [5u32, 400] {
        let sub: Vec<network::SubgraphMetrics> = (0..g.n).into_par_iter().map(|v| network::subgraph_metrics(&g, v, r as f64)).collect();
        let mut put = |name: &str, f: fn(&network::SubgraphMetrics) -> f64| {
            cols.insert(format!("{name}_r{r}"), sub.iter().map(f).collect::<Vec<f64>>());
        };
        put("node_mean_degree", |m| m.mean_degree);
        put("node_density", |m| m.density);
        put("node_edge_node_ratio", |m| m.edge_node_ratio);
        put("node_culdesac_length", |m| m.culdesac_length);
        put("node_cyclomatic", |m| m.cyclomatic);
        put("node_gamma", |m| m.gamma);
        put("node_meshedness", |m| m.meshedness);
    }
    cols
}

/// Computes every primary character per element.
pub fn compute_columns(
    buildings: &[Building],
    cells: &[EtcCell],
    network: &StreetNetwork,
    graph: &ContiguityGraph,
    cfg: &MorphometricsConfig,
) -> Result<ElementColumns> {
    if graph.len() != cells.len() {
        return Err(Error::Data(format!("contiguity graph has {} nodes for {} cells", graph.len(), cells.len())));
    }
    let by_id: HashMap<usize, &Building> = buildings.iter().map(|b| (b.id, b)).collect();
    let mut owners: Vec<(usize, Option<usize>)> = cells.iter().map(|c| (c.building_id, c.nearest_street_id)).collect();
    owners.sort_unstable();
    owners.dedup_by_key(|o| o.0);
    let mut bs = Vec::with_capacity(owners.len());
    let mut street_of = Vec::with_capacity(owners.len());
    let mut building_row = HashMap::new();
    for (bid, sid) in owners {
        let b = by_id.get(&bid).ok_or_else(|| Error::Data(format!("cell refers to unknown building {bid}")))?;
        building_row.insert(bid, bs.len());
        bs.push(*b);
        street_of.push(sid);
    }
    let building = building_columns(&bs, &street_of, network, cfg);
    let b_area: Vec<f64> = cells.iter().map(|c| building["bld_area"][building_row[&c.building_id]]).collect();
    let etc = etc_columns(cells, &b_area, graph);
    let street = street_columns(network, &bs, cfg);
    let node = node_columns(network);
    Ok(ElementColumns { building, etc, street, node, building_row })
}

/// Joins element columns onto cells in catalog order: building characters
/// through the parent building, street characters through the nearest
/// street, node characters through the nearest node.
pub fn assemble_primary(cells: &[EtcCell], cols: &ElementColumns) -> Result<FeatureTable> {
    let cat = catalog();
    let names: Vec<String> = cat.iter().map(|m| m.name.clone()).collect();
    let mut sources: Vec<(&[f64], Element)> = Vec::with_capacity(cat.len());
    for m in cat {
        let map = match m.element {
            Element::Building => &cols.building,
            Element::Etc => &cols.etc,
            Element::Street => &cols.street,
            Element::Node => &cols.node,
        };
        let v = map.get(&m.name).ok_or_else(|| Error::Data(format!("metric `{}` was not computed", m.name)))?;
        sources.push((v.as_slice(), m.element));
    }
    if sources.len() != N_PRIMARY {
        return Err(Error::Data(format!("expected {N_PRIMARY} primary columns, found {}", sources.len())));
    }
    let mut table = FeatureTable::new("cell_id", names);
    let mut row = vec![0.0; N_PRIMARY];
    for (ci, c) in cells.iter().enumerate() {
        let brow = cols.building_row.get(&c.building_id).copied();
        for (k, (v, el)) in sources.iter().enumerate() {
            let at = match el {
                Element::Building => brow,
                Element::Etc => Some(ci),
                Element::Street => c.nearest_street_id,
                Element::Node => c.nearest_node_id,
            };
            row[k] = at.and_then(|i| v.get(i).copied()).unwrap_or(f64::NAN);
        }
        table.push_row(c.id as u64, &row);
    }
    Ok(table)
}

/// Computes and assembles the primary matrix.
pub fn primary_matrix(
    buildings: &[Building],
    cells: &[EtcCell],
    network: &StreetNetwork,
    graph: &ContiguityGraph,
    cfg: &MorphometricsConfig,
) -> Result<FeatureTable> {
    let cols = compute_columns(buildings, cells, network, graph, cfg)?;
    assemble_primary(cells, &cols)
}
