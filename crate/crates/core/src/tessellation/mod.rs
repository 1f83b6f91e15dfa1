//! Enclosed tessellation: enclosures from barriers, one Voronoi-derived cell
//! per building inside each enclosure, and links to the street network.

mod enclosure;
mod link;

use std::collections::HashMap;

use geo::{Area, BooleanOps, BoundingRect, Buffer, Centroid, Coord, LineString, MultiPolygon, Polygon};
use rayon::prelude::*;
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

pub use enclosure::{build_enclosures, Enclosure};
pub use link::link_elements;

use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::Building;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TessellationConfig {
    /// Densification interval of footprint boundaries (m).
    pub segment_len: f64,
    /// Inward offset applied to footprints before densification (m).
    pub shrink: f64,
}

impl Default for TessellationConfig {
    fn default() -> Self {
        TessellationConfig { segment_len: 0.5, shrink: 0.4 }
    }
}

/// An enclosed tessellation cell with links to its parent building and the
/// nearest street network elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtcCell {
    pub id: usize,
    pub polygon: MultiPolygon,
    pub building_id: usize,
    pub enclosure_id: usize,
    pub nearest_street_id: Option<usize>,
    pub nearest_node_id: Option<usize>,
    pub nearest_edge_id: Option<usize>,
}

impl EtcCell {
    pub fn area(&self) -> f64 {
        self.polygon.unsigned_area()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TessellationReport {
    pub centroid_fallbacks: Vec<usize>,
    pub buildings_outside_enclosures: Vec<usize>,
    pub empty_cells: Vec<usize>,
}

#[derive(Clone, Copy)]
struct EnvItem {
    idx: usize,
    env: AABB<[f64; 2]>,
}

impl RTreeObject for EnvItem {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        self.env
    }
}

fn env_of(r: geo::Rect) -> AABB<[f64; 2]> {
    AABB::from_corners([r.min().x, r.min().y], [r.max().x, r.max().y])
}

/// Assigns each building to the enclosure holding the largest share of its footprint.
pub fn assign_buildings(buildings: &[Building], enclosures: &[Enclosure]) -> Vec<Option<usize>> {
    let tree = RTree::bulk_load(
        enclosures
            .iter()
            .filter_map(|e| e.polygon.bounding_rect().map(|r| EnvItem { idx: e.id, env: env_of(r) }))
            .collect(),
    );
    let by_id: HashMap<usize, &Enclosure> = enclosures.iter().map(|e| (e.id, e)).collect();
    buildings
        .par_iter()
        .map(|b| {
            let r = b.footprint.bounding_rect()?;
            let mut cands: Vec<usize> = tree.locate_in_envelope_intersecting(&env_of(r)).map(|e| e.idx).collect();
            cands.sort_unstable();
            // fast path: every vertex strictly inside a single enclosure
            for &c in &cands {
                let poly = &by_id[&c].polygon;
                if b.footprint.exterior().0.iter().all(|p| geom::point_in_polygon(*p, poly)) {
                    return Some(c);
                }
            }
            let mut best: Option<(f64, usize)> = None;
            for &c in &cands {
                let share = by_id[&c].polygon.intersection(&b.footprint).unsigned_area();
                if share > 0.0 && best.is_none_or(|(s, _)| share > s) {
                    best = Some((share, c));
                }
            }
            best.map(|(_, c)| c)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Generator {
    pos: Point2<f64>,
    owner: u32,
}

impl HasPosition for Generator {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

const DUMMY: u32 = u32::MAX;

/// Boundary samples of a footprint after shrinking; the centroid when the
/// shrink empties the footprint.
fn generator_points(b: &Building, cfg: &TessellationConfig, fallback: &mut bool) -> Vec<Coord> {
    let shrunk: MultiPolygon = if cfg.shrink > 0.0 { b.footprint.buffer(-cfg.shrink) } else { MultiPolygon(vec![b.footprint.clone()]) };
    let mut pts = Vec::new();
    if shrunk.unsigned_area() > 0.0 {
        for p in &shrunk.0 {
            geom::densify_ring(p.exterior(), cfg.segment_len, &mut pts);
            for h in p.interiors() {
                geom::densify_ring(h, cfg.segment_len, &mut pts);
            }
        }
    }
    if pts.is_empty() {
        *fallback = true;
        if let Some(c) = b.footprint.centroid() {
            pts.push(c.0);
        }
    }
    pts
}

/// Voronoi regions of all generator points, dissolved by owner.
fn dissolved_voronoi(gens: Vec<Generator>, n_owners: usize) -> Result<Vec<MultiPolygon>> {
    let tri: DelaunayTriangulation<Generator> =
        DelaunayTriangulation::bulk_load(gens).map_err(|e| Error::Geometry(format!("triangulation failed: {e:?}")))?;
    let mut cc: Vec<Coord> = vec![Coord { x: f64::NAN, y: f64::NAN }; tri.num_all_faces()];
    for f in tri.inner_faces() {
        let c = f.circumcenter();
        cc[f.fix().index()] = Coord { x: c.x, y: c.y };
    }
    // successor face per (owner, face)
    let mut next: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n_owners];
    for e in tri.directed_edges() {
        let ov = e.from().data().owner;
        let ow = e.to().data().owner;
        if ov == ow || ov == DUMMY {
            continue;
        }
        let left = e.face();
        let right = e.rev().face();
        if left.is_outer() || right.is_outer() {
            continue;
        }
        next[ov as usize].insert(right.fix().index(), left.fix().index());
    }
    let mut out = Vec::with_capacity(n_owners);
    for succ in next {
        let mut starts: Vec<usize> = succ.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = std::collections::HashSet::new();
        let mut shells: Vec<Vec<Coord>> = Vec::new();
        let mut holes: Vec<Vec<Coord>> = Vec::new();
        for s in starts {
            if seen.contains(&s) {
                continue;
            }
            let mut ring: Vec<Coord> = Vec::new();
            let mut f = s;
            loop {
                seen.insert(f);
                let c = cc[f];
                if ring.last() != Some(&c) {
                    ring.push(c);
                }
                match succ.get(&f) {
                    Some(&n) if n != s => f = n,
                    _ => break,
                }
            }
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                continue;
            }
            let a = geom::signed_ring_area(&ring);
            ring.push(ring[0]);
            if a > 0.0 {
                shells.push(ring);
            } else if a < 0.0 {
                holes.push(ring);
            }
        }
        let mut polys: Vec<Polygon> = shells.into_iter().map(|s| Polygon::new(LineString::from(s), vec![])).collect();
        for h in holes {
            let probe = h[0];
            if let Some(p) = polys.iter_mut().find(|p| geom::point_in_polygon(probe, p) || p.exterior().0.contains(&probe)) {
                p.interiors_push(LineString::from(h));
            }
        }
        out.push(MultiPolygon(polys));
    }
    Ok(out)
}

fn tessellate_enclosure(
    enclosure: &Enclosure,
    members: &[&Building],
    cfg: &TessellationConfig,
) -> Result<(Vec<(usize, MultiPolygon)>, Vec<usize>)> {
    let mut fallbacks = Vec::new();
    let mut gens: Vec<Generator> = Vec::new();
    for (k, b) in members.iter().enumerate() {
        let mut fb = false;
        for c in generator_points(b, cfg, &mut fb) {
            gens.push(Generator { pos: Point2::new(c.x, c.y), owner: k as u32 });
        }
        if fb {
            fallbacks.push(b.id);
        }
    }
    let r = enclosure.polygon.bounding_rect().ok_or_else(|| Error::Geometry("empty enclosure".into()))?;
    let (mut minx, mut miny, mut maxx, mut maxy) = (r.min().x, r.min().y, r.max().x, r.max().y);
    for g in &gens {
        minx = minx.min(g.pos.x);
        miny = miny.min(g.pos.y);
        maxx = maxx.max(g.pos.x);
        maxy = maxy.max(g.pos.y);
    }
    let center = Coord { x: 0.5 * (minx + maxx), y: 0.5 * (miny + maxy) };
    let radius = 10.0 * ((maxx - minx).hypot(maxy - miny)).max(1.0);
    for k in 0..16 {
        let t = k as f64 * std::f64::consts::TAU / 16.0;
        gens.push(Generator { pos: Point2::new(center.x + radius * t.cos(), center.y + radius * t.sin()), owner: DUMMY });
    }
    let regions = dissolved_voronoi(gens, members.len())?;
    let clip = MultiPolygon(vec![enclosure.polygon.clone()]);
    let cells = members
        .iter()
        .zip(regions)
        .map(|(b, region)| {
            let cell = if members.len() == 1 { clip.clone() } else { region.intersection(&clip) };
            (b.id, cell)
        })
        .collect();
    Ok((cells, fallbacks))
}

/// Partitions every enclosure containing buildings into one cell per building.
/// Cells carry no street links yet (see [`link_elements`]).
pub fn tessellate(
    buildings: &[Building],
    enclosures: &[Enclosure],
    cfg: &TessellationConfig,
) -> Result<(Vec<EtcCell>, TessellationReport)> {
    if !(cfg.segment_len > 0.0) || cfg.shrink < 0.0 {
        return Err(Error::Config("segment_len must be > 0 and shrink ≥ 0".into()));
    }
    let assignment = assign_buildings(buildings, enclosures);
    let mut report = TessellationReport::default();
    let mut groups: HashMap<usize, Vec<&Building>> = HashMap::new();
    for (b, a) in buildings.iter().zip(&assignment) {
        match a {
            Some(e) => groups.entry(*e).or_default().push(b),
            None => report.buildings_outside_enclosures.push(b.id),
        }
    }
    let work: Vec<(&Enclosure, Vec<&Building>)> = enclosures
        .iter()
        .filter_map(|e| groups.remove(&e.id).map(|m| (e, m)))
        .collect();
    let results: Vec<Result<(usize, Vec<(usize, MultiPolygon)>, Vec<usize>)>> = work
        .par_iter()
        .map(|(e, m)| tessellate_enclosure(e, m, cfg).map(|(c, f)| (e.id, c, f)))
        .collect();
    let mut cells = Vec::new();
    for r in results {
        let (eid, cs, fb) = r?;
        report.centroid_fallbacks.extend(fb);
        for (bid, poly) in cs {
            if poly.unsigned_area() > 0.0 {
                cells.push(EtcCell {
                    id: 0,
                    polygon: poly,
                    building_id: bid,
                    enclosure_id: eid,
                    nearest_street_id: None,
                    nearest_node_id: None,
                    nearest_edge_id: None,
                });
            } else {
                report.empty_cells.push(bid);
            }
        }
    }
    cells.sort_by_key(|c| c.building_id);
    for (i, c) in cells.iter_mut().enumerate() {
        c.id = i;
    }
    report.centroid_fallbacks.sort_unstable();
    for b in &report.centroid_fallbacks {
        log::warn!("building {b}: shrink emptied the footprint, centroid used as generator");
    }
    Ok((cells, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enclosure(w: f64, h: f64) -> Enclosure {
        Enclosure { id: 0, polygon: geom::rect_polygon(Coord { x: 0.0, y: 0.0 }, Coord { x: w, y: h }) }
    }

    fn bld(id: usize, x: f64, y: f64, s: f64) -> Building {
        Building { id, footprint: geom::square(x, y, s) }
    }

    #[test]
    fn single_building_fills_enclosure() {
        let e = enclosure(100.0, 60.0);
        let (cells, _) = tessellate(&[bld(0, 40.0, 20.0, 10.0)], &[e], &TessellationConfig::default()).unwrap();
        assert_eq!(cells.len(), 1);
        assert!((cells[0].area() - 6000.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let e = enclosure(100.0, 60.0);
        let b = [bld(0, 20.0, 25.0, 10.0), bld(1, 70.0, 25.0, 10.0)];
        let (cells, _) = tessellate(&b, &[e], &TessellationConfig::default()).unwrap();
        assert_eq!(cells.len(), 2);
        let (a0, a1) = (cells[0].area(), cells[1].area());
        assert!((a0 - a1).abs() / a0 < 0.005, "{a0} {a1}");
        assert!((a0 + a1 - 6000.0).abs() < 6.0);
    }

    #[test]
    fn tiny_building_falls_back_to_centroid() {
        let e = enclosure(50.0, 50.0);
        let b = [bld(0, 10.0, 10.0, 0.5), bld(1, 30.0, 30.0, 8.0)];
        let (cells, rep) = tessellate(&b, &[e], &TessellationConfig::default()).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(rep.centroid_fallbacks, vec![0]);
    }

    #[test]
    fn shrunk_footprint_inside_own_cell() {
        let e = enclosure(60.0, 30.0);
        // touching row houses
        let b: Vec<Building> = (0..4).map(|i| bld(i, 10.0 + 10.0 * i as f64, 10.0, 10.0)).collect();
        let (cells, _) = tessellate(&b, &[e], &TessellationConfig::default()).unwrap();
        for c in &cells {
            let shrunk = b[c.building_id].footprint.buffer(-0.4);
            let outside = shrunk.difference(&c.polygon).unsigned_area();
            assert!(outside < 1e-6, "cell {} leaks {outside}", c.id);
        }
    }
}
