//! Polygonization of the barrier arrangement into enclosures.

use std::collections::HashMap;

use geo::{Area, Coord, InteriorPoint, LineString, Polygon};
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::StreetNetwork;

const NODE_EPS: f64 = 1e-6;

/// A face of the planar arrangement formed by the barriers and the study boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enclosure {
    pub id: usize,
    pub polygon: Polygon,
}

#[derive(Clone, Copy)]
struct Seg {
    a: Coord,
    b: Coord,
    idx: usize,
}

impl RTreeObject for Seg {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        AABB::from_corners(
            [self.a.x.min(self.b.x) - NODE_EPS, self.a.y.min(self.b.y) - NODE_EPS],
            [self.a.x.max(self.b.x) + NODE_EPS, self.a.y.max(self.b.y) + NODE_EPS],
        )
    }
}

fn cross(a: Coord, b: Coord) -> f64 {
    a.x * b.y - a.y * b.x
}

fn project(p: Coord, a: Coord, b: Coord) -> f64 {
    let d = b - a;
    ((p.x - a.x) * d.x + (p.y - a.y) * d.y) / (d.x * d.x + d.y * d.y)
}

/// Parameters along `s` and `t` where the two segments meet.
fn meet(s: &Seg, t: &Seg, out_s: &mut Vec<f64>, out_t: &mut Vec<f64>) {
    let d1 = s.b - s.a;
    let d2 = t.b - t.a;
    let l1 = geom::dist(s.a, s.b);
    let l2 = geom::dist(t.a, t.b);
    let denom = cross(d1, d2);
    if denom.abs() > 1e-12 * l1 * l2 {
        let w = t.a - s.a;
        let ts = cross(w, d2) / denom;
        let tt = cross(w, d1) / denom;
        let es = NODE_EPS / l1;
        let et = NODE_EPS / l2;
        if (-es..=1.0 + es).contains(&ts) && (-et..=1.0 + et).contains(&tt) {
            out_s.push(ts.clamp(0.0, 1.0));
            out_t.push(tt.clamp(0.0, 1.0));
        }
        return;
    }
    // parallel: only collinear overlaps produce nodes
    if geom::point_segment_distance(t.a, s.a, s.b).min(geom::point_segment_distance(t.b, s.a, s.b)) > NODE_EPS
        && geom::point_segment_distance(s.a, t.a, t.b).min(geom::point_segment_distance(s.b, t.a, t.b)) > NODE_EPS
    {
        return;
    }
    for p in [t.a, t.b] {
        if geom::point_segment_distance(p, s.a, s.b) <= NODE_EPS {
            out_s.push(project(p, s.a, s.b).clamp(0.0, 1.0));
        }
    }
    for p in [s.a, s.b] {
        if geom::point_segment_distance(p, t.a, t.b) <= NODE_EPS {
            out_t.push(project(p, t.a, t.b).clamp(0.0, 1.0));
        }
    }
}

/// Merges coordinates closer than `NODE_EPS` onto a single node.
struct NodeIndex {
    grid: HashMap<(i64, i64), Vec<usize>>,
    coords: Vec<Coord>,
}

impl NodeIndex {
    fn new() -> Self {
        NodeIndex { grid: HashMap::new(), coords: Vec::new() }
    }

    fn key(c: Coord) -> (i64, i64) {
        ((c.x / (4.0 * NODE_EPS)).floor() as i64, (c.y / (4.0 * NODE_EPS)).floor() as i64)
    }

    fn get(&mut self, c: Coord) -> usize {
        let (kx, ky) = Self::key(c);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &i in v {
                        if geom::dist(self.coords[i], c) <= NODE_EPS {
                            return i;
                        }
                    }
                }
            }
        }
        let i = self.coords.len();
        self.coords.push(c);
        self.grid.entry((kx, ky)).or_default().push(i);
        i
    }
}

/// Nodes all input segments against each other and returns the unique edges.
fn node_segments(raw: &[(Coord, Coord)]) -> (Vec<Coord>, Vec<(usize, usize)>) {
    let segs: Vec<Seg> = raw
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| geom::dist(*a, *b) > NODE_EPS)
        .map(|(idx, (a, b))| Seg { a: *a, b: *b, idx })
        .collect();
    let mut params: Vec<Vec<f64>> = vec![vec![0.0, 1.0]; raw.len()];
    let tree = RTree::bulk_load(segs.clone());
    for s in &segs {
        for t in tree.locate_in_envelope_intersecting(&s.envelope()) {
            if t.idx <= s.idx {
                continue;
            }
            let (mut ps, mut pt) = (Vec::new(), Vec::new());
            meet(s, t, &mut ps, &mut pt);
            params[s.idx].extend(ps);
            params[t.idx].extend(pt);
        }
    }
    let mut nodes = NodeIndex::new();
    let mut edges = Vec::new();
    for s in &segs {
        let ps = &mut params[s.idx];
        ps.sort_by(f64::total_cmp);
        ps.dedup();
        let ids: Vec<usize> = ps
            .iter()
            .map(|&t| nodes.get(Coord { x: s.a.x + t * (s.b.x - s.a.x), y: s.a.y + t * (s.b.y - s.a.y) }))
            .collect();
        for w in ids.windows(2) {
            if w[0] != w[1] {
                edges.push((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    (nodes.coords, edges)
}

fn prune_dangles(n_nodes: usize, edges: &mut Vec<(usize, usize)>) {
    loop {
        let mut deg = vec![0usize; n_nodes];
        for &(a, b) in edges.iter() {
            deg[a] += 1;
            deg[b] += 1;
        }
        let before = edges.len();
        edges.retain(|&(a, b)| deg[a] > 1 && deg[b] > 1);
        if edges.len() == before {
            return;
        }
    }
}

struct Faces {
    /// Face id per half-edge (2e = a→b, 2e+1 = b→a).
    face_of: Vec<usize>,
    rings: Vec<Vec<usize>>,
}

fn trace_faces(coords: &[Coord], edges: &[(usize, usize)]) -> Faces {
    let n = coords.len();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    let he_from = |h: usize| if h.is_multiple_of(2) { edges[h / 2].0 } else { edges[h / 2].1 };
    let he_to = |h: usize| if h.is_multiple_of(2) { edges[h / 2].1 } else { edges[h / 2].0 };
    for h in 0..2 * edges.len() {
        out[he_from(h)].push(h);
    }
    let mut pos = vec![0usize; 2 * edges.len()];
    for list in out.iter_mut() {
        list.sort_by(|&h1, &h2| {
            let (a1, b1) = (coords[he_from(h1)], coords[he_to(h1)]);
            let (a2, b2) = (coords[he_from(h2)], coords[he_to(h2)]);
            (b1.y - a1.y).atan2(b1.x - a1.x).total_cmp(&(b2.y - a2.y).atan2(b2.x - a2.x))
        });
        for (k, &h) in list.iter().enumerate() {
            pos[h] = k;
        }
    }
    let mut face_of = vec![usize::MAX; 2 * edges.len()];
    let mut rings = Vec::new();
    for start in 0..2 * edges.len() {
        if face_of[start] != usize::MAX {
            continue;
        }
        let fid = rings.len();
        let mut ring = Vec::new();
        let mut h = start;
        loop {
            face_of[h] = fid;
            ring.push(he_from(h));
            let v = he_to(h);
            let twin = h ^ 1;
            let list = &out[v];
            let k = (pos[twin] + list.len() - 1) % list.len();
            h = list[k];
            if h == start {
                break;
            }
        }
        rings.push(ring);
    }
    Faces { face_of, rings }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Polygonizes the union of all barriers clipped to the study area. Faces
/// inside a waterbody are not enclosures.
pub fn build_enclosures(
    streets: &StreetNetwork,
    waterlines: &[LineString],
    waterbodies: &[Polygon],
    study_area: &Polygon,
) -> Result<Vec<Enclosure>> {
    if !(study_area.unsigned_area() > 0.0) || study_area.exterior().0.len() < 4 {
        return Err(Error::Geometry("degenerate study area".into()));
    }
    let mut raw: Vec<(Coord, Coord)> = Vec::new();
    let mut push_line = |l: &LineString| {
        for w in l.0.windows(2) {
            raw.push((w[0], w[1]));
        }
    };
    for s in &streets.segments {
        push_line(&s.line);
    }
    for l in waterlines {
        push_line(l);
    }
    for p in waterbodies.iter().chain(std::iter::once(study_area)) {
        push_line(p.exterior());
        for h in p.interiors() {
            push_line(h);
        }
    }
    let (coords, mut edges) = node_segments(&raw);

    // Bridges (edges with the same face on both sides) are removed together
    // with the dangles they expose, so every face ring is simple.
    let faces = loop {
        prune_dangles(coords.len(), &mut edges);
        let faces = trace_faces(&coords, &edges);
        let before = edges.len();
        let mut e = 0;
        edges.retain(|_| {
            let keep = faces.face_of[2 * e] != faces.face_of[2 * e + 1];
            e += 1;
            keep
        });
        if edges.len() == before {
            break faces;
        }
    };

    let mut parent: Vec<usize> = (0..coords.len()).collect();
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }

    let ring_coords = |r: &[usize]| -> Vec<Coord> { r.iter().map(|&i| coords[i]).collect() };
    let mut bounded: Vec<(Vec<Coord>, f64, usize)> = Vec::new();
    let mut outer: Vec<(Vec<Coord>, usize)> = Vec::new();
    for r in &faces.rings {
        let c = ring_coords(r);
        let a = geom::signed_ring_area(&c);
        let comp = find(&mut parent, r[0]);
        if a > 0.0 {
            bounded.push((c, a, comp));
        } else {
            outer.push((c, comp));
        }
    }
    let to_poly = |c: &[Coord]| {
        let mut c = c.to_vec();
        c.push(c[0]);
        Polygon::new(LineString::from(c), vec![])
    };
    let bounded_polys: Vec<Polygon> = bounded.iter().map(|(c, _, _)| to_poly(c)).collect();
    let mut holes: Vec<Vec<LineString>> = vec![Vec::new(); bounded.len()];
    for (c, comp) in &outer {
        let probe = c[0];
        let container = bounded
            .iter()
            .enumerate()
            .filter(|(i, (_, _, bc))| bc != comp && geom::point_in_polygon(probe, &bounded_polys[*i]))
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i);
        if let Some(i) = container {
            let mut ring = c.clone();
            ring.push(ring[0]);
            holes[i].push(LineString::from(ring));
        }
    }

    let mut out: Vec<Polygon> = Vec::new();
    for (i, p) in bounded_polys.into_iter().enumerate() {
        let poly = Polygon::new(p.exterior().clone(), std::mem::take(&mut holes[i]));
        let Some(ip) = poly.interior_point() else { continue };
        let ip = ip.0;
        if !geom::point_in_polygon(ip, study_area) {
            continue;
        }
        if waterbodies.iter().any(|w| geom::point_in_polygon(ip, w)) {
            continue;
        }
        out.push(poly);
    }
    // canonical order: by lowest-left exterior vertex
    out.sort_by(|a, b| {
        let ka = min_coord(a);
        let kb = min_coord(b);
        ka.x.total_cmp(&kb.x).then(ka.y.total_cmp(&kb.y))
    });
    Ok(out.into_iter().enumerate().map(|(id, polygon)| Enclosure { id, polygon }).collect())
}

fn min_coord(p: &Polygon) -> Coord {
    p.exterior()
        .0
        .iter()
        .copied()
        .min_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(size: f64) -> Polygon {
        geom::square(0.0, 0.0, size)
    }

    fn net(lines: Vec<Vec<(f64, f64)>>) -> StreetNetwork {
        StreetNetwork::from_lines(lines.into_iter().map(|l| (LineString::from(l), false)).collect(), 0.1)
    }

    fn total_area(e: &[Enclosure]) -> f64 {
        e.iter().map(|e| e.polygon.unsigned_area()).sum()
    }

    #[test]
    fn no_barriers_is_identity() {
        let e = build_enclosures(&StreetNetwork::default(), &[], &[], &study(100.0)).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].polygon.unsigned_area() - 10_000.0).abs() < 1e-9);
    }

    #[test]
    fn single_cut() {
        let e = build_enclosures(&net(vec![vec![(50.0, -10.0), (50.0, 110.0)]]), &[], &[], &study(100.0)).unwrap();
        assert_eq!(e.len(), 2);
        assert!((total_area(&e) - 10_000.0).abs() < 1e-6);
    }

    #[test]
    fn dangling_street_does_not_split() {
        let e = build_enclosures(&net(vec![vec![(50.0, 0.0), (50.0, 60.0)]]), &[], &[], &study(100.0)).unwrap();
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn waterbody_is_excluded_as_hole() {
        let pond = geom::rect_polygon(Coord { x: 40.0, y: 40.0 }, Coord { x: 60.0, y: 60.0 });
        let e = build_enclosures(&StreetNetwork::default(), &[], &[pond], &study(100.0)).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].polygon.interiors().len(), 1);
        assert!((e[0].polygon.unsigned_area() - 9_600.0).abs() < 1e-6);
    }

    #[test]
    fn waterbody_connected_by_street_has_no_bridge() {
        let pond = geom::rect_polygon(Coord { x: 40.0, y: 40.0 }, Coord { x: 60.0, y: 60.0 });
        let e = build_enclosures(&net(vec![vec![(0.0, 50.0), (40.0, 50.0)]]), &[], &[pond], &study(100.0)).unwrap();
        assert_eq!(e.len(), 1);
        assert!((total_area(&e) - 9_600.0).abs() < 1e-6);
    }
}
