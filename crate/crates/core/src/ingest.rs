//! Loading and cleaning of the input vector layers: building footprints,
//! street centerlines, waterlines, waterbodies and reference polygons.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use geo::orient::{Direction, Orient};
use geo::{
    Area, BooleanOps, BoundingRect, Coord, Geometry, LineString, MakeValid, MultiPolygon, Polygon,
    Relate, Simplify, Validation,
};
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::io::vector::{read_vector, require_projected, Properties, VectorLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Buildings,
    Streets,
    Waterlines,
    Waterbodies,
    Reference,
}

impl LayerKind {
    fn accepts(self, g: &Geometry) -> bool {
        match self {
            LayerKind::Buildings | LayerKind::Waterbodies | LayerKind::Reference => {
                matches!(g, Geometry::Polygon(_) | Geometry::MultiPolygon(_) | Geometry::Rect(_))
            }
            LayerKind::Streets | LayerKind::Waterlines => {
                matches!(g, Geometry::LineString(_) | Geometry::MultiLineString(_) | Geometry::Line(_))
            }
        }
    }
}

/// A loaded layer with the number of features dropped by the type filter.
#[derive(Debug, Clone)]
pub struct FeatureCollection {
    pub kind: LayerKind,
    pub layer: VectorLayer,
    pub dropped: usize,
}

impl FeatureCollection {
    pub fn len(&self) -> usize {
        self.layer.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer.features.is_empty()
    }
}

pub fn load_layer(path: &Path, kind: LayerKind) -> Result<FeatureCollection> {
    let layer = read_vector(path)?;
    from_layer(layer, kind, path)
}

/// Applies the load-time rules to an already decoded layer.
pub fn from_layer(mut layer: VectorLayer, kind: LayerKind, path: &Path) -> Result<FeatureCollection> {
    if layer.features.is_empty() {
        return Err(Error::EmptyLayer(path.display().to_string()));
    }
    require_projected(&layer, path)?;
    let before = layer.features.len();
    layer.features.retain(|f| {
        kind.accepts(&f.geometry)
            && !(kind == LayerKind::Streets && road_class(&f.properties) == Some("service"))
    });
    let dropped = before - layer.features.len();
    if layer.features.is_empty() {
        return Err(Error::EmptyLayer(format!(
            "{} has no features usable as {kind:?}",
            path.display()
        )));
    }
    for (i, f) in layer.features.iter_mut().enumerate() {
        f.id = i as u64;
    }
    Ok(FeatureCollection { kind, layer, dropped })
}

fn road_class(p: &Properties) -> Option<&str> {
    p.get("class").and_then(|v| v.as_str())
}

fn is_tunnel(p: &Properties) -> bool {
    ["is_tunnel", "tunnel"].iter().any(|k| match p.get(*k) {
        Some(serde_json::Value::Bool(b)) => *b,
        Some(serde_json::Value::Number(n)) => n.as_i64() == Some(1),
        Some(serde_json::Value::String(s)) => matches!(s.as_str(), "true" | "yes" | "1"),
        _ => false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct IngestConfig {
    pub max_building_area: f64,
    pub simplify_tol: f64,
    pub merge_overlap_frac: f64,
    pub small_building_area: f64,
    pub snap_tol: f64,
    pub tunnel_max_length: f64,
    pub skip_simplify: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            max_building_area: 200_000.0,
            simplify_tol: 0.5,
            merge_overlap_frac: 0.5,
            small_building_area: 30.0,
            snap_tol: 0.1,
            tunnel_max_length: 50.0,
            skip_simplify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: usize,
    pub footprint: Polygon,
}

impl Building {
    pub fn area(&self) -> f64 {
        self.footprint.unsigned_area()
    }

    pub fn as_multi(&self) -> MultiPolygon {
        MultiPolygon(vec![self.footprint.clone()])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AreaEvent {
    pub rule: String,
    pub building: usize,
    pub area_delta: f64,
}

/// Per-rule counters and the area change of every event that alters footprint area.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PreprocessReport {
    pub counters: BTreeMap<String, usize>,
    pub events: Vec<AreaEvent>,
}

impl PreprocessReport {
    fn bump(&mut self, key: &str) {
        *self.counters.entry(key.to_string()).or_insert(0) += 1;
    }

    fn event(&mut self, rule: &str, building: usize, area_delta: f64) {
        self.bump(rule);
        self.events.push(AreaEvent { rule: rule.to_string(), building, area_delta });
    }

    pub fn count(&self, key: &str) -> usize {
        self.counters.get(key).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: PreprocessReport) {
        for (k, v) in other.counters {
            *self.counters.entry(k).or_insert(0) += v;
        }
        self.events.extend(other.events);
    }
}

fn largest_part(mp: MultiPolygon) -> Option<(Polygon, f64)> {
    let total = mp.unsigned_area();
    let best = mp
        .0
        .into_iter()
        .map(|p| {
            let a = p.unsigned_area();
            (p, a)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    Some((best.0, total - best.1))
}

#[derive(Clone, Copy)]
struct BoxItem {
    idx: usize,
    env: AABB<[f64; 2]>,
}

impl RTreeObject for BoxItem {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        self.env
    }
}

fn envelope_of(p: &Polygon, pad: f64) -> AABB<[f64; 2]> {
    let r = p.bounding_rect().expect("non-empty polygon");
    AABB::from_corners([r.min().x - pad, r.min().y - pad], [r.max().x + pad, r.max().y + pad])
}

fn candidate_pairs(polys: &[Option<Polygon>], pad: f64) -> Vec<(usize, usize)> {
    let items: Vec<BoxItem> = polys
        .iter()
        .enumerate()
        .filter_map(|(idx, p)| p.as_ref().map(|p| BoxItem { idx, env: envelope_of(p, pad) }))
        .collect();
    let tree = RTree::bulk_load(items.clone());
    let mut out = Vec::new();
    for it in &items {
        for other in tree.locate_in_envelope_intersecting(&it.env) {
            if other.idx > it.idx {
                out.push((it.idx, other.idx));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Footprint cleaning, in order: fix invalid rings, explode multipolygons,
/// drop non-polygons, drop oversized footprints, simplify, resolve overlaps,
/// merge small touching buildings into their larger neighbor.
pub fn preprocess_buildings(raw: &FeatureCollection, cfg: &IngestConfig) -> (Vec<Building>, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let mut parts: Vec<Polygon> = Vec::new();
    for f in &raw.layer.features {
        let mp: MultiPolygon = match &f.geometry {
            Geometry::Polygon(p) => MultiPolygon(vec![p.clone()]),
            Geometry::MultiPolygon(mp) => mp.clone(),
            Geometry::Rect(r) => MultiPolygon(vec![r.to_polygon()]),
            _ => {
                report.bump("dropped_non_polygon");
                continue;
            }
        };
        let mp = if mp.is_valid() {
            mp
        } else {
            report.bump("fixed_invalid");
            match mp.make_valid() {
                Ok(fixed) => fixed,
                Err(_) => {
                    report.bump("dropped_unfixable");
                    continue;
                }
            }
        };
        if mp.0.len() > 1 {
            report.bump("exploded_multipolygons");
        }
        for p in mp.0 {
            let p = p.orient(Direction::Default);
            if p.unsigned_area() > 0.0 {
                parts.push(p);
            } else {
                report.bump("dropped_degenerate");
            }
        }
    }
    report.counters.insert("input_parts".into(), parts.len());

    let mut polys: Vec<Option<Polygon>> = Vec::with_capacity(parts.len());
    for (i, p) in parts.into_iter().enumerate() {
        let a = p.unsigned_area();
        if a > cfg.max_building_area {
            report.event("dropped_oversized", i, -a);
            polys.push(None);
            continue;
        }
        let p = if cfg.simplify_tol > 0.0 {
            let s = p.simplify(cfg.simplify_tol).orient(Direction::Default);
            let sa = s.unsigned_area();
            if s.exterior().0.len() >= 4 && sa > 0.0 && s.is_valid() {
                if sa != a {
                    report.event("simplified", i, sa - a);
                }
                s
            } else {
                report.bump("simplify_reverted");
                p
            }
        } else {
            p
        };
        polys.push(Some(p));
    }

    resolve_overlaps(&mut polys, cfg, &mut report);
    merge_small(&mut polys, cfg, &mut report);

    let buildings: Vec<Building> = polys
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(id, footprint)| Building { id, footprint })
        .collect();
    report.counters.insert("output_buildings".into(), buildings.len());
    (buildings, report)
}

const OVERLAP_EPS: f64 = 1e-7;

fn resolve_overlaps(polys: &mut [Option<Polygon>], cfg: &IngestConfig, report: &mut PreprocessReport) {
    for _round in 0..100 {
        let mut overlaps: Vec<(f64, usize, usize)> = candidate_pairs(polys, 0.0)
            .into_iter()
            .filter_map(|(i, j)| {
                let (a, b) = (polys[i].as_ref()?, polys[j].as_ref()?);
                let ov = a.intersection(b).unsigned_area();
                (ov > OVERLAP_EPS).then_some((ov, i, j))
            })
            .collect();
        if overlaps.is_empty() {
            return;
        }
        overlaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut touched = vec![false; polys.len()];
        for (ov, i, j) in overlaps {
            if touched[i] || touched[j] {
                continue;
            }
            touched[i] = true;
            touched[j] = true;
            let (ai, aj) = (
                polys[i].as_ref().unwrap().unsigned_area(),
                polys[j].as_ref().unwrap().unsigned_area(),
            );
            // ties keep the lower id as the larger footprint
            let (large, small) = if ai >= aj { (i, j) } else { (j, i) };
            let small_area = ai.min(aj);
            let large_area = ai.max(aj);
            let sp = polys[small].take().unwrap();
            let lp = polys[large].take().unwrap();
            if ov / small_area > cfg.merge_overlap_frac {
                let merged = lp.union(&sp);
                match largest_part(merged) {
                    Some((p, lost)) => {
                        let delta = p.unsigned_area() + lost - large_area - small_area;
                        report.event("merged_overlap", large, delta);
                        if lost > 0.0 {
                            report.event("dropped_merge_fragment", large, -lost);
                        }
                        polys[large] = Some(p.orient(Direction::Default));
                    }
                    None => polys[large] = Some(lp),
                }
            } else {
                let trimmed = sp.difference(&lp);
                polys[large] = Some(lp);
                match largest_part(trimmed) {
                    Some((p, lost)) if p.unsigned_area() > 0.0 => {
                        report.event("trimmed_overlap", small, p.unsigned_area() + lost - small_area);
                        if lost > 0.0 {
                            report.event("dropped_trim_fragment", small, -lost);
                        }
                        polys[small] = Some(p.orient(Direction::Default));
                    }
                    _ => report.event("dropped_trimmed_away", small, -small_area),
                }
            }
        }
    }
}

fn merge_small(polys: &mut [Option<Polygon>], cfg: &IngestConfig, report: &mut PreprocessReport) {
    let mut order: Vec<(f64, usize)> = polys
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (p.unsigned_area(), i)))
        .filter(|(a, _)| *a < cfg.small_building_area)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if order.is_empty() {
        return;
    }
    let items: Vec<BoxItem> = polys
        .iter()
        .enumerate()
        .filter_map(|(idx, p)| p.as_ref().map(|p| BoxItem { idx, env: envelope_of(p, geom::TOUCH_TOL) }))
        .collect();
    let tree = RTree::bulk_load(items);
    for (_, i) in order {
        let Some(small) = polys[i].clone() else { continue };
        let small_area = small.unsigned_area();
        if small_area >= cfg.small_building_area {
            continue;
        }
        let small_mp = MultiPolygon(vec![small.clone()]);
        let env = envelope_of(&small, geom::TOUCH_TOL);
        let mut best: Option<(f64, f64, usize)> = None;
        for cand in tree.locate_in_envelope_intersecting(&env) {
            let j = cand.idx;
            if j == i {
                continue;
            }
            let Some(other) = polys[j].as_ref() else { continue };
            let other_area = other.unsigned_area();
            if other_area <= small_area {
                continue;
            }
            let other_mp = MultiPolygon(vec![other.clone()]);
            let shared = geom::shared_boundary_length(&small_mp, &other_mp, geom::TOUCH_TOL);
            if shared <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((s, a, b)) => {
                    shared > s || (shared == s && (other_area > a || (other_area == a && j < b)))
                }
            };
            if better {
                best = Some((shared, other_area, j));
            }
        }
        if let Some((_, other_area, j)) = best {
            let merged = polys[j].as_ref().unwrap().union(&small);
            if let Some((p, lost)) = largest_part(merged) {
                report.event("merged_small", j, p.unsigned_area() + lost - other_area - small_area);
                if lost > 0.0 {
                    report.event("dropped_merge_fragment", j, -lost);
                }
                polys[j] = Some(p.orient(Direction::Default));
                polys[i] = None;
            }
        }
    }
}

// ------------------------------------------------------------------ streets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetSegment {
    pub id: usize,
    pub line: LineString,
    pub is_tunnel: bool,
    pub start_node: usize,
    pub end_node: usize,
}

impl StreetSegment {
    pub fn length_m(&self) -> f64 {
        line_length(&self.line)
    }
}

fn line_length(l: &LineString) -> f64 {
    l.0.windows(2).map(|w| geom::dist(w[0], w[1])).sum()
}

/// Noded street network: nodes are segment endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreetNetwork {
    pub nodes: Vec<Coord>,
    pub segments: Vec<StreetSegment>,
}

impl StreetNetwork {
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for s in &self.segments {
            deg[s.start_node] += 1;
            deg[s.end_node] += 1;
        }
        deg
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Builds a network from already noded polylines (endpoints define nodes).
    pub fn from_lines(lines: Vec<(LineString, bool)>, snap_tol: f64) -> StreetNetwork {
        let mut draft: Vec<Draft> = lines.into_iter().map(|(line, tunnel)| Draft { line, tunnel }).collect();
        snap_endpoints(&mut draft, snap_tol);
        canonical_network(draft)
    }
}

#[derive(Debug, Clone)]
struct Draft {
    line: LineString,
    tunnel: bool,
}

fn coord_key(c: Coord) -> (u64, u64) {
    (c.x.to_bits(), c.y.to_bits())
}

fn coord_lt(a: Coord, b: Coord) -> bool {
    a.x < b.x || (a.x == b.x && a.y < b.y)
}

fn explode_lines(raw: &FeatureCollection) -> Vec<Draft> {
    let mut out = Vec::new();
    for f in &raw.layer.features {
        let tunnel = is_tunnel(&f.properties);
        let lines: Vec<LineString> = match &f.geometry {
            Geometry::LineString(l) => vec![l.clone()],
            Geometry::MultiLineString(m) => m.0.clone(),
            Geometry::Line(l) => vec![LineString::from(vec![l.start, l.end])],
            _ => vec![],
        };
        for mut l in lines {
            l.0.dedup();
            if l.0.len() >= 2 && line_length(&l) > 0.0 {
                out.push(Draft { line: l, tunnel });
            }
        }
    }
    out
}

/// Clusters endpoints closer than `tol` and moves them onto the cluster
/// representative (the first endpoint encountered).
fn snap_endpoints(lines: &mut [Draft], tol: f64) {
    let cell = tol.max(1e-9);
    let mut grid: HashMap<(i64, i64), Vec<Coord>> = HashMap::new();
    let key = |c: Coord| ((c.x / cell).floor() as i64, (c.y / cell).floor() as i64);
    let mut snap = |c: Coord| -> Coord {
        let (kx, ky) = key(c);
        let mut best: Option<(f64, Coord)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = grid.get(&(kx + dx, ky + dy)) {
                    for &r in v {
                        let d = geom::dist(r, c);
                        if d <= tol && best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, r));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, r)) => r,
            None => {
                grid.entry((kx, ky)).or_default().push(c);
                c
            }
        }
    };
    for d in lines.iter_mut() {
        let n = d.line.0.len();
        let a = snap(d.line.0[0]);
        d.line.0[0] = a;
        let b = snap(d.line.0[n - 1]);
        d.line.0[n - 1] = b;
    }
}

/// Splits lines at interior vertices that coincide with another line's endpoint.
fn split_at_nodes(lines: Vec<Draft>, tol: f64) -> Vec<Draft> {
    let mut ends: Vec<Coord> = lines
        .iter()
        .flat_map(|d| [d.line.0[0], *d.line.0.last().unwrap()])
        .collect();
    ends.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    ends.dedup();
    let tree = RTree::bulk_load(ends.iter().map(|c| [c.x, c.y]).collect::<Vec<_>>());
    let mut out = Vec::new();
    for d in lines {
        let mut cur = vec![d.line.0[0]];
        let n = d.line.0.len();
        for (k, &c) in d.line.0.iter().enumerate().skip(1) {
            if k + 1 < n {
                if let Some(node) = tree.nearest_neighbor(&[c.x, c.y]) {
                    let node = Coord { x: node[0], y: node[1] };
                    if geom::dist(node, c) <= tol {
                        cur.push(node);
                        out.push(Draft { line: LineString::from(std::mem::take(&mut cur)), tunnel: d.tunnel });
                        cur.push(node);
                        continue;
                    }
                }
            }
            cur.push(c);
        }
        out.push(Draft { line: LineString::from(cur), tunnel: d.tunnel });
    }
    out.retain(|d| line_length(&d.line) > 0.0);
    out
}

fn dedupe(lines: Vec<Draft>) -> (Vec<Draft>, usize) {
    let mut seen = std::collections::HashSet::new();
    let before = lines.len();
    let out: Vec<Draft> = lines
        .into_iter()
        .filter(|d| {
            let fwd: Vec<(u64, u64)> = d.line.0.iter().map(|c| coord_key(*c)).collect();
            let mut rev = fwd.clone();
            rev.reverse();
            let k = if fwd <= rev { fwd } else { rev };
            seen.insert(k)
        })
        .collect();
    let removed = before - out.len();
    (out, removed)
}

/// Merges chains through degree-2 nodes (same tunnel flag on both sides).
fn merge_chains(mut lines: Vec<Draft>) -> (Vec<Draft>, usize) {
    let mut merges = 0;
    loop {
        let mut incidence: HashMap<(u64, u64), Vec<(usize, bool)>> = HashMap::new();
        for (i, d) in lines.iter().enumerate() {
            incidence.entry(coord_key(d.line.0[0])).or_default().push((i, true));
            incidence.entry(coord_key(*d.line.0.last().unwrap())).or_default().push((i, false));
        }
        let mut keys: Vec<_> = incidence.keys().copied().collect();
        keys.sort_unstable();
        let mut done = false;
        for k in keys {
            let inc = &incidence[&k];
            if inc.len() != 2 || inc[0].0 == inc[1].0 {
                continue;
            }
            let (a, a_start) = inc[0];
            let (b, b_start) = inc[1];
            if lines[a].tunnel != lines[b].tunnel {
                continue;
            }
            // orient a so it ends at the node, b so it starts there
            let mut la = lines[a].line.0.clone();
            if a_start {
                la.reverse();
            }
            let mut lb = lines[b].line.0.clone();
            if !b_start {
                lb.reverse();
            }
            la.extend_from_slice(&lb[1..]);
            let tunnel = lines[a].tunnel;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            lines.remove(hi);
            lines[lo] = Draft { line: LineString::from(la), tunnel };
            merges += 1;
            done = true;
            break;
        }
        if !done {
            return (lines, merges);
        }
    }
}

fn canonical_network(lines: Vec<Draft>) -> StreetNetwork {
    let mut lines: Vec<Draft> = lines
        .into_iter()
        .map(|mut d| {
            let first = d.line.0[0];
            let last = *d.line.0.last().unwrap();
            if coord_lt(last, first) || (last == first && d.line.0.len() > 2 && coord_lt(d.line.0[d.line.0.len() - 2], d.line.0[1])) {
                d.line.0.reverse();
            }
            d
        })
        .collect();
    lines.sort_by(|a, b| {
        let ka: Vec<(f64, f64)> = a.line.0.iter().map(|c| (c.x, c.y)).collect();
        let kb: Vec<(f64, f64)> = b.line.0.iter().map(|c| (c.x, c.y)).collect();
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal).then(a.tunnel.cmp(&b.tunnel))
    });
    let mut node_coords: Vec<Coord> = lines
        .iter()
        .flat_map(|d| [d.line.0[0], *d.line.0.last().unwrap()])
        .collect();
    node_coords.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    node_coords.dedup();
    let index: HashMap<(u64, u64), usize> =
        node_coords.iter().enumerate().map(|(i, c)| (coord_key(*c), i)).collect();
    let segments = lines
        .into_iter()
        .enumerate()
        .map(|(id, d)| {
            let start_node = index[&coord_key(d.line.0[0])];
            let end_node = index[&coord_key(*d.line.0.last().unwrap())];
            StreetSegment { id, line: d.line, is_tunnel: d.tunnel, start_node, end_node }
        })
        .collect();
    StreetNetwork { nodes: node_coords, segments }
}

/// Street cleaning: drop long tunnels, deduplicate, node at shared endpoints
/// and merge degree-2 chains, repeated to a fixed point.
pub fn preprocess_streets(raw: &FeatureCollection, cfg: &IngestConfig) -> Result<(StreetNetwork, PreprocessReport)> {
    let drafts = explode_lines(raw);
    preprocess_drafts(drafts, cfg)
}

/// Runs the street cleaning again on an existing network.
pub fn reprocess_network(net: &StreetNetwork, cfg: &IngestConfig) -> Result<(StreetNetwork, PreprocessReport)> {
    let drafts = net
        .segments
        .iter()
        .map(|s| Draft { line: s.line.clone(), tunnel: s.is_tunnel })
        .collect();
    preprocess_drafts(drafts, cfg)
}

fn preprocess_drafts(mut lines: Vec<Draft>, cfg: &IngestConfig) -> Result<(StreetNetwork, PreprocessReport)> {
    let mut report = PreprocessReport::default();
    for _ in 0..64 {
        let before: Vec<Draft> = lines.clone();
        let n0 = lines.len();
        lines.retain(|d| !(d.tunnel && line_length(&d.line) > cfg.tunnel_max_length));
        *report.counters.entry("removed_tunnels".into()).or_insert(0) += n0 - lines.len();
        if !cfg.skip_simplify {
            snap_endpoints(&mut lines, cfg.snap_tol);
            lines = split_at_nodes(lines, cfg.snap_tol);
            let (l, removed) = dedupe(lines);
            *report.counters.entry("removed_duplicates".into()).or_insert(0) += removed;
            let (l, merges) = merge_chains(l);
            *report.counters.entry("merged_chains".into()).or_insert(0) += merges;
            lines = l;
        }
        let same = before.len() == lines.len()
            && before.iter().zip(&lines).all(|(a, b)| a.line == b.line && a.tunnel == b.tunnel);
        if same || cfg.skip_simplify {
            break;
        }
    }
    if lines.is_empty() {
        return Err(Error::Data("street network is empty after filtering".into()));
    }
    let net = canonical_network(lines);
    report.counters.insert("output_segments".into(), net.segments.len());
    report.counters.insert("output_nodes".into(), net.nodes.len());
    Ok((net, report))
}

// ---------------------------------------------------------------- barriers

#[derive(Debug, Clone, Default)]
pub struct BarrierSet {
    pub waterlines: Vec<LineString>,
    pub waterbodies: Vec<Polygon>,
    pub study_area: Option<Polygon>,
}

pub fn lines_of(fc: &FeatureCollection) -> Vec<LineString> {
    explode_lines(fc).into_iter().map(|d| d.line).collect()
}

pub fn polygons_of(fc: &FeatureCollection) -> Vec<Polygon> {
    let mut out = Vec::new();
    for f in &fc.layer.features {
        match &f.geometry {
            Geometry::Polygon(p) => out.push(p.clone()),
            Geometry::MultiPolygon(m) => out.extend(m.0.iter().cloned()),
            Geometry::Rect(r) => out.push(r.to_polygon()),
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ConsistencyReport {
    pub buildings_on_streets: usize,
    pub buildings_in_waterbodies: usize,
    pub waterlines_through_buildings: usize,
}

/// Removes buildings crossing a street centerline or overlapping a waterbody,
/// and waterlines crossing a building.
pub fn consistency_check(
    buildings: &[Building],
    streets: &StreetNetwork,
    waterlines: &[LineString],
    waterbodies: &[Polygon],
) -> (Vec<Building>, Vec<LineString>, ConsistencyReport) {
    let mut report = ConsistencyReport::default();
    let seg_tree = RTree::bulk_load(
        streets
            .segments
            .iter()
            .flat_map(|s| s.line.0.windows(2).map(move |w| SegItem::new(w[0], w[1], s.id)))
            .collect::<Vec<_>>(),
    );
    let water_tree = RTree::bulk_load(
        waterbodies
            .iter()
            .enumerate()
            .map(|(idx, p)| BoxItem { idx, env: envelope_of(p, 0.0) })
            .collect::<Vec<_>>(),
    );
    let mut kept = Vec::with_capacity(buildings.len());
    for b in buildings {
        let env = envelope_of(&b.footprint, 0.0);
        let mp = b.as_multi();
        let on_street = seg_tree.locate_in_envelope_intersecting(&env).any(|s| {
            let l = LineString::from(vec![s.a, s.b]);
            geom::multipolygon_line_distance(&mp, &l) == 0.0
        });
        if on_street {
            report.buildings_on_streets += 1;
            continue;
        }
        let in_water = water_tree.locate_in_envelope_intersecting(&env).any(|w| {
            let m = b.footprint.relate(&waterbodies[w.idx]);
            m.is_intersects() && !m.is_touches()
        });
        if in_water {
            report.buildings_in_waterbodies += 1;
            continue;
        }
        kept.push(b.clone());
    }
    let bld_tree = RTree::bulk_load(
        buildings
            .iter()
            .enumerate()
            .map(|(idx, b)| BoxItem { idx, env: envelope_of(&b.footprint, 0.0) })
            .collect::<Vec<_>>(),
    );
    let mut lines_kept = Vec::with_capacity(waterlines.len());
    for l in waterlines {
        let Some(r) = l.bounding_rect() else { continue };
        let env = AABB::from_corners([r.min().x, r.min().y], [r.max().x, r.max().y]);
        let hits = bld_tree
            .locate_in_envelope_intersecting(&env)
            .any(|b| geom::multipolygon_line_distance(&buildings[b.idx].as_multi(), l) == 0.0);
        if hits {
            report.waterlines_through_buildings += 1;
        } else {
            lines_kept.push(l.clone());
        }
    }
    (kept, lines_kept, report)
}

/// A line segment stored in an R-tree with the id of its parent feature.
#[derive(Debug, Clone, Copy)]
pub struct SegItem {
    pub a: Coord,
    pub b: Coord,
    pub owner: usize,
}

impl SegItem {
    pub fn new(a: Coord, b: Coord, owner: usize) -> Self {
        SegItem { a, b, owner }
    }
}

impl RTreeObject for SegItem {
    type Envelope = AABB<[f64; 2]>;
    fn envelope(&self) -> Self::Envelope {
        AABB::from_corners([self.a.x.min(self.b.x), self.a.y.min(self.b.y)], [self.a.x.max(self.b.x), self.a.y.max(self.b.y)])
    }
}

impl rstar::PointDistance for SegItem {
    fn distance_2(&self, p: &[f64; 2]) -> f64 {
        let d = geom::point_segment_distance(Coord { x: p[0], y: p[1] }, self.a, self.b);
        d * d
    }
}
