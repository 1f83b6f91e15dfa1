//! Shared fixtures and slow, direct-definition oracles for the integration
//! tests. Nothing here calls into the library's geometry or metric code: every
//! value is recomputed from its definition with brute-force loops.

#![allow(dead_code)]

pub mod scene;

use std::collections::{BTreeSet, HashMap, VecDeque};

use geo::{Coord, LineString, MultiPolygon, Polygon};

pub const PI: f64 = std::f64::consts::PI;

// ---------------------------------------------------------------------------
// planar primitives

pub fn d(a: Coord, b: Coord) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Ring vertices without the closing duplicate.
pub fn ring_pts(r: &LineString) -> Vec<Coord> {
    let mut v = r.0.clone();
    if v.len() > 1 && v.first() == v.last() {
        v.pop();
    }
    v
}

pub fn ring_area_abs(pts: &[Coord]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    (0.5 * s).abs()
}

pub fn ring_len(pts: &[Coord]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| d(pts[i], pts[(i + 1) % n])).sum()
}

pub fn rings(mp: &MultiPolygon) -> Vec<(Vec<Coord>, bool)> {
    let mut out = Vec::new();
    for p in &mp.0 {
        out.push((ring_pts(p.exterior()), true));
        for h in p.interiors() {
            out.push((ring_pts(h), false));
        }
    }
    out
}

pub fn area(mp: &MultiPolygon) -> f64 {
    rings(mp).iter().map(|(r, ext)| if *ext { ring_area_abs(r) } else { -ring_area_abs(r) }).sum()
}

pub fn perimeter(mp: &MultiPolygon) -> f64 {
    rings(mp).iter().map(|(r, _)| ring_len(r)).sum()
}

pub fn vertices(mp: &MultiPolygon) -> Vec<Coord> {
    rings(mp).into_iter().flat_map(|(r, _)| r).collect()
}

pub fn edges(mp: &MultiPolygon) -> Vec<(Coord, Coord)> {
    let mut out = Vec::new();
    for (r, _) in rings(mp) {
        let n = r.len();
        for i in 0..n {
            out.push((r[i], r[(i + 1) % n]));
        }
    }
    out
}

/// Area centroid; holes subtract.
pub fn centroid(mp: &MultiPolygon) -> Coord {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    let o = vertices(mp)[0];
    for (r, ext) in rings(mp) {
        let n = r.len();
        let (mut ra, mut rx, mut ry) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = Coord { x: r[i].x - o.x, y: r[i].y - o.y };
            let q = Coord { x: r[(i + 1) % n].x - o.x, y: r[(i + 1) % n].y - o.y };
            let c = p.x * q.y - q.x * p.y;
            ra += c;
            rx += (p.x + q.x) * c;
            ry += (p.y + q.y) * c;
        }
        // orient every ring by its role, whatever its winding
        let sign = if (ra > 0.0) == ext { 1.0 } else { -1.0 };
        a += sign * ra / 2.0;
        cx += sign * rx / 6.0;
        cy += sign * ry / 6.0;
    }
    Coord { x: o.x + cx / a, y: o.y + cy / a }
}

pub fn point_seg(p: Coord, a: Coord, b: Coord) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    if l2 == 0.0 {
        return d(p, a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0);
    d(p, Coord { x: a.x + t * dx, y: a.y + t * dy })
}

fn orient(a: Coord, b: Coord, c: Coord) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

pub fn seg_seg(a: Coord, b: Coord, c: Coord, e: Coord) -> f64 {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, e), orient(c, e, a), orient(c, e, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return 0.0;
    }
    point_seg(a, c, e).min(point_seg(b, c, e)).min(point_seg(c, a, b)).min(point_seg(e, a, b))
}

pub fn inside_ring(p: Coord, r: &[Coord]) -> bool {
    let n = r.len();
    let mut c = false;
    for i in 0..n {
        let (a, b) = (r[i], r[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            c = !c;
        }
    }
    c
}

pub fn inside(p: Coord, mp: &MultiPolygon) -> bool {
    mp.0.iter().any(|poly| inside_ring(p, &ring_pts(poly.exterior())) && !poly.interiors().iter().any(|h| inside_ring(p, &ring_pts(h))))
}

/// Edge-to-edge distance between footprints; 0 when one contains the other.
pub fn footprint_distance(a: &MultiPolygon, b: &MultiPolygon) -> f64 {
    if inside(vertices(a)[0], b) || inside(vertices(b)[0], a) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in edges(a) {
        for (r, s) in edges(b) {
            best = best.min(seg_seg(p, q, r, s));
        }
    }
    best
}

/// Length along which the boundaries of `a` and `b` coincide.
pub fn shared_length(a: &MultiPolygon, b: &MultiPolygon, tol: f64) -> f64 {
    let mut total = 0.0;
    for (p, q) in edges(a) {
        let len = d(p, q);
        let u = Coord { x: (q.x - p.x) / len, y: (q.y - p.y) / len };
        for (r, s) in edges(b) {
            let off = |c: Coord| ((c.x - p.x) * u.y - (c.y - p.y) * u.x).abs();
            if off(r) > tol || off(s) > tol {
                continue;
            }
            let t = |c: Coord| (c.x - p.x) * u.x + (c.y - p.y) * u.y;
            let lo = t(r).min(t(s)).max(0.0);
            let hi = t(r).max(t(s)).min(len);
            total += (hi - lo).max(0.0);
        }
    }
    total
}

// ---------------------------------------------------------------------------
// hulls, circles, rectangles

pub fn hull(points: &[Coord]) -> Vec<Coord> {
    let mut p: Vec<Coord> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Coord> = Vec::new();
    for &c in &p {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], c) <= 0.0 {
            lower.pop();
        }
        lower.push(c);
    }
    let mut upper: Vec<Coord> = Vec::new();
    for &c in p.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], c) <= 0.0 {
            upper.pop();
        }
        upper.push(c);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Smallest circle through pairs (diametral) or triples (circumscribed)
/// containing every point, by exhaustive search.
pub fn enclosing_radius(points: &[Coord]) -> f64 {
    let pts = hull(points);
    let covers = |c: Coord, r: f64| pts.iter().all(|p| d(*p, c) <= r * (1.0 + 1e-12) + 1e-12);
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let c = Coord { x: 0.5 * (pts[i].x + pts[j].x), y: 0.5 * (pts[i].y + pts[j].y) };
            let r = 0.5 * d(pts[i], pts[j]);
            if r < best && covers(c, r) {
                best = r;
            }
            for k in j + 1..pts.len() {
                let (a, b, e) = (pts[i], pts[j], pts[k]);
                let den = 2.0 * (a.x * (b.y - e.y) + b.x * (e.y - a.y) + e.x * (a.y - b.y));
                if den.abs() < 1e-12 {
                    continue;
                }
                let a2 = a.x * a.x + a.y * a.y;
                let b2 = b.x * b.x + b.y * b.y;
                let e2 = e.x * e.x + e.y * e.y;
                let c = Coord {
                    x: (a2 * (b.y - e.y) + b2 * (e.y - a.y) + e2 * (a.y - b.y)) / den,
                    y: (a2 * (e.x - b.x) + b2 * (a.x - e.x) + e2 * (b.x - a.x)) / den,
                };
                let r = d(c, a);
                if r < best && covers(c, r) {
                    best = r;
                }
            }
        }
    }
    best
}

pub struct Mrr {
    pub area: f64,
    pub perimeter: f64,
    pub long: f64,
    pub short: f64,
    /// Orientation folded to [0°, 90°).
    pub orientation: f64,
}

/// Minimum-area rectangle: one side is collinear with a hull edge, so every
/// hull edge direction is tried.
pub fn mrr(points: &[Coord]) -> Mrr {
    let h = hull(points);
    let mut best: Option<Mrr> = None;
    for i in 0..h.len() {
        let (a, b) = (h[i], h[(i + 1) % h.len()]);
        let len = d(a, b);
        let u = Coord { x: (b.x - a.x) / len, y: (b.y - a.y) / len };
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &h {
            let su = (p.x - a.x) * u.x + (p.y - a.y) * u.y;
            let sv = -(p.x - a.x) * u.y + (p.y - a.y) * u.x;
            u0 = u0.min(su);
            u1 = u1.max(su);
            v0 = v0.min(sv);
            v1 = v1.max(sv);
        }
        let (w, hgt) = (u1 - u0, v1 - v0);
        let ar = w * hgt;
        if best.as_ref().is_none_or(|m| ar < m.area - 1e-9 * ar.max(1.0)) {
            let az = u.x.atan2(u.y).to_degrees().rem_euclid(180.0);
            best = Some(Mrr { area: ar, perimeter: 2.0 * (w + hgt), long: w.max(hgt), short: w.min(hgt), orientation: az.rem_euclid(90.0) });
        }
    }
    best.expect("polygon has a hull")
}

/// Shape characters in catalog order: longest axis, circular compactness,
/// square compactness, compactness-weighted axis, convexity, elongation,
/// equivalent rectangular index, facade ratio, fractal dimension,
/// rectangularity, shape index.
pub fn shape_row(mp: &MultiPolygon) -> [f64; 11] {
    let a = area(mp);
    let p = perimeter(mp);
    let v = vertices(mp);
    let r = enclosing_radius(&v);
    let l = 2.0 * r;
    let hull_area = ring_area_abs(&hull(&v));
    let m = mrr(&v);
    [
        l,
        a / (PI * (l / 2.0).powi(2)),
        (4.0 * a.sqrt() / p).powi(2),
        l * (4.0 / PI - 16.0 * a / p.powi(2)),
        a / hull_area,
        m.short / m.long,
        (a / m.area).sqrt() * (m.perimeter / p),
        a / p,
        2.0 * (p / 4.0).ln() / a.ln(),
        a / m.area,
        (a / PI).sqrt() / (l / 2.0),
    ]
}

pub fn fold45(building: f64, street: f64) -> f64 {
    let x = (building - street).abs() % 90.0;
    x.min(90.0 - x)
}

// ---------------------------------------------------------------------------
// graphs

/// Connected components of an undirected graph given as adjacency sets.
pub fn components(adj: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut label = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for s in 0..adj.len() {
        if label[s] != usize::MAX {
            continue;
        }
        let mut q = VecDeque::from([s]);
        label[s] = next;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    q.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Members within `k` steps (excluding the source).
pub fn within_steps(adj: &[BTreeSet<usize>], src: usize, k: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    (0..adj.len()).filter(|&v| v != src && dist[v] <= k).collect()
}

/// All-pairs shortest network distances (Floyd–Warshall).
pub fn all_pairs(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v, w) in edges {
        m[u][v] = m[u][v].min(w);
        m[v][u] = m[v][u].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if m[i][k] + m[k][j] < m[i][j] {
                    m[i][j] = m[i][k] + m[k][j];
                }
            }
        }
    }
    m
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Relative comparison with a unit floor so values near zero compare absolutely;
/// two missing values agree.
pub fn close(a: f64, e: f64, rel: f64) -> bool {
    if a.is_nan() || e.is_nan() {
        return a.is_nan() && e.is_nan();
    }
    (a - e).abs() <= rel * e.abs().max(1.0)
}

pub fn by_name<'a>(cols: &'a HashMap<String, Vec<f64>>, name: &str) -> &'a [f64] {
    cols.get(name).unwrap_or_else(|| panic!("oracle lacks {name}"))
}

pub fn poly(points: &[(f64, f64)]) -> Polygon {
    Polygon::new(LineString::from(points.to_vec()), vec![])
}
