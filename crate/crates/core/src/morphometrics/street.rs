//! Street-level characters: length, linearity and the building profile.

use geo::{Coord, LineString};
use rstar::{RTree, AABB};

use crate::geom;
use crate::ingest::SegItem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub width: f64,
    pub width_deviation: f64,
    pub openness: f64,
}

pub fn line_length(l: &LineString) -> f64 {
    l.0.windows(2).map(|w| geom::dist(w[0], w[1])).sum()
}

/// Endpoint chord length over line length.
pub fn linearity(l: &LineString) -> f64 {
    let len = line_length(l);
    match (l.0.first(), l.0.last()) {
        (Some(a), Some(b)) if len > 0.0 => geom::dist(*a, *b) / len,
        _ => f64::NAN,
    }
}

/// Point and unit direction at distance `s` along the line.
fn point_at(l: &LineString, s: f64) -> (Coord, Coord) {
    let mut acc = 0.0;
    let n = l.0.len();
    for (k, w) in l.0.windows(2).enumerate() {
        let len = geom::dist(w[0], w[1]);
        if len == 0.0 {
            continue;
        }
        if acc + len >= s || k + 2 == n {
            let t = ((s - acc) / len).clamp(0.0, 1.0);
            let d = Coord { x: (w[1].x - w[0].x) / len, y: (w[1].y - w[0].y) / len };
            return (Coord { x: w[0].x + t * (w[1].x - w[0].x), y: w[0].y + t * (w[1].y - w[0].y) }, d);
        }
        acc += len;
    }
    (l.0[0], Coord { x: 1.0, y: 0.0 })
}

/// Distance along the ray `p + t·d`, `t ∈ [0, max]`, to the first building edge.
fn ray_hit(p: Coord, d: Coord, max: f64, edges: &RTree<SegItem>) -> Option<f64> {
    let q = Coord { x: p.x + d.x * max, y: p.y + d.y * max };
    let env = AABB::from_corners([p.x.min(q.x), p.y.min(q.y)], [p.x.max(q.x), p.y.max(q.y)]);
    let mut best: Option<f64> = None;
    for e in edges.locate_in_envelope_intersecting(&env) {
        let s = e.b - e.a;
        let denom = d.x * s.y - d.y * s.x;
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = e.a - p;
        let t = (w.x * s.y - w.y * s.x) / denom;
        let u = (w.x * d.y - w.y * d.x) / denom;
        if (0.0..=max).contains(&t) && (0.0..=1.0).contains(&u) && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

/// Perpendicular rays of length `tick_len / 2` on both sides at
/// `max(1, ⌊L / spacing⌋)` stations placed at the centers of equal parts.
pub fn street_profile(line: &LineString, building_edges: &RTree<SegItem>, tick_len: f64, spacing: f64) -> Profile {
    let len = line_length(line);
    if !(len > 0.0) {
        return Profile { width: f64::NAN, width_deviation: f64::NAN, openness: f64::NAN };
    }
    let half = tick_len / 2.0;
    let n = ((len / spacing).floor() as usize).max(1);
    let mut widths = Vec::with_capacity(n);
    let mut open = 0usize;
    for k in 0..n {
        let s = (k as f64 + 0.5) * len / n as f64;
        let (p, d) = point_at(line, s);
        let mut w = 0.0;
        for normal in [Coord { x: -d.y, y: d.x }, Coord { x: d.y, y: -d.x }] {
            match ray_hit(p, normal, half, building_edges) {
                Some(t) => w += t,
                None => {
                    w += half;
                    open += 1;
                }
            }
        }
        widths.push(w);
    }
    let mean = widths.iter().sum::<f64>() / n as f64;
    let var = widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n as f64;
    Profile { width: mean, width_deviation: var.sqrt(), openness: open as f64 / (2 * n) as f64 }
}
