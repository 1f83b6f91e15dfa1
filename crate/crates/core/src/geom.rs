//! Planar geometry helpers shared by the pipeline stages.
//!
//! Everything here works in projected meters. Polygons are `geo` types; the
//! helpers fill the gaps `geo` leaves (segment distances, minimum enclosing
//! circle, shared-wall lengths, densification).

use geo::{
    Area, BoundingRect, ConvexHull, Coord, Euclidean, Length, LineString, MinimumRotatedRect,
    MultiPolygon, Polygon, Rect,
};

/// Coordinate tolerance used when deciding whether two boundaries touch.
pub const TOUCH_TOL: f64 = 1e-6;

#[inline]
pub fn dist(a: Coord, b: Coord) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[inline]
fn cross(o: Coord, a: Coord, b: Coord) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Coord, a: Coord, b: Coord) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    dist(p, Coord { x: a.x + t * dx, y: a.y + t * dy })
}

/// True when the closed segments properly cross or touch.
pub fn segments_intersect(a: Coord, b: Coord, c: Coord, d: Coord) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Coord, q: Coord, r: Coord, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

pub fn segment_segment_distance(a: Coord, b: Coord, c: Coord, d: Coord) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// All boundary segments of a multipolygon (exteriors and holes).
pub fn boundary_segments(mp: &MultiPolygon) -> Vec<(Coord, Coord)> {
    let mut out = Vec::new();
    for poly in mp {
        for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
            for w in ring.0.windows(2) {
                if w[0] != w[1] {
                    out.push((w[0], w[1]));
                }
            }
        }
    }
    out
}

/// Even-odd point-in-polygon test on all rings of a polygon (boundary excluded).
pub fn point_in_polygon(p: Coord, poly: &Polygon) -> bool {
    let mut inside = false;
    for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
        for w in ring.0.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

pub fn point_in_multipolygon(p: Coord, mp: &MultiPolygon) -> bool {
    mp.0.iter().any(|poly| point_in_polygon(p, poly))
}

/// Minimum distance between two areal geometries, zero when they intersect.
pub fn multipolygon_distance(a: &MultiPolygon, b: &MultiPolygon) -> f64 {
    let sa = boundary_segments(a);
    let sb = boundary_segments(b);
    let mut best = f64::INFINITY;
    for &(p, q) in &sa {
        for &(r, s) in &sb {
            let d = segment_segment_distance(p, q, r, s);
            if d < best {
                best = d;
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
    }
    if let Some(&(p, _)) = sa.first() {
        if point_in_multipolygon(p, b) {
            return 0.0;
        }
    }
    if let Some(&(p, _)) = sb.first() {
        if point_in_multipolygon(p, a) {
            return 0.0;
        }
    }
    best
}

/// Distance from an areal geometry to a polyline, zero when they intersect.
pub fn multipolygon_line_distance(a: &MultiPolygon, line: &LineString) -> f64 {
    let sa = boundary_segments(a);
    let mut best = f64::INFINITY;
    for w in line.0.windows(2) {
        for &(p, q) in &sa {
            best = best.min(segment_segment_distance(w[0], w[1], p, q));
        }
    }
    if best > 0.0 && line.0.iter().take(1).any(|c| point_in_multipolygon(*c, a)) {
        return 0.0;
    }
    best
}

pub fn multipolygon_point_distance(a: &MultiPolygon, p: Coord) -> f64 {
    if point_in_multipolygon(p, a) {
        return 0.0;
    }
    boundary_segments(a)
        .iter()
        .map(|&(s, e)| point_segment_distance(p, s, e))
        .fold(f64::INFINITY, f64::min)
}

/// Length along which two boundaries run collinearly within `tol`.
pub fn shared_boundary_length(a: &MultiPolygon, b: &MultiPolygon, tol: f64) -> f64 {
    let sb = boundary_segments(b);
    let mut total = 0.0;
    for (p, q) in boundary_segments(a) {
        let len = dist(p, q);
        if len == 0.0 {
            continue;
        }
        let ux = (q.x - p.x) / len;
        let uy = (q.y - p.y) / len;
        for &(r, s) in &sb {
            // both endpoints of the other segment must lie on our carrier line
            let dr = ((r.x - p.x) * uy - (r.y - p.y) * ux).abs();
            let ds = ((s.x - p.x) * uy - (s.y - p.y) * ux).abs();
            if dr > tol || ds > tol {
                continue;
            }
            let tr = (r.x - p.x) * ux + (r.y - p.y) * uy;
            let ts = (s.x - p.x) * ux + (s.y - p.y) * uy;
            let lo = tr.min(ts).max(0.0);
            let hi = tr.max(ts).min(len);
            if hi > lo {
                total += hi - lo;
            }
        }
    }
    total
}

/// Shoelace area, positive for counter-clockwise rings; the ring may be
/// given open or closed.
pub fn signed_ring_area(ring: &[Coord]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let o = ring[0];
    let mut s = 0.0;
    for i in 1..n - 1 {
        let (a, b) = (ring[i], ring[i + 1]);
        s += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    0.5 * s
}

/// Points along a closed ring, spaced at most `step` apart, ring vertices included.
pub fn densify_ring(ring: &LineString, step: f64, out: &mut Vec<Coord>) {
    for w in ring.0.windows(2) {
        let len = dist(w[0], w[1]);
        let n = ((len / step).ceil() as usize).max(1);
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push(Coord {
                x: w[0].x + t * (w[1].x - w[0].x),
                y: w[0].y + t * (w[1].y - w[0].y),
            });
        }
    }
}

pub fn perimeter(mp: &MultiPolygon) -> f64 {
    mp.0.iter()
        .map(|p| {
            Euclidean.length(p.exterior())
                + p.interiors().iter().map(|r| Euclidean.length(r)).sum::<f64>()
        })
        .sum()
}

pub fn area(mp: &MultiPolygon) -> f64 {
    mp.unsigned_area()
}

pub fn bbox(mp: &MultiPolygon) -> Option<Rect> {
    mp.bounding_rect()
}

/// Minimum enclosing circle (center, radius) of a point set.
///
/// Iterative Welzl over the convex hull vertices; deterministic order.
pub fn min_enclosing_circle(points: &[Coord]) -> Option<(Coord, f64)> {
    if points.is_empty() {
        return None;
    }
    let hull = geo::MultiPoint::from(points.iter().map(|c| geo::Point::from(*c)).collect::<Vec<_>>())
        .convex_hull();
    let mut pts: Vec<Coord> = hull.exterior().0.clone();
    pts.pop();
    if pts.is_empty() {
        pts.push(points[0]);
    }
    let eps = 1e-12;
    let inside = |c: (Coord, f64), p: Coord| dist(c.0, p) <= c.1 * (1.0 + eps) + eps;
    let mut circle = (pts[0], 0.0);
    for i in 1..pts.len() {
        if inside(circle, pts[i]) {
            continue;
        }
        circle = (pts[i], 0.0);
        for j in 0..i {
            if inside(circle, pts[j]) {
                continue;
            }
            circle = circle_two(pts[i], pts[j]);
            for k in 0..j {
                if inside(circle, pts[k]) {
                    continue;
                }
                circle = circle_three(pts[i], pts[j], pts[k]).unwrap_or(circle);
            }
        }
    }
    Some(circle)
}

fn circle_two(a: Coord, b: Coord) -> (Coord, f64) {
    let c = Coord { x: 0.5 * (a.x + b.x), y: 0.5 * (a.y + b.y) };
    (c, 0.5 * dist(a, b))
}

pub fn circle_three(a: Coord, b: Coord, c: Coord) -> Option<(Coord, f64)> {
    let bx = b.x - a.x;
    let by = b.y - a.y;
    let cx = c.x - a.x;
    let cy = c.y - a.y;
    let d = 2.0 * (bx * cy - by * cx);
    if d.abs() < 1e-300 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let center = Coord { x: a.x + ux, y: a.y + uy };
    Some((center, ux.hypot(uy)))
}

/// Minimum rotated rectangle summary: (area, perimeter, longer side, shorter side,
/// azimuth of the longer side in degrees folded to [0, 180)).
#[derive(Debug, Clone, Copy)]
pub struct RotatedRect {
    pub area: f64,
    pub perimeter: f64,
    pub long_side: f64,
    pub short_side: f64,
    pub azimuth: f64,
}

pub fn min_rotated_rect(mp: &MultiPolygon) -> Option<RotatedRect> {
    let rect: Polygon = mp.minimum_rotated_rect()?;
    let c = &rect.exterior().0;
    if c.len() < 4 {
        return None;
    }
    let s1 = dist(c[0], c[1]);
    let s2 = dist(c[1], c[2]);
    let (long, short, a, b) = if s1 >= s2 {
        (s1, s2, c[0], c[1])
    } else {
        (s2, s1, c[1], c[2])
    };
    Some(RotatedRect {
        area: long * short,
        perimeter: 2.0 * (long + short),
        long_side: long,
        short_side: short,
        azimuth: azimuth_deg(a, b),
    })
}

/// Azimuth of the direction a->b, measured clockwise from north, folded to [0, 180).
pub fn azimuth_deg(a: Coord, b: Coord) -> f64 {
    let ang = (b.x - a.x).atan2(b.y - a.y).to_degrees();
    ang.rem_euclid(180.0)
}

pub fn convex_hull_area(mp: &MultiPolygon) -> f64 {
    mp.convex_hull().unsigned_area()
}

pub fn all_coords(mp: &MultiPolygon) -> Vec<Coord> {
    let mut out = Vec::new();
    for p in mp {
        out.extend(p.exterior().0.iter().copied());
        for r in p.interiors() {
            out.extend(r.0.iter().copied());
        }
    }
    out
}

pub fn rect_polygon(min: Coord, max: Coord) -> Polygon {
    Rect::new(min, max).to_polygon()
}

/// Square grid polygon helper used by the grid and synthetic-city code.
pub fn square(x0: f64, y0: f64, size: f64) -> Polygon {
    rect_polygon(Coord { x: x0, y: y0 }, Coord { x: x0 + size, y: y0 + size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use geo::polygon;

    #[test]
    fn segment_distance_cases() {
        let o = Coord { x: 0.0, y: 0.0 };
        let e = Coord { x: 1.0, y: 0.0 };
        assert_eq!(point_segment_distance(Coord { x: 0.5, y: 2.0 }, o, e), 2.0);
        assert!(segments_intersect(o, e, Coord { x: 0.5, y: -1.0 }, Coord { x: 0.5, y: 1.0 }));
        assert_eq!(
            segment_segment_distance(o, e, Coord { x: 3.0, y: 0.0 }, Coord { x: 4.0, y: 0.0 }),
            2.0
        );
    }

    #[test]
    fn enclosing_circle_of_square() {
        let pts = [
            Coord { x: 0.0, y: 0.0 },
            Coord { x: 2.0, y: 0.0 },
            Coord { x: 2.0, y: 2.0 },
            Coord { x: 0.0, y: 2.0 },
        ];
        let (c, r) = min_enclosing_circle(&pts).unwrap();
        assert!((c.x - 1.0).abs() < 1e-12 && (c.y - 1.0).abs() < 1e-12);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shared_wall_of_adjacent_squares() {
        let a: MultiPolygon = polygon![(x: 0., y: 0.), (x: 2., y: 0.), (x: 2., y: 2.), (x: 0., y: 2.)].into();
        let b: MultiPolygon = polygon![(x: 2., y: 1.), (x: 4., y: 1.), (x: 4., y: 5.), (x: 2., y: 5.)].into();
        assert!((shared_boundary_length(&a, &b, 1e-9) - 1.0).abs() < 1e-12);
        assert_eq!(multipolygon_distance(&a, &b), 0.0);
    }

    #[test]
    fn rotated_rect_axes() {
        let a: MultiPolygon = polygon![(x: 0., y: 0.), (x: 4., y: 0.), (x: 4., y: 1.), (x: 0., y: 1.)].into();
        let r = min_rotated_rect(&a).unwrap();
        assert!((r.long_side - 4.0).abs() < 1e-9 && (r.short_side - 1.0).abs() < 1e-9);
        assert!((r.azimuth - 90.0).abs() < 1e-9);
    }
}
