//! Dimension and shape characters of single polygons.

use geo::{Area, MapCoords, MultiPolygon, Polygon};

use crate::geom;

/// Values in the order of [`super::catalog::SHAPE_METRICS`].
pub type ShapeRow = [f64; 11];

/// Copies the polygon into a frame whose origin is its first vertex, so
/// projected coordinates in the millions do not cost precision.
pub fn localize(mp: &MultiPolygon) -> MultiPolygon {
    let Some(o) = mp.0.first().and_then(|p| p.exterior().0.first()).copied() else {
        return mp.clone();
    };
    mp.map_coords(|c| geo::Coord { x: c.x - o.x, y: c.y - o.y })
}

/// Area, perimeter and the derived shape characters. All values are missing
/// for a polygon without area.
pub fn shape_metrics(mp: &MultiPolygon) -> ShapeRow {
    let mp = localize(mp);
    let a = mp.unsigned_area();
    let p = geom::perimeter(&mp);
    if !(a > 0.0) || !(p > 0.0) {
        return [f64::NAN; 11];
    }
    let pts = geom::all_coords(&mp);
    let (_, r) = geom::min_enclosing_circle(&pts).unwrap_or((geo::Coord { x: 0.0, y: 0.0 }, f64::NAN));
    let l = 2.0 * r;
    let hull = geom::convex_hull_area(&mp);
    let (mrr_area, mrr_perim, elong) = match geom::min_rotated_rect(&mp) {
        Some(m) if m.long_side > 0.0 => (m.area, m.perimeter, m.short_side / m.long_side),
        _ => (f64::NAN, f64::NAN, f64::NAN),
    };
    let finite = |v: f64| if v.is_finite() { v } else { f64::NAN };
    [
        l,
        a / (std::f64::consts::PI * r * r),
        (4.0 * a.sqrt() / p).powi(2),
        l * (4.0 / std::f64::consts::PI - 16.0 * a / (p * p)),
        a / hull,
        elong,
        (a / mrr_area).sqrt() * (mrr_perim / p),
        a / p,
        finite(2.0 * (p / 4.0).ln() / a.ln()),
        a / mrr_area,
        (a / std::f64::consts::PI).sqrt() / r,
    ]
}

/// Total area of interior rings.
pub fn courtyard_area(p: &Polygon) -> f64 {
    p.interiors().iter().map(|r| geom::signed_ring_area(&r.0).abs()).sum()
}

pub fn courtyard_index(p: &Polygon) -> f64 {
    let c = courtyard_area(p);
    let a = p.unsigned_area();
    if a + c > 0.0 {
        c / (a + c)
    } else {
        f64::NAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphometrics::catalog::SHAPE_METRICS;
    use geo::{polygon, Coord};

    fn idx(name: &str) -> usize {
        SHAPE_METRICS.iter().position(|m| *m == name).unwrap()
    }

    #[test]
    fn square_identities() {
        let s = shape_metrics(&MultiPolygon(vec![geom::square(500_000.0, 5_000_000.0, 2.0)]));
        for m in ["square_compactness", "equivalent_rectangular_index", "rectangularity", "elongation", "fractal_dimension"] {
            assert!((s[idx(m)] - 1.0).abs() < 1e-9, "{m} = {}", s[idx(m)]);
        }
        assert!((s[idx("facade_ratio")] - 0.5).abs() < 1e-12);
        assert!((s[idx("circular_compactness")] - 4.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-9);
    }

    #[test]
    fn l_shape_convexity() {
        let l = polygon![(x: 0., y: 0.), (x: 2., y: 0.), (x: 2., y: 1.), (x: 1., y: 1.), (x: 1., y: 2.), (x: 0., y: 2.)];
        let s = shape_metrics(&MultiPolygon(vec![l]));
        assert!((s[idx("convexity")] - 3.0 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_is_missing() {
        let flat = polygon![(x: 0., y: 0.), (x: 2., y: 0.), (x: 4., y: 0.)];
        assert!(shape_metrics(&MultiPolygon(vec![flat])).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn courtyard() {
        let outer = geom::square(0.0, 0.0, 10.0);
        let inner = geom::rect_polygon(Coord { x: 4.0, y: 4.0 }, Coord { x: 6.0, y: 6.0 });
        let p = Polygon::new(outer.exterior().clone(), vec![inner.exterior().clone()]);
        assert!((courtyard_area(&p) - 4.0).abs() < 1e-12);
        assert!((courtyard_index(&p) - 0.04).abs() < 1e-12);
    }
}
